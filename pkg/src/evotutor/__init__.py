"""Self-evolving student profiles, knowledge-base lifecycle and teaching control."""

from .cpl_memory import (
    ConsolidationConfig,
    FusionOutcome,
    Profile,
    ProfileFeature,
    QaPair,
    ShortTermMemory,
    append_interaction,
    consolidate,
    fuse,
    query_profile,
    update_confidence,
)
from .knowledge_store import (
    ChunkState,
    Document,
    KnowledgeStore,
    LifecycleThresholds,
    Scope,
    ValueWeights,
)
from .lifecycle import EvolutionReport, compress, evolve, partition
from .meta_control import (
    HyperParams,
    PolicyParams,
    SearchConfig,
    TeachingAction,
    Trajectory,
    compute_reward,
    default_policy,
    estimate_objective,
    observe,
    outer_update,
    select_action,
)
from .vector_index import HashingEmbedder, VectorIndex, cosine, embed

__version__ = "0.1.0"
