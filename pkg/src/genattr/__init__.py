"""Answer-level feature attribution for retrieval-backed text generation.

The package walks random coalition structures over a model's input,
watches where the generated answer switches, and turns those switches
into per-feature mass. On top of that sit hierarchical refinement,
a speculative answer cache, rerank/distill workflows, and a CLI.
"""

from .core import (
    AnswerDistribution,
    AttributionTable,
    HierarchyNode,
    HierarchySpec,
    Mask,
    Permutation,
    TokenSeq,
    apply_mask,
    check_features,
    mask_of_node,
    merge_attributions,
    node_features,
    token_features,
)
from .engine import (
    BASELINE_MODES,
    SamplerConfig,
    banzhaf_estimate,
    exact_banzhaf_oracle,
    exact_shapley_oracle,
    permutation_shapley,
    permutation_shapley_logprob,
    shapley_subset_estimate,
    shapley_weight,
)
from .estimators import (
    AttributionReranker,
    BanzhafExplainer,
    HierarchicalShapleyExplainer,
    LogProbShapleyExplainer,
    PermutationShapleyExplainer,
    SubsetShapleyExplainer,
)
from .exceptions import (
    CapabilityError,
    DatasetSchemaError,
    GenerationOverflowError,
    SamplingError,
    StaleSessionError,
    ToleranceError,
    TransportError,
    TreeCapacityError,
)
from .harness import (
    ContextBuilder,
    EvalRecord,
    Passage,
    RankedList,
    auc,
    context_hierarchy,
    distill_top_answers,
    load_dataset,
    majority_vote,
    make_planted_benchmark,
    position_sweep,
    pseudo_label,
    recall_at_k,
    rerank_by_attribution,
    top_k_accuracy,
    write_jsonl,
)
from .hierarchy import HierarchicalResult, hierarchical_shapley, select_important
from .models.base import Backend, CallStats, GenerationResult, Step, StepScore
from .models.remote import RemoteBackend
from .models.toys import NgramBackend, ToyKeywordReader, VotingKeywordReader
from .rngs import derive_seed, path_rng
from .spectree import SpecStats, SpecTree, speculate_or_decode
from .textnorm import ABSTAIN, normalize_answer

__version__ = "0.1.0"

__all__ = [
    "ABSTAIN",
    "AnswerDistribution",
    "AttributionReranker",
    "AttributionTable",
    "BASELINE_MODES",
    "Backend",
    "BanzhafExplainer",
    "CallStats",
    "CapabilityError",
    "ContextBuilder",
    "DatasetSchemaError",
    "EvalRecord",
    "GenerationOverflowError",
    "GenerationResult",
    "HierarchicalResult",
    "HierarchicalShapleyExplainer",
    "HierarchyNode",
    "HierarchySpec",
    "LogProbShapleyExplainer",
    "Mask",
    "NgramBackend",
    "Passage",
    "Permutation",
    "PermutationShapleyExplainer",
    "RankedList",
    "RemoteBackend",
    "SamplerConfig",
    "SamplingError",
    "SpecStats",
    "SpecTree",
    "StaleSessionError",
    "Step",
    "StepScore",
    "SubsetShapleyExplainer",
    "TokenSeq",
    "ToleranceError",
    "ToyKeywordReader",
    "TransportError",
    "TreeCapacityError",
    "VotingKeywordReader",
    "apply_mask",
    "auc",
    "banzhaf_estimate",
    "check_features",
    "context_hierarchy",
    "derive_seed",
    "distill_top_answers",
    "exact_banzhaf_oracle",
    "exact_shapley_oracle",
    "hierarchical_shapley",
    "load_dataset",
    "majority_vote",
    "make_planted_benchmark",
    "mask_of_node",
    "merge_attributions",
    "node_features",
    "normalize_answer",
    "path_rng",
    "permutation_shapley",
    "permutation_shapley_logprob",
    "position_sweep",
    "pseudo_label",
    "recall_at_k",
    "rerank_by_attribution",
    "select_important",
    "shapley_subset_estimate",
    "shapley_weight",
    "speculate_or_decode",
    "token_features",
    "top_k_accuracy",
    "write_jsonl",
    "__version__",
]
