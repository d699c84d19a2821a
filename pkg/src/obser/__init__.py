"""obser: object-based sub-environment recognition over unit-norm embeddings.

Everything reduces to kernel densities under one similarity kernel on
the unit hypersphere (:mod:`obser.kernel`).  On top of it:

* :mod:`obser.eds` — epsilon-delta separability of labeled embeddings,
  the induced classifier, and its divergence bound;
* :mod:`obser.estimators` — object retrieval, class-occurrence and KL
  divergence estimation, Jensen-Shannon distances, bound checks;
* :mod:`obser.synthenv` — synthetic vMF environments with exact ground
  truth;
* :mod:`obser.memory` — episodic memory, chained inference, trajectory
  segmentation;
* :mod:`obser.toytrain` — from-scratch contrastive trainer for the 2-D
  toy benchmarks;
* :mod:`obser.io` / :mod:`obser.cli` — JSONL formats and the ``obser``
  command-line interface.
"""

from .kernel import (
    DegenerateMeanError,
    KernelConfig,
    ObservationSet,
    density_matrix,
    kernel,
    kernel_density,
    log_kernel_density,
    mean_direction,
)
from .eds import (
    EDSReport,
    LabeledSet,
    bayes_classify,
    kl_gap_bound,
    kl_joint_gap,
    measure_eds,
)
from .estimators import (
    InfiniteDivergenceError,
    KLEstimate,
    OccurrenceEstimate,
    check_kl_bound,
    check_occurrence_bound,
    estimate_kl,
    estimate_occurrence,
    estimate_occurrence_direct,
    exact_kl,
    jensen_shannon,
    knn_classifier,
    mean_classifier,
    retrieve_object,
)
from .memory import (
    ChainedInferenceResult,
    Environment,
    EpisodicMemory,
    MemoryEntry,
    Segment,
    chained_inference,
    find_object,
    recall,
    retrieve_subenv,
    segment_trajectory,
)
from .synthenv import (
    GroundTruth,
    SyntheticEnvSpec,
    entropy,
    make_scenario,
    sample_environment,
    sample_vmf,
    zipf_occurrence,
)
from .toytrain import ToyDataset, ToyNet, TrainTrace, generate_toy, grad_check, train

__version__ = "0.1.0"
