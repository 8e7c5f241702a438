"""Off-policy evaluation and policy improvement for tabular MDPs with unobserved confounders."""

from .core_mdp import (
    ConfoundedMDP,
    ConfoundedPolicy,
    Global,
    HistoryDeterministic,
    Memoryless,
    ObservedPolicy,
    SoftmaxPolicy,
    exact_value,
    value_of,
)
from .data import Dataset, analytic_model, load, model_from_dataset, save, simulate
from .errors import ConfopeError, CoverageError, DimensionError, InfeasibleError
from .ope_global import ClusterAssignment, cluster_separation, cluster_soft_em, clustering_ope
from .ope_memoryless import ValueReport, cfqe, fqe, mb_pgd, mb_relaxation
from .sensitivity import build_uncertainty, sensitivity_bounds

__version__ = "0.1.0"
