"""Deep graph convolutional kernel machines."""
from .config import ConfigError, KernelConfig, LayerConfig, ModelConfig, OptimizerConfig, ReadoutConfig
from .datasets import DatasetError, load_dataset, write_dataset
from .graph import AggregationMode, Graph, GraphError, Role, aggregate, degrees, permute, validate_split
from .kernels import KernelSpec, center, cross_gram, eval_kernel, gram, mixed_gram, multiview_gram, rbf_bandwidth_heuristic
from .layer import GckmLayerModel, fit_layer, layer_objective
from .metrics import ClassCodings, accuracy, combined_score, nmi, unsup_cosine
from .model import DualState, EvalReport, cluster, infer, initialize, load_model, save_model, total_objective, train
from .numerics import (
    CayleyAdamState,
    NumericalError,
    SingularMatrixError,
    cayley_adam_step,
    orthogonality_loss,
    solve_dense,
    top_eigenpairs,
)
from .semisup import SemiSupModel

__version__ = "0.1.0"
