"""Transform-invariant point cloud learning on kNN graphs."""

from .checkpoint import load_checkpoint, save_checkpoint
from .estimator import TIFeatureEncoder, TINetClassifier
from .exceptions import CheckpointError, DataError, DegenerateCloudError, NumericalError, TinetError
from .graph import knn, knn_graph, laplacian
from .model import Geometry, ModelConfig, TINet, prepare
from .pointcloud import PointCloud, SyntheticShapeSpec, generate_shape, load_cloud, shape_dataset
from .presets import preset
from .ti_encoder import encode
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "DataError",
    "DegenerateCloudError",
    "Geometry",
    "ModelConfig",
    "NumericalError",
    "PointCloud",
    "SyntheticShapeSpec",
    "TIFeatureEncoder",
    "TINet",
    "TINetClassifier",
    "TinetError",
    "TrainConfig",
    "encode",
    "evaluate",
    "generate_shape",
    "knn",
    "knn_graph",
    "laplacian",
    "load_checkpoint",
    "load_cloud",
    "preset",
    "prepare",
    "save_checkpoint",
    "shape_dataset",
    "train",
]
