"""Light-weight saliency prediction from tiled fine/coarse region pairs."""
from .network import TABLE1, DualModel, NetworkSpec, NetworkWeights, init_dual, load_weights, save_weights
from .tiling import predict

__all__ = [
    "TABLE1",
    "DualModel",
    "NetworkSpec",
    "NetworkWeights",
    "init_dual",
    "load_weights",
    "predict",
    "save_weights",
]
__version__ = "0.1.0"
