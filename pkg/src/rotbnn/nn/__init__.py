from .layers import ContractError, Context, LayerSpec, Variant, VARIANTS, get_variant
from .network import Network, NonFiniteError, parse_arch, softmax_cross_entropy
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .train import SGD, TrainConfig, evaluate, layer_metrics, train

__all__ = [
    "ContractError", "Context", "LayerSpec", "Variant", "VARIANTS", "get_variant",
    "Network", "NonFiniteError", "parse_arch", "softmax_cross_entropy",
    "CheckpointError", "load_checkpoint", "save_checkpoint",
    "SGD", "TrainConfig", "evaluate", "layer_metrics", "train",
]
