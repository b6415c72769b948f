from .model import (GnnModel, GnnLayer, init_gnn, save_gnn, load_gnn,
                    get_flat_params, set_flat_params, model_digest)
from .ops import (forward, sum_rate, gradient, layer_forward,
                  extract_features, NonFiniteActivations)
from .train import (TrainConfig, Adam, train, write_training_log,
                    TrainingDiverged, draw_noise_variances)

__all__ = [
    "GnnModel", "GnnLayer", "init_gnn", "save_gnn", "load_gnn",
    "get_flat_params", "set_flat_params", "model_digest",
    "forward", "sum_rate", "gradient", "layer_forward",
    "extract_features", "NonFiniteActivations",
    "TrainConfig", "Adam", "train", "write_training_log",
    "TrainingDiverged", "draw_noise_variances",
]
