"""Serial and parallel CNN/LSTM rainfall-runoff models in plain numpy."""

from .architectures import KINDS, ModelSpec, build_model, miniature_spec
from .data import SyntheticConfig, generate_synthetic, ingest_csv
from .numerics import Rng
from .training import TrainConfig, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = ["KINDS", "ModelSpec", "Rng", "SyntheticConfig", "TrainConfig", "build_model",
           "generate_synthetic", "ingest_csv", "load_checkpoint", "miniature_spec",
           "save_checkpoint", "__version__"]
