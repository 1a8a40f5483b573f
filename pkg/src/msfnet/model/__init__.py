"""Multi-stream encoder-decoder, its configuration and checkpoint I/O."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, load_model, save_checkpoint
from .config import FUSION_MODES, SIGNAL_KINDS, SKIP_MODES, ConfigError, ModelConfig
from .network import Decoder, EncoderStream, MissingInputError, Network, ResidualBlock, expected_parameter_count

__all__ = [
    "Checkpoint", "CheckpointError", "ConfigError", "Decoder", "EncoderStream", "FUSION_MODES",
    "MissingInputError", "ModelConfig", "Network", "ResidualBlock", "SIGNAL_KINDS", "SKIP_MODES",
    "expected_parameter_count", "load_checkpoint", "load_model", "save_checkpoint",
]
