from .attention import SwinBlock, WindowAttention, window_attention
from .network import (
    RTN,
    Branch,
    Decoder,
    Encoder,
    MaskNet,
    Mode,
    ModelConfig,
    SpatialRestorer,
    aggregate,
    clip_flows,
)
from .inference import load_checkpoint, restore_sequence, save_checkpoint
