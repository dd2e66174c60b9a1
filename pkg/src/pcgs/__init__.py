"""Progressive codec for anchor-based Gaussian-splat scenes.

One encode pass produces a level-structured bitstream whose prefixes decode
to reconstructions of monotonically increasing anchor quantity (progressive
masks) and quantization quality (trit-plane refinement with a 3x step
schedule), entropy-coded against a shared learned model.
"""

from .container import ProgressiveBitstream, inspect, truncate
from .entropy import (
    ChannelModel,
    FreqTable,
    eval_rate_head,
    gaussian_bin_prob,
    gaussian_freq_table,
    hash_feature,
    normal_cdf,
    trinomial_probs,
)
from .errors import CodecError, FormatError, MonotonicityError, PcgsError, ValidationError
from .masking import MaskState, build_mask_state, compute_gauss_mask, delta_mask, derive_anchor_mask
from .model import AnchorScene, EntropyNet, HashGrid, LevelConfig, MaskParams, validate_scene
from .modelio import SceneBundle, read_scene_file, write_scene_file
from .pipeline import Reconstruction, decode, encode, estimate_rate, reconstruction_error
from .quantizer import QuantLattice, quantize_at_level, round_quantize, step_schedule, trit_refine
from .rangecoder import RangeDecoder, RangeEncoder, coded_cost
from .synth import SynthSpec, generate

__version__ = "0.1.0"
