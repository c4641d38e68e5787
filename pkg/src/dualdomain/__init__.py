"""Dual-domain sparse-coding restoration of JPEG-compressed grayscale images.

A feed-forward network built from two one-step sparse-inference stages
wrapped around constant DCT/IDCT layers, trained with an L2 loss plus a
quantization-interval box penalty, plus the iterative dual-domain baseline
it replaces, a block-level JPEG codec model, quality metrics, and a CLI.
"""

__version__ = "0.1.0"

from .backend import BACKEND, available_backends
from .jpegcodec import (
    BASE_LUMA_STEPS,
    DCT,
    CoeffIntervals,
    Dct2d,
    DegradedBlock,
    QuantizedBlock,
    QuantTable,
    build_transform,
    compress_block,
    dequantize,
    intervals,
    quantize,
    scaled_quant_table,
)
from .metrics import (
    ARCNN_SPEC,
    ConvSpec,
    EvalReport,
    EvalRow,
    conv_complexity,
    count_multiplies,
    d3_complexity,
    psnr,
    psnr_b,
    ssim,
)
from .network import (
    DATA_SCALE,
    DenseBaselineModel,
    DualDomainModel,
    ForwardTrace,
    SparseStage,
    TrainConfig,
    backward,
    box_loss,
    dbase_backward,
    dbase_forward,
    forward,
    init_from_sparse,
    init_random,
    l2_loss,
    sc_analysis,
    sc_synthesis,
    train,
)
from .checkpoint import load_model, save_model
from .patches import (
    BlockGrid,
    PatchGrid,
    TrainingPair,
    aggregate,
    build_training_set,
    degrade_image,
    extract_patches,
    match_intervals,
    quantized_grid_from_image,
)
from .pgm import load_gray, save_gray
from .restore import baseline_restore, dictionaries_from_model, restore_image
from .sparse import (
    DualDomainConfig,
    SparseDictionary,
    dual_domain_restore,
    ista,
    ista_step,
    learn_dictionary,
    shrink,
    unit_threshold,
)
