"""Latent-space image codec for high-resolution pathology tiles.

Images are encoded to low-dimensional latent grids, quantized with a
learned K-means codebook (or static int8 binning), serialized to a tiled
binary container, decoded back, and measured with pixel and embedding-space
rate-distortion metrics.
"""

from .container import (
    DEFAULT_TILE_SIZE,
    CompressedContainer,
    compress_image,
    decompress_image,
    decompress_tile,
    read_container,
    write_container,
)
from .errors import (
    BadMagicError,
    ChecksumError,
    CorruptPayloadError,
    DegenerateDataError,
    FormatError,
    LatentCodecError,
    LayoutMismatchError,
    NonFiniteValueError,
    NumericError,
    SizeOverflowError,
    TruncatedPayloadError,
    UnsupportedFormatError,
    ValidationError,
)
from .images import ImageBuffer, read_image, write_image
from .latents import (
    KMEANS_8BIT,
    LAYOUT_PRESETS,
    QUANT_MODES,
    RAW_F32,
    STATIC_INT8,
    LatentLayout,
    LatentTensor,
    latent_byte_size,
    latent_grid_for_image,
    read_lif,
    write_lif,
)
from .metrics import (
    EmbeddingVector,
    RateDistortionReport,
    TileMetrics,
    build_report,
    embed_cosine,
    embed_l1,
    psnr,
    read_eef,
    ssim,
    write_eef,
)
from .pca import (
    LinearCodecModel,
    decode,
    encode,
    fit_linear_codec,
    read_model,
    write_model,
)
from .quantize import (
    SCOPE_GLOBAL,
    SCOPE_PER_CHANNEL,
    Codebook,
    Int8Range,
    QuantizedLatent,
    calibrate_int8_range,
    dequantize,
    fit_codebook,
    quantize_int8,
    quantize_kmeans,
    read_codebook,
    write_codebook,
)

__version__ = "0.1.0"
