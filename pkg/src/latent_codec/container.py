"""Tiled compressed container (PLC1).

One container covers an arbitrarily large image as a grid of fixed-size
tiles, each independently encoded and quantized, with a single shared
dictionary (codebook or int8 range) amortized over all tiles:

    magic "PLC1" | u8 version=1 | u8 mode | u8 scope | u8 reserved=0
    | u32 f, c, tile_size, rows, cols, H, W | 16-byte model_id
    | dictionary block (none / f32 min,max / 256 f32 per scope unit)
    | row-major tile payloads (uniform length) | u32 CRC-32 of all prior bytes

Border tiles are padded at encode and cropped at decode; payload length is
constant per tile so offsets stay computable without an index table.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    CorruptPayloadError,
    LayoutMismatchError,
    NumericError,
    TruncatedPayloadError,
    UnsupportedFormatError,
    ValidationError,
)
from .images import ImageBuffer
from .latents import (
    KMEANS_8BIT,
    QUANT_MODES,
    RAW_F32,
    STATIC_INT8,
    LatentLayout,
    LatentTensor,
    _encode_model_id,
    latent_byte_size,
)
from .pca import LinearCodecModel, _pad_reflect, _unit_pixels, decode, encode
from .quantize import (
    SCOPE_GLOBAL,
    SCOPE_PER_CHANNEL,
    Codebook,
    Int8Range,
    QuantizedLatent,
    dequantize,
    quantize_int8,
    quantize_kmeans,
)

PLC_MAGIC = b"PLC1"
PLC_VERSION = 1
_PLC_HEADER = struct.Struct("<4sBBBB7I16s")
_MODE_BYTES = {RAW_F32: 0, STATIC_INT8: 1, KMEANS_8BIT: 2}
_BYTE_MODES = {v: k for k, v in _MODE_BYTES.items()}

DEFAULT_TILE_SIZE = 256

Dictionary = Codebook | Int8Range | None


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _validate_dictionary(mode: str, dictionary: Dictionary, layout: LatentLayout) -> None:
    if mode == RAW_F32:
        if dictionary is not None:
            raise ValidationError("raw-f32 mode takes no dictionary")
    elif mode == STATIC_INT8:
        if not isinstance(dictionary, Int8Range):
            raise ValidationError(f"static-int8 mode needs an Int8Range, got {type(dictionary).__name__}")
    elif mode == KMEANS_8BIT:
        if not isinstance(dictionary, Codebook):
            raise ValidationError(f"kmeans-8bit mode needs a Codebook, got {type(dictionary).__name__}")
        if dictionary.k != 256:
            raise ValidationError(f"container codebooks must have k=256, got {dictionary.k}")
        if dictionary.scope == SCOPE_PER_CHANNEL and dictionary.channels != layout.channels:
            raise ValidationError(
                f"per-channel codebook has {dictionary.channels} rows, layout has "
                f"{layout.channels} channels"
            )
    else:
        raise ValidationError(f"unknown quant mode {mode!r}; choices: {QUANT_MODES}")


class CompressedContainer:
    """In-memory form of a PLC1 artifact."""

    __slots__ = ("version", "quant_mode", "layout", "tile_size", "grid",
                 "image_dims", "dictionary", "tiles")

    def __init__(self, quant_mode: str, layout: LatentLayout, tile_size: int,
                 image_dims: tuple[int, int], dictionary: Dictionary,
                 tiles: tuple[np.ndarray, ...], version: int = PLC_VERSION):
        H, W = image_dims
        if H < 1 or W < 1:
            raise ValidationError(f"image dims must be positive, got {image_dims}")
        if tile_size < 1 or tile_size % layout.factor != 0:
            raise ValidationError(
                f"tile_size {tile_size} must be a positive multiple of factor {layout.factor}"
            )
        _validate_dictionary(quant_mode, dictionary, layout)
        rows = _ceil_div(H, tile_size)
        cols = _ceil_div(W, tile_size)
        side = tile_size // layout.factor
        want_dtype = np.float32 if quant_mode == RAW_F32 else np.uint8
        tiles = tuple(tiles)
        if len(tiles) != rows * cols:
            raise ValidationError(f"expected {rows * cols} tiles, got {len(tiles)}")
        frozen = []
        for i, tile in enumerate(tiles):
            arr = np.array(tile, dtype=want_dtype, order="C", copy=True)
            if arr.shape != (layout.channels, side, side):
                raise ValidationError(
                    f"tile {i} has shape {arr.shape}, expected {(layout.channels, side, side)}"
                )
            arr.flags.writeable = False
            frozen.append(arr)
        if quant_mode == KMEANS_8BIT:
            dictionary = dictionary.without_provenance()
        object.__setattr__(self, "version", int(version))
        object.__setattr__(self, "quant_mode", quant_mode)
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "tile_size", int(tile_size))
        object.__setattr__(self, "grid", (rows, cols))
        object.__setattr__(self, "image_dims", (H, W))
        object.__setattr__(self, "dictionary", dictionary)
        object.__setattr__(self, "tiles", tuple(frozen))

    def __setattr__(self, name, value):
        raise AttributeError("CompressedContainer is immutable")

    @property
    def tile_grid(self) -> tuple[int, int]:
        side = self.tile_size // self.layout.factor
        return (side, side)

    @property
    def payload_bytes(self) -> int:
        per_tile = latent_byte_size(self.layout, self.tile_grid, self.quant_mode)
        return per_tile * len(self.tiles)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CompressedContainer):
            return NotImplemented
        if (
            self.version != other.version
            or self.quant_mode != other.quant_mode
            or self.layout != other.layout
            or self.tile_size != other.tile_size
            or self.image_dims != other.image_dims
            or self.dictionary != other.dictionary
        ):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.tiles, other.tiles))

    def __repr__(self) -> str:
        return (
            f"CompressedContainer({self.quant_mode}, {self.layout.model_id or self.layout!r}, "
            f"{self.image_dims[0]}x{self.image_dims[1]}, {self.grid[0]}x{self.grid[1]} tiles)"
        )


# ---------------------------------------------------------------------------
# Compression pipeline
# ---------------------------------------------------------------------------

def _tile_image(image: ImageBuffer, tile_size: int) -> list[np.ndarray]:
    rows = _ceil_div(image.height, tile_size)
    cols = _ceil_div(image.width, tile_size)
    tiles = []
    for r in range(rows):
        for c in range(cols):
            block = image.pixels[r * tile_size:(r + 1) * tile_size,
                                 c * tile_size:(c + 1) * tile_size]
            if block.shape[0] < tile_size or block.shape[1] < tile_size:
                block = _pad_reflect(block, tile_size, tile_size)
            tiles.append(block)
    return tiles


def compress_image(image: ImageBuffer, model: LinearCodecModel, mode: str,
                   dictionary: Dictionary = None,
                   tile_size: int = DEFAULT_TILE_SIZE) -> CompressedContainer:
    """Encode and quantize each tile independently under one shared dictionary."""
    layout = model.layout
    _validate_dictionary(mode, dictionary, layout)
    if tile_size < 1 or tile_size % layout.factor != 0:
        raise ValidationError(
            f"tile_size {tile_size} must be a positive multiple of factor {layout.factor}"
        )
    payloads = []
    for block in _tile_image(image, tile_size):
        latent = encode(model, ImageBuffer(block))
        if mode == RAW_F32:
            payloads.append(latent.values)
        elif mode == STATIC_INT8:
            payloads.append(quantize_int8(latent, dictionary).indices)
        else:
            payloads.append(quantize_kmeans(latent, dictionary).indices)
    return CompressedContainer(
        quant_mode=mode,
        layout=layout,
        tile_size=tile_size,
        image_dims=image.dims,
        dictionary=dictionary,
        tiles=tuple(payloads),
    )


def _tile_latent(container: CompressedContainer, index: int) -> LatentTensor:
    tile = container.tiles[index]
    if container.quant_mode == RAW_F32:
        return LatentTensor(container.layout, tile)
    q = QuantizedLatent(
        container.layout,
        tile,
        STATIC_INT8 if container.quant_mode == STATIC_INT8 else KMEANS_8BIT,
    )
    return dequantize(q, container.dictionary)


def _check_model(container: CompressedContainer, model: LinearCodecModel) -> None:
    if container.layout != model.layout:
        raise LayoutMismatchError(
            f"container layout {container.layout} does not match model layout {model.layout}"
        )


def decompress_tile(container: CompressedContainer, model: LinearCodecModel,
                    row: int, col: int) -> ImageBuffer:
    """Decode one tile, cropped to its intersection with the image."""
    rows, cols = container.grid
    if not (0 <= row < rows and 0 <= col < cols):
        raise ValidationError(f"tile ({row}, {col}) outside grid {container.grid}")
    _check_model(container, model)
    ts = container.tile_size
    H, W = container.image_dims
    latent = _tile_latent(container, row * cols + col)
    full = decode(model, latent, (ts, ts))
    h = min(ts, H - row * ts)
    w = min(ts, W - col * ts)
    return ImageBuffer(full.pixels[:h, :w])


def decompress_image(container: CompressedContainer, model: LinearCodecModel) -> ImageBuffer:
    """Dequantize and decode every tile, stitch in raster order, crop to image dims."""
    _check_model(container, model)
    rows, cols = container.grid
    ts = container.tile_size
    H, W = container.image_dims
    canvas = np.empty((rows * ts, cols * ts, 3), dtype=np.uint8)
    for r in range(rows):
        for c in range(cols):
            latent = _tile_latent(container, r * cols + c)
            canvas[r * ts:(r + 1) * ts, c * ts:(c + 1) * ts] = decode(
                model, latent, (ts, ts)
            ).pixels
    return ImageBuffer(canvas[:H, :W])


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _dict_block(container: CompressedContainer) -> bytes:
    if container.quant_mode == RAW_F32:
        return b""
    if container.quant_mode == STATIC_INT8:
        return struct.pack("<ff", container.dictionary.min, container.dictionary.max)
    return container.dictionary.centroids.astype("<f4", copy=False).tobytes()


def write_container(container: CompressedContainer) -> bytes:
    """Canonical PLC1 bytes: identical containers serialize identically."""
    cb = container.dictionary if container.quant_mode == KMEANS_8BIT else None
    scope_byte = 1 if (cb is not None and cb.scope == SCOPE_PER_CHANNEL) else 0
    rows, cols = container.grid
    H, W = container.image_dims
    header = _PLC_HEADER.pack(
        PLC_MAGIC,
        container.version,
        _MODE_BYTES[container.quant_mode],
        scope_byte,
        0,
        container.layout.factor,
        container.layout.channels,
        container.tile_size,
        rows,
        cols,
        H,
        W,
        _encode_model_id(container.layout.model_id),
    )
    body = header + _dict_block(container)
    for tile in container.tiles:
        if container.quant_mode == RAW_F32:
            body += tile.astype("<f4", copy=False).tobytes()
        else:
            body += tile.tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def read_container(data: bytes) -> CompressedContainer:
    """Parse and verify PLC1 bytes (structure first, then CRC, then payload)."""
    if len(data) < _PLC_HEADER.size:
        raise TruncatedPayloadError(
            f"PLC1 header needs {_PLC_HEADER.size} bytes, got {len(data)}"
        )
    (magic, version, mode_byte, scope_byte, reserved,
     factor, channels, tile_size, rows, cols, H, W, model_id_raw) = _PLC_HEADER.unpack_from(data)
    if magic != PLC_MAGIC:
        raise BadMagicError(f"bad PLC1 magic {magic!r}")
    if version != PLC_VERSION:
        raise UnsupportedFormatError(f"unsupported PLC1 version {version}")
    if mode_byte not in _BYTE_MODES:
        raise UnsupportedFormatError(f"unknown mode byte {mode_byte}")
    if scope_byte not in (0, 1):
        raise UnsupportedFormatError(f"unknown scope byte {scope_byte}")
    if reserved != 0:
        raise UnsupportedFormatError(f"nonzero reserved field {reserved}")
    mode = _BYTE_MODES[mode_byte]
    try:
        layout = LatentLayout(
            factor=factor,
            channels=channels,
            model_id=model_id_raw.rstrip(b"\x00").decode("utf-8"),
        )
    except (UnicodeDecodeError, ValidationError) as exc:
        raise CorruptPayloadError(f"invalid PLC1 header: {exc}") from exc
    if H < 1 or W < 1:
        raise CorruptPayloadError(f"image dims {H}x{W} must be positive")
    if tile_size < 1 or tile_size % factor != 0:
        raise CorruptPayloadError(
            f"tile_size {tile_size} is not a positive multiple of factor {factor}"
        )
    if rows != _ceil_div(H, tile_size) or cols != _ceil_div(W, tile_size):
        raise CorruptPayloadError(
            f"tile grid {rows}x{cols} inconsistent with {H}x{W} at tile_size {tile_size}"
        )
    if mode == RAW_F32:
        dict_len = 0
    elif mode == STATIC_INT8:
        dict_len = 8
    else:
        dict_len = (channels if scope_byte == 1 else 1) * 256 * 4

    side = tile_size // factor
    per_tile = latent_byte_size(layout, (side, side), mode)
    n_tiles = rows * cols
    body_len = _PLC_HEADER.size + dict_len + per_tile * n_tiles
    expected = body_len + 4
    if len(data) < expected:
        into = len(data) - _PLC_HEADER.size - dict_len
        if into < 0:
            raise TruncatedPayloadError("PLC1 dictionary block truncated")
        if into < per_tile * n_tiles:
            raise CorruptPayloadError(f"tile {into // per_tile} payload truncated")
        raise TruncatedPayloadError("PLC1 checksum missing")
    if len(data) > expected:
        raise UnsupportedFormatError(f"{len(data) - expected} trailing bytes after checksum")
    (stored_crc,) = struct.unpack_from("<I", data, body_len)
    actual_crc = zlib.crc32(data[:body_len])
    if stored_crc != actual_crc:
        raise ChecksumError(
            f"CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )

    offset = _PLC_HEADER.size
    try:
        if mode == RAW_F32:
            dictionary: Dictionary = None
        elif mode == STATIC_INT8:
            lo, hi = struct.unpack_from("<ff", data, offset)
            dictionary = Int8Range(lo, hi)
        else:
            units = channels if scope_byte == 1 else 1
            cents = np.frombuffer(data, dtype="<f4", count=units * 256, offset=offset)
            dictionary = Codebook(
                scope=SCOPE_PER_CHANNEL if scope_byte == 1 else SCOPE_GLOBAL,
                channels=units if scope_byte == 1 else 1,
                centroids=cents.reshape(units, 256),
            )
        offset += dict_len

        dtype = "<f4" if mode == RAW_F32 else np.uint8
        tiles = []
        for _ in range(n_tiles):
            arr = np.frombuffer(data, dtype=dtype, count=channels * side * side, offset=offset)
            tiles.append(arr.reshape(channels, side, side))
            offset += per_tile
        return CompressedContainer(
            quant_mode=mode,
            layout=layout,
            tile_size=tile_size,
            image_dims=(H, W),
            dictionary=dictionary,
            tiles=tuple(tiles),
            version=version,
        )
    except (ValidationError, NumericError) as exc:
        raise CorruptPayloadError(f"invalid PLC1 content: {exc}") from exc
