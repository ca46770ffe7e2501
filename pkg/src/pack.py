"""The ``.seofp`` packed model format.

    "SEOF" | version u8 | layer_count u16
    per layer:  kind u8 | activation u8 | dim_a u32 | dim_b u32 | dim_c u32 | sigma' u32
    per tensor: encoding u8 | width u8 | min_exp i16 | count u32 | payload_bytes u32 | payload

Header integers are little-endian. Each tensor's payload is a bitstream of
fixed-width codes, most significant bit first, padded to a whole byte:
32 bits per parameter for ``full32``, 9 (sign + exponent) for ``se9`` and
``width + 1`` for ``codebook``. Tensors are the weights then the bias of each
layer, in layer order. sigma' is the layer's sigma times 2^64, the scale an
integer-add deployment divides by.
"""

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from src.bitcore import (
    BIAS,
    EXPONENT_MASK,
    FRACTION_BITS,
    MAX_EXPONENT,
    float_to_word,
    floats_of,
    fraction_field,
    word_to_float,
    words_of,
)
from src.errors import (
    BadMagicError,
    CorruptHeaderError,
    EncodingError,
    SeofpError,
    ShapeError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from src.network import ACTIVATIONS, KINDS, LayerSpec, Model
from src.quant import ExponentCodebook, codebook_for

logger = logging.getLogger(__name__)

MAGIC = b"SEOF"
VERSION = 1
EXTENSION = ".seofp"

FULL32 = "full32"
SE9 = "se9"
CODEBOOK = "codebook"
ENCODINGS = (FULL32, SE9, CODEBOOK)

SIGMA_SHIFT = 64

# unbiased exponents of normal single-precision numbers
MIN_EXP = 1 - BIAS
MAX_EXP = MAX_EXPONENT - 1 - BIAS

_HEADER = struct.Struct("<4sBH")
_LAYER = struct.Struct("<BBIIII")
_TENSOR = struct.Struct("<BBhII")

# codes handled per chunk; a multiple of 8 keeps chunks byte aligned
_CHUNK = 1 << 18


@dataclass(frozen=True)
class TensorHeader:
    encoding: str
    width: int
    min_exp: int
    count: int
    payload_bytes: int

    @property
    def bits_per_param(self) -> int:
        return bits_per_param(self.encoding, self.width)


@dataclass(frozen=True)
class PackedModel:
    """Decoded view of a ``.seofp`` byte sequence"""

    version: int
    layers: tuple[LayerSpec, ...]
    sigma_prime_words: tuple[int, ...]
    tensors: tuple[TensorHeader, ...]
    payloads: tuple[bytes, ...]
    size: int

    @property
    def header_bytes(self) -> int:
        return self.size - sum(t.payload_bytes for t in self.tensors)

    @property
    def payload_bits(self) -> int:
        return sum(t.count * t.bits_per_param for t in self.tensors)


def bits_per_param(encoding: str, width: int = 0) -> int:
    if encoding == FULL32:
        return 32
    if encoding == SE9:
        return 9
    if encoding == CODEBOOK:
        return width + 1
    raise EncodingError(f"unknown encoding {encoding!r}; choose from {', '.join(ENCODINGS)}")


def payload_size(count: int, bits: int) -> int:
    return (count * bits + 7) // 8


def header_size(model: Model) -> int:
    return _HEADER.size + len(model.layers) * _LAYER.size + 2 * len(model.layers) * _TENSOR.size


def packed_size(model: Model, encoding: str, codebook: ExponentCodebook | None = None) -> int:
    """Size of ``pack(model, encoding)`` without building it"""
    width = 0
    if encoding == CODEBOOK and model.layers:
        width = (codebook or _codebook(model)).width
    bits = bits_per_param(encoding, width)
    return header_size(model) + sum(payload_size(t.size, bits) for _, _, t in model.tensors())


def compression_ratio(packed_size: float, baseline_size: float) -> float:
    """Signed percentage change from the baseline size; negative is smaller"""
    if baseline_size <= 0:
        raise ValueError(f"baseline size must be positive, got {baseline_size}")
    return (packed_size - baseline_size) / baseline_size * 100.0


# bit streams -------------------------------------------------------------------

def _pack_codes(codes: np.ndarray, bits: int) -> bytes:
    codes = np.asarray(codes, dtype=np.uint32).ravel()
    if bits == 32:
        return codes.astype(">u4").tobytes()
    shifts = np.arange(bits - 1, -1, -1, dtype=np.uint32)
    out = bytearray()
    for start in range(0, codes.size, _CHUNK):
        chunk = codes[start:start + _CHUNK]
        matrix = ((chunk[:, None] >> shifts) & 1).astype(np.uint8)
        out += np.packbits(matrix.ravel()).tobytes()
    return bytes(out)


def _unpack_codes(payload: bytes, count: int, bits: int) -> np.ndarray:
    if bits == 32:
        return np.frombuffer(payload, dtype=">u4", count=count).astype(np.uint32)
    weights = (np.uint32(1) << np.arange(bits - 1, -1, -1, dtype=np.uint32))
    codes = np.empty(count, dtype=np.uint32)
    step_bytes = _CHUNK * bits // 8
    for i, start in enumerate(range(0, count, _CHUNK)):
        n = min(_CHUNK, count - start)
        raw = np.frombuffer(payload, dtype=np.uint8, count=payload_size(n, bits), offset=i * step_bytes)
        matrix = np.unpackbits(raw)[:n * bits].reshape(n, bits).astype(np.uint32)
        codes[start:start + n] = matrix @ weights
    return codes


# pack / unpack -----------------------------------------------------------------

def _codebook(model: Model) -> ExponentCodebook:
    try:
        return codebook_for(model)
    except SeofpError as e:
        raise EncodingError(f"codebook encoding: {e}") from e


def _encode(words: np.ndarray, encoding: str, codebook: ExponentCodebook | None) -> np.ndarray:
    if encoding == FULL32:
        return words
    if encoding == SE9:
        return words >> FRACTION_BITS
    return codebook.encode_words(words)


def _decode(codes: np.ndarray, header: TensorHeader) -> np.ndarray:
    if header.encoding == FULL32:
        return codes
    if header.encoding == SE9:
        return codes << FRACTION_BITS
    top = int((codes & np.uint32((1 << header.width) - 1)).max(initial=0))
    if top and header.min_exp + top - 1 > MAX_EXP:
        raise CorruptHeaderError(
            f"codebook code {top} with min_exp {header.min_exp} decodes past exponent {MAX_EXP}")
    # every code a width-bit field can hold
    codebook = ExponentCodebook.spanning(header.min_exp + (1 << header.width) - 2, header.min_exp)
    return codebook.decode_words(codes)


def _layer_dims(spec: LayerSpec) -> tuple[int, int, int]:
    return spec.in_size, spec.out_size, spec.kernel_length


def pack(model: Model, encoding: str = FULL32, codebook: ExponentCodebook | None = None) -> bytes:
    """Serialize ``model``; deterministic for a given model and encoding"""
    bits_per_param(encoding)
    if encoding in (SE9, CODEBOOK):
        for layer, name, tensor in model.tensors():
            if np.any(fraction_field(words_of(tensor)) != 0):
                raise EncodingError(f"{encoding} needs zero fractions; layer {layer} {name} has fraction bits set")
    if encoding == CODEBOOK and model.layers:
        codebook = codebook or _codebook(model)
    width = codebook.width if encoding == CODEBOOK and codebook else 0
    min_exp = codebook.min_exp if encoding == CODEBOOK and codebook else 0
    bits = bits_per_param(encoding, width)

    out = bytearray(_HEADER.pack(MAGIC, VERSION, len(model.layers)))
    for i, (spec, sigma) in enumerate(zip(model.layers, model.sigma)):
        try:
            sigma_prime = float_to_word(math.ldexp(sigma, SIGMA_SHIFT))
        except OverflowError as e:
            raise EncodingError(f"layer {i}: sigma {sigma} times 2^{SIGMA_SHIFT} exceeds single precision") from e
        out += _LAYER.pack(KINDS.index(spec.kind), ACTIVATIONS.index(spec.activation),
                           *_layer_dims(spec), sigma_prime)
    for layer, name, tensor in model.tensors():
        try:
            codes = _encode(words_of(tensor).ravel(), encoding, codebook)
        except ValueError as e:
            raise EncodingError(f"layer {layer} {name}: {e}") from e
        payload = _pack_codes(codes, bits)
        out += _TENSOR.pack(ENCODINGS.index(encoding), width, min_exp, tensor.size, len(payload))
        out += payload
    logger.debug(f"packed {model.parameter_count} parameters as {encoding}: {len(out)} bytes")
    return bytes(out)


def read_packed(data: bytes) -> PackedModel:
    """Parse and validate headers; payloads are sliced, not decoded"""
    data = bytes(data)
    if len(data) < len(MAGIC) or data[:4] != MAGIC:
        raise BadMagicError(f"not a packed model: magic {data[:4]!r}")
    if len(data) < _HEADER.size:
        raise CorruptHeaderError("file ends inside the header")
    _, version, layer_count = _HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise UnsupportedVersionError(f"format version {version} (this reader knows {VERSION})")
    offset = _HEADER.size

    layers, sigma_words = [], []
    for i in range(layer_count):
        if offset + _LAYER.size > len(data):
            raise CorruptHeaderError(f"file ends inside layer {i} header")
        kind, activation, a, b, c, sigma_word = _LAYER.unpack_from(data, offset)
        offset += _LAYER.size
        if kind >= len(KINDS) or activation >= len(ACTIVATIONS):
            raise CorruptHeaderError(f"layer {i}: unknown kind {kind} or activation {activation}")
        try:
            layers.append(LayerSpec(KINDS[kind], a, b, c, ACTIVATIONS[activation]))
        except ShapeError as e:
            raise CorruptHeaderError(f"layer {i}: {e}") from e
        sigma = word_to_float(sigma_word)
        if sigma_word & EXPONENT_MASK == EXPONENT_MASK or not sigma > 0:
            raise CorruptHeaderError(f"layer {i}: invalid sigma' word 0x{sigma_word:08X}")
        sigma_words.append(sigma_word)

    tensors, payloads = [], []
    expected = [int(np.prod(shape)) for spec in layers for shape in (spec.weight_shape, spec.bias_shape)]
    for i, want in enumerate(expected):
        if offset + _TENSOR.size > len(data):
            raise CorruptHeaderError(f"file ends inside tensor {i} header")
        encoding_id, width, min_exp, count, nbytes = _TENSOR.unpack_from(data, offset)
        offset += _TENSOR.size
        if encoding_id >= len(ENCODINGS):
            raise CorruptHeaderError(f"tensor {i}: unknown encoding id {encoding_id}")
        header = TensorHeader(ENCODINGS[encoding_id], width, min_exp, count, nbytes)
        if count != want:
            raise CorruptHeaderError(f"tensor {i}: {count} parameters, layer shape needs {want}")
        if header.encoding == CODEBOOK and not 1 <= width <= 8:
            raise CorruptHeaderError(f"tensor {i}: codebook width {width}")
        if header.encoding == CODEBOOK and not MIN_EXP <= min_exp <= MAX_EXP:
            raise CorruptHeaderError(f"tensor {i}: codebook min_exp {min_exp} outside [{MIN_EXP}, {MAX_EXP}]")
        if nbytes != payload_size(count, header.bits_per_param):
            raise CorruptHeaderError(f"tensor {i}: payload length {nbytes} does not match {count} parameters")
        if offset + nbytes > len(data):
            raise TruncatedPayloadError(
                f"tensor {i}: payload needs {nbytes} bytes, {len(data) - offset} remain")
        tensors.append(header)
        payloads.append(data[offset:offset + nbytes])
        offset += nbytes
    if offset != len(data):
        raise CorruptHeaderError(f"{len(data) - offset} trailing bytes after the last tensor")
    return PackedModel(version, tuple(layers), tuple(sigma_words), tuple(tensors), tuple(payloads), len(data))


def unpack(data: bytes) -> Model:
    packed = read_packed(data)
    arrays = []
    for header, payload in zip(packed.tensors, packed.payloads):
        codes = _unpack_codes(payload, header.count, header.bits_per_param)
        arrays.append(floats_of(_decode(codes, header)))
    weights = [arrays[2 * i].reshape(spec.weight_shape) for i, spec in enumerate(packed.layers)]
    biases = [arrays[2 * i + 1].reshape(spec.bias_shape) for i, spec in enumerate(packed.layers)]
    sigma = [math.ldexp(word_to_float(w), -SIGMA_SHIFT) for w in packed.sigma_prime_words]
    return Model(packed.layers, weights, biases, sigma)


def pack_file(model: Model, path, encoding: str = FULL32) -> Path:
    path = Path(path)
    if path.suffix != EXTENSION:
        path = path.with_suffix(EXTENSION)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = pack(model, encoding)
    path.write_bytes(data)
    logger.info(f"wrote {path} ({encoding}, {len(data)} bytes)")
    return path


def unpack_file(path) -> Model:
    return unpack(Path(path).read_bytes())


def describe(packed: PackedModel) -> dict:
    """Summary used by the CLI and the tool server"""
    encodings = sorted({t.encoding for t in packed.tensors})
    return {
        "version": packed.version,
        "layers": [f"{s.kind}({s.in_size}->{s.out_size}, k={s.kernel_length}, {s.activation})"
                   for s in packed.layers],
        "parameters": sum(t.count for t in packed.tensors),
        "encodings": encodings,
        "header_bytes": packed.header_bytes,
        "payload_bits": packed.payload_bits,
        "size_bytes": packed.size,
        "size_kb": packed.size / 1024,
        "codebook": next(({"width": t.width, "min_exp": t.min_exp}
                          for t in packed.tensors if t.encoding == CODEBOOK), None),
    }
