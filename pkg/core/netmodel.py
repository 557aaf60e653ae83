"""
Layered models, compression schemes and the on-disk weight format
"""

import struct
import threading
from dataclasses import dataclass

import numpy as np

from core.errors import FormatError, InvalidRank, UnknownLayer, ValidationError
from core.lowrank import TruncatedPair, svd, truncate

MODEL_MAGIC = b'LRFM'
FORMAT_VERSION = 1

FLAG_SEARCHABLE = 0x01
FLAG_FACTORED = 0x02

PAIR_SUFFIXES = ('.u', '.v')


def _frozen_matrix(weights, what):
    matrix = np.array(weights, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise ValidationError(f"{what}: expected a non-empty 2-D matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValidationError(f"{what}: matrix contains non-finite entries")
    matrix.setflags(write=False)
    return matrix


@dataclass(frozen=True, eq=False)
class LayerSpec:
    """One named m x n weight matrix; searchable layers take part in the search"""
    name: str
    weights: np.ndarray
    searchable: bool = True

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise ValidationError("layer name must be a non-empty string")
        object.__setattr__(self, 'weights', _frozen_matrix(self.weights, f"layer '{self.name}'"))
        object.__setattr__(self, 'searchable', bool(self.searchable))

    @property
    def shape(self):
        return self.weights.shape

    @property
    def size(self):
        return int(self.weights.shape[0] * self.weights.shape[1])


class LayeredModel:
    """Ordered, immutable collection of layers plus free-form string metadata"""

    def __init__(self, layers, metadata=None):
        layers = tuple(layers)
        if not layers:
            raise ValidationError("a model needs at least one layer")
        names = [layer.name for layer in layers]
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise ValidationError(f"duplicate layer names: {', '.join(duplicates)}")
        self.layers = layers
        self.metadata = {str(k): str(v) for k, v in (metadata or {}).items()}
        self._index = {layer.name: layer for layer in layers}
        self._factorizations = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.layers)

    @property
    def searchable_layers(self):
        return [layer for layer in self.layers if layer.searchable]

    @property
    def searchable_names(self):
        return [layer.name for layer in self.layers if layer.searchable]

    def layer(self, name):
        try:
            return self._index[name]
        except KeyError:
            raise UnknownLayer(f"unknown layer '{name}'") from None

    def factorization(self, name):
        """SVD of a layer, computed once per model"""
        with self._lock:
            cached = self._factorizations.get(name)
        if cached is not None:
            return cached
        factorization = svd(self.layer(name).weights)
        with self._lock:
            return self._factorizations.setdefault(name, factorization)

    @property
    def parameter_count(self):
        return sum(layer.size for layer in self.layers)


@dataclass(frozen=True)
class Scheme:
    """One rank per searchable layer; 0 leaves the layer uncompressed"""
    ranks: tuple

    def __post_init__(self):
        ranks = tuple(int(r) for r in self.ranks)
        if any(r < 0 for r in ranks):
            raise InvalidRank(f"ranks must be non-negative, got {list(ranks)}")
        object.__setattr__(self, 'ranks', ranks)

    @classmethod
    def identity(cls, model):
        return cls((0,) * len(model.searchable_layers))

    def __len__(self):
        return len(self.ranks)

    def __iter__(self):
        return iter(self.ranks)

    def __getitem__(self, index):
        return self.ranks[index]

    @property
    def is_identity(self):
        return all(r == 0 for r in self.ranks)

    def to_list(self):
        return list(self.ranks)


def as_scheme(scheme):
    return scheme if isinstance(scheme, Scheme) else Scheme(tuple(scheme))


def validate_scheme(model, scheme):
    """Check a scheme against the model's searchable layers"""
    scheme = as_scheme(scheme)
    searchable = model.searchable_layers
    if len(scheme) != len(searchable):
        raise InvalidRank(f"scheme has {len(scheme)} ranks but the model has {len(searchable)} searchable layers")
    for layer, rank in zip(searchable, scheme):
        if rank > min(layer.shape):
            raise InvalidRank(f"{layer.name}: rank {rank} exceeds min{layer.shape} = {min(layer.shape)}")
    return scheme


@dataclass(frozen=True, eq=False)
class CompressedLayer:
    """A layer after compression: either the original matrix or a rank-k pair"""
    name: str
    searchable: bool
    weights: np.ndarray = None
    pair: TruncatedPair = None

    @property
    def factored(self):
        return self.pair is not None

    @property
    def rank(self):
        return self.pair.rank if self.pair is not None else 0

    @property
    def shape(self):
        return self.pair.shape if self.pair is not None else self.weights.shape

    @property
    def parameter_count(self):
        if self.pair is not None:
            return self.pair.parameter_count
        return int(self.weights.shape[0] * self.weights.shape[1])

    def dense(self):
        return self.pair.product() if self.pair is not None else self.weights


class CompressedModel:
    """A model with some searchable layers replaced by U' / V* pairs"""

    def __init__(self, layers, metadata=None, scheme=None):
        self.layers = tuple(layers)
        self.metadata = dict(metadata or {})
        self._index = {layer.name: layer for layer in self.layers}
        if scheme is None:
            scheme = Scheme(tuple(layer.rank for layer in self.layers if layer.searchable))
        self.scheme = as_scheme(scheme)

    def __len__(self):
        return len(self.layers)

    def layer(self, name):
        try:
            return self._index[name]
        except KeyError:
            raise UnknownLayer(f"unknown layer '{name}'") from None

    @property
    def parameter_count(self):
        return sum(layer.parameter_count for layer in self.layers)

    def to_dense(self):
        """Multiply every pair back into a plain LayeredModel"""
        return LayeredModel(
            [LayerSpec(layer.name, layer.dense(), layer.searchable) for layer in self.layers],
            self.metadata,
        )


def apply_scheme(model, scheme):
    """Replace each searchable layer with rank k > 0 by its rank-k truncation"""
    scheme = validate_scheme(model, scheme)
    ranks = iter(scheme)
    compressed = []
    for layer in model.layers:
        rank = next(ranks) if layer.searchable else 0
        if rank > 0:
            pair = truncate(model.factorization(layer.name), rank)
            compressed.append(CompressedLayer(layer.name, layer.searchable, pair=pair))
        else:
            compressed.append(CompressedLayer(layer.name, layer.searchable, weights=layer.weights))
    return CompressedModel(compressed, model.metadata, scheme)


def scheme_speedup(model, scheme):
    """Whole-model multiply-accumulate ratio, dense over compressed"""
    scheme = validate_scheme(model, scheme)
    ranks = iter(scheme)
    total = 0
    cost = 0
    for layer in model.layers:
        m, n = layer.shape
        rank = next(ranks) if layer.searchable else 0
        total += m * n
        cost += rank * (m + n) if rank > 0 else m * n
    return total / cost


# ---------------------------------------------------------------------------
# Binary container: magic, version, named float64 matrices, string metadata
# ---------------------------------------------------------------------------

class _Reader:
    """Cursor over a byte buffer that reports where it ran out"""

    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, size, what):
        if self.offset + size > len(self.data):
            raise FormatError(f"truncated file while reading {what}", self.offset)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def text(self, size, what):
        start = self.offset
        raw = self.take(size, what)
        try:
            return raw.decode('utf-8')
        except UnicodeDecodeError:
            raise FormatError(f"{what} is not valid UTF-8", start) from None


def write_container(path, magic, entries, metadata=None):
    """Write (name, flags, matrix) entries and metadata to path"""
    metadata = metadata or {}
    out = bytearray(magic)
    out += struct.pack('<II', FORMAT_VERSION, len(entries))
    for name, flags, matrix in entries:
        encoded = name.encode('utf-8')
        matrix = np.ascontiguousarray(matrix, dtype='<f8')
        m, n = matrix.shape
        out += struct.pack('<H', len(encoded)) + encoded
        out += struct.pack('<BII', flags, m, n)
        out += matrix.tobytes(order='C')
    out += struct.pack('<I', len(metadata))
    for key, value in metadata.items():
        key_bytes = str(key).encode('utf-8')
        value_bytes = str(value).encode('utf-8')
        out += struct.pack('<H', len(key_bytes)) + key_bytes
        out += struct.pack('<I', len(value_bytes)) + value_bytes
    with open(path, 'wb') as f:
        f.write(bytes(out))


def read_container(path, magic):
    """Read a container written by write_container; returns (entries, metadata)"""
    with open(path, 'rb') as f:
        reader = _Reader(f.read())

    found = reader.take(4, "magic")
    if found != magic:
        raise FormatError(f"bad magic {found!r}, expected {magic!r}", 0)
    version_offset = reader.offset
    version, count = reader.unpack('<II', "header")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", version_offset)

    entries = []
    for index in range(count):
        (name_len,) = reader.unpack('<H', f"entry {index} name length")
        name = reader.text(name_len, f"entry {index} name")
        flags, m, n = reader.unpack('<BII', f"entry {index} header")
        if m < 1 or n < 1:
            raise FormatError(f"entry '{name}' has empty shape {m}x{n}", reader.offset - 8)
        raw = reader.take(8 * m * n, f"entry '{name}' values")
        matrix = np.frombuffer(raw, dtype='<f8').reshape(m, n).astype(np.float64)
        entries.append((name, flags, matrix))

    metadata = {}
    (meta_count,) = reader.unpack('<I', "metadata count")
    for index in range(meta_count):
        (key_len,) = reader.unpack('<H', f"metadata {index} key length")
        key = reader.text(key_len, f"metadata {index} key")
        (value_len,) = reader.unpack('<I', f"metadata {index} value length")
        metadata[key] = reader.text(value_len, f"metadata {index} value")

    if reader.offset != len(reader.data):
        raise FormatError("trailing bytes after metadata", reader.offset)
    return entries, metadata


def _model_entries(model):
    entries = []
    for layer in model.layers:
        flags = FLAG_SEARCHABLE if layer.searchable else 0
        pair = getattr(layer, 'pair', None)
        if pair is not None:
            flags |= FLAG_FACTORED
            entries.append((layer.name + PAIR_SUFFIXES[0], flags, pair.u_trunc))
            entries.append((layer.name + PAIR_SUFFIXES[1], flags, pair.v_star))
        else:
            entries.append((layer.name, flags, layer.weights))
    return entries


def save_model(model, path):
    """Write a LayeredModel or CompressedModel in the LRFM format"""
    write_container(path, MODEL_MAGIC, _model_entries(model), model.metadata)


def load_model(path):
    """Read an LRFM file; files holding factored pairs come back as CompressedModel"""
    entries, metadata = read_container(path, MODEL_MAGIC)
    if not any(flags & FLAG_FACTORED for _, flags, _ in entries):
        layers = [LayerSpec(name, matrix, bool(flags & FLAG_SEARCHABLE)) for name, flags, matrix in entries]
        return LayeredModel(layers, metadata)

    layers = []
    position = 0
    while position < len(entries):
        name, flags, matrix = entries[position]
        searchable = bool(flags & FLAG_SEARCHABLE)
        if flags & FLAG_FACTORED:
            if position + 1 >= len(entries) or not name.endswith(PAIR_SUFFIXES[0]):
                raise FormatError(f"factored entry '{name}' is not followed by its pair")
            base = name[:-len(PAIR_SUFFIXES[0])]
            partner, partner_flags, v_star = entries[position + 1]
            if partner != base + PAIR_SUFFIXES[1] or not partner_flags & FLAG_FACTORED:
                raise FormatError(f"factored entry '{name}' is not followed by '{base}.v'")
            if matrix.shape[1] != v_star.shape[0]:
                raise FormatError(f"factored pair '{base}' has mismatched inner dimensions")
            matrix.setflags(write=False)
            v_star.setflags(write=False)
            layers.append(CompressedLayer(base, searchable, pair=TruncatedPair(matrix, v_star)))
            position += 2
        else:
            matrix.setflags(write=False)
            layers.append(CompressedLayer(name, searchable, weights=matrix))
            position += 1
    return CompressedModel(layers, metadata)
