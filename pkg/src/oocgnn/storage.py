"""On-disk formats and dataset preparation.

All binary files are little-endian and grouped in 4096-byte-aligned
sections so the direct-I/O paths never read across an unaligned seam.
Five formats live here:

  topology.bin   "ACSR"  CSR adjacency (offsets + packed neighbor ids)
  indeg.bin      "AIND"  u32 in-degree per vertex
  spill files    "ASPL"  sorted (id, row) runs inside a partition
  weights        "AWTS"  dense layer weights and biases
  permutation    "APRM"  old-to-new vertex id map

A feature or embedding "layer directory" holds meta.txt plus one
part_<k>/ subdirectory per partition, each with a manifest.txt listing
its spill files in creation order.
"""

import os
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .directio import ALIGN, pad_to_align, write_file_aligned
from .errors import (
    BadMagicError,
    ConfigError,
    ConsistencyError,
    FormatError,
    InvariantError,
    OffsetMonotonicityError,
    TruncatedFileError,
    VersionMismatchError,
)

FORMAT_VERSION = 1

MAGIC_TOPOLOGY = b"ACSR"
MAGIC_INDEGREE = b"AIND"
MAGIC_SPILL = b"ASPL"
MAGIC_WEIGHTS = b"AWTS"
MAGIC_PERMUTATION = b"APRM"

_TOPO_HEADER = struct.Struct("<4sIQQB")
_INDEG_HEADER = struct.Struct("<4sIQ")
_SPILL_HEADER = struct.Struct("<4sIQQQIB")
_WEIGHTS_HEADER = struct.Struct("<4sIBIf")
_WEIGHTS_LAYER = struct.Struct("<II")
_PERM_HEADER = struct.Struct("<4sQ")

DTYPE_CODES = {"f32": 0, "f16": 1}
CODE_DTYPES = {0: "f32", 1: "f16"}
NP_DTYPES = {"f32": np.float32, "f16": np.float16}

TOPOLOGY_FILE = "topology.bin"
INDEGREE_FILE = "indeg.bin"
META_FILE = "meta.txt"
MANIFEST_FILE = "manifest.txt"


def _round_up(x: int) -> int:
    return (x + ALIGN - 1) & ~(ALIGN - 1)


def _check_magic(data: bytes, magic: bytes, path) -> None:
    if data[:4] != magic:
        raise BadMagicError(
            f"{path}: expected magic {magic!r}, found {data[:4]!r}"
        )


def _check_version(version: int, path) -> None:
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format version {version}, expected {FORMAT_VERSION}"
        )


# ---------------------------------------------------------------------------
# CSR topology + in-degrees


@dataclass
class GraphCSR:
    """In-memory CSR adjacency with per-vertex in-degrees.

    neighbors within each source's slice are strictly ascending;
    duplicate edges are removed at ingest, self loops are kept.
    """

    num_vertices: int
    num_edges: int
    offsets: np.ndarray  # (V+1,) int64, non-decreasing, [0] == 0
    neighbors: np.ndarray  # (E,) int64
    in_degrees: np.ndarray  # (V,) int64

    def validate(self) -> None:
        v, e = self.num_vertices, self.num_edges
        if self.offsets.shape != (v + 1,):
            raise InvariantError("offsets length must be |V|+1")
        if self.offsets[0] != 0 or self.offsets[-1] != e:
            raise InvariantError("offsets endpoints must be 0 and |E|")
        if np.any(np.diff(self.offsets) < 0):
            raise OffsetMonotonicityError("offsets must be non-decreasing")
        if self.neighbors.shape != (e,):
            raise InvariantError("neighbor array length must be |E|")
        if e and (self.neighbors.min() < 0 or self.neighbors.max() >= v):
            raise InvariantError("neighbor id out of range")
        # strictly ascending inside each row implies no duplicate edges
        if e > 1:
            diffs = np.diff(self.neighbors)
            # pairs straddling a row boundary are exempt from the check
            row_starts = self.offsets[1:-1]
            boundary = np.zeros(e - 1, dtype=bool)
            valid = (row_starts > 0) & (row_starts < e)
            boundary[row_starts[valid] - 1] = True
            if np.any((diffs <= 0) & ~boundary):
                raise InvariantError("neighbors must be ascending per row")
        if self.in_degrees.shape != (v,):
            raise InvariantError("in-degree length must be |V|")
        expect = np.bincount(self.neighbors, minlength=v).astype(np.int64)
        if not np.array_equal(expect, self.in_degrees):
            raise InvariantError("in-degrees disagree with adjacency")

    def out_degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    def max_in_degree(self) -> int:
        return int(self.in_degrees.max()) if self.num_vertices else 0

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (src, dst) per edge, in CSR order."""
        src = np.repeat(
            np.arange(self.num_vertices, dtype=np.int64), self.out_degrees()
        )
        return src, self.neighbors.astype(np.int64, copy=False)


def write_csr(graph: GraphCSR, directory) -> None:
    graph.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    id_width = 4 if graph.num_vertices <= 0xFFFFFFFF else 8

    blob = bytearray(
        _TOPO_HEADER.pack(
            MAGIC_TOPOLOGY,
            FORMAT_VERSION,
            graph.num_vertices,
            graph.num_edges,
            id_width,
        )
    )
    pad_to_align(blob)
    blob.extend(graph.offsets.astype("<u8").tobytes())
    pad_to_align(blob)
    nbr_dtype = "<u4" if id_width == 4 else "<u8"
    blob.extend(graph.neighbors.astype(nbr_dtype).tobytes())
    pad_to_align(blob)
    (directory / TOPOLOGY_FILE).write_bytes(bytes(blob))

    deg = bytearray(
        _INDEG_HEADER.pack(MAGIC_INDEGREE, FORMAT_VERSION, graph.num_vertices)
    )
    pad_to_align(deg)
    deg.extend(graph.in_degrees.astype("<u4").tobytes())
    pad_to_align(deg)
    (directory / INDEGREE_FILE).write_bytes(bytes(deg))


@dataclass
class TopologyHeader:
    path: Path
    num_vertices: int
    num_edges: int
    id_width: int
    offsets_pos: int
    neighbors_pos: int


def read_topology_header(path) -> TopologyHeader:
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(_TOPO_HEADER.size)
    if len(head) < _TOPO_HEADER.size:
        raise TruncatedFileError(f"{path}: header short")
    magic, version, v, e, id_width = _TOPO_HEADER.unpack(head)
    _check_magic(magic, MAGIC_TOPOLOGY, path)
    _check_version(version, path)
    if id_width not in (4, 8):
        raise FormatError(f"{path}: id width {id_width} not in {{4, 8}}")
    offsets_pos = ALIGN
    neighbors_pos = offsets_pos + _round_up((v + 1) * 8)
    expected_size = _round_up(neighbors_pos + e * id_width)
    actual = path.stat().st_size
    if actual < expected_size:
        raise TruncatedFileError(
            f"{path}: {actual} bytes on disk, header implies {expected_size}"
        )
    return TopologyHeader(path, v, e, id_width, offsets_pos, neighbors_pos)


def read_csr(directory) -> GraphCSR:
    directory = Path(directory)
    hdr = read_topology_header(directory / TOPOLOGY_FILE)
    with open(hdr.path, "rb") as f:
        f.seek(hdr.offsets_pos)
        raw = f.read((hdr.num_vertices + 1) * 8)
        if len(raw) != (hdr.num_vertices + 1) * 8:
            raise TruncatedFileError(f"{hdr.path}: offsets section short")
        offsets = np.frombuffer(raw, dtype="<u8").astype(np.int64)
        f.seek(hdr.neighbors_pos)
        nraw = f.read(hdr.num_edges * hdr.id_width)
        if len(nraw) != hdr.num_edges * hdr.id_width:
            raise TruncatedFileError(f"{hdr.path}: neighbor section short")
        nbr_dtype = "<u4" if hdr.id_width == 4 else "<u8"
        neighbors = np.frombuffer(nraw, dtype=nbr_dtype).astype(np.int64)
    if offsets[0] != 0 or offsets[-1] != hdr.num_edges:
        raise InvariantError(
            f"{hdr.path}: offsets endpoints {offsets[0]}..{offsets[-1]} "
            f"do not bracket 0..{hdr.num_edges}"
        )
    if np.any(np.diff(offsets) < 0):
        raise OffsetMonotonicityError(f"{hdr.path}: offsets decrease")
    if hdr.num_edges and neighbors.max() >= hdr.num_vertices:
        raise InvariantError(f"{hdr.path}: neighbor id out of range")
    in_deg = read_in_degrees(directory / INDEGREE_FILE, hdr.num_vertices)
    return GraphCSR(hdr.num_vertices, hdr.num_edges, offsets, neighbors, in_deg)


def read_in_degrees(path, expect_vertices=None) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(_INDEG_HEADER.size)
        if len(head) < _INDEG_HEADER.size:
            raise TruncatedFileError(f"{path}: header short")
        magic, version, v = _INDEG_HEADER.unpack(head)
        _check_magic(magic, MAGIC_INDEGREE, path)
        _check_version(version, path)
        if expect_vertices is not None and v != expect_vertices:
            raise ConsistencyError(
                f"{path}: holds {v} vertices, topology says {expect_vertices}"
            )
        f.seek(ALIGN)
        raw = f.read(v * 4)
    if len(raw) != v * 4:
        raise TruncatedFileError(f"{path}: degree section short")
    return np.frombuffer(raw, dtype="<u4").astype(np.int64)


# ---------------------------------------------------------------------------
# Spill files


@dataclass
class SpillHeader:
    path: Path
    min_id: int
    max_id: int
    row_count: int
    dim: int
    dtype: str
    ids_pos: int
    rows_pos: int

    @property
    def row_bytes(self) -> int:
        return self.dim * (2 if self.dtype == "f16" else 4)


def spill_layout(row_count: int, dim: int, dtype: str) -> tuple[int, int, int]:
    """Return (ids_pos, rows_pos, file_size) for a spill of this shape."""
    ids_pos = ALIGN
    rows_pos = ids_pos + _round_up(row_count * 8)
    itemsize = 2 if dtype == "f16" else 4
    file_size = _round_up(rows_pos + row_count * dim * itemsize)
    return ids_pos, rows_pos, file_size


def write_spill_file(path, ids: np.ndarray, rows: np.ndarray,
                     direct: bool = False) -> int:
    """Write one sorted run. Returns bytes written (incl. padding)."""
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    if ids.ndim != 1 or rows.ndim != 2 or len(ids) != len(rows):
        raise InvariantError("ids and rows must be parallel 1-D/2-D arrays")
    if len(ids) == 0:
        raise InvariantError("refusing to write an empty spill file")
    if np.any(np.diff(ids) <= 0):
        raise InvariantError("spill ids must be strictly ascending")
    if rows.dtype == np.float32:
        dtype = "f32"
    elif rows.dtype == np.float16:
        dtype = "f16"
    else:
        raise InvariantError(f"unsupported row dtype {rows.dtype}")
    blob = bytearray(
        _SPILL_HEADER.pack(
            MAGIC_SPILL,
            FORMAT_VERSION,
            int(ids[0]),
            int(ids[-1]),
            len(ids),
            rows.shape[1],
            DTYPE_CODES[dtype],
        )
    )
    pad_to_align(blob)
    blob.extend(ids.astype("<u8").tobytes())
    pad_to_align(blob)
    blob.extend(np.ascontiguousarray(rows).tobytes())
    pad_to_align(blob)
    return write_file_aligned(path, bytes(blob), direct=direct)


def read_spill_header(path) -> SpillHeader:
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(_SPILL_HEADER.size)
    if len(head) < _SPILL_HEADER.size:
        raise TruncatedFileError(f"{path}: header short")
    magic, version, min_id, max_id, rows, dim, code = _SPILL_HEADER.unpack(head)
    _check_magic(magic, MAGIC_SPILL, path)
    _check_version(version, path)
    if code not in CODE_DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    dtype = CODE_DTYPES[code]
    ids_pos, rows_pos, file_size = spill_layout(rows, dim, dtype)
    actual = path.stat().st_size
    if actual < file_size:
        raise TruncatedFileError(
            f"{path}: {actual} bytes on disk, header implies {file_size}"
        )
    if rows == 0 or min_id > max_id:
        raise InvariantError(f"{path}: empty or inverted id range")
    return SpillHeader(path, min_id, max_id, rows, dim, dtype, ids_pos, rows_pos)


def read_spill_file(path) -> tuple[np.ndarray, np.ndarray]:
    """Whole-file read, used by tools and tests. Keeps the stored dtype."""
    hdr = read_spill_header(path)
    with open(path, "rb") as f:
        f.seek(hdr.ids_pos)
        ids = np.frombuffer(f.read(hdr.row_count * 8), dtype="<u8")
        ids = ids.astype(np.int64)
        f.seek(hdr.rows_pos)
        raw = f.read(hdr.row_count * hdr.row_bytes)
    if len(raw) != hdr.row_count * hdr.row_bytes:
        raise TruncatedFileError(f"{path}: rows section short")
    rows = np.frombuffer(raw, dtype=NP_DTYPES[hdr.dtype])
    rows = rows.reshape(hdr.row_count, hdr.dim).copy()
    if np.any(np.diff(ids) <= 0):
        raise InvariantError(f"{path}: ids not strictly ascending")
    if ids[0] != hdr.min_id or ids[-1] != hdr.max_id:
        raise InvariantError(f"{path}: header id range disagrees with ids")
    return ids, rows


# ---------------------------------------------------------------------------
# Layer directories and manifests


@dataclass
class LayerMeta:
    num_vertices: int
    dim: int
    dtype: str  # "f32" | "f16"
    partitions: int


def partition_width(num_vertices: int, partitions: int) -> int:
    if partitions < 1:
        raise ConfigError("partitions must be >= 1")
    return max(1, -(-num_vertices // partitions))


def partition_ranges(num_vertices: int, partitions: int) -> list[tuple[int, int]]:
    """Equal-width id ranges tiling [0, num_vertices).

    Trailing partitions come out empty when there are more partitions
    than vertices.
    """
    w = partition_width(num_vertices, partitions)
    return [
        (min(p * w, num_vertices), min((p + 1) * w, num_vertices))
        for p in range(partitions)
    ]


def part_dir(layer_dir, k: int) -> Path:
    return Path(layer_dir) / f"part_{k}"


def write_layer_meta(layer_dir, meta: LayerMeta) -> None:
    layer_dir = Path(layer_dir)
    layer_dir.mkdir(parents=True, exist_ok=True)
    text = (
        f"vertices={meta.num_vertices}\n"
        f"dim={meta.dim}\n"
        f"dtype={meta.dtype}\n"
        f"partitions={meta.partitions}\n"
    )
    (layer_dir / META_FILE).write_text(text)


def read_layer_meta(layer_dir) -> LayerMeta:
    path = Path(layer_dir) / META_FILE
    fields = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        fields[key] = value
    try:
        meta = LayerMeta(
            num_vertices=int(fields["vertices"]),
            dim=int(fields["dim"]),
            dtype=fields["dtype"],
            partitions=int(fields["partitions"]),
        )
    except KeyError as e:
        raise FormatError(f"{path}: missing field {e}") from None
    if meta.dtype not in NP_DTYPES:
        raise FormatError(f"{path}: unknown dtype {meta.dtype!r}")
    return meta


def append_manifest(partition_dir, spill_name: str) -> None:
    with open(Path(partition_dir) / MANIFEST_FILE, "a") as f:
        f.write(spill_name + "\n")


def read_manifest(partition_dir) -> list[str]:
    path = Path(partition_dir) / MANIFEST_FILE
    if not path.exists():
        return []
    return [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]


def load_layer_matrix(layer_dir) -> np.ndarray:
    """Assemble the full (V, dim) float32 matrix from a layer directory.

    Tool/test scale only; inference never materializes this.
    """
    layer_dir = Path(layer_dir)
    meta = read_layer_meta(layer_dir)
    out = np.zeros((meta.num_vertices, meta.dim), dtype=np.float32)
    seen = np.zeros(meta.num_vertices, dtype=bool)
    for k in range(meta.partitions):
        pdir = part_dir(layer_dir, k)
        for name in read_manifest(pdir):
            ids, rows = read_spill_file(pdir / name)
            if np.any(seen[ids]):
                raise ConsistencyError(f"{pdir / name}: duplicate vertex rows")
            seen[ids] = True
            out[ids] = rows.astype(np.float32)
    if not np.all(seen):
        missing = np.flatnonzero(~seen)[:8].tolist()
        raise ConsistencyError(
            f"{layer_dir}: {int((~seen).sum())} vertices missing, "
            f"first {missing}"
        )
    return out


def write_matrix_as_layer(layer_dir, matrix: np.ndarray, partitions: int = 1,
                          dtype: str = "f32",
                          spill_rows: int | None = None) -> None:
    """Write a dense matrix out as a layer directory. Tool/test scale."""
    layer_dir = Path(layer_dir)
    v, dim = matrix.shape
    write_layer_meta(layer_dir, LayerMeta(v, dim, dtype, partitions))
    np_dtype = NP_DTYPES[dtype]
    for k, (lo, hi) in enumerate(partition_ranges(v, partitions)):
        pdir = part_dir(layer_dir, k)
        pdir.mkdir(parents=True, exist_ok=True)
        (pdir / MANIFEST_FILE).write_text("")
        if hi <= lo:
            continue
        step = spill_rows or (hi - lo)
        n = 0
        for start in range(lo, hi, step):
            stop = min(start + step, hi)
            ids = np.arange(start, stop, dtype=np.int64)
            block = np.ascontiguousarray(matrix[start:stop], dtype=np_dtype)
            name = f"spill_{n}"
            write_spill_file(pdir / name, ids, block)
            append_manifest(pdir, name)
            n += 1


# ---------------------------------------------------------------------------
# Model weights


class ModelKind(IntEnum):
    GCN = 0
    SAGE = 1
    GIN = 2

    @classmethod
    def from_name(cls, name: str) -> "ModelKind":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ConfigError(f"unknown model {name!r}") from None

    @property
    def cli_name(self) -> str:
        return self.name.lower()


@dataclass
class LayerWeights:
    in_dim: int
    out_dim: int
    weight: np.ndarray  # (out_dim, in_dim) float32, row-major
    bias: np.ndarray  # (out_dim,) float32


@dataclass
class ModelWeights:
    kind: ModelKind
    layers: list
    gin_epsilon: float = 0.0

    def validate(self, feature_dim: int | None = None) -> None:
        if not self.layers:
            raise InvariantError("model must have at least one layer")
        prev = feature_dim
        for i, lw in enumerate(self.layers):
            if lw.weight.shape != (lw.out_dim, lw.in_dim):
                raise InvariantError(f"layer {i}: weight shape mismatch")
            if lw.bias.shape != (lw.out_dim,):
                raise InvariantError(f"layer {i}: bias shape mismatch")
            if prev is not None:
                expect = 2 * prev if self.kind == ModelKind.SAGE else prev
                if lw.in_dim != expect:
                    raise InvariantError(
                        f"layer {i}: in_dim {lw.in_dim}, expected {expect}"
                    )
            prev = lw.out_dim

    def embedding_dim(self, layer_index: int) -> int:
        """Input embedding width of the given layer (pre-aggregation)."""
        lw = self.layers[layer_index]
        return lw.in_dim // 2 if self.kind == ModelKind.SAGE else lw.in_dim

    def agg_dim(self, layer_index: int) -> int:
        """Aggregation slot width for the given layer."""
        return self.layers[layer_index].in_dim


def write_weights(path, model: ModelWeights) -> None:
    model.validate()
    blob = bytearray(
        _WEIGHTS_HEADER.pack(
            MAGIC_WEIGHTS,
            FORMAT_VERSION,
            int(model.kind),
            len(model.layers),
            float(model.gin_epsilon),
        )
    )
    for lw in model.layers:
        blob.extend(_WEIGHTS_LAYER.pack(lw.in_dim, lw.out_dim))
        blob.extend(np.ascontiguousarray(lw.weight, dtype="<f4").tobytes())
        blob.extend(np.ascontiguousarray(lw.bias, dtype="<f4").tobytes())
    Path(path).write_bytes(bytes(blob))


def read_weights(path) -> ModelWeights:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _WEIGHTS_HEADER.size:
        raise TruncatedFileError(f"{path}: header short")
    magic, version, kind_code, layer_count, eps = _WEIGHTS_HEADER.unpack_from(
        data, 0
    )
    _check_magic(magic, MAGIC_WEIGHTS, path)
    _check_version(version, path)
    try:
        kind = ModelKind(kind_code)
    except ValueError:
        raise FormatError(f"{path}: unknown model kind {kind_code}") from None
    pos = _WEIGHTS_HEADER.size
    layers = []
    for i in range(layer_count):
        if pos + _WEIGHTS_LAYER.size > len(data):
            raise TruncatedFileError(f"{path}: layer {i} header short")
        in_dim, out_dim = _WEIGHTS_LAYER.unpack_from(data, pos)
        pos += _WEIGHTS_LAYER.size
        w_bytes = in_dim * out_dim * 4
        b_bytes = out_dim * 4
        if pos + w_bytes + b_bytes > len(data):
            raise TruncatedFileError(f"{path}: layer {i} payload short")
        weight = np.frombuffer(data, dtype="<f4", count=in_dim * out_dim,
                               offset=pos).reshape(out_dim, in_dim).copy()
        pos += w_bytes
        bias = np.frombuffer(data, dtype="<f4", count=out_dim,
                             offset=pos).copy()
        pos += b_bytes
        layers.append(LayerWeights(in_dim, out_dim, weight, bias))
    model = ModelWeights(kind, layers, float(eps))
    model.validate()
    return model


def random_weights(kind: ModelKind, dims: list, seed: int,
                   gin_epsilon: float = 0.0,
                   gain: float = 1.0) -> ModelWeights:
    """Build a model with uniform Glorot-style weights.

    dims = [feature_dim, hidden..., output_dim]; SAGE layers double
    their input width internally to make room for the self column.
    gain rescales the init; sum-aggregating models on heavy-tailed
    graphs want gain < 1 to keep hub activations in a sane range.
    """
    if len(dims) < 2:
        raise ConfigError("need at least [input_dim, output_dim]")
    rng = np.random.default_rng(seed)
    layers = []
    prev = dims[0]
    for out_dim in dims[1:]:
        in_dim = 2 * prev if kind == ModelKind.SAGE else prev
        scale = gain * np.sqrt(6.0 / (in_dim + out_dim))
        weight = rng.uniform(-scale, scale, (out_dim, in_dim))
        bias = gain * rng.uniform(-0.1, 0.1, out_dim)
        layers.append(
            LayerWeights(
                in_dim,
                out_dim,
                weight.astype(np.float32),
                bias.astype(np.float32),
            )
        )
        prev = out_dim
    return ModelWeights(kind, layers, gin_epsilon)


# ---------------------------------------------------------------------------
# Permutations


def write_permutation(path, old_to_new: np.ndarray) -> None:
    old_to_new = np.ascontiguousarray(old_to_new, dtype=np.int64)
    v = len(old_to_new)
    if v and not np.array_equal(np.sort(old_to_new), np.arange(v)):
        raise InvariantError("old_to_new must be a permutation of 0..|V|-1")
    blob = bytearray(_PERM_HEADER.pack(MAGIC_PERMUTATION, v))
    blob.extend(old_to_new.astype("<u8").tobytes())
    Path(path).write_bytes(bytes(blob))


def read_permutation(path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _PERM_HEADER.size:
        raise TruncatedFileError(f"{path}: header short")
    magic, v = _PERM_HEADER.unpack_from(data, 0)
    _check_magic(magic, MAGIC_PERMUTATION, path)
    if len(data) < _PERM_HEADER.size + v * 8:
        raise TruncatedFileError(f"{path}: body short")
    perm = np.frombuffer(data, dtype="<u8", count=v,
                         offset=_PERM_HEADER.size).astype(np.int64)
    if v and not np.array_equal(np.sort(perm), np.arange(v)):
        raise InvariantError(f"{path}: not a permutation")
    return perm


# ---------------------------------------------------------------------------
# Edge-list ingest


def parse_edge_list(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse "src dst" lines into two int64 arrays."""
    srcs, dsts = [], []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise FormatError(
                    f"{path}:{lineno}: expected 'src dst', got {line!r}"
                )
            try:
                srcs.append(int(parts[0]))
                dsts.append(int(parts[1]))
            except ValueError:
                raise FormatError(
                    f"{path}:{lineno}: non-integer vertex id in {line!r}"
                ) from None
    return (
        np.asarray(srcs, dtype=np.int64),
        np.asarray(dsts, dtype=np.int64),
    )


def edges_to_csr(src: np.ndarray, dst: np.ndarray,
                 num_vertices: int) -> GraphCSR:
    """Sort, deduplicate and pack an edge list. Self loops survive."""
    if num_vertices < 0:
        raise ConfigError("vertex count cannot be negative")
    if len(src) != len(dst):
        raise InvariantError("src/dst length mismatch")
    if num_vertices == 0:
        if len(src):
            raise InvariantError("edges on an empty vertex set")
        return GraphCSR(
            0, 0,
            np.zeros(1, dtype=np.int64),
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int64),
        )
    if len(src):
        lo = min(int(src.min()), int(dst.min()))
        hi = max(int(src.max()), int(dst.max()))
        if lo < 0 or hi >= num_vertices:
            raise InvariantError(
                f"edge endpoint out of range [0, {num_vertices})"
            )
    keys = src * np.int64(num_vertices) + dst
    keys = np.unique(keys)  # sorted by (src, dst); duplicates dropped
    src_u = keys // num_vertices
    dst_u = keys % num_vertices
    offsets = np.zeros(num_vertices + 1, dtype=np.int64)
    np.cumsum(np.bincount(src_u, minlength=num_vertices), out=offsets[1:])
    in_deg = np.bincount(dst_u, minlength=num_vertices).astype(np.int64)
    return GraphCSR(num_vertices, len(keys), offsets, dst_u, in_deg)


def ingest_edge_list(edges_path, num_vertices: int, out_dir) -> GraphCSR:
    src, dst = parse_edge_list(edges_path)
    graph = edges_to_csr(src, dst, num_vertices)
    write_csr(graph, out_dir)
    return graph


# ---------------------------------------------------------------------------
# Synthetic datasets


def uniform_random_edges(num_vertices: int, avg_degree: int,
                         rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    m = num_vertices * avg_degree
    src = rng.integers(0, num_vertices, m, dtype=np.int64)
    dst = rng.integers(0, num_vertices, m, dtype=np.int64)
    return src, dst


def preferential_attachment_edges(
    num_vertices: int, avg_degree: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Heavy-tailed in-degree graph grown by repeated-endpoint sampling.

    Each new vertex picks `avg_degree` distinct targets weighted by how
    often vertices already appear as endpoints, so early vertices turn
    into hubs. A small directed ring seeds the pool. Vertex IDs are
    relabeled by a seeded permutation before returning, so the native
    ordering carries no growth-order locality (hub IDs are spread out
    the way crawl or ingest orders spread them in real corpora).
    """
    m = max(1, avg_degree)
    m0 = min(max(2, m + 1), num_vertices)
    pool = np.empty(2 * m * num_vertices + 4 * m0, dtype=np.int64)
    plen = 0
    srcs, dsts = [], []
    for i in range(m0):
        j = (i + 1) % m0
        srcs.append(i)
        dsts.append(j)
        pool[plen] = j
        pool[plen + 1] = i
        plen += 2

    # pre-drawn uniforms, refilled in blocks, keep the stream deterministic
    block = np.empty(0)
    bpos = 0

    def next_unit() -> float:
        nonlocal block, bpos
        if bpos >= len(block):
            block = rng.random(65536)
            bpos = 0
        u = block[bpos]
        bpos += 1
        return float(u)

    for v in range(m0, num_vertices):
        want = min(m, v)
        targets = set()
        while len(targets) < want:
            t = int(pool[int(next_unit() * plen)])
            targets.add(t)
        # both endpoints join the pool once per edge, so attachment
        # stays proportional to total degree
        for t in sorted(targets):
            srcs.append(v)
            dsts.append(t)
            pool[plen] = t
            pool[plen + 1] = v
            plen += 2
    relabel = rng.permutation(num_vertices).astype(np.int64)
    return (
        relabel[np.asarray(srcs, dtype=np.int64)],
        relabel[np.asarray(dsts, dtype=np.int64)],
    )


def write_random_features(layer_dir, num_vertices: int, dim: int,
                          rng: np.random.Generator, dtype: str = "f32",
                          batch_bytes: int = 4 << 20) -> None:
    """Uniform [-1, 1) features, written as one partition of spill runs."""
    write_layer_meta(layer_dir, LayerMeta(num_vertices, dim, dtype, 1))
    pdir = part_dir(layer_dir, 0)
    pdir.mkdir(parents=True, exist_ok=True)
    (pdir / MANIFEST_FILE).write_text("")
    np_dtype = NP_DTYPES[dtype]
    rows_per = max(1, batch_bytes // (dim * 4 + 8))
    n = 0
    for start in range(0, num_vertices, rows_per):
        stop = min(start + rows_per, num_vertices)
        block = rng.uniform(-1.0, 1.0, (stop - start, dim))
        ids = np.arange(start, stop, dtype=np.int64)
        name = f"spill_{n}"
        write_spill_file(pdir / name, ids, block.astype(np_dtype))
        append_manifest(pdir, name)
        n += 1


@dataclass
class DatasetSummary:
    num_vertices: int
    num_edges: int
    max_in_degree: int
    feature_dim: int


def generate_synthetic(kind: str, num_vertices: int, avg_degree: int,
                       feature_dim: int, seed: int, out_dir,
                       dtype: str = "f32") -> DatasetSummary:
    """Build a complete dataset directory: topology, degrees, features."""
    rng = np.random.default_rng(seed)
    if kind == "uniform":
        src, dst = uniform_random_edges(num_vertices, avg_degree, rng)
    elif kind == "pa":
        src, dst = preferential_attachment_edges(num_vertices, avg_degree, rng)
    else:
        raise ConfigError(f"unknown synthetic kind {kind!r}")
    graph = edges_to_csr(src, dst, num_vertices)
    out_dir = Path(out_dir)
    write_csr(graph, out_dir)
    write_random_features(
        out_dir / "features", num_vertices, feature_dim, rng, dtype=dtype
    )
    return DatasetSummary(
        graph.num_vertices,
        graph.num_edges,
        graph.max_in_degree(),
        feature_dim,
    )
