"""Binary snapshot and columnar text formats for metric data.

Binary layout (all little-endian)::

    b"MASSKIT\\0"            8-byte magic
    uint32 version
    uint32 header length N
    N bytes of UTF-8 JSON    {"kind", "grid", "arrays": [[name, shape], ...], "meta"}
    float64 payload          arrays in header order, C order

Objects are encoded through a small registry so every module can make its
types snapshot-able without this module importing them.
"""

import json
import struct

import numpy as np

from .errors import SnapshotFormatError
from .geometry import FoliatedMetric, SphereGrid

MAGIC = b"MASSKIT\0"
VERSION = 1

_ENCODERS = {}
_DECODERS = {}


def register(kind, cls, encode, decode):
    """``encode(obj) -> (grid, arrays, meta)``; ``decode(grid, arrays, meta) -> obj``."""
    _ENCODERS[cls] = (kind, encode)
    _DECODERS[kind] = decode


def _grid_json(grid):
    return [grid.n_theta, grid.n_phi, bool(grid.reduced)]


def _grid_from_json(spec):
    n_theta, n_phi, reduced = spec
    return SphereGrid(n_theta, n_phi, _reduced=reduced)


def dumps(obj):
    try:
        kind, encode = _ENCODERS[type(obj)]
    except KeyError:
        raise SnapshotFormatError(f"no snapshot encoder for {type(obj).__name__}") from None
    grid, arrays, meta = encode(obj)
    names = [k for k, v in arrays.items() if v is not None]
    header = {
        "kind": kind,
        "grid": _grid_json(grid),
        "arrays": [[k, list(np.shape(arrays[k]))] for k in names],
        "meta": meta,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(hb)), hb]
    for k in names:
        parts.append(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())
    return b"".join(parts)


def loads(data):
    if data[:8] != MAGIC:
        raise SnapshotFormatError("bad magic")
    version, n = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {version}")
    header = json.loads(data[16:16 + n].decode())
    pos = 16 + n
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(float)
        arrays[name] = a.reshape(shape)
        pos += 8 * count
    if pos != len(data):
        raise SnapshotFormatError("trailing bytes in snapshot")
    try:
        decode = _DECODERS[header["kind"]]
    except KeyError:
        raise SnapshotFormatError(f"unknown snapshot kind {header['kind']!r}") from None
    return decode(_grid_from_json(header["grid"]), arrays, header["meta"])


def save(path, obj):
    with open(path, "wb") as fh:
        fh.write(dumps(obj))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


# ---------------------------------------------------------------------------
# FoliatedMetric


def _encode_foliated(fm):
    arrays = {
        "slices": fm.slices,
        "components": fm.components,
        "lapse": fm.lapse,
        "d_components": fm.d_components,
        "d2_components": fm.d2_components,
        "d_lapse": fm.d_lapse,
    }
    meta = {"breaks": list(fm.breaks), "u_min": fm.u_min,
            "meta": {k: v for k, v in fm.meta.items() if _jsonable(v)}}
    return fm.grid, arrays, meta


def _decode_foliated(grid, arrays, meta):
    return FoliatedMetric(grid, arrays["slices"], arrays["components"], arrays["lapse"],
                          arrays.get("d_components"), arrays.get("d2_components"),
                          arrays.get("d_lapse"), tuple(meta["breaks"]), meta["u_min"],
                          dict(meta.get("meta", {})))


def _jsonable(v):
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False


register("foliated_metric", FoliatedMetric, _encode_foliated, _decode_foliated)


# ---------------------------------------------------------------------------
# columnar text


COLUMNS = ("t", "theta", "phi", "g_tt", "g_tp", "g_pp", "lapse")


def write_columnar(path, fm):
    """One row per (leaf, node); values printed with 17 significant digits."""
    th, ph = fm.grid.mesh()
    with open(path, "w") as fh:
        fh.write(f"# masskit columnar v{VERSION}\n")
        fh.write(f"# grid {fm.grid.n_theta} {fm.grid.n_phi} {int(fm.grid.reduced)}\n")
        fh.write(f"# breaks {' '.join(map(str, fm.breaks))}\n")
        fh.write("# " + " ".join(COLUMNS) + "\n")
        for k, t in enumerate(fm.slices):
            c = fm.components[k]
            rows = np.column_stack([
                np.full(th.size, t), th.ravel(), ph.ravel(),
                c[0].ravel(), c[1].ravel(), c[2].ravel(), fm.lapse[k].ravel(),
            ])
            np.savetxt(fh, rows, fmt="%.17g")


def read_columnar(path):
    grid_spec, breaks = None, ()
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            tok = line[1:].split()
            if tok and tok[0] == "grid":
                grid_spec = [int(tok[1]), int(tok[2]), bool(int(tok[3]))]
            elif tok and tok[0] == "breaks":
                breaks = tuple(int(b) for b in tok[1:])
    if grid_spec is None:
        raise SnapshotFormatError("missing grid line")
    grid = _grid_from_json(grid_spec)
    data = np.loadtxt(path, ndmin=2)
    n = grid.size
    K = data.shape[0] // n
    data = data.reshape(K, grid.n_theta, grid.n_phi, len(COLUMNS))
    comp = np.moveaxis(data[..., 3:6], -1, 1)
    return FoliatedMetric(grid, data[:, 0, 0, 0], comp, data[..., 6], breaks=breaks)
