"""Point cloud, mesh and record-metadata file formats.

Supported clouds: PLY (ascii, binary_little_endian), PCD v0.7 (ascii, binary),
and CSV with an ``x,y,z[,...]`` header row. Meshes: PLY and OBJ. Object and
scene metadata live in ``<name>.meta.json`` sidecars next to the cloud file.

Positions are written as float64 in the binary formats so a write/read cycle
is bit-exact. ASCII formats print 17 significant digits.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import re
import tempfile
from pathlib import Path

import numpy as np

from .core import ObjectRecord, PointCloud, SceneRecord, TriangleMesh, centroid, wrap_angle
from .errors import (
    MetadataInconsistentError,
    NoPositionDataError,
    ParseError,
    SchemaError,
    UnsupportedFormatError,
)

logger = logging.getLogger(__name__)

__all__ = [
    "CloudFileFormat",
    "detect_format",
    "read_point_cloud",
    "write_point_cloud",
    "read_mesh",
    "write_mesh",
    "read_object_record",
    "write_object_record",
    "read_scene_record",
    "write_scene_record",
    "atomic_write_bytes",
    "atomic_write_text",
]


class CloudFileFormat(enum.Enum):
    PLY_ASCII = "ply_ascii"
    PLY_BINARY_LE = "ply_binary_le"
    PCD_ASCII = "pcd_ascii"
    PCD_BINARY = "pcd_binary"
    XYZ_CSV = "xyz_csv"

    @classmethod
    def parse(cls, value) -> "CloudFileFormat":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(f.value for f in cls)
            raise UnsupportedFormatError(f"unknown cloud format {value!r} (expected one of {names})")


_UMASK = os.umask(0)
os.umask(_UMASK)


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        # mkstemp creates 0600; give the result ordinary permissions
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# format detection

_EXTENSIONS = {".ply": "ply", ".pcd": "pcd", ".csv": "csv", ".xyz": "csv"}


def detect_format(path) -> CloudFileFormat:
    """Magic bytes first, then extension. Never sniffs beyond the header."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4096)
    if head.startswith(b"ply"):
        m = re.search(rb"^format\s+(\S+)", head, re.MULTILINE)
        if not m:
            raise ParseError(len(head), "PLY header has no format line")
        kind = m.group(1).decode("ascii", "replace")
        if kind == "ascii":
            return CloudFileFormat.PLY_ASCII
        if kind == "binary_little_endian":
            return CloudFileFormat.PLY_BINARY_LE
        raise UnsupportedFormatError(f"unsupported PLY encoding {kind!r}")
    if head.startswith(b"# .PCD") or re.match(rb"(#[^\n]*\n)*\s*(VERSION|FIELDS)\b", head):
        m = re.search(rb"^DATA\s+(\S+)", head, re.MULTILINE)
        if not m:
            raise ParseError(len(head), "PCD header has no DATA line")
        kind = m.group(1).decode("ascii", "replace")
        if kind == "ascii":
            return CloudFileFormat.PCD_ASCII
        if kind == "binary":
            return CloudFileFormat.PCD_BINARY
        raise UnsupportedFormatError(f"unsupported PCD encoding {kind!r}")
    ext = _EXTENSIONS.get(path.suffix.lower())
    if ext == "csv":
        return CloudFileFormat.XYZ_CSV
    if ext in ("ply", "pcd"):
        raise ParseError(0, f"missing {ext.upper()} magic")
    raise UnsupportedFormatError(f"cannot determine point cloud format of {path}")


# ---------------------------------------------------------------------------
# PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
    # non-standard, accepted so 64-bit timestamps survive a round trip
    "int64": "i8", "uint64": "u8",
}
_PLY_NAMES = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort", "i4": "int",
              "u4": "uint", "f4": "float", "f8": "double", "i8": "int64", "u8": "uint64"}


class _PlyElement:
    def __init__(self, name, count):
        self.name = name
        self.count = count
        self.props: list[tuple[str, str, str | None]] = []  # (name, dtype, list count dtype)

    @property
    def has_lists(self):
        return any(p[2] is not None for p in self.props)


def _parse_ply_header(data: bytes):
    m = re.search(rb"end_header[ \t]*\r?\n", data)
    if not m:
        raise ParseError(len(data), "PLY header not terminated by end_header")
    body_start = m.end()
    fmt = None
    elements: list[_PlyElement] = []
    pos = 0
    for raw in data[:m.start()].split(b"\n"):
        line = raw.decode("ascii", "replace").strip()
        offset = pos
        pos += len(raw) + 1
        if not line or line == "ply":
            continue
        words = line.split()
        key = words[0]
        if key in ("comment", "obj_info"):
            continue
        if key == "format":
            if len(words) < 2:
                raise ParseError(offset, "bad format line")
            fmt = words[1]
        elif key == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise ParseError(offset, f"bad element line {line!r}")
            elements.append(_PlyElement(words[1], int(words[2])))
        elif key == "property":
            if not elements:
                raise ParseError(offset, "property before element")
            if len(words) == 5 and words[1] == "list":
                ct, it = _PLY_TYPES.get(words[2]), _PLY_TYPES.get(words[3])
                if ct is None or it is None:
                    raise ParseError(offset, f"unknown list type in {line!r}")
                elements[-1].props.append((words[4], it, ct))
            elif len(words) == 3:
                t = _PLY_TYPES.get(words[1])
                if t is None:
                    raise ParseError(offset, f"unknown property type {words[1]!r}")
                elements[-1].props.append((words[2], t, None))
            else:
                raise ParseError(offset, f"bad property line {line!r}")
        else:
            raise ParseError(offset, f"unexpected header keyword {key!r}")
    if fmt is None:
        raise ParseError(0, "PLY header has no format line")
    if fmt not in ("ascii", "binary_little_endian"):
        raise UnsupportedFormatError(f"unsupported PLY encoding {fmt!r}")
    return fmt, elements, body_start


def _ply_ascii_elements(data: bytes, elements, start: int):
    """Parse an ASCII PLY body into {element: columns} (or row dicts for list elements)."""
    text = data[start:]
    lines = text.split(b"\n")
    line_offsets = np.cumsum([0] + [len(l) + 1 for l in lines[:-1]]) + start
    li = 0
    out = {}
    for el in elements:
        rows = []
        for _ in range(el.count):
            while li < len(lines) and not lines[li].strip():
                li += 1
            if li >= len(lines):
                raise ParseError(len(data), f"element {el.name!r}: expected {el.count} rows, got {len(rows)}")
            rows.append((lines[li].split(), int(line_offsets[li])))
            li += 1
        if el.has_lists:
            parsed = []
            for toks, off in rows:
                vals, k = {}, 0
                try:
                    for name, dt, ct in el.props:
                        if ct is None:
                            vals[name] = np.array(toks[k], dtype=np.float64).astype(dt) if dt[0] == "f" else int(toks[k])
                            k += 1
                        else:
                            n = int(toks[k])
                            vals[name] = [int(float(x)) for x in toks[k + 1 : k + 1 + n]]
                            if len(vals[name]) != n:
                                raise IndexError
                            k += 1 + n
                except (IndexError, ValueError):
                    raise ParseError(off, f"malformed {el.name!r} row")
                parsed.append(vals)
            out[el.name] = parsed
        else:
            ncol = len(el.props)
            for toks, off in rows:
                if len(toks) != ncol:
                    raise ParseError(off, f"expected {ncol} values in {el.name!r} row, got {len(toks)}")
            cols = {}
            for j, (name, dt, _) in enumerate(el.props):
                try:
                    if dt[0] == "f":
                        cols[name] = np.array([r[0][j] for r in rows], dtype=np.float64).astype(dt)
                    else:
                        cols[name] = np.array([int(r[0][j]) for r in rows], dtype=dt)
                except ValueError:
                    bad = next(off for toks, off in rows if not _is_number(toks[j]))
                    raise ParseError(bad, f"non-numeric value for {name!r}")
            out[el.name] = cols
    return out


def _is_number(tok: bytes) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def _ply_binary_elements(data: bytes, elements, start: int):
    out = {}
    pos = start
    for el in elements:
        if not el.has_lists:
            dt = np.dtype([(name, "<" + t) for name, t, _ in el.props])
            nbytes = dt.itemsize * el.count
            if pos + nbytes > len(data):
                raise ParseError(len(data), f"element {el.name!r} truncated")
            arr = np.frombuffer(data, dtype=dt, count=el.count, offset=pos)
            pos += nbytes
            out[el.name] = {name: arr[name].astype(arr.dtype[name].newbyteorder("=")) for name, _, _ in el.props}
            continue
        rows = []
        for _ in range(el.count):
            vals = {}
            for name, t, ct in el.props:
                if ct is None:
                    size = np.dtype(t).itemsize
                    if pos + size > len(data):
                        raise ParseError(len(data), f"element {el.name!r} truncated")
                    vals[name] = np.frombuffer(data, "<" + t, 1, pos)[0]
                    pos += size
                else:
                    csize = np.dtype(ct).itemsize
                    if pos + csize > len(data):
                        raise ParseError(len(data), f"element {el.name!r} truncated")
                    n = int(np.frombuffer(data, "<" + ct, 1, pos)[0])
                    pos += csize
                    isize = np.dtype(t).itemsize
                    if pos + n * isize > len(data):
                        raise ParseError(len(data), f"element {el.name!r} truncated")
                    vals[name] = np.frombuffer(data, "<" + t, n, pos).astype(np.int64).tolist()
                    pos += n * isize
            rows.append(vals)
        out[el.name] = rows
    return out


def _read_ply(data: bytes):
    fmt, elements, start = _parse_ply_header(data)
    if fmt == "ascii":
        return _ply_ascii_elements(data, elements, start), elements
    return _ply_binary_elements(data, elements, start), elements


def _cloud_from_columns(cols: dict, path, order) -> PointCloud:
    if not all(k in cols for k in ("x", "y", "z")):
        raise NoPositionDataError(path)
    pos = np.column_stack([np.asarray(cols[k], dtype=np.float64) for k in ("x", "y", "z")])
    attrs = {k: np.asarray(cols[k]) for k in order if k not in ("x", "y", "z")}
    finite = np.all(np.isfinite(pos), axis=1)
    if not np.all(finite):
        dropped = int((~finite).sum())
        logger.warning("%s: dropped %d points with non-finite positions", path, dropped)
        pos = pos[finite]
        attrs = {k: v[finite] for k, v in attrs.items()}
    return PointCloud(pos, attrs)


def _write_ply(cloud: PointCloud, binary: bool) -> bytes:
    attrs = cloud.attributes
    props = [("x", "f8"), ("y", "f8"), ("z", "f8")]
    for name, arr in attrs.items():
        props.append((name, _attr_dtype_code(arr.dtype, name)))
    header = ["ply", "format " + ("binary_little_endian" if binary else "ascii") + " 1.0",
              f"element vertex {len(cloud)}"]
    header += [f"property {_PLY_NAMES[t]} {n}" for n, t in props]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    columns = [cloud.positions[:, 0], cloud.positions[:, 1], cloud.positions[:, 2]]
    columns += [np.asarray(a) for a in attrs.values()]
    if binary:
        dt = np.dtype([(n, "<" + t) for n, t in props])
        rec = np.empty(len(cloud), dtype=dt)
        for (n, t), col in zip(props, columns):
            rec[n] = col.astype(t)
        return head + rec.tobytes()
    return head + _ascii_rows(columns, [t for _, t in props], " ").encode("ascii")


def _attr_dtype_code(dtype: np.dtype, name: str) -> str:
    if dtype == np.bool_:
        return "u1"
    code = dtype.kind + str(dtype.itemsize)
    if code not in _PLY_NAMES:
        raise ValueError(f"attribute {name!r}: dtype {dtype} cannot be stored")
    return code


def _format_column(col: np.ndarray, code: str) -> list[str]:
    if code == "f8":
        return [repr(float(v)) for v in col]
    if code == "f4":
        return ["%.9g" % v for v in col.astype(np.float32)]
    return [str(int(v)) for v in col]


def _ascii_rows(columns, codes, sep: str) -> str:
    if not len(columns) or len(columns[0]) == 0:
        return ""
    formatted = [_format_column(np.asarray(c), code) for c, code in zip(columns, codes)]
    return "".join(sep.join(row) + "\n" for row in zip(*formatted))


# ---------------------------------------------------------------------------
# PCD

_PCD_KEYS = ("VERSION", "FIELDS", "SIZE", "TYPE", "COUNT", "WIDTH", "HEIGHT", "VIEWPOINT", "POINTS", "DATA")


def _parse_pcd_header(data: bytes):
    header = {}
    pos = 0
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise ParseError(len(data), "PCD header not terminated by DATA line")
        line = data[pos:nl].decode("ascii", "replace").strip()
        offset = pos
        pos = nl + 1
        if not line or line.startswith("#"):
            continue
        words = line.split()
        key = words[0].upper()
        if key not in _PCD_KEYS:
            raise ParseError(offset, f"unexpected PCD header keyword {words[0]!r}")
        header[key] = (words[1:], offset)
        if key == "DATA":
            break
    fields = header.get("FIELDS", ([], 0))[0]
    n = len(fields)
    try:
        sizes = [int(s) for s in header.get("SIZE", (["4"] * n, 0))[0]]
        types = [t.upper() for t in header.get("TYPE", (["F"] * n, 0))[0]]
        counts = [int(c) for c in header.get("COUNT", (["1"] * n, 0))[0]]
        width = int(header["WIDTH"][0][0]) if "WIDTH" in header else None
        height = int(header.get("HEIGHT", (["1"], 0))[0][0])
        points = int(header["POINTS"][0][0]) if "POINTS" in header else (width or 0) * height
    except (ValueError, IndexError, KeyError):
        raise ParseError(header.get("SIZE", ([], 0))[1], "malformed PCD header")
    if not (len(sizes) == len(types) == len(counts) == n) or n == 0:
        raise ParseError(header.get("FIELDS", ([], 0))[1], "PCD FIELDS/SIZE/TYPE/COUNT mismatch")
    fmt = header["DATA"][0][0].lower() if header["DATA"][0] else ""
    if fmt not in ("ascii", "binary"):
        raise UnsupportedFormatError(f"unsupported PCD encoding {fmt!r}")
    dtypes = []
    for name, size, typ in zip(fields, sizes, types):
        kind = {"F": "f", "I": "i", "U": "u"}.get(typ)
        if kind is None or np.dtype(f"{kind}{size}").itemsize != size:
            raise ParseError(header["TYPE"][1], f"bad type {typ}{size} for field {name!r}")
        dtypes.append(f"{kind}{size}")
    return fmt, list(zip(fields, dtypes, counts)), points, pos


def _pcd_columns(fields, raw_cols):
    cols, order = {}, []
    for (name, dt, count), arr in zip(fields, raw_cols):
        if name == "_":
            continue
        if count == 1:
            arr = arr[:, 0]
            if name in ("rgb", "rgba"):
                packed = arr.astype(dt).view(np.uint32) if dt in ("f4", "u4", "i4") else arr.astype(np.uint32)
                for ch, shift in (("r", 16), ("g", 8), ("b", 0)):
                    cols[ch] = ((packed >> shift) & 0xFF).astype(np.uint8)
                    order.append(ch)
                continue
            cols[name] = arr
            order.append(name)
        else:
            for k in range(count):
                cols[f"{name}_{k}"] = arr[:, k]
                order.append(f"{name}_{k}")
    return cols, order


def _read_pcd(data: bytes, path):
    fmt, fields, n, start = _parse_pcd_header(data)
    if fmt == "binary":
        dt = np.dtype([(f"f{i}", "<" + t, (c,)) for i, (_, t, c) in enumerate(fields)])
        if start + dt.itemsize * n > len(data):
            raise ParseError(len(data), f"PCD binary body truncated (expected {n} points)")
        rec = np.frombuffer(data, dtype=dt, count=n, offset=start)
        raw = [np.asarray(rec[f"f{i}"]).reshape(n, c).astype(np.dtype(t)) for i, (_, t, c) in enumerate(fields)]
    else:
        lines = data[start:].split(b"\n")
        width = sum(c for _, _, c in fields)
        rows, off = [], start
        for line in lines:
            if len(rows) == n:
                break
            toks = line.split()
            if toks:
                if len(toks) != width:
                    raise ParseError(off, f"expected {width} values, got {len(toks)}")
                rows.append(toks)
            off += len(line) + 1
        if len(rows) < n:
            raise ParseError(len(data), f"PCD ascii body has {len(rows)} of {n} points")
        raw, j = [], 0
        for name, t, c in fields:
            block = [r[j : j + c] for r in rows]
            try:
                if t[0] == "f":
                    arr = np.array(block, dtype=np.float64).reshape(n, c).astype(t)
                else:
                    arr = np.array([[int(v) for v in r] for r in block], dtype=t).reshape(n, c)
            except ValueError:
                raise ParseError(start, f"non-numeric value in field {name!r}")
            raw.append(arr)
            j += c
    cols, order = _pcd_columns(fields, raw)
    return _cloud_from_columns(cols, path, order)


def _write_pcd(cloud: PointCloud, binary: bool) -> bytes:
    attrs = cloud.attributes
    names = ["x", "y", "z"] + list(attrs)
    codes = ["f8", "f8", "f8"] + [_attr_dtype_code(a.dtype, n) for n, a in attrs.items()]
    header = [
        "# .PCD v0.7 - Point Cloud Data file format",
        "VERSION 0.7",
        "FIELDS " + " ".join(names),
        "SIZE " + " ".join(c[1] for c in codes),
        "TYPE " + " ".join({"f": "F", "i": "I", "u": "U"}[c[0]] for c in codes),
        "COUNT " + " ".join("1" for _ in codes),
        f"WIDTH {len(cloud)}",
        "HEIGHT 1",
        "VIEWPOINT 0 0 0 1 0 0 0",
        f"POINTS {len(cloud)}",
        "DATA " + ("binary" if binary else "ascii"),
    ]
    head = ("\n".join(header) + "\n").encode("ascii")
    columns = [cloud.positions[:, i] for i in range(3)] + [np.asarray(a) for a in attrs.values()]
    if binary:
        dt = np.dtype([(n, "<" + c) for n, c in zip(names, codes)])
        rec = np.empty(len(cloud), dtype=dt)
        for n, c, col in zip(names, codes, columns):
            rec[n] = col.astype(c)
        return head + rec.tobytes()
    return head + _ascii_rows(columns, codes, " ").encode("ascii")


# ---------------------------------------------------------------------------
# CSV


def _read_csv(data: bytes, path):
    lines = data.split(b"\n")
    if not lines or not lines[0].strip():
        raise NoPositionDataError(path)
    names = [h.strip() for h in lines[0].decode("utf-8", "replace").strip().split(",")]
    rows, off = [], len(lines[0]) + 1
    for line in lines[1:]:
        if line.strip():
            toks = line.split(b",")
            if len(toks) != len(names):
                raise ParseError(off, f"expected {len(names)} columns, got {len(toks)}")
            try:
                rows.append([float(t) for t in toks])
            except ValueError:
                raise ParseError(off, "non-numeric value")
        off += len(line) + 1
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    cols = {n: arr[:, j] for j, n in enumerate(names)}
    return _cloud_from_columns(cols, path, names)


def _write_csv(cloud: PointCloud) -> bytes:
    attrs = cloud.attributes
    names = ["x", "y", "z"] + list(attrs)
    columns = [cloud.positions[:, i] for i in range(3)] + [np.asarray(a) for a in attrs.values()]
    codes = ["f8"] * 3 + ["f8" if a.dtype.kind == "f" else "i8" for a in attrs.values()]
    return (",".join(names) + "\n" + _ascii_rows(columns, codes, ",")).encode("ascii")


# ---------------------------------------------------------------------------
# public cloud API


def read_point_cloud(path, format: CloudFileFormat | str | None = None) -> PointCloud:
    """Load a point cloud; ``format`` is auto-detected when omitted.

    CSV files carry no type information, so their attributes load as float64.
    """
    path = Path(path)
    fmt = detect_format(path) if format is None else CloudFileFormat.parse(format)
    data = path.read_bytes()
    if fmt in (CloudFileFormat.PLY_ASCII, CloudFileFormat.PLY_BINARY_LE):
        elements, header = _read_ply(data)
        vertex = next((e for e in header if e.name == "vertex"), None)
        if vertex is None or vertex.has_lists:
            raise NoPositionDataError(path)
        return _cloud_from_columns(elements["vertex"], path, [p[0] for p in vertex.props])
    if fmt in (CloudFileFormat.PCD_ASCII, CloudFileFormat.PCD_BINARY):
        return _read_pcd(data, path)
    return _read_csv(data, path)


def write_point_cloud(cloud: PointCloud, path, format: CloudFileFormat | str) -> None:
    fmt = CloudFileFormat.parse(format)
    if fmt is CloudFileFormat.PLY_ASCII:
        data = _write_ply(cloud, binary=False)
    elif fmt is CloudFileFormat.PLY_BINARY_LE:
        data = _write_ply(cloud, binary=True)
    elif fmt is CloudFileFormat.PCD_ASCII:
        data = _write_pcd(cloud, binary=False)
    elif fmt is CloudFileFormat.PCD_BINARY:
        data = _write_pcd(cloud, binary=True)
    else:
        data = _write_csv(cloud)
    atomic_write_bytes(path, data)


# ---------------------------------------------------------------------------
# meshes


def _triangulate(faces) -> tuple[np.ndarray, int]:
    tris = []
    for f in faces:
        for k in range(1, len(f) - 1):
            tris.append((f[0], f[k], f[k + 1]))
    t = np.array(tris, dtype=np.int64).reshape(-1, 3)
    bad = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
    return t[~bad], int(bad.sum())


def _read_obj(data: bytes):
    verts, faces = [], []
    off = 0
    for raw in data.split(b"\n"):
        line = raw.strip()
        if line.startswith(b"v "):
            try:
                verts.append([float(x) for x in line.split()[1:4]])
            except ValueError:
                raise ParseError(off, "bad vertex record")
            if len(verts[-1]) != 3:
                raise ParseError(off, "vertex record needs 3 coordinates")
        elif line.startswith(b"f "):
            idx = []
            for tok in line.split()[1:]:
                try:
                    i = int(tok.split(b"/")[0])
                except ValueError:
                    raise ParseError(off, "bad face record")
                idx.append(i - 1 if i > 0 else len(verts) + i)
            if len(idx) < 3:
                raise ParseError(off, "face with fewer than 3 vertices")
            faces.append(idx)
        off += len(raw) + 1
    return np.array(verts, dtype=np.float64).reshape(-1, 3), faces


def read_mesh(path) -> TriangleMesh:
    """Read a PLY or OBJ mesh; polygons are fan-triangulated, degenerates dropped."""
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(b"ply"):
        elements, header = _read_ply(data)
        v = elements.get("vertex")
        if v is None or not all(k in v for k in ("x", "y", "z")):
            raise NoPositionDataError(path)
        verts = np.column_stack([np.asarray(v[k], dtype=np.float64) for k in ("x", "y", "z")])
        face_el = next((e for e in header if e.name == "face"), None)
        faces = []
        if face_el is not None:
            key = next((p[0] for p in face_el.props if p[2] is not None), None)
            if key is None:
                raise ParseError(0, "face element has no index list")
            faces = [row[key] for row in elements["face"]]
    elif path.suffix.lower() == ".obj":
        verts, faces = _read_obj(data)
    else:
        raise UnsupportedFormatError(f"cannot determine mesh format of {path}")
    tris, dropped = _triangulate(faces)
    if len(tris) and (tris.min() < 0 or tris.max() >= len(verts)):
        raise ParseError(0, "face index out of range")
    if dropped:
        logger.warning("%s: dropped %d degenerate triangles", path, dropped)
    return TriangleMesh(verts, tris)


def write_mesh(mesh: TriangleMesh, path) -> None:
    """Write binary little-endian PLY (``.ply``) or OBJ (``.obj``)."""
    path = Path(path)
    if path.suffix.lower() == ".obj":
        lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
        atomic_write_text(path, "\n".join(lines) + "\n")
        return
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(mesh.vertices)}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {len(mesh.triangles)}\n"
        "property list uchar int vertex_indices\nend_header\n"
    ).encode("ascii")
    faces = np.empty(len(mesh.triangles), dtype=[("n", "u1"), ("i", "<i4", (3,))])
    faces["n"] = 3
    faces["i"] = mesh.triangles
    atomic_write_bytes(path, header + mesh.vertices.astype("<f8").tobytes() + faces.tobytes())


# ---------------------------------------------------------------------------
# record sidecars

_OBJECT_FIELDS = ("mesh_id", "object_type", "relative_translation", "yaw", "pose_tag")
METADATA_TOL = 1e-3


def _meta_path_for(cloud_path: Path) -> Path:
    return cloud_path.with_name(cloud_path.stem + ".meta.json")


def read_object_record(cloud_path, meta_path=None) -> ObjectRecord:
    """Load an object scan and validate its sidecar.

    A relative translation within 1e-3 m of the cloud centroid is snapped to
    the exact centroid; anything further is rejected.
    """
    cloud_path = Path(cloud_path)
    meta_path = Path(meta_path) if meta_path else _meta_path_for(cloud_path)
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    for key in _OBJECT_FIELDS:
        if key not in meta:
            raise SchemaError(key)
    tr = meta["relative_translation"]
    if not (isinstance(tr, list) and len(tr) == 3):
        raise SchemaError("relative_translation", "expected a list of 3 numbers")
    cloud = read_point_cloud(cloud_path)
    tr = np.asarray(tr, dtype=np.float64)
    if len(cloud):
        c = centroid(cloud)
        err = float(np.max(np.abs(c - tr)))
        if err > METADATA_TOL:
            raise MetadataInconsistentError(f"centroid differs by {err:.4g} m")
        tr = c
    return ObjectRecord(
        cloud=cloud,
        mesh_id=str(meta["mesh_id"]),
        object_type=str(meta["object_type"]),
        relative_translation=tr,
        yaw=wrap_angle(float(meta["yaw"])),
        pose_tag=str(meta["pose_tag"]),
    )


def write_object_record(record: ObjectRecord, directory, name: str | None = None,
                        format: CloudFileFormat | str = CloudFileFormat.PLY_BINARY_LE) -> tuple[Path, Path]:
    directory = Path(directory)
    name = name or record.mesh_id
    fmt = CloudFileFormat.parse(format)
    ext = {"ply": ".ply", "pcd": ".pcd", "xyz": ".csv"}[fmt.value.split("_")[0]]
    cloud_path = directory / f"{name}{ext}"
    meta_path = directory / f"{name}.meta.json"
    write_point_cloud(record.cloud, cloud_path, fmt)
    meta = {
        "mesh_id": record.mesh_id,
        "object_type": record.object_type,
        "relative_translation": [float(v) for v in record.relative_translation],
        "yaw": float(record.yaw),
        "pose_tag": record.pose_tag,
        "cloud": cloud_path.name,
    }
    atomic_write_text(meta_path, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return cloud_path, meta_path


def read_scene_record(cloud_path, meta_path=None) -> SceneRecord:
    cloud_path = Path(cloud_path)
    meta_path = Path(meta_path) if meta_path else _meta_path_for(cloud_path)
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    if "sensor_height" not in meta:
        raise SchemaError("sensor_height")
    extra = {k: v for k, v in meta.items() if k not in ("sensor_height", "cloud")}
    return SceneRecord(read_point_cloud(cloud_path), float(meta["sensor_height"]), extra.get("meta", extra))


def write_scene_record(record: SceneRecord, directory, name: str,
                       format: CloudFileFormat | str = CloudFileFormat.PLY_BINARY_LE) -> tuple[Path, Path]:
    directory = Path(directory)
    fmt = CloudFileFormat.parse(format)
    ext = {"ply": ".ply", "pcd": ".pcd", "xyz": ".csv"}[fmt.value.split("_")[0]]
    cloud_path = directory / f"{name}{ext}"
    meta_path = directory / f"{name}.meta.json"
    write_point_cloud(record.cloud, cloud_path, fmt)
    meta = {"sensor_height": float(record.sensor_height), "meta": record.meta, "cloud": cloud_path.name}
    atomic_write_text(meta_path, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return cloud_path, meta_path
