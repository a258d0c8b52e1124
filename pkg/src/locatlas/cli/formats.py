"""ASCII point-cloud and mesh formats: XYZ, OBJ and PLY."""

from __future__ import annotations

import os

import numpy as np

from ..errors import LocAtlasError, ParseError, SizeError
from ..geom import TriMesh

CLOUD_FORMATS = ("xyz", "ply", "obj")
MESH_FORMATS = ("obj", "ply")


def _fmt(x) -> str:
    # 9 significant digits round-trip any float32 exactly
    return "%.9g" % x


def _guess(path, fmt, allowed):
    fmt = fmt or os.path.splitext(str(path))[1].lstrip(".").lower()
    fmt = {"ply-ascii": "ply", "obj-vertices": "obj"}.get(fmt, fmt)
    if fmt not in allowed:
        raise ParseError(f"unsupported format {fmt!r} for {path}")
    return fmt


def _floats(tokens, lineno):
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"non-numeric value in {' '.join(tokens)!r}", lineno) from None


def _read_lines(path):
    try:
        with open(path, encoding="ascii") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise LocAtlasError(f"cannot read {path}: {exc}") from exc


def _parse_xyz(lines):
    pts = []
    for no, line in enumerate(lines, 1):
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        if len(tok) < 3:
            raise ParseError("expected three coordinates", no)
        pts.append(_floats(tok[:3], no))
    return pts


def _parse_obj(lines):
    verts, faces = [], []
    for no, line in enumerate(lines, 1):
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        if tok[0] == "v":
            if len(tok) < 4:
                raise ParseError("vertex needs three coordinates", no)
            verts.append(_floats(tok[1:4], no))
        elif tok[0] == "f":
            idx = []
            for t in tok[1:]:
                try:
                    i = int(t.split("/")[0])
                except ValueError:
                    raise ParseError(f"bad face index {t!r}", no) from None
                idx.append(i - 1 if i > 0 else len(verts) + i)
            if len(idx) != 3:
                raise ParseError("only triangular faces are supported", no)
            faces.append(idx)
    return verts, faces


def _parse_ply(lines):
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1)
    n_vert = n_face = 0
    body = None
    for no, line in enumerate(lines, 1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise ParseError("only ascii PLY is supported", no)
        if tok[0] == "element":
            try:
                count = int(tok[2])
            except (IndexError, ValueError):
                raise ParseError("bad element line", no) from None
            if tok[1] == "vertex":
                n_vert = count
            elif tok[1] == "face":
                n_face = count
        if tok[0] == "end_header":
            body = no
            break
    if body is None:
        raise ParseError("missing end_header")
    verts, faces = [], []
    rows = [(no, line.split()) for no, line in enumerate(lines[body:], body + 1) if line.strip()]
    if len(rows) < n_vert + n_face:
        raise ParseError("file ends before all elements were read", len(lines))
    for no, tok in rows[:n_vert]:
        if len(tok) < 3:
            raise ParseError("vertex needs three coordinates", no)
        verts.append(_floats(tok[:3], no))
    for no, tok in rows[n_vert:n_vert + n_face]:
        vals = _floats(tok, no)
        if not vals or int(vals[0]) != 3 or len(vals) != 4:
            raise ParseError("only triangular faces are supported", no)
        faces.append([int(v) for v in vals[1:]])
    return verts, faces


def load_cloud(path, fmt: str | None = None) -> np.ndarray:
    fmt = _guess(path, fmt, CLOUD_FORMATS)
    lines = _read_lines(path)
    if fmt == "xyz":
        pts = _parse_xyz(lines)
    elif fmt == "obj":
        pts = _parse_obj(lines)[0]
    else:
        pts = _parse_ply(lines)[0]
    if not pts:
        raise SizeError(f"{path} contains no points")
    return np.array(pts, dtype=np.float64)


def _write(path, text):
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise LocAtlasError(f"cannot write {path}: {exc}") from exc


def save_cloud(points, path, fmt: str | None = None) -> None:
    fmt = _guess(path, fmt, CLOUD_FORMATS)
    pts = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    if fmt == "xyz":
        text = "".join(f"{_fmt(x)} {_fmt(y)} {_fmt(z)}\n" for x, y, z in pts)
    elif fmt == "obj":
        text = "".join(f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}\n" for x, y, z in pts)
    else:
        text = _ply_text(pts, np.zeros((0, 3), dtype=np.int64))
    _write(path, text)


def _ply_text(verts, faces):
    head = [
        "ply", "format ascii 1.0",
        f"element vertex {len(verts)}",
        "property float x", "property float y", "property float z",
    ]
    if len(faces):
        head += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    head.append("end_header")
    body = [f"{_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in verts]
    body += [f"3 {a} {b} {c}" for a, b, c in faces]
    return "\n".join(head + body) + "\n"


def save_mesh(mesh: TriMesh, path, fmt: str | None = None) -> None:
    fmt = _guess(path, fmt, MESH_FORMATS)
    verts = mesh.vertices.astype(np.float32)
    if fmt == "obj":
        lines = [f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in verts]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
        text = "\n".join(lines) + "\n"
    else:
        text = _ply_text(verts, mesh.faces)
    _write(path, text)


def load_mesh(path, fmt: str | None = None) -> TriMesh:
    fmt = _guess(path, fmt, MESH_FORMATS)
    lines = _read_lines(path)
    verts, faces = _parse_obj(lines) if fmt == "obj" else _parse_ply(lines)
    if not verts:
        raise SizeError(f"{path} contains no vertices")
    return TriMesh(np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64).reshape(-1, 3))
