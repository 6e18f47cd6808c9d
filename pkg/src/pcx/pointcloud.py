"""Point-cloud data model, geometry file I/O, surface sampling and colored export."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DegenerateMesh, EmptyGeometry, ParseError

PathLike = Union[str, Path]

FORMATS = ("off", "ply", "xyz", "csv")

# zero-contribution points stay visible but dim
COLOR_FLOOR = 60
COLOR_BASE = 80
COLOR_SPAN = 175


@dataclass(frozen=True)
class PointCloud:
    """An ``(N, 3)`` array of coordinates with optional label and name."""

    points: np.ndarray
    label: Optional[int] = None
    name: Optional[str] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ParseError(f"points must have shape (N, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise EmptyGeometry("point cloud has no points")
        if not np.all(np.isfinite(pts)):
            raise ParseError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return replace(self, points=points)


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if verts.shape[0] == 0:
            raise EmptyGeometry("mesh has no vertices")
        if not np.all(np.isfinite(verts)):
            raise ParseError("vertex coordinates must be finite")
        if faces.size and (faces.min() < 0 or faces.max() >= verts.shape[0]):
            raise ParseError("face index out of range")
        verts.setflags(write=False)
        faces.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)

    def face_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    @property
    def area(self) -> float:
        return float(self.face_areas().sum())


# --------------------------------------------------------------------------
# reading


def _data_lines(text: str):
    """Yield ``(line_number, stripped_line)`` skipping blanks and comments."""
    for num, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield num, line


def _floats(tokens, num, path, count=None):
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"non-numeric value in {tokens!r}", line=num, path=path) from None
    if count is not None and len(vals) < count:
        raise ParseError(f"expected {count} values, got {len(vals)}", line=num, path=path)
    return vals


def _ints(tokens, num, path):
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise ParseError(f"non-integer value in {tokens!r}", line=num, path=path) from None


def _fan(poly):
    return [(poly[0], poly[k], poly[k + 1]) for k in range(1, len(poly) - 1)]


def _read_off(text: str, path) -> TriangleMesh:
    lines = list(_data_lines(text))
    if not lines:
        raise EmptyGeometry(f"{path}: empty file")
    num, first = lines[0]
    if not first.upper().startswith("OFF"):
        raise ParseError("missing OFF header", line=num, path=path)
    # ModelNet ships both "OFF\nV F E" and "OFFV F E"
    rest = first[3:].strip()
    idx = 1
    if not rest:
        if len(lines) < 2:
            raise ParseError("missing count line", line=num, path=path)
        num, rest = lines[1]
        idx = 2
    counts = _ints(rest.split(), num, path)
    if len(counts) < 2:
        raise ParseError("count line needs vertex and face counts", line=num, path=path)
    n_verts, n_faces = counts[0], counts[1]
    if n_verts == 0:
        raise EmptyGeometry(f"{path}: OFF file declares zero vertices")
    body = lines[idx:]
    if len(body) < n_verts + n_faces:
        last = body[-1][0] if body else num
        raise ParseError(
            f"expected {n_verts} vertices and {n_faces} faces, file ends early", line=last, path=path
        )
    verts = []
    for num, line in body[:n_verts]:
        verts.append(_floats(line.split(), num, path, count=3)[:3])
    tris = []
    for num, line in body[n_verts : n_verts + n_faces]:
        vals = _ints(line.split(), num, path)
        k = vals[0] if vals else 0
        poly = vals[1 : 1 + k]
        if k < 3 or len(poly) != k:
            raise ParseError("malformed face row", line=num, path=path)
        if min(poly) < 0 or max(poly) >= n_verts:
            raise ParseError(f"face index out of range [0, {n_verts})", line=num, path=path)
        tris.extend(_fan(poly))
    return TriangleMesh(np.array(verts), np.array(tris, dtype=np.int64).reshape(-1, 3))


def _read_ply(text: str, path) -> Union[TriangleMesh, PointCloud]:
    raw_lines = text.splitlines()
    if not raw_lines or raw_lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", line=1, path=path)
    elements = []  # (name, count, [(prop_name, is_list)])
    body_start = None
    for num, raw in enumerate(raw_lines[1:], start=2):
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise ParseError("only ASCII PLY is supported", line=num, path=path)
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError("malformed element line", line=num, path=path)
            elements.append((tok[1], _ints(tok[2:3], num, path)[0], []))
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before element", line=num, path=path)
            is_list = len(tok) >= 2 and tok[1] == "list"
            elements[-1][2].append((tok[-1], is_list))
        elif tok[0] == "end_header":
            body_start = num
            break
        else:
            raise ParseError(f"unexpected header keyword {tok[0]!r}", line=num, path=path)
    if body_start is None:
        raise ParseError("missing end_header", line=len(raw_lines), path=path)

    rows = [(n, l.split()) for n, l in enumerate(raw_lines[body_start:], start=body_start + 1) if l.strip()]
    pos = 0
    verts = colors = None
    tris = []
    for name, count, props in elements:
        block = rows[pos : pos + count]
        if len(block) < count:
            raise ParseError(f"element {name!r} truncated", line=len(raw_lines), path=path)
        pos += count
        if name == "vertex":
            names = [p for p, _ in props]
            try:
                cols = [names.index(a) for a in ("x", "y", "z")]
            except ValueError:
                raise ParseError("vertex element lacks x/y/z", line=body_start, path=path) from None
            data = [_floats(tok, num, path, count=len(names)) for num, tok in block]
            arr = np.array(data, dtype=np.float64).reshape(-1, len(names))
            verts = arr[:, cols]
            if all(c in names for c in ("red", "green", "blue")):
                colors = arr[:, [names.index(c) for c in ("red", "green", "blue")]].astype(np.uint8)
        elif name == "face":
            for num, tok in block:
                vals = _ints(tok, num, path)
                k = vals[0] if vals else 0
                poly = vals[1 : 1 + k]
                if k < 3 or len(poly) != k:
                    raise ParseError("malformed face row", line=num, path=path)
                tris.extend((num, t) for t in _fan(poly))
    if verts is None or verts.shape[0] == 0:
        raise EmptyGeometry(f"{path}: PLY has no vertices")
    if not tris:
        return PointCloud(verts, name=Path(path).stem if path else None)
    for num, tri in tris:
        if min(tri) < 0 or max(tri) >= verts.shape[0]:
            raise ParseError("face index out of range", line=num, path=path)
    return TriangleMesh(verts, np.array([t for _, t in tris], dtype=np.int64))


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def _read_table(text: str, path, sep) -> PointCloud:
    pts = []
    first = True
    for num, line in _data_lines(text):
        tokens = [t.strip() for t in (line.split(sep) if sep else line.split())]
        if first and sep and tokens and not _is_number(tokens[0]):
            first = False
            continue  # header row
        first = False
        pts.append(_floats(tokens, num, path, count=3)[:3])
    if not pts:
        raise EmptyGeometry(f"{path}: no points")
    return PointCloud(np.array(pts), name=Path(path).stem if path else None)


def load_geometry(path: PathLike, format: Optional[str] = None) -> Union[TriangleMesh, PointCloud]:
    """Read an OFF, PLY, XYZ or CSV file.

    OFF and PLY files with faces yield a :class:`TriangleMesh`; everything
    else yields a :class:`PointCloud`. The format is inferred from the file
    suffix when not given.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in FORMATS:
        raise ParseError(f"unsupported format {fmt!r}", path=path)
    text = path.read_text(encoding="utf-8", errors="strict")
    if fmt == "off":
        return _read_off(text, path)
    if fmt == "ply":
        return _read_ply(text, path)
    return _read_table(text, path, "," if fmt == "csv" else None)


def load_point_cloud(path: PathLike, n: int = 1024, seed: int = 0, format: Optional[str] = None) -> PointCloud:
    """Load a file as a point cloud, sampling ``n`` surface points from meshes."""
    geom = load_geometry(path, format)
    if isinstance(geom, TriangleMesh):
        pc = sample_surface(geom, n, seed)
        return replace(pc, name=Path(path).stem)
    return geom


# --------------------------------------------------------------------------
# writing


def _fmt(x: float) -> str:
    return repr(float(x))


def write_xyz(pc: PointCloud, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pc.points:
            fh.write(" ".join(_fmt(v) for v in p) + "\n")


def write_csv(pc: PointCloud, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,y,z\n")
        for p in pc.points:
            fh.write(",".join(_fmt(v) for v in p) + "\n")


def write_ply(pc: Union[PointCloud, TriangleMesh], path: PathLike, colors: Optional[np.ndarray] = None) -> None:
    """Write an ASCII PLY; ``colors`` is an optional ``(N, 3)`` uint8 array."""
    if isinstance(pc, TriangleMesh):
        verts, faces = pc.vertices, pc.faces
    else:
        verts, faces = pc.points, np.zeros((0, 3), dtype=np.int64)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(verts)}"]
    lines += ["property double x", "property double y", "property double z"]
    if colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    if len(faces):
        lines += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    lines.append("end_header")
    for i, p in enumerate(verts):
        row = " ".join(_fmt(v) for v in p)
        if colors is not None:
            row += " " + " ".join(str(int(c)) for c in colors[i])
        lines.append(row)
    for f in faces:
        lines.append("3 " + " ".join(str(int(v)) for v in f))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_off(mesh: TriangleMesh, path: PathLike) -> None:
    lines = ["OFF", f"{len(mesh.vertices)} {len(mesh.faces)} 0"]
    lines += [" ".join(_fmt(v) for v in p) for p in mesh.vertices]
    lines += ["3 " + " ".join(str(int(v)) for v in f) for f in mesh.faces]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_geometry(geom: Union[PointCloud, TriangleMesh], path: PathLike, format: Optional[str] = None) -> None:
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "ply":
        write_ply(geom, path)
    elif fmt == "off":
        if not isinstance(geom, TriangleMesh):
            raise ParseError("OFF output needs a mesh", path=path)
        write_off(geom, path)
    elif fmt in ("xyz", "csv"):
        pc = geom if isinstance(geom, PointCloud) else PointCloud(geom.vertices)
        (write_xyz if fmt == "xyz" else write_csv)(pc, path)
    else:
        raise ParseError(f"unsupported format {fmt!r}", path=path)


# --------------------------------------------------------------------------
# sampling and normalization


def sample_surface(mesh: TriangleMesh, n: int, seed: int, return_faces: bool = False):
    """Draw ``n`` points uniformly over the mesh surface.

    Faces are picked with probability proportional to their area, then a
    point is drawn uniformly inside the triangle.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = mesh.face_areas() if len(mesh.faces) else np.zeros(0)
    total = areas.sum()
    if not total > 0:
        raise DegenerateMesh("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    face_idx = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tri = mesh.vertices[mesh.faces[face_idx]]  # (n, 3, 3)
    pts = (
        (1.0 - r1)[:, None] * tri[:, 0]
        + (r1 * (1.0 - r2))[:, None] * tri[:, 1]
        + (r1 * r2)[:, None] * tri[:, 2]
    )
    pc = PointCloud(pts)
    return (pc, face_idx) if return_faces else pc


def normalize(pc: PointCloud) -> PointCloud:
    """Center on the centroid and scale the farthest point to unit norm."""
    pts = pc.points - pc.points.mean(axis=0)
    scale = np.linalg.norm(pts, axis=1).max()
    # coincident points leave only rounding residue after centering
    if scale > 1e-12 * max(1.0, float(np.abs(pc.points).max())):
        pts = pts / scale
    return pc.with_points(pts)


# --------------------------------------------------------------------------
# colored export


def contribution_colors(contributions: Sequence[float]) -> np.ndarray:
    """Map signed contributions to uint8 RGB: red positive, blue negative, gray zero."""
    c = np.asarray(contributions, dtype=np.float64)
    out = np.full((c.shape[0], 3), COLOR_FLOOR, dtype=np.uint8)
    m = np.abs(c).max() if c.size else 0.0
    if not m > 0:
        return out
    r = c / m
    level = np.clip(np.rint(COLOR_BASE + COLOR_SPAN * np.abs(r)), 0, 255).astype(np.uint8)
    near_zero = np.abs(r) <= 1e-12
    pos = (r > 0) & ~near_zero
    neg = (r < 0) & ~near_zero
    out[pos, 0] = level[pos]
    out[neg, 2] = level[neg]
    return out


def write_colored_ply(pc: PointCloud, contributions: Sequence[float], path: PathLike) -> None:
    contributions = np.asarray(contributions, dtype=np.float64)
    if contributions.shape != (len(pc),):
        raise ValueError(f"need {len(pc)} contributions, got {contributions.shape}")
    write_ply(pc, path, colors=contribution_colors(contributions))
