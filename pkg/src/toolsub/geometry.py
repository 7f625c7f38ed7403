"""Point clouds: file I/O, normalization, and synthetic canonical tools.

Clouds are immutable ``(n, 3)`` float64 arrays.  The synthetic generators
sample uniformly (by area) on compositions of analytic primitives and give
each action from the matching pipeline a distinct tool family at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateCloudError, ParseError
from .seeding import derive_seed, make_rng

FAMILIES = (
    "mallet",
    "blade",
    "scoop",
    "flat-spatula",
    "spike",
    "rake-comb",
    "sphere-blob",
    "box-blob",
)

# Families that stand in for canonical tools of one action; the two blob
# families are universal negatives.
FAMILY_ACTION = {
    "mallet": "Hit",
    "blade": "Cut",
    "scoop": "Scoop",
    "flat-spatula": "Flip",
    "spike": "Poke",
    "rake-comb": "Rake",
}


@dataclass(frozen=True)
class PointCloud:
    """Immutable set of 3-D points with an opaque identifier."""

    points: np.ndarray
    id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (n, 3), got {pts.shape}")
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts = np.ascontiguousarray(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class BoundingBox:
    min_corner: np.ndarray
    max_corner: np.ndarray

    @classmethod
    def of(cls, points: np.ndarray) -> "BoundingBox":
        box = cls(points.min(axis=0), points.max(axis=0))
        if box.diagonal <= 0.0:
            raise DegenerateCloudError("bounding box has zero diagonal")
        return box

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.max_corner - self.min_corner))

    @property
    def extents(self) -> np.ndarray:
        return self.max_corner - self.min_corner


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def load_cloud(path, format: str | None = None) -> PointCloud:
    """Read a cloud from an XYZ or ASCII-PLY file.

    ``format`` is ``"xyz"`` or ``"ply-ascii"``; when omitted it is inferred
    from the file suffix.  Clouds with fewer than 4 points are rejected.
    """
    path = Path(path)
    if format is None:
        format = "ply-ascii" if path.suffix.lower() == ".ply" else "xyz"
    if format == "xyz":
        points = _read_xyz(path)
    elif format == "ply-ascii":
        points = _read_ply_ascii(path)
    else:
        raise ValueError(f"unknown cloud format {format!r}")
    if len(points) < 4:
        raise DegenerateCloudError(
            f"{path}: cloud has {len(points)} points, need at least 4"
        )
    return PointCloud(np.array(points, dtype=np.float64), id=path.stem)


def _read_xyz(path: Path) -> list[list[float]]:
    points = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(path, lineno, f"expected 3 values, got {len(parts)}")
            try:
                xyz = [float(p) for p in parts]
            except ValueError:
                raise ParseError(path, lineno, f"non-numeric coordinate in {line!r}")
            if not all(math.isfinite(v) for v in xyz):
                raise ParseError(path, lineno, "non-finite coordinate")
            points.append(xyz)
    return points


def _read_ply_ascii(path: Path) -> list[list[float]]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError(path, 1, "missing 'ply' magic line")

    vertex_count = None
    column_of = {}
    in_vertex_element = False
    property_index = 0
    data_start = None
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise ParseError(path, lineno, "only ASCII PLY is supported")
        elif tokens[0] == "element":
            in_vertex_element = tokens[1] == "vertex"
            if in_vertex_element:
                try:
                    vertex_count = int(tokens[2])
                except (IndexError, ValueError):
                    raise ParseError(path, lineno, "bad 'element vertex' count")
                property_index = 0
        elif tokens[0] == "property" and in_vertex_element:
            name = tokens[-1]
            if name in ("x", "y", "z"):
                column_of[name] = property_index
            property_index += 1
        elif tokens[0] == "end_header":
            data_start = lineno + 1
            break
    if data_start is None:
        raise ParseError(path, len(lines), "missing 'end_header'")
    if vertex_count is None:
        raise ParseError(path, 1, "missing 'element vertex' declaration")
    if set(column_of) != {"x", "y", "z"}:
        raise ParseError(path, 1, "vertex element lacks x/y/z properties")

    points = []
    cols = [column_of["x"], column_of["y"], column_of["z"]]
    # Vertex rows come first; rows of later elements (faces etc.) are ignored.
    for lineno in range(data_start, data_start + vertex_count):
        if lineno - 1 >= len(lines):
            raise ParseError(path, lineno, "fewer vertex rows than declared")
        parts = lines[lineno - 1].split()
        if len(parts) <= max(cols):
            raise ParseError(path, lineno, "vertex row has too few columns")
        try:
            points.append([float(parts[c]) for c in cols])
        except ValueError:
            raise ParseError(path, lineno, "non-numeric vertex coordinate")
    return points


def emit_cloud(cloud: PointCloud, path, format: str = "xyz") -> None:
    """Write a cloud to disk; only XYZ output is supported."""
    if format != "xyz":
        raise ValueError(f"unsupported output format {format!r}")
    if len(cloud) == 0:
        raise DegenerateCloudError("refusing to write an empty cloud")
    path = Path(path)
    with open(path, "w") as fh:
        for x, y, z in cloud.points:
            fh.write(f"{x:.6f} {y:.6f} {z:.6f}\n")


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def normalize_cloud(cloud: PointCloud) -> PointCloud:
    """Center the centroid at the origin and scale the bbox diagonal to 1.

    Scaling by the bounding-box diagonal is O(n) and sufficient here: the
    descriptor stage applies its own distance normalization.
    """
    pts = cloud.points
    if len(pts) == 0:
        raise DegenerateCloudError("cannot normalize an empty cloud")
    centered = pts - pts.mean(axis=0)
    diag = float(np.linalg.norm(centered.max(axis=0) - centered.min(axis=0)))
    if diag <= 0.0:
        raise DegenerateCloudError("all points identical; cloud has no extent")
    return PointCloud(centered / diag, id=cloud.id)


def rotation_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about ``axis`` by ``angle`` radians."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) * c + s * k + (1.0 - c) * np.outer(axis, axis)


# ---------------------------------------------------------------------------
# primitive surface samplers (local frame, +z is the primitive axis)
# ---------------------------------------------------------------------------

def _sample_cylinder(rng, n, radius, length):
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    z = rng.uniform(0.0, length, n)
    return np.column_stack([radius * np.cos(theta), radius * np.sin(theta), z])


def _sample_disk(rng, n, radius, z=0.0):
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, n))
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    return np.column_stack(
        [r * np.cos(theta), r * np.sin(theta), np.full(n, float(z))]
    )


def _sample_box(rng, n, half):
    hx, hy, hz = half
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, n)
    v = rng.uniform(-1.0, 1.0, n)
    pts = np.empty((n, 3))
    for f in range(6):
        m = face == f
        axis, sign = divmod(f, 2)
        fixed = (1.0 if sign == 0 else -1.0) * half[axis]
        free = [a for a in range(3) if a != axis]
        pts[m, axis] = fixed
        pts[m, free[0]] = u[m] * half[free[0]]
        pts[m, free[1]] = v[m] * half[free[1]]
    return pts


def _sample_hemisphere(rng, n, radius):
    # Shell of the upper half-sphere (dome toward +z), uniform by area.
    z = rng.uniform(0.0, 1.0, n)
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    return radius * np.column_stack([rho * np.cos(theta), rho * np.sin(theta), z])


def _sample_cone(rng, n, radius, height):
    # Lateral surface, apex at +z = height; area density grows toward base.
    s = np.sqrt(rng.uniform(0.0, 1.0, n))
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    r = radius * s
    z = height * (1.0 - s)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta), z])


_ROT_X90 = rotation_matrix(np.array([1.0, 0.0, 0.0]), math.pi / 2.0)
_ROT_Y90 = rotation_matrix(np.array([0.0, 1.0, 0.0]), math.pi / 2.0)


def _cylinder_area(r, length):
    return 2.0 * math.pi * r * length


def _box_area(half):
    hx, hy, hz = half
    return 8.0 * (hx * hy + hy * hz + hx * hz)


# ---------------------------------------------------------------------------
# tool families
# ---------------------------------------------------------------------------

def _family_params(family: str, rng_seed: int) -> dict:
    """Per-seed proportions for one family; every entry jittered ±15%."""
    rng = make_rng(derive_seed(rng_seed, "synth-params", family))

    def j(base):
        return base * (1.0 + rng.uniform(-0.15, 0.15))

    if family == "mallet":
        return {
            "handle_r": j(0.014), "handle_len": j(0.24),
            "head_r": j(0.035), "head_len": j(0.11),
        }
    if family == "blade":
        return {
            "handle_r": j(0.011), "handle_len": j(0.09),
            "blade_len": j(0.16), "blade_width": j(0.024), "blade_thick": j(0.0025),
        }
    if family == "scoop":
        return {
            "handle_r": j(0.008), "handle_len": j(0.16),
            "bowl_r": j(0.045),
        }
    if family == "flat-spatula":
        return {
            "handle_r": j(0.009), "handle_len": j(0.18),
            "plate_len": j(0.085), "plate_width": j(0.09), "plate_thick": j(0.003),
        }
    if family == "spike":
        return {
            "shaft_r": j(0.0035), "shaft_len": j(0.24),
            "grip_r": j(0.010), "grip_len": j(0.035), "tip_len": j(0.02),
        }
    if family == "rake-comb":
        return {
            "handle_r": j(0.010), "handle_len": j(0.17),
            "bar_halfwidth": j(0.065), "bar_r": j(0.007),
            "tooth_r": j(0.004), "tooth_len": j(0.05), "n_teeth": 7,
        }
    if family == "sphere-blob":
        return {"r": j(0.055), "squash_y": j(1.0), "squash_z": j(0.9)}
    if family == "box-blob":
        return {"hx": j(0.045), "hy": j(0.04), "hz": j(0.035)}
    raise ValueError(f"unknown tool family {family!r}")


def _mallet_parts(p):
    head_c = np.array([0.0, 0.0, p["handle_len"] + p["head_r"] * 0.6])
    half_len = p["head_len"] / 2.0

    def head(rng, n):
        pts = _sample_cylinder(rng, n, p["head_r"], p["head_len"])
        pts[:, 2] -= half_len
        return (_ROT_Y90 @ pts.T).T + head_c

    def head_caps(rng, n):
        side = rng.integers(0, 2, n) * 2 - 1
        pts = _sample_disk(rng, n, p["head_r"])
        pts[:, 2] = side * half_len
        return (_ROT_Y90 @ pts.T).T + head_c

    return [
        (lambda rng, n: _sample_cylinder(rng, n, p["handle_r"], p["handle_len"]),
         _cylinder_area(p["handle_r"], p["handle_len"])),
        (head, _cylinder_area(p["head_r"], p["head_len"])),
        (head_caps, 2.0 * math.pi * p["head_r"] ** 2),
    ]


def _blade_parts(p):
    half = np.array([p["blade_width"] / 2.0, p["blade_thick"] / 2.0, p["blade_len"] / 2.0])
    blade_c = np.array([0.0, 0.0, p["handle_len"] + p["blade_len"] / 2.0])
    return [
        (lambda rng, n: _sample_cylinder(rng, n, p["handle_r"], p["handle_len"]),
         _cylinder_area(p["handle_r"], p["handle_len"])),
        (lambda rng, n: _sample_box(rng, n, half) + blade_c, _box_area(half)),
    ]


def _scoop_parts(p):
    bowl_c = np.array([0.0, 0.0, p["handle_len"] + p["bowl_r"] * 0.8])

    def bowl(rng, n):
        pts = _sample_hemisphere(rng, n, p["bowl_r"])
        # Dome toward -y so the opening faces up.
        return (_ROT_X90 @ pts.T).T + bowl_c

    return [
        (lambda rng, n: _sample_cylinder(rng, n, p["handle_r"], p["handle_len"]),
         _cylinder_area(p["handle_r"], p["handle_len"])),
        (bowl, 2.0 * math.pi * p["bowl_r"] ** 2),
    ]


def _spatula_parts(p):
    half = np.array([p["plate_width"] / 2.0, p["plate_thick"] / 2.0, p["plate_len"] / 2.0])
    plate_c = np.array([0.0, 0.0, p["handle_len"] + p["plate_len"] / 2.0])
    return [
        (lambda rng, n: _sample_cylinder(rng, n, p["handle_r"], p["handle_len"]),
         _cylinder_area(p["handle_r"], p["handle_len"])),
        (lambda rng, n: _sample_box(rng, n, half) + plate_c, _box_area(half)),
    ]


def _spike_parts(p):
    tip_z = p["grip_len"] + p["shaft_len"]

    def tip(rng, n):
        return _sample_cone(rng, n, p["shaft_r"], p["tip_len"]) + np.array(
            [0.0, 0.0, tip_z]
        )

    slant = math.hypot(p["shaft_r"], p["tip_len"])
    return [
        (lambda rng, n: _sample_cylinder(rng, n, p["grip_r"], p["grip_len"]),
         _cylinder_area(p["grip_r"], p["grip_len"])),
        (lambda rng, n: _sample_cylinder(rng, n, p["shaft_r"], p["shaft_len"])
         + np.array([0.0, 0.0, p["grip_len"]]),
         _cylinder_area(p["shaft_r"], p["shaft_len"])),
        (tip, math.pi * p["shaft_r"] * slant),
    ]


def _rake_parts(p):
    bar_z = p["handle_len"] + p["bar_r"]

    def bar(rng, n):
        pts = _sample_cylinder(rng, n, p["bar_r"], 2.0 * p["bar_halfwidth"])
        pts[:, 2] -= p["bar_halfwidth"]
        return (_ROT_Y90 @ pts.T).T + np.array([0.0, 0.0, bar_z])

    def make_tooth(x_off):
        def tooth(rng, n):
            pts = _sample_cone(rng, n, p["tooth_r"], p["tooth_len"])
            # Teeth hang along -y from the crossbar.
            pts = (_ROT_X90 @ pts.T).T
            return pts + np.array([x_off, 0.0, bar_z])
        return tooth

    parts = [
        (lambda rng, n: _sample_cylinder(rng, n, p["handle_r"], p["handle_len"]),
         _cylinder_area(p["handle_r"], p["handle_len"])),
        (bar, _cylinder_area(p["bar_r"], 2.0 * p["bar_halfwidth"])),
    ]
    n_teeth = p["n_teeth"]
    slant = math.hypot(p["tooth_r"], p["tooth_len"])
    xs = np.linspace(-p["bar_halfwidth"], p["bar_halfwidth"], n_teeth)
    for x in xs:
        parts.append((make_tooth(float(x)), math.pi * p["tooth_r"] * slant))
    return parts


def _sphere_blob_parts(p):
    scale = np.array([1.0, p["squash_y"], p["squash_z"]])

    def shell(rng, n):
        z = rng.uniform(-1.0, 1.0, n)
        theta = rng.uniform(0.0, 2.0 * math.pi, n)
        rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
        pts = np.column_stack([rho * np.cos(theta), rho * np.sin(theta), z])
        return p["r"] * pts * scale

    return [(shell, 4.0 * math.pi * p["r"] ** 2)]


def _box_blob_parts(p):
    half = np.array([p["hx"], p["hy"], p["hz"]])
    return [(lambda rng, n: _sample_box(rng, n, half), _box_area(half))]


_FAMILY_PARTS = {
    "mallet": _mallet_parts,
    "blade": _blade_parts,
    "scoop": _scoop_parts,
    "flat-spatula": _spatula_parts,
    "spike": _spike_parts,
    "rake-comb": _rake_parts,
    "sphere-blob": _sphere_blob_parts,
    "box-blob": _box_blob_parts,
}


def synth_tool(family: str, rng_seed: int, n_points: int = 2000) -> PointCloud:
    """Sample a synthetic tool surface; pure function of its arguments."""
    if family not in _FAMILY_PARTS:
        raise ValueError(f"unknown tool family {family!r}")
    if n_points < 500:
        raise ValueError(f"n_points must be >= 500, got {n_points}")
    params = _family_params(family, rng_seed)
    parts = _FAMILY_PARTS[family](params)
    areas = np.array([a for _, a in parts])
    rng = make_rng(derive_seed(rng_seed, "synth-points", family))
    counts = rng.multinomial(n_points, areas / areas.sum())
    chunks = [
        sampler(rng, int(c)) for (sampler, _), c in zip(parts, counts) if c > 0
    ]
    points = np.vstack(chunks)
    return PointCloud(points, id=f"{family}-{rng_seed:03d}")
