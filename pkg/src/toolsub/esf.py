"""Ensemble-of-shape-functions descriptor: ten 64-bin histograms (640-D).

Statistics are drawn from random point triples.  Pairwise distances (D2),
triangle areas (D3) and apex angles (A3) are each split into on/off/mixed
histograms depending on whether the relevant segment runs along occupied
voxels, through free space, or both; a tenth histogram bins the occupied
fraction itself.  Blocks are L1-normalized independently, so the final
vector lies in [0, 1]^640 with each block summing to one.

Extraction first moves the cloud into a canonical pose (centroid at the
origin, axes aligned to the principal directions, signs fixed by third
moments) so the voxel grid is anchored to the object rather than to the
incoming coordinate frame; together with counter-based index sampling over
a canonical point ordering this makes the descriptor exactly invariant
under input permutation and stable under rigid rotation/translation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np
from numba import njit

from .errors import DegenerateCloudError, ParseError
from .geometry import PointCloud
from .seeding import make_rng

N_BINS = 64
BLOCKS = (
    "D2-on", "D2-off", "D2-mixed",
    "D3-on", "D3-off", "D3-mixed",
    "A3-on", "A3-off", "A3-mixed",
    "RATIO",
)
N_VALUES = N_BINS * len(BLOCKS)


class SegmentClass(IntEnum):
    ON = 0
    OFF = 1
    MIXED = 2


@dataclass(frozen=True)
class EsfParams:
    n_samples: int = 20_000
    voxel_resolution: int = 64
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1000:
            raise ValueError(f"n_samples must be >= 1000, got {self.n_samples}")
        if self.voxel_resolution < 8:
            raise ValueError(
                f"voxel_resolution must be >= 8, got {self.voxel_resolution}"
            )


@dataclass(frozen=True)
class EsfDescriptor:
    """640 values in block order [D2, D3, A3 (each on/off/mixed), RATIO]."""

    values: np.ndarray
    id: str = ""
    empty_blocks: tuple[str, ...] = ()

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if vals.shape != (N_VALUES,):
            raise ValueError(f"descriptor must have {N_VALUES} values, got {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def block(self, name: str) -> np.ndarray:
        i = BLOCKS.index(name)
        return self.values[i * N_BINS:(i + 1) * N_BINS]

    def validate(self, tol: float = 1e-6) -> None:
        """Raise if any value leaves [0, 1] or a non-empty block does not sum to 1."""
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValueError("descriptor values outside [0, 1]")
        for i, name in enumerate(BLOCKS):
            s = self.values[i * N_BINS:(i + 1) * N_BINS].sum()
            if abs(s - 1.0) > tol and not (s == 0.0 and name in self.empty_blocks):
                raise ValueError(f"block {name} sums to {s!r}")


# ---------------------------------------------------------------------------
# voxel grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VoxelGrid:
    """Cubic-cell occupancy lattice spanning a cloud's bbox plus a 1-cell margin."""

    origin: np.ndarray
    cell_size: float
    dims: np.ndarray
    occupancy: np.ndarray

    def cell_of(self, point) -> tuple[int, int, int]:
        idx = np.floor((np.asarray(point, dtype=np.float64) - self.origin)
                       / self.cell_size).astype(np.int64)
        idx = np.clip(idx, 0, self.dims - 1)
        return int(idx[0]), int(idx[1]), int(idx[2])

    @property
    def occupied_count(self) -> int:
        return int(self.occupancy.sum())


def build_voxel_grid(cloud: PointCloud, resolution: int) -> VoxelGrid:
    """Voxelize a cloud at ``resolution`` cells along its longest axis."""
    if resolution < 8:
        raise ValueError(f"resolution must be >= 8, got {resolution}")
    pts = cloud.points
    if len(pts) == 0:
        raise DegenerateCloudError("cannot voxelize an empty cloud")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = hi - lo
    longest = float(extent.max())
    if longest <= 0.0:
        raise DegenerateCloudError("degenerate bounding box")
    # Slight inflation keeps exact-boundary points out of the margin cells.
    cell = longest * (1.0 + 1e-9) / resolution
    dims = np.ceil(extent / cell).astype(np.int64) + 2
    dims = np.maximum(dims, 3)
    origin = lo - cell
    idx = np.floor((pts - origin) / cell).astype(np.int64)
    idx = np.clip(idx, 0, dims - 1)
    occupancy = np.zeros(tuple(dims), dtype=bool)
    occupancy[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return VoxelGrid(origin=origin, cell_size=cell, dims=dims, occupancy=occupancy)


def classify_segment(grid: VoxelGrid, a, b) -> tuple[SegmentClass, float]:
    """Walk the voxel line a->b (3-D DDA); classify by traversed-cell occupancy.

    Returns (class, occupied fraction).  Endpoints outside the grid are
    clamped onto it.
    """
    occ, trav = _walk_segment(
        np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64),
        grid.origin, grid.cell_size, grid.dims, grid.occupancy,
    )
    fraction = occ / trav
    if occ == trav:
        return SegmentClass.ON, fraction
    if occ == 0:
        return SegmentClass.OFF, fraction
    return SegmentClass.MIXED, fraction


def _walk_segment(a, b, origin, cell, dims, occupancy):
    """Reference scalar DDA; the batch kernel must agree with it exactly."""
    lo = origin
    hi = origin + dims * cell
    a = np.minimum(np.maximum(a, lo), hi)
    b = np.minimum(np.maximum(b, lo), hi)

    cur = [min(max(int(math.floor((a[k] - origin[k]) / cell)), 0), int(dims[k]) - 1)
           for k in range(3)]
    last = [min(max(int(math.floor((b[k] - origin[k]) / cell)), 0), int(dims[k]) - 1)
            for k in range(3)]
    d = [b[k] - a[k] for k in range(3)]
    step = [1 if d[k] > 0 else (-1 if d[k] < 0 else 0) for k in range(3)]
    big = math.inf
    t_max = [((origin[k] + (cur[k] + (step[k] > 0)) * cell) - a[k]) / d[k]
             if step[k] != 0 else big for k in range(3)]
    t_delta = [cell / abs(d[k]) if step[k] != 0 else big for k in range(3)]

    occ = 0
    trav = 0
    max_steps = int(dims.sum()) + 3
    for _ in range(max_steps):
        trav += 1
        if occupancy[cur[0], cur[1], cur[2]]:
            occ += 1
        if cur == last:
            break
        if t_max[0] <= t_max[1] and t_max[0] <= t_max[2]:
            axis = 0
        elif t_max[1] <= t_max[2]:
            axis = 1
        else:
            axis = 2
        cur[axis] += step[axis]
        t_max[axis] += t_delta[axis]
    return occ, trav


@njit(cache=True)
def _walk_segments_batch(starts, ends, origin, cell, dims, occ_flat):
    """DDA over many segments at once; mirrors _walk_segment arithmetic."""
    m = starts.shape[0]
    occ_cnt = np.zeros(m, np.int64)
    trav_cnt = np.zeros(m, np.int64)
    d0, d1, d2 = dims[0], dims[1], dims[2]
    hi0 = origin[0] + d0 * cell
    hi1 = origin[1] + d1 * cell
    hi2 = origin[2] + d2 * cell
    max_steps = d0 + d1 + d2 + 3
    big = np.inf
    for s in range(m):
        ax = min(max(starts[s, 0], origin[0]), hi0)
        ay = min(max(starts[s, 1], origin[1]), hi1)
        az = min(max(starts[s, 2], origin[2]), hi2)
        bx = min(max(ends[s, 0], origin[0]), hi0)
        by = min(max(ends[s, 1], origin[1]), hi1)
        bz = min(max(ends[s, 2], origin[2]), hi2)

        cx = min(max(int(math.floor((ax - origin[0]) / cell)), 0), d0 - 1)
        cy = min(max(int(math.floor((ay - origin[1]) / cell)), 0), d1 - 1)
        cz = min(max(int(math.floor((az - origin[2]) / cell)), 0), d2 - 1)
        lx = min(max(int(math.floor((bx - origin[0]) / cell)), 0), d0 - 1)
        ly = min(max(int(math.floor((by - origin[1]) / cell)), 0), d1 - 1)
        lz = min(max(int(math.floor((bz - origin[2]) / cell)), 0), d2 - 1)

        dx = bx - ax
        dy = by - ay
        dz = bz - az
        sx = 1 if dx > 0 else (-1 if dx < 0 else 0)
        sy = 1 if dy > 0 else (-1 if dy < 0 else 0)
        sz = 1 if dz > 0 else (-1 if dz < 0 else 0)
        tmx = ((origin[0] + (cx + (sx > 0)) * cell) - ax) / dx if sx != 0 else big
        tmy = ((origin[1] + (cy + (sy > 0)) * cell) - ay) / dy if sy != 0 else big
        tmz = ((origin[2] + (cz + (sz > 0)) * cell) - az) / dz if sz != 0 else big
        tdx = cell / abs(dx) if sx != 0 else big
        tdy = cell / abs(dy) if sy != 0 else big
        tdz = cell / abs(dz) if sz != 0 else big

        o = 0
        t = 0
        for _ in range(max_steps):
            t += 1
            if occ_flat[(cx * d1 + cy) * d2 + cz]:
                o += 1
            if cx == lx and cy == ly and cz == lz:
                break
            if tmx <= tmy and tmx <= tmz:
                cx += sx
                tmx += tdx
            elif tmy <= tmz:
                cy += sy
                tmy += tdy
            else:
                cz += sz
                tmz += tdz
        occ_cnt[s] = o
        trav_cnt[s] = t
    return occ_cnt, trav_cnt


def classify_segments_batch(grid: VoxelGrid, starts: np.ndarray, ends: np.ndarray):
    """Vectorized classify_segment: returns (class array, fraction array)."""
    occ, trav = _walk_segments_batch(
        np.ascontiguousarray(starts, dtype=np.float64),
        np.ascontiguousarray(ends, dtype=np.float64),
        grid.origin, grid.cell_size, grid.dims.astype(np.int64),
        np.ascontiguousarray(grid.occupancy.reshape(-1)),
    )
    cls = np.full(len(occ), int(SegmentClass.MIXED), dtype=np.int64)
    cls[occ == trav] = int(SegmentClass.ON)
    cls[occ == 0] = int(SegmentClass.OFF)
    return cls, occ / trav


# ---------------------------------------------------------------------------
# descriptor extraction
# ---------------------------------------------------------------------------

def _stable_sum(values: np.ndarray) -> float:
    """Summation independent of input order (same multiset, same result)."""
    return float(np.sort(values, kind="stable").sum())


def _canonicalize(pts: np.ndarray) -> np.ndarray:
    """Map points into their canonical pose, sorted lexicographically.

    Centroid and second/third moments are accumulated order-independently,
    so the result is bitwise identical under any permutation of the input;
    under a rigid rotation or translation the canonical points agree up to
    float rounding, which keeps seeded triple draws aligned across poses.
    """
    n = len(pts)
    centroid = np.array([_stable_sum(pts[:, k]) / n for k in range(3)])
    x = pts - centroid

    cov = np.empty((3, 3))
    for i in range(3):
        for k in range(i, 3):
            cov[i, k] = cov[k, i] = _stable_sum(x[:, i] * x[:, k])
    eigvals, eigvecs = np.linalg.eigh(cov)
    frame = eigvecs[:, ::-1]  # descending variance

    y = x @ frame
    skews = np.empty(3)
    for k in range(3):
        skews[k] = _stable_sum(y[:, k] ** 3)
        if skews[k] < 0.0:
            y[:, k] = -y[:, k]
            frame[:, k] = -frame[:, k]
    if np.linalg.det(frame) < 0.0:
        k = int(np.argmin(np.abs(skews)))
        y[:, k] = -y[:, k]

    order = np.lexsort((y[:, 2], y[:, 1], y[:, 0]))
    return np.ascontiguousarray(y[order])


def _draw_triples(rng, n_points: int, n_samples: int) -> np.ndarray:
    idx = rng.integers(0, n_points, size=(n_samples, 3))
    while True:
        bad = (
            (idx[:, 0] == idx[:, 1])
            | (idx[:, 1] == idx[:, 2])
            | (idx[:, 0] == idx[:, 2])
        )
        n_bad = int(bad.sum())
        if n_bad == 0:
            return idx
        idx[bad] = rng.integers(0, n_points, size=(n_bad, 3))


def _bin64(stat: np.ndarray) -> np.ndarray:
    return np.minimum((stat * N_BINS).astype(np.int64), N_BINS - 1)


def compute_esf(cloud: PointCloud, params: EsfParams = EsfParams()) -> EsfDescriptor:
    """Extract the 640-D descriptor from a (normalized) cloud."""
    if len(cloud) < 4:
        raise DegenerateCloudError(f"need at least 4 points, got {len(cloud)}")

    pts = _canonicalize(cloud.points)
    n = len(pts)
    radii = np.linalg.norm(pts, axis=1)
    scale = 2.0 * float(radii.max())
    if scale <= 0.0:
        raise DegenerateCloudError("all points identical; cloud has no extent")

    grid = build_voxel_grid(PointCloud(pts, id=cloud.id), params.voxel_resolution)
    rng = make_rng(params.rng_seed)
    triples = _draw_triples(rng, n, params.n_samples)
    p1 = pts[triples[:, 0]]
    p2 = pts[triples[:, 1]]
    p3 = pts[triples[:, 2]]

    starts = np.vstack([p1, p2, p1])
    ends = np.vstack([p2, p3, p3])
    cls_all, frac_all = classify_segments_batch(grid, starts, ends)
    m = params.n_samples
    cls23 = cls_all[m:2 * m]

    hist = np.zeros(N_VALUES, dtype=np.float64)

    # D2: pairwise distances, one histogram per segment class.
    dists = np.linalg.norm(starts - ends, axis=1) / scale
    d2_block = cls_all  # blocks 0..2
    np.add.at(hist, d2_block * N_BINS + _bin64(np.clip(dists, 0.0, 1.0)), 1.0)

    # RATIO: occupied fraction of every segment (block 9).
    np.add.at(hist, 9 * N_BINS + _bin64(frac_all), 1.0)

    # D3: sqrt of triangle area over its maximum, classified by the
    # spanning segment p2->p3 (the side opposite the angle vertex).
    u = p2 - p1
    v = p3 - p1
    area = 0.5 * np.linalg.norm(np.cross(u, v), axis=1)
    area_max = scale * scale * math.sqrt(3.0) / 4.0
    d3_stat = np.clip(np.sqrt(area / area_max), 0.0, 1.0)
    np.add.at(hist, (3 + cls23) * N_BINS + _bin64(d3_stat), 1.0)

    # A3: angle at p1 mapped to [0, 1], classified by the same segment.
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    denom = np.where((nu > 0.0) & (nv > 0.0), nu * nv, 1.0)
    cos_a = np.clip(np.einsum("ij,ij->i", u, v) / denom, -1.0, 1.0)
    a3_stat = (1.0 - cos_a) / 2.0
    np.add.at(hist, (6 + cls23) * N_BINS + _bin64(a3_stat), 1.0)

    empty = []
    for i, name in enumerate(BLOCKS):
        block = hist[i * N_BINS:(i + 1) * N_BINS]
        total = block.sum()
        if total > 0.0:
            block /= total
        else:
            empty.append(name)

    return EsfDescriptor(values=hist, id=cloud.id, empty_blocks=tuple(empty))


def esf_distance(a: EsfDescriptor, b: EsfDescriptor) -> float:
    """L1 distance over the full 640-vector (diagnostic only)."""
    return float(np.abs(a.values - b.values).sum())


# ---------------------------------------------------------------------------
# descriptor CSV
# ---------------------------------------------------------------------------

def save_descriptors(descriptors, path) -> None:
    """Write rows ``id,v0,...,v639``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for d in descriptors:
            writer.writerow([d.id] + [repr(float(v)) for v in d.values])


def load_descriptors(path) -> list[EsfDescriptor]:
    path = Path(path)
    out = []
    with open(path, newline="") as fh:
        for rowno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != N_VALUES + 1:
                raise ParseError(path, rowno,
                                 f"expected {N_VALUES + 1} columns, got {len(row)}")
            try:
                values = np.array([float(v) for v in row[1:]])
            except ValueError:
                raise ParseError(path, rowno, "non-numeric descriptor value")
            empty = tuple(
                name for i, name in enumerate(BLOCKS)
                if values[i * N_BINS:(i + 1) * N_BINS].sum() == 0.0
            )
            out.append(EsfDescriptor(values=values, id=row[0], empty_blocks=empty))
    return out
