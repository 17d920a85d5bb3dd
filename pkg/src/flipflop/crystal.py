"""Doped crystal spheres and nearest-neighbour queries.

Positions are Cartesian, in nm, in the D1/D2/b frame (b is the third axis).
The sphere is centred on the lattice origin.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

LATTICE_HEADER = "# flipflop-lattice 1"
_LATTICE_KEYS = {"name", "cell_vectors", "sites"}


class EmptyEnsembleError(ValueError):
    """Raised when a doping draw produced no dopant ions."""


class LatticeFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LatticeDefinition:
    """Explicit list of substitutable sites in one unit cell.

    ``cell_vectors`` holds the three cell vectors as rows (nm). ``fractional``
    is (n_sites, 3) in [0, 1); ``orientation`` and ``site_label`` are per-site
    integers.
    """

    cell_vectors: np.ndarray
    fractional: np.ndarray
    orientation: np.ndarray
    site_label: np.ndarray
    name: str = ""

    def __post_init__(self):
        cell = np.asarray(self.cell_vectors, dtype=float)
        frac = np.atleast_2d(np.asarray(self.fractional, dtype=float))
        orient = np.asarray(self.orientation, dtype=int).ravel()
        label = np.asarray(self.site_label, dtype=int).ravel()
        if cell.shape != (3, 3):
            raise ValueError("cell_vectors must be 3x3")
        if not np.linalg.det(cell) > 0:
            raise ValueError("cell vectors must be linearly independent and right-handed (volume > 0)")
        if frac.shape[1] != 3 or len(frac) == 0:
            raise ValueError("fractional coordinates must be a non-empty (n, 3) array")
        if np.any(frac < 0) or np.any(frac >= 1):
            raise ValueError("fractional coordinates must lie in [0, 1)")
        if not (len(orient) == len(label) == len(frac)):
            raise ValueError("sites, orientation classes and labels differ in length")
        if np.any((orient < 0) | (orient > 3)):
            raise ValueError("orientation_class must be in 0..3")
        object.__setattr__(self, "cell_vectors", cell)
        object.__setattr__(self, "fractional", frac)
        object.__setattr__(self, "orientation", orient)
        object.__setattr__(self, "site_label", label)

    @property
    def cell_volume(self) -> float:
        return float(np.linalg.det(self.cell_vectors))

    def select(self, site_filter: int | None) -> "LatticeDefinition":
        if site_filter is None:
            return self
        keep = self.site_label == site_filter
        if not keep.any():
            raise ValueError(f"lattice has no sites with label {site_filter}")
        return LatticeDefinition(
            self.cell_vectors, self.fractional[keep], self.orientation[keep], self.site_label[keep], self.name
        )


@dataclass(frozen=True, eq=False)
class DopedEnsemble:
    positions: np.ndarray  # (n, 3) nm
    orientation: np.ndarray  # (n,)
    sphere_radius: float
    doping_fraction: float | None
    rng_seed: int

    def __post_init__(self):
        if len(self.positions) != len(self.orientation):
            raise ValueError("positions and orientation classes differ in length")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def ids(self) -> np.ndarray:
        return np.arange(len(self.positions))

    def core_ids(self, margin: float) -> np.ndarray:
        """Ids of ions at least ``margin`` nm inside the sphere surface."""
        r = np.linalg.norm(self.positions, axis=1)
        return np.flatnonzero(r <= self.sphere_radius - margin)

    def tree(self) -> cKDTree:
        t = self.__dict__.get("_tree")
        if t is None:
            t = cKDTree(self.positions)
            object.__setattr__(self, "_tree", t)
        return t


@dataclass(frozen=True, eq=False)
class NeighborSet:
    center_id: int
    ids: np.ndarray
    displacements: np.ndarray  # (k, 3) nm, r_ij = r_j - r_i
    distances: np.ndarray
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True, eq=False)
class NeighborTable:
    """Neighbour lists for many centres, stored as dense (n_centres, k) arrays."""

    center_ids: np.ndarray
    ids: np.ndarray
    displacements: np.ndarray
    distances: np.ndarray
    truncated: bool = False
    extra: dict = field(default_factory=dict, compare=False)

    def row(self, i: int) -> NeighborSet:
        return NeighborSet(
            int(self.center_ids[i]), self.ids[i], self.displacements[i], self.distances[i], self.truncated
        )


# --------------------------------------------------------------------------- #
# generation


def _cell_index_ranges(cell: np.ndarray, radius: float) -> list[np.ndarray]:
    # fractional coordinate u_k = pos . inv(cell)[:, k]; |u_k| <= R * |inv(cell)[:, k]|
    inv = np.linalg.inv(cell)
    spans = radius * np.linalg.norm(inv, axis=0)
    return [np.arange(int(np.floor(-s)) - 1, int(np.ceil(s)) + 1) for s in spans]


def generate_ensemble(
    lattice: LatticeDefinition,
    site_filter: int | None,
    sphere_radius: float,
    doping_fraction: float,
    seed: int,
) -> DopedEnsemble:
    """Randomly dope the sites of ``lattice`` that fall inside a sphere.

    Each site is occupied independently with probability ``doping_fraction``.
    The draw is done on the bounding box of lattice cells: the number of
    dopants is Binomial(box sites, p) and their sites a uniform subset, which
    is the same law as independent Bernoulli trials; sites outside the sphere
    are then discarded.
    """
    if not sphere_radius > 0:
        raise ValueError("sphere_radius must be > 0")
    if not 0 < doping_fraction < 1:
        raise ValueError("doping_fraction must be in (0, 1)")
    lat = lattice.select(site_filter)
    ranges = _cell_index_ranges(lat.cell_vectors, sphere_radius)
    shape = tuple(len(r) for r in ranges) + (len(lat.fractional),)
    total = int(np.prod(shape))

    rng = np.random.default_rng(seed)
    n_draw = int(rng.binomial(total, doping_fraction))
    flat = np.sort(rng.choice(total, size=n_draw, replace=False))
    i, j, k, s = np.unravel_index(flat, shape)
    cells = np.column_stack([ranges[0][i], ranges[1][j], ranges[2][k]]).astype(float)
    pos = (cells + lat.fractional[s]) @ lat.cell_vectors
    inside = np.einsum("ij,ij->i", pos, pos) <= sphere_radius**2
    if not inside.any():
        raise EmptyEnsembleError(
            f"empty ensemble: no dopants drawn (radius={sphere_radius} nm, fraction={doping_fraction}, seed={seed})"
        )
    return DopedEnsemble(pos[inside], lat.orientation[s[inside]], float(sphere_radius), float(doping_fraction), seed)


def count_sites_in_sphere(lattice: LatticeDefinition, site_filter: int | None, sphere_radius: float) -> int:
    """Number of substitutable sites inside the sphere, by direct enumeration."""
    lat = lattice.select(site_filter)
    ranges = _cell_index_ranges(lat.cell_vectors, sphere_radius)
    jj, kk = np.meshgrid(ranges[1], ranges[2], indexing="ij")
    slab = np.column_stack([jj.ravel(), kk.ravel()]).astype(float)
    count = 0
    r2 = sphere_radius**2
    for i in ranges[0]:
        cells = np.column_stack([np.full(len(slab), float(i)), slab])
        for f in lat.fractional:
            pos = (cells + f) @ lat.cell_vectors
            count += int(np.count_nonzero(np.einsum("ij,ij->i", pos, pos) <= r2))
    return count


def generate_continuous(density: float, sphere_radius: float, seed: int) -> DopedEnsemble:
    """Poisson number of ions placed uniformly in the sphere, random orientation class."""
    if not density > 0:
        raise ValueError("density must be > 0")
    if not sphere_radius > 0:
        raise ValueError("sphere_radius must be > 0")
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(density * 4.0 / 3.0 * np.pi * sphere_radius**3))
    if n == 0:
        raise EmptyEnsembleError(f"empty ensemble: Poisson draw gave 0 ions (density={density}/nm^3, seed={seed})")
    direction = rng.normal(size=(n, 3))
    direction /= np.linalg.norm(direction, axis=1)[:, None]
    radius = sphere_radius * rng.random(n) ** (1.0 / 3.0)
    orient = rng.integers(0, 4, size=n)
    return DopedEnsemble(direction * radius[:, None], orient, float(sphere_radius), None, seed)


# --------------------------------------------------------------------------- #
# neighbours


def _sort_rows(ids: np.ndarray, dist: np.ndarray):
    order = np.lexsort((ids, dist), axis=-1)
    return np.take_along_axis(ids, order, -1), np.take_along_axis(dist, order, -1)


def _query_block(ensemble: DopedEnsemble, centers: np.ndarray, k: int):
    tree = ensemble.tree()
    pos = ensemble.positions
    n = len(ensemble)
    kq = min(k + 2, n)
    _, idx = tree.query(pos[centers], k=kq)
    idx = np.atleast_2d(idx)
    disp = pos[idx] - pos[centers][:, None, :]
    dist = np.linalg.norm(disp, axis=-1)
    # drop the centre itself, then order by (distance, id)
    dist = np.where(idx == centers[:, None], np.inf, dist)
    idx, dist = _sort_rows(idx, dist)
    for row in range(len(centers)):
        # boundary tie with an ion not returned by the tree: redo with a ball query
        if kq < n and k < kq - 1 and dist[row, k - 1] == dist[row, k]:
            c = centers[row]
            cand = np.asarray(tree.query_ball_point(pos[c], dist[row, k - 1] * (1 + 1e-9)), dtype=int)
            cand = cand[cand != c]
            cd = np.linalg.norm(pos[cand] - pos[c], axis=1)
            order = np.lexsort((cand, cd))[: kq]
            fill = np.full(kq, np.inf)
            fidx = np.full(kq, -1)
            fill[: len(order)] = cd[order]
            fidx[: len(order)] = cand[order]
            idx[row], dist[row] = fidx, fill
    idx = idx[:, :k]
    dist = dist[:, :k]
    disp = pos[idx] - pos[centers][:, None, :]
    return idx, disp, dist


def neighbor_table(
    ensemble: DopedEnsemble,
    centers: np.ndarray | None,
    count: int,
    workers: int = 1,
    block: int = 2048,
) -> NeighborTable:
    """Nearest ``count`` neighbours of every centre (kd-tree, deterministic ties)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    centers = ensemble.ids if centers is None else np.asarray(centers, dtype=int)
    n = len(ensemble)
    k = min(count, n - 1)
    truncated = count > n - 1
    if truncated:
        logger.warning("requested %d neighbours but ensemble has only %d other ions", count, n - 1)
    if k == 0:
        empty = np.zeros((len(centers), 0))
        return NeighborTable(centers, empty.astype(int), np.zeros((len(centers), 0, 3)), empty, True)
    ensemble.tree()  # build once before threads share it
    chunks = [centers[s : s + block] for s in range(0, len(centers), block)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda c: _query_block(ensemble, c, k), chunks))
    else:
        parts = [_query_block(ensemble, c, k) for c in chunks]
    if not parts:
        return NeighborTable(centers, np.zeros((0, k), int), np.zeros((0, k, 3)), np.zeros((0, k)), truncated)
    ids = np.concatenate([p[0] for p in parts])
    disp = np.concatenate([p[1] for p in parts])
    dist = np.concatenate([p[2] for p in parts])
    return NeighborTable(centers, ids, disp, dist, truncated)


def nearest_neighbors(ensemble: DopedEnsemble, center_id: int, count: int) -> NeighborSet:
    if not 0 <= center_id < len(ensemble):
        raise IndexError(f"no ion with id {center_id}")
    return neighbor_table(ensemble, np.array([center_id]), count).row(0)


def brute_force_neighbors(ensemble: DopedEnsemble, center_id: int, count: int) -> NeighborSet:
    """O(N) reference: full sort by (distance, id)."""
    pos = ensemble.positions
    disp = pos - pos[center_id]
    dist = np.linalg.norm(disp, axis=1)
    ids = ensemble.ids
    keep = ids != center_id
    ids, dist, disp = ids[keep], dist[keep], disp[keep]
    order = np.lexsort((ids, dist))[:count]
    return NeighborSet(center_id, ids[order], disp[order], dist[order], count > len(ids))


# --------------------------------------------------------------------------- #
# lattice file


def read_lattice(path: str | Path) -> LatticeDefinition:
    """Parse a lattice file.

    Layout::

        # flipflop-lattice 1
        name = free text
        cell_vectors =
            ax ay az
            bx by bz
            cx cy cz
        sites =
            fx fy fz orientation_class site_label
            ...

    Blank lines and ``#`` comments are ignored; unknown keys are rejected.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8").splitlines()
    if not text or text[0].strip() != LATTICE_HEADER:
        raise LatticeFormatError(f"{path}: first line must be '{LATTICE_HEADER}'")
    values: dict[str, object] = {}
    current = None
    for lineno, raw in enumerate(text[1:], start=2):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.match(r"^([A-Za-z_]\w*)\s*=\s*(.*)$", line)
        if m:
            key, rest = m.group(1), m.group(2).strip()
            if key not in _LATTICE_KEYS:
                raise LatticeFormatError(f"{path}:{lineno}: unknown key '{key}'")
            if key in values:
                raise LatticeFormatError(f"{path}:{lineno}: duplicate key '{key}'")
            if key == "name":
                values[key] = rest
                current = None
            else:
                if rest:
                    raise LatticeFormatError(f"{path}:{lineno}: table '{key}' must start on the next line")
                values[key] = []
                current = key
            continue
        if current is None:
            raise LatticeFormatError(f"{path}:{lineno}: row outside a table")
        try:
            row = [float(x) for x in line.split()]
        except ValueError as exc:
            raise LatticeFormatError(f"{path}:{lineno}: non-numeric entry") from exc
        width = 3 if current == "cell_vectors" else 5
        if len(row) != width:
            raise LatticeFormatError(f"{path}:{lineno}: expected {width} columns in '{current}'")
        values[current].append(row)  # type: ignore[union-attr]
    for key in ("cell_vectors", "sites"):
        if key not in values:
            raise LatticeFormatError(f"{path}: missing '{key}'")
    sites = np.array(values["sites"], dtype=float)
    if np.any(sites[:, 3:] != np.round(sites[:, 3:])):
        raise LatticeFormatError(f"{path}: orientation_class and site_label must be integers")
    try:
        return LatticeDefinition(
            np.array(values["cell_vectors"]),
            sites[:, :3],
            sites[:, 3].astype(int),
            sites[:, 4].astype(int),
            str(values.get("name", "")),
        )
    except ValueError as exc:
        raise LatticeFormatError(f"{path}: {exc}") from exc


def format_lattice(lattice: LatticeDefinition) -> str:
    lines = [LATTICE_HEADER]
    if lattice.name:
        lines.append(f"name = {lattice.name}")
    lines.append("cell_vectors =")
    lines += ["    " + " ".join(f"{v:.10f}" for v in row) for row in lattice.cell_vectors]
    lines.append("sites =")
    for f, o, s in zip(lattice.fractional, lattice.orientation, lattice.site_label):
        lines.append("    " + " ".join(f"{v:.6f}" for v in f) + f" {o} {s}")
    return "\n".join(lines) + "\n"
