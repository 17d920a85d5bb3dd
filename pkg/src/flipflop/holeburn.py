"""Nine-class bookkeeping after spectral initialization and the resulting absorption spectrum.

Frequencies are laser detunings in MHz relative to the |a> -> |a_e> line of
ions centred at 0 MHz. A ground/excited pair (g, e) of one ion absorbs at
its optical centre plus ``delta(g, e) = ground_offsets[g] + excited_offsets[e]``,
where the offsets are cumulative splittings (a level sits at 0).

An ion belongs to class ``3 g + e + 1`` (I..IX) at frequency f when its
(g, e) line sits at f. Optical pumping is bookkeeping only: each class gets
the final populations of the burn protocol, not a time-resolved solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.signal import find_peaks as _find_peaks

from .kinetics import InitialPopulations

ROMAN = ("I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX")
GROUND = ("a", "b", "c")
EXCITED = ("a_e", "b_e", "c_e")


def class_number(ground: int, excited: int) -> int:
    return 3 * ground + excited + 1


@dataclass(frozen=True, eq=False)
class SpectrumConfig:
    ground_splittings: tuple[float, float] = (10.19, 17.30)
    excited_splittings: tuple[float, float] = (4.6, 4.8)
    strengths: np.ndarray = None  # (3, 3) ground -> excited, rows sum to 1
    optical_linewidth: float = 0.25  # FWHM, MHz
    scan_range: tuple[float, float] = (-5.0, 45.0)
    burn_interval: float = 1.0
    tolerance: float = 0.15

    def __post_init__(self):
        s = DEFAULT_STRENGTHS if self.strengths is None else np.asarray(self.strengths, dtype=float)
        if s.shape != (3, 3) or np.any(s < 0):
            raise ValueError("strengths must be a non-negative 3x3 matrix")
        if not np.allclose(s.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("each strength row must sum to 1")
        object.__setattr__(self, "strengths", s)
        if not self.optical_linewidth > 0:
            raise ValueError("optical_linewidth must be > 0")
        if not self.burn_interval > 0:
            raise ValueError("burn_interval must be > 0")
        if not self.scan_range[0] < self.scan_range[1]:
            raise ValueError("scan_range must be increasing")
        if min(self.ground_splittings) <= 0 or min(self.excited_splittings) <= 0:
            raise ValueError("splittings must be > 0")

    @property
    def ground_offsets(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.ground_splittings)])

    @property
    def excited_offsets(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.excited_splittings)])

    def line_offsets(self) -> np.ndarray:
        """delta(g, e) as a (3, 3) array."""
        return self.ground_offsets[:, None] + self.excited_offsets[None, :]


# Relative oscillator strengths (data, not derived): the a-a_e, b-b_e and
# c-c_e lines dominate.
DEFAULT_STRENGTHS = np.array(
    [
        [0.55, 0.38, 0.07],
        [0.40, 0.59, 0.01],
        [0.05, 0.02, 0.93],
    ]
)


@dataclass(frozen=True)
class BurnProtocol:
    name: str
    peak: float
    background: float
    target: int  # class number probed at the peak
    peak_init: tuple[tuple[int, int, int], ...]  # per class I..IX
    background_init: tuple[tuple[int, int, int], ...]


_A, _B, _C = (1, 0, 0), (0, 1, 0), (0, 0, 1)

# Final populations per class after initialization (data).
PROTOCOLS = (
    BurnProtocol("a", 0.0, 2.0, 1, (_A, _C, _C, _C, _A, _A, _A, _A, _A), (_C, _C, _C, _C, _A, _A, _A, _A, _A)),
    BurnProtocol("b", 14.7, 12.2, 5, (_C, _C, _C, _C, _B, _C, _A, _A, _A), (_C, _C, _C, _C, _C, _C, _A, _A, _A)),
    BurnProtocol("c", 36.9, 38.9, 9, (_C, _C, _C, _C, _C, _C, _A, _A, _C), (_C, _C, _C, _C, _C, _C, _A, _A, _A)),
)


@dataclass(frozen=True)
class ClassEntry:
    number: int
    ground: int
    excited: int
    ground_offset: float
    excited_offset: float
    peak_init: InitialPopulations
    background_init: InitialPopulations

    @property
    def name(self) -> str:
        return ROMAN[self.number - 1]

    @property
    def probed_transition(self) -> tuple[str, str]:
        return GROUND[self.ground], EXCITED[self.excited]


@dataclass(frozen=True)
class ClassTable:
    burn_frequency: float
    background_frequency: float
    target: int
    entries: tuple[ClassEntry, ...]

    def __getitem__(self, number: int) -> ClassEntry:
        return self.entries[number - 1]

    def populations(self, which: str = "peak") -> dict[int, InitialPopulations]:
        if which not in ("peak", "background"):
            raise ValueError("which must be 'peak' or 'background'")
        return {e.number: getattr(e, f"{which}_init") for e in self.entries}


class NoResonanceError(ValueError):
    pass


def class_table(config: SpectrumConfig, burn_frequency: float, protocols=PROTOCOLS) -> ClassTable:
    """Class populations after initializing at ``burn_frequency`` (MHz)."""
    lo, hi = config.scan_range
    if not lo <= burn_frequency <= hi:
        raise ValueError(f"burn frequency {burn_frequency} MHz outside scan range {config.scan_range}")
    gaps = [abs(p.peak - burn_frequency) for p in protocols]
    best = int(np.argmin(gaps))
    if gaps[best] > config.tolerance:
        nearest = sorted(protocols, key=lambda p: abs(p.peak - burn_frequency))[:3]
        listing = ", ".join(f"{p.peak:g} MHz (class {ROMAN[p.target - 1]})" for p in nearest)
        raise NoResonanceError(f"no initialization protocol resonates at {burn_frequency} MHz; nearest: {listing}")
    proto = protocols[best]
    g0, e0 = divmod(proto.target - 1, 3)
    delta = config.line_offsets()
    if abs(delta[g0, e0] - proto.peak) > config.tolerance:
        raise NoResonanceError(
            f"class {ROMAN[proto.target - 1]} line sits at {delta[g0, e0]:.3f} MHz, not at the {proto.peak} MHz peak"
        )
    entries = []
    for k in range(9):
        g, e = divmod(k, 3)
        entries.append(
            ClassEntry(
                k + 1,
                g,
                e,
                float(config.ground_offsets[g]),
                float(config.excited_offsets[e]),
                InitialPopulations(*proto.peak_init[k]),
                InitialPopulations(*proto.background_init[k]),
            )
        )
    return ClassTable(proto.peak, proto.background, proto.target, tuple(entries))


def _line_shape(x: np.ndarray, width: float, fwhm: float) -> np.ndarray:
    # Lorentzian of unit height, averaged over a uniform box of optical centres
    g = fwhm / 2
    return g * (np.arctan((x + width / 2) / g) - np.arctan((x - width / 2) / g)) / width


def simulate_spectrum(
    config: SpectrumConfig,
    class_populations: dict[int, InitialPopulations] | ClassTable | None,
    grid: np.ndarray,
    burn_frequency: float = 0.0,
    interval: float | None = None,
) -> np.ndarray:
    """Absorption (arbitrary units) on ``grid`` (MHz).

    Ions of class n have their class line spread uniformly over ``interval``
    (default: the burn interval) around ``burn_frequency``. ``None`` means
    no burn: every class holds 1/3 per level over a band much wider than
    the scan, which gives a flat spectrum away from the band edges.
    """
    grid = np.asarray(grid, dtype=float)
    lo, hi = config.scan_range
    if grid.size and (grid.min() < lo - 1e-9 or grid.max() > hi + 1e-9):
        raise ValueError("grid extends outside the scan range")
    delta = config.line_offsets()
    if class_populations is None:
        span = hi - lo
        pad = float(delta.max()) + 50 * config.optical_linewidth
        burn_frequency = 0.5 * (lo + hi)
        interval = span + 2 * pad
        class_populations = {n: InitialPopulations(1 / 3, 1 / 3, 1 / 3) for n in range(1, 10)}
    elif isinstance(class_populations, ClassTable):
        burn_frequency = class_populations.burn_frequency
        class_populations = class_populations.populations("peak")
    width = config.burn_interval if interval is None else interval
    out = np.zeros_like(grid)
    for number, pops in sorted(class_populations.items()):
        g0, e0 = divmod(number - 1, 3)
        n = pops.as_array()
        for g in range(3):
            if n[g] == 0:
                continue
            for e in range(3):
                centre = burn_frequency + delta[g, e] - delta[g0, e0]
                out += config.strengths[g, e] * n[g] * _line_shape(grid - centre, width, config.optical_linewidth)
    return out


@dataclass(frozen=True)
class PopulationEstimate:
    area: float
    background: float
    window: tuple[float, float]


def evaluate_population(
    grid: np.ndarray, spectrum: np.ndarray, peak_window: tuple[float, float], background_anchor: float | None = None
) -> PopulationEstimate:
    """Area above the straight line joining the window edges; background read at the anchor."""
    grid = np.asarray(grid, dtype=float)
    spectrum = np.asarray(spectrum, dtype=float)
    lo, hi = peak_window
    if not lo < hi:
        raise ValueError("peak window must be increasing")
    if lo < grid[0] or hi > grid[-1]:
        raise ValueError(f"window {peak_window} exceeds the grid [{grid[0]}, {grid[-1]}]")
    y_lo, y_hi = np.interp([lo, hi], grid, spectrum)
    inside = (grid > lo) & (grid < hi)
    x = np.concatenate([[lo], grid[inside], [hi]])
    y = np.concatenate([[y_lo], spectrum[inside], [y_hi]])
    baseline = y_lo + (y_hi - y_lo) * (x - lo) / (hi - lo)
    area = float(trapezoid(y - baseline, x))
    background = float(np.interp(background_anchor, grid, spectrum)) if background_anchor is not None else float("nan")
    return PopulationEstimate(area, background, (float(lo), float(hi)))


def find_peaks(grid: np.ndarray, spectrum: np.ndarray, rel_height: float = 0.01) -> np.ndarray:
    """Positions of local maxima whose prominence exceeds ``rel_height`` of the global maximum."""
    idx, _ = _find_peaks(spectrum, prominence=rel_height * float(np.max(spectrum)))
    return np.asarray(grid)[idx]
