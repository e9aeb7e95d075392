"""Scene construction: ULA steering vectors, clutter-plus-noise covariance,
SINR-calibrated target amplitudes, and sampled range-bin snapshots.

Range bins and angle-grid positions are 1-based throughout the public API,
matching the usual radar cell numbering; the data matrix ``z`` stores bin k
in column k-1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .hermitian import HermitianPd, cholesky, quad_form


class DuplicateBin(ValueError):
    """Two targets were placed in the same range bin."""


@dataclass(frozen=True)
class AngleGrid:
    """Strictly increasing scan grid in degrees.

    Grid indices are 1-based; the default grid is -20..20 in 2 degree steps
    (21 points).
    """

    angles_deg: tuple[float, ...]

    def __post_init__(self):
        if len(self.angles_deg) == 0:
            raise ValueError("angle grid must be nonempty")
        a = np.asarray(self.angles_deg, dtype=float)
        if a.size > 1 and not np.all(np.diff(a) > 0.0):
            raise ValueError("angle grid must be strictly increasing")

    @classmethod
    def from_range(cls, start: float, stop: float, step: float) -> "AngleGrid":
        count = int(round((stop - start) / step)) + 1
        return cls(tuple(start + i * step for i in range(count)))

    @classmethod
    def default(cls) -> "AngleGrid":
        return cls.from_range(-20.0, 20.0, 2.0)

    @property
    def k_theta(self) -> int:
        return len(self.angles_deg)

    @property
    def span(self) -> float:
        return self.angles_deg[-1] - self.angles_deg[0]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.angles_deg, dtype=float)

    def angle(self, n: int) -> float:
        """Angle in degrees at 1-based grid index ``n``."""
        if not 1 <= n <= self.k_theta:
            raise IndexError(f"grid index {n} outside 1..{self.k_theta}")
        return self.angles_deg[n - 1]

    def nearest(self, theta_deg: float) -> int:
        """1-based index of the closest grid point; ties go to the smaller angle."""
        return int(np.argmin(np.abs(self.as_array() - theta_deg))) + 1


@dataclass(frozen=True)
class InterferenceConfig:
    """Thermal-noise plus one-lag-correlated clutter model for N channels."""

    n: int
    sigma_n2: float = 1.0
    cnr_db: float = 15.0
    rho_c: float = 0.9

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least 2 channels")
        if not self.sigma_n2 > 0.0:
            raise ValueError("thermal noise power must be positive")
        if not 0.0 <= self.rho_c < 1.0:
            raise ValueError("one-lag correlation must lie in [0, 1)")


@dataclass(frozen=True)
class TargetSpec:
    """One point-like target: 1-based range bin, true AoA, per-target SINR."""

    range_bin: int
    aoa_deg: float
    sinr_db: float


@dataclass
class Scene:
    """Sampled data matrix plus the ground truth that produced it."""

    z: np.ndarray  # complex, N x K
    truth: list[TargetSpec]
    truth_grid_index: dict[int, int]  # range bin -> nearest 1-based grid index
    m_true: HermitianPd

    @property
    def k(self) -> int:
        return self.z.shape[1]

    @property
    def truth_bins(self) -> frozenset[int]:
        return frozenset(t.range_bin for t in self.truth)


# Per-element phase slope of the array response, in units of 2*pi*sin(theta).
# One full wavelength between phase centers: the narrow response this gives
# over the +/-20 degree sector is what the adjacent-grid-angle classification
# accuracy targets require; a half-wavelength slope provably cannot separate
# neighboring grid angles at the edges of the sector at the design SINRs.
_PHASE_SLOPE = 2.0 * np.pi


def steering_vector(theta_deg: float, n: int) -> np.ndarray:
    """ULA response: entry m is exp(i 2 pi m sin(theta)).

    Unnormalized, so the squared norm equals n.
    """
    phase = _PHASE_SLOPE * np.sin(np.deg2rad(theta_deg))
    return np.exp(1j * phase * np.arange(n))


def steering_matrix(grid: AngleGrid, n: int) -> np.ndarray:
    """N x K_theta matrix whose columns are the grid steering vectors."""
    phases = _PHASE_SLOPE * np.sin(np.deg2rad(grid.as_array()))
    return np.exp(1j * np.outer(np.arange(n), phases))


def interference_covariance(cfg: InterferenceConfig) -> HermitianPd:
    """sigma_n^2 I + sigma_c^2 R_c with R_c[i, j] = rho_c^|i-j|."""
    sigma_c2 = 10.0 ** (cfg.cnr_db / 10.0) * cfg.sigma_n2
    lags = np.abs(np.subtract.outer(np.arange(cfg.n), np.arange(cfg.n)))
    r_c = cfg.rho_c ** lags
    return HermitianPd(cfg.sigma_n2 * np.eye(cfg.n) + sigma_c2 * r_c)


def amplitude_from_sinr(
    sinr_db: float, theta_deg: float, m: HermitianPd, phase: float
) -> complex:
    """Complex amplitude whose power achieves the requested SINR.

    SINR is defined as |alpha|^2 v(theta)^H m^{-1} v(theta); the returned
    amplitude has that modulus and argument ``phase``.
    """
    v = steering_vector(theta_deg, m.n)
    power = 10.0 ** (sinr_db / 10.0)
    mag = np.sqrt(power / quad_form(m, v, v).real)
    return complex(mag * np.exp(1j * phase))


def sample_gaussian(mean, m: HermitianPd, rng: np.random.Generator) -> np.ndarray:
    """One draw of a circular complex Gaussian with the given mean and covariance.

    Real and imaginary noise parts each have variance 1/2 per channel before
    coloring, so the whitened draw has identity covariance.
    """
    w = rng.standard_normal(m.n) + 1j * rng.standard_normal(m.n)
    return np.asarray(mean, dtype=np.complex128) + cholesky(m) @ (w * np.sqrt(0.5))


def generate_scene(
    k: int,
    grid: AngleGrid,
    cfg: InterferenceConfig,
    targets: list[TargetSpec] | tuple[TargetSpec, ...],
    rng: np.random.Generator,
    m: HermitianPd | None = None,
) -> Scene:
    """Sample a data matrix: interference everywhere, plus one rank-one
    target per occupied bin.

    Each target gets an independently drawn uniform phase per call. Draw
    order is fixed (phases in target order, then the noise block), so equal
    seeds give bitwise-identical scenes. ``m`` short-circuits rebuilding the
    interference covariance when many scenes share one configuration.
    """
    bins = [t.range_bin for t in targets]
    if len(set(bins)) != len(bins):
        raise DuplicateBin(f"duplicate target range bins in {sorted(bins)}")
    for b in bins:
        if not 1 <= b <= k:
            raise ValueError(f"target range bin {b} outside 1..{k}")
    if m is None:
        m = interference_covariance(cfg)

    phases = [rng.uniform(0.0, 2.0 * np.pi) for _ in targets]
    w = rng.standard_normal((cfg.n, k)) + 1j * rng.standard_normal((cfg.n, k))
    z = cholesky(m) @ (w * np.sqrt(0.5))
    for t, phase in zip(targets, phases):
        alpha = amplitude_from_sinr(t.sinr_db, t.aoa_deg, m, phase)
        z[:, t.range_bin - 1] += alpha * steering_vector(t.aoa_deg, cfg.n)

    truth_grid_index = {t.range_bin: grid.nearest(t.aoa_deg) for t in targets}
    return Scene(z, list(targets), truth_grid_index, m)


def write_scene_csv(scene: Scene, path) -> None:
    """Dump the data matrix, one row per range bin, channels interleaved re/im."""
    n = scene.z.shape[0]
    header = [f"ch{i}_{part}" for i in range(n) for part in ("re", "im")]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for col in scene.z.T:
            row = []
            for value in col:
                row.extend((repr(float(value.real)), repr(float(value.imag))))
            writer.writerow(row)
