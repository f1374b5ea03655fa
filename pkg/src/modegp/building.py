"""Shear-building ground truth: matrices, eigen modes, and noisy sparse sampling.

The chain model lumps one mass per floor and one shear stiffness per story
(story i connects floor i to floor i-1, with floor 0 the fixed base).  Mode
shapes of M^-1 K are invariant to a common scaling of the mass and stiffness
values, so the default unit mass/stiffness loses no generality for expansion
experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BuildingModel",
    "ModeSet",
    "MeasurementSet",
    "build_shear_building",
    "solve_modes",
    "sample_measurements",
]

EIGEN_RESIDUAL_TOL = 1e-10


def _readonly(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class BuildingModel:
    """Diagonal-mass, tridiagonal-stiffness shear building with N floors above base."""

    n_floors: int
    masses: np.ndarray            # (N,) floor masses
    story_stiffnesses: np.ndarray  # (N,) entry i-1 connects floor i to floor i-1

    def __post_init__(self):
        if self.n_floors < 1:
            raise ValueError(f"n_floors must be a positive integer, got {self.n_floors}")
        m = _readonly(self.masses)
        k = _readonly(self.story_stiffnesses)
        if m.shape != (self.n_floors,) or k.shape != (self.n_floors,):
            raise ValueError(
                f"masses and story_stiffnesses must have length {self.n_floors}, "
                f"got {m.shape} and {k.shape}"
            )
        if not np.all(m > 0):
            raise ValueError("all floor masses must be strictly positive")
        if not np.all(k > 0):
            raise ValueError("all story stiffnesses must be strictly positive")
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "story_stiffnesses", k)

    def mass_matrix(self) -> np.ndarray:
        return np.diag(self.masses)

    def stiffness_matrix(self) -> np.ndarray:
        """Assemble the symmetric tridiagonal stiffness matrix of the chain."""
        n = self.n_floors
        k = self.story_stiffnesses
        K = np.zeros((n, n))
        for i in range(n):
            K[i, i] = k[i] + (k[i + 1] if i + 1 < n else 0.0)
            if i + 1 < n:
                K[i, i + 1] = -k[i + 1]
                K[i + 1, i] = -k[i + 1]
        return K


@dataclass(frozen=True)
class ModeSet:
    """Mode shapes over the floors above base, ordered by ascending frequency.

    ``heights`` includes the base at 0, so it has one more entry than each
    shape column; the implicit base ordinate of every mode is zero.
    """

    n_modes: int
    heights: np.ndarray      # (N+1,) normalized heights incl. base 0
    shapes: np.ndarray       # (N, n_modes) unit-norm columns
    frequencies: np.ndarray  # (n_modes,) circular frequencies, ascending

    def __post_init__(self):
        h = _readonly(self.heights)
        s = _readonly(self.shapes)
        w = _readonly(self.frequencies)
        if s.ndim != 2 or s.shape[1] != self.n_modes:
            raise ValueError(f"shapes must be (n_floors, {self.n_modes}), got {s.shape}")
        if h.shape != (s.shape[0] + 1,):
            raise ValueError("heights must have one more entry (the base) than shape rows")
        if w.shape != (self.n_modes,):
            raise ValueError("frequencies must have one entry per mode")
        if np.any(np.diff(w) < 0):
            raise ValueError("frequencies must be in ascending order")
        object.__setattr__(self, "heights", h)
        object.__setattr__(self, "shapes", s)
        object.__setattr__(self, "frequencies", w)

    @property
    def n_floors(self) -> int:
        return self.shapes.shape[0]


@dataclass(frozen=True)
class MeasurementSet:
    """Per-mode noisy observations of modal ordinates at instrumented floors."""

    sensor_floors: np.ndarray   # (n_d,) strictly increasing, 1-based floor indices
    sensor_heights: np.ndarray  # (n_d,) = sensor_floors / n_floors
    values: np.ndarray          # (n_d, n_modes) observed ordinates
    noise_std: np.ndarray       # (n_modes,) measurement noise std per mode
    rng_seed: int

    def __post_init__(self):
        fl = _readonly(self.sensor_floors, dtype=int)
        h = _readonly(self.sensor_heights)
        v = _readonly(self.values)
        s = _readonly(self.noise_std)
        if fl.ndim != 1 or np.any(np.diff(fl) <= 0):
            raise ValueError("sensor_floors must be strictly increasing")
        if np.any(fl < 1):
            raise ValueError("sensor floors are 1-based indices above the base")
        if h.shape != fl.shape:
            raise ValueError("sensor_heights must match sensor_floors")
        if np.any(h <= 0) or np.any(h > 1):
            raise ValueError("sensor heights must lie in (0, 1]")
        if v.ndim != 2 or v.shape[0] != fl.size:
            raise ValueError("values must have one row per sensor floor")
        if s.shape != (v.shape[1],) or np.any(s < 0):
            raise ValueError("noise_std must be one non-negative value per mode")
        object.__setattr__(self, "sensor_floors", fl)
        object.__setattr__(self, "sensor_heights", h)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "noise_std", s)

    @property
    def n_modes(self) -> int:
        return self.values.shape[1]


def build_shear_building(n_floors: int, mass: float, stiffness: float,
                         damage: tuple[int, float] | None = None) -> BuildingModel:
    """Uniform shear building, optionally with one story's stiffness reduced.

    Parameters
    ----------
    n_floors : number of floors above the base.
    mass, stiffness : uniform floor mass and story stiffness (both > 0).
    damage : optional ``(story, retained)`` pair; the stiffness of that story
        is multiplied by ``retained`` (a fraction strictly between 0 and 1).
    """
    if n_floors < 1:
        raise ValueError(f"n_floors must be a positive integer, got {n_floors}")
    if mass <= 0:
        raise ValueError(f"mass must be positive, got {mass}")
    if stiffness <= 0:
        raise ValueError(f"stiffness must be positive, got {stiffness}")
    masses = np.full(n_floors, float(mass))
    stiffnesses = np.full(n_floors, float(stiffness))
    if damage is not None:
        floor, retained = damage
        if not 1 <= floor <= n_floors:
            raise ValueError(f"damage floor {floor} outside [1, {n_floors}]")
        if not 0.0 < retained < 1.0:
            raise ValueError(f"retained stiffness fraction must be in (0, 1), got {retained}")
        stiffnesses[floor - 1] *= retained
    return BuildingModel(n_floors, masses, stiffnesses)


def solve_modes(model: BuildingModel, n_modes: int) -> ModeSet:
    """Solve K phi = omega^2 M phi for the lowest ``n_modes`` modes.

    Works on the symmetrized standard problem M^-1/2 K M^-1/2 (M is diagonal),
    back-transforms the eigenvectors, normalizes each column to unit Euclidean
    norm and fixes the sign so the top-floor ordinate is non-negative.
    """
    if not 1 <= n_modes <= model.n_floors:
        raise ValueError(f"n_modes must be in [1, {model.n_floors}], got {n_modes}")
    M = model.mass_matrix()
    K = model.stiffness_matrix()
    d = np.sqrt(model.masses)
    A = K / d[:, None] / d[None, :]
    A = 0.5 * (A + A.T)
    try:
        eigvals, eigvecs = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigen iteration failed to converge for N={model.n_floors}: {exc}") from exc

    shapes = eigvecs[:, :n_modes] / d[:, None]
    shapes = shapes / np.linalg.norm(shapes, axis=0)
    sign = np.where(shapes[-1, :] < 0, -1.0, 1.0)
    shapes = shapes * sign
    omega2 = eigvals[:n_modes]

    # guard against a silently bad factorization
    resid = K @ shapes - M @ shapes * omega2[None, :]
    rel = np.linalg.norm(resid, axis=0) / np.linalg.norm(K @ shapes, axis=0)
    if np.any(rel > EIGEN_RESIDUAL_TOL):
        raise RuntimeError(
            f"eigen residual {rel.max():.3e} exceeds {EIGEN_RESIDUAL_TOL:.0e} "
            f"(worst mode {int(np.argmax(rel)) + 1} of {n_modes})"
        )

    heights = np.arange(model.n_floors + 1) / model.n_floors
    return ModeSet(n_modes=n_modes, heights=heights, shapes=shapes,
                   frequencies=np.sqrt(omega2))


def sample_measurements(truth: ModeSet, sensor_floors, noise_pct: float,
                        seed: int) -> MeasurementSet:
    """Sample noisy modal ordinates at the given floors.

    Noise is i.i.d. zero-mean Gaussian with standard deviation
    ``noise_pct * ||phi_j||`` per mode (drawn from a PCG64 generator, so
    results are bit-reproducible for a fixed seed).
    """
    floors = np.sort(np.asarray(sensor_floors, dtype=int))
    if floors.size == 0:
        raise ValueError("at least one sensor floor is required")
    if np.unique(floors).size != floors.size:
        raise ValueError("sensor floors must be distinct")
    if floors[0] < 1 or floors[-1] > truth.n_floors:
        raise ValueError(f"sensor floors must lie in [1, {truth.n_floors}]")
    if noise_pct < 0:
        raise ValueError(f"noise_pct must be non-negative, got {noise_pct}")

    noise_std = noise_pct * np.linalg.norm(truth.shapes, axis=0)
    rng = np.random.Generator(np.random.PCG64(seed))
    draws = rng.standard_normal((floors.size, truth.n_modes))
    values = truth.shapes[floors - 1, :] + draws * noise_std[None, :]
    return MeasurementSet(
        sensor_floors=floors,
        sensor_heights=floors / truth.n_floors,
        values=values,
        noise_std=noise_std,
        rng_seed=int(seed),
    )
