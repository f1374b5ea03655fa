"""End-to-end expansion runs: scenario config, metrics, and the NLML scan.

Everything here is deterministic for a fixed config: the simulation RNG is
seeded, the optimizer is deterministic, and metrics follow fixed reduction
orders.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .building import (
    BuildingModel,
    MeasurementSet,
    ModeSet,
    build_shear_building,
    sample_measurements,
    solve_modes,
)
from .gp import (
    BASE_JITTER,
    GPDataset,
    KernelHyper,
    nlml,
    nlml_value_and_gradient,
    posterior,
    standardize,
)
from .optimize import (
    OptimizationReport,
    OptimizerConfig,
    gradient_audit,
    optimize_cons_sogp,
    optimize_sogp,
    vector_to_hypers,
)
from .orthogonality import ModeBank, joint_objective

__all__ = [
    "RunConfig",
    "ExpansionResult",
    "ScanResult",
    "NLML_AUDIT_TOL",
    "JOINT_AUDIT_TOL",
    "simulate",
    "datasets_from_measurements",
    "make_bank",
    "run_expansion",
    "compute_mac",
    "align_sign",
    "nlml_scan",
    "analyze_scan",
    "scan_mode",
    "run_gradcheck",
]

METHODS = ("sogp", "cons-sogp")

# audit thresholds used by the gradcheck command's exit status
NLML_AUDIT_TOL = 1e-5
JOINT_AUDIT_TOL = 1e-4


@dataclass(frozen=True)
class RunConfig:
    """Scenario and solver knobs for one expansion experiment."""

    n_floors: int = 53
    floor_mass: float = 1.0
    story_stiffness: float = 1.0
    damage_floor: int | None = 15
    damage_retained: float = 0.2
    sensor_floors: tuple = (10, 20, 30, 40, 53)
    noise_pct: float = 0.02
    seed: int = 42
    n_modes: int = 5
    method: str = "cons-sogp"
    lam: float = 1000.0
    gamma_bounds: tuple = (0.1, 10.0)
    beta_bounds: tuple = (0.02, 1.5)
    gamma_init: float = 1.0
    beta_init: float = 0.1
    base_jitter: float = BASE_JITTER

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.n_modes < 1 or self.n_modes > self.n_floors:
            raise ValueError(f"n_modes must be in [1, {self.n_floors}], got {self.n_modes}")
        floors = tuple(int(f) for f in self.sensor_floors)
        if any(f < 1 or f > self.n_floors for f in floors):
            raise ValueError(f"sensor floors must lie in [1, {self.n_floors}], got {floors}")
        if len(set(floors)) != len(floors):
            raise ValueError("sensor floors must be distinct")
        if self.damage_floor is not None and not 1 <= self.damage_floor <= self.n_floors:
            raise ValueError(f"damage floor {self.damage_floor} outside [1, {self.n_floors}]")
        if self.noise_pct < 0:
            raise ValueError("noise_pct must be non-negative")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        object.__setattr__(self, "sensor_floors", floors)
        object.__setattr__(self, "gamma_bounds", tuple(float(v) for v in self.gamma_bounds))
        object.__setattr__(self, "beta_bounds", tuple(float(v) for v in self.beta_bounds))

    @property
    def damage(self) -> tuple[int, float] | None:
        if self.damage_floor is None:
            return None
        return (self.damage_floor, self.damage_retained)

    @property
    def log_bounds(self) -> tuple:
        return (
            (math.log(self.gamma_bounds[0]), math.log(self.gamma_bounds[1])),
            (math.log(self.beta_bounds[0]), math.log(self.beta_bounds[1])),
        )

    def optimizer_config(self) -> OptimizerConfig:
        common = dict(gamma_init=self.gamma_init, beta_init=self.beta_init,
                      log_bounds=self.log_bounds, lam=self.lam)
        if self.method == "sogp":
            return OptimizerConfig.for_sogp(**common)
        return OptimizerConfig.for_cons_sogp(**common)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sensor_floors"] = list(self.sensor_floors)
        d["gamma_bounds"] = list(self.gamma_bounds)
        d["beta_bounds"] = list(self.beta_bounds)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(data)
        for key in ("sensor_floors", "gamma_bounds", "beta_bounds"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def simulate(config: RunConfig) -> tuple[BuildingModel, ModeSet, MeasurementSet]:
    """Build the synthetic scenario: model, true modes and noisy measurements."""
    model = build_shear_building(config.n_floors, config.floor_mass,
                                 config.story_stiffness, config.damage)
    truth = solve_modes(model, config.n_modes)
    measurements = sample_measurements(truth, config.sensor_floors,
                                       config.noise_pct, config.seed)
    return model, truth, measurements


def datasets_from_measurements(measurements: MeasurementSet,
                               base_jitter: float = BASE_JITTER) -> list[GPDataset]:
    return [
        standardize(measurements.sensor_heights, measurements.values[:, j],
                    float(measurements.noise_std[j]), base_jitter)
        for j in range(measurements.n_modes)
    ]


def make_bank(config: RunConfig, measurements: MeasurementSet,
              mass_matrix: np.ndarray) -> ModeBank:
    datasets = datasets_from_measurements(measurements, config.base_jitter)
    init = KernelHyper.from_physical(config.gamma_init, config.beta_init, config.log_bounds)
    n = mass_matrix.shape[0]
    return ModeBank(
        datasets=tuple(datasets),
        hypers=tuple(init for _ in datasets),
        mass_matrix=mass_matrix,
        query_heights=np.arange(1, n + 1) / n,
        lam=config.lam,
    )


def compute_mac(a, b) -> float:
    """Modal assurance criterion: (a.b)^2 / (|a|^2 |b|^2), in [0, 1]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"vectors must have equal length, got {a.shape} and {b.shape}")
    aa = float(a @ a)
    bb = float(b @ b)
    if aa == 0.0 or bb == 0.0:
        raise ValueError("MAC is undefined for a zero vector")
    return min(1.0, float(a @ b) ** 2 / (aa * bb))


def align_sign(estimate, reference) -> np.ndarray:
    """Flip the estimate's sign when that raises its correlation with the reference."""
    estimate = np.asarray(estimate, dtype=float)
    if float(estimate @ np.asarray(reference, dtype=float)) < 0.0:
        return -estimate
    return estimate


@dataclass(frozen=True)
class ExpansionResult:
    """Expanded modes over all floors (base included) plus accuracy metrics."""

    method: str
    heights: np.ndarray           # (N+1,)
    means: np.ndarray             # (N+1, n_modes)
    stds: np.ndarray              # (N+1, n_modes)
    report: OptimizationReport
    lam: float | None = None
    penalty: float | None = None
    mac: np.ndarray | None = None       # vs truth, per mode
    rmse: np.ndarray | None = None
    coverage: np.ndarray | None = None  # 95% CI coverage at non-sensor floors

    @property
    def hypers(self) -> tuple:
        return self.report.hypers

    def metrics_dict(self) -> dict:
        out = {
            "method": self.method,
            "objective": float(self.report.objective),
            "nlml_per_mode": [float(v) for v in self.report.nlml_per_mode],
            "nlml_total": float(np.sum(self.report.nlml_per_mode)),
        }
        if self.method == "cons-sogp":
            out["lambda"] = float(self.lam)
            out["penalty"] = float(self.penalty)
            out["lambda_penalty"] = float(self.lam * self.penalty)
        if self.mac is not None:
            out["mac"] = [float(v) for v in self.mac]
            out["rmse"] = [float(v) for v in self.rmse]
            out["coverage"] = [float(v) for v in self.coverage]
        return out


def run_expansion(config: RunConfig, measurements: MeasurementSet,
                  mass_matrix: np.ndarray,
                  truth: ModeSet | None = None) -> ExpansionResult:
    """Optimize hyperparameters with the configured method and expand all modes.

    With the ground truth available, per-mode MAC, RMSE and 95% CI coverage at
    the non-sensor floors are computed after aligning each estimated sign to
    the truth (MAC itself is sign invariant).
    """
    n = mass_matrix.shape[0]
    datasets = datasets_from_measurements(measurements, config.base_jitter)
    opt_config = config.optimizer_config()

    if config.method == "sogp":
        report = optimize_sogp(datasets, opt_config)
        lam = pen = None
    else:
        bank = make_bank(config, measurements, mass_matrix)
        report = optimize_cons_sogp(bank, opt_config)
        lam, pen = report.lam, report.penalty

    grid = np.arange(n + 1) / n
    means = np.zeros((n + 1, len(datasets)))
    stds = np.zeros((n + 1, len(datasets)))
    for j, (data, hyper) in enumerate(zip(datasets, report.hypers)):
        post = posterior(data, hyper, grid)
        means[:, j] = post.mean
        stds[:, j] = post.std

    mac = rmse = coverage = None
    if truth is not None:
        if truth.n_floors != n or truth.n_modes < len(datasets):
            raise ValueError("truth does not match the measurement dimensions")
        sensor_idx = measurements.sensor_floors - 1
        non_sensor = np.setdiff1d(np.arange(n), sensor_idx)
        mac = np.zeros(len(datasets))
        rmse = np.zeros(len(datasets))
        coverage = np.zeros(len(datasets))
        for j in range(len(datasets)):
            ref = truth.shapes[:, j]
            est = align_sign(means[1:, j], ref)
            band = 1.96 * stds[1:, j]
            mac[j] = compute_mac(est, ref)
            rmse[j] = float(np.sqrt(np.mean((est - ref) ** 2)))
            coverage[j] = float(np.mean(np.abs(est - ref)[non_sensor] <= band[non_sensor]))

    return ExpansionResult(
        method=config.method, heights=grid, means=means, stds=stds,
        report=report, lam=lam, penalty=pen,
        mac=mac, rmse=rmse, coverage=coverage,
    )


# ---------------------------------------------------------------------------
# NLML landscape scan (correlation-length sweep at fixed signal std)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanResult:
    betas: np.ndarray
    values: np.ndarray
    interior_minimum: bool
    plateau: bool
    low_window: tuple
    window_range: float
    full_range: float


def nlml_scan(data: GPDataset, gamma: float, betas,
              log_bounds=None) -> np.ndarray:
    """Evaluate the NLML over a beta grid at fixed gamma."""
    betas = np.asarray(betas, dtype=float)
    if betas.size < 1:
        raise ValueError("beta grid must contain at least one point")
    values = np.empty(betas.size)
    for i, b in enumerate(betas):
        kwargs = {} if log_bounds is None else {"bounds": log_bounds}
        values[i] = nlml(data, KernelHyper(math.log(gamma), math.log(b), **kwargs))
    return values


def analyze_scan(betas, values, low_window: tuple = (0.02, 0.06),
                 plateau_fraction: float = 0.1) -> dict:
    """Flag a strict interior minimum and low-beta flatness of an NLML scan.

    The scan is plateaued when the NLML range over ``low_window`` is at most
    ``plateau_fraction`` of the full-grid range.
    """
    betas = np.asarray(betas, dtype=float)
    values = np.asarray(values, dtype=float)
    interior = False
    if betas.size >= 3:
        inner = values[1:-1]
        interior = bool(np.min(inner) < values[0] and np.min(inner) < values[-1])
    full_range = float(np.max(values) - np.min(values))
    in_window = (betas >= low_window[0]) & (betas <= low_window[1])
    if np.any(in_window):
        window_range = float(np.max(values[in_window]) - np.min(values[in_window]))
    else:
        window_range = float("nan")
    plateau = bool(np.any(in_window) and full_range > 0.0
                   and window_range <= plateau_fraction * full_range)
    return {
        "interior_minimum": interior,
        "plateau": plateau,
        "low_window": [float(low_window[0]), float(low_window[1])],
        "window_range": window_range,
        "full_range": full_range,
    }


def scan_mode(config: RunConfig, measurements: MeasurementSet, mode_index: int,
              gamma: float, betas) -> ScanResult:
    """Run the beta sweep for one mode of a measured scenario."""
    if not 1 <= mode_index <= measurements.n_modes:
        raise ValueError(f"mode index must be in [1, {measurements.n_modes}], got {mode_index}")
    lo, hi = config.beta_bounds
    betas = np.asarray(betas, dtype=float)
    if np.any(betas < lo) or np.any(betas > hi):
        raise ValueError(f"beta grid must stay within the bounds [{lo}, {hi}]")
    data = datasets_from_measurements(measurements, config.base_jitter)[mode_index - 1]
    values = nlml_scan(data, gamma, betas, log_bounds=config.log_bounds)
    flags = analyze_scan(betas, values)
    return ScanResult(betas=betas, values=values,
                      interior_minimum=flags["interior_minimum"],
                      plateau=flags["plateau"],
                      low_window=tuple(flags["low_window"]),
                      window_range=flags["window_range"],
                      full_range=flags["full_range"])


# ---------------------------------------------------------------------------
# Gradient audit over random in-bounds points
# ---------------------------------------------------------------------------

def _random_interior_points(config: RunConfig, n_points: int, seed: int,
                            n_modes: int) -> np.ndarray:
    """Log-uniform in-bounds hyperparameter points, margin away from the box edge."""
    (g_lo, g_hi), (b_lo, b_hi) = config.log_bounds
    rng = np.random.Generator(np.random.PCG64(seed))
    margin = 1e-3
    pts = np.empty((n_points, 2 * n_modes))
    pts[:, 0::2] = rng.uniform(g_lo + margin, g_hi - margin, size=(n_points, n_modes))
    pts[:, 1::2] = rng.uniform(b_lo + margin, b_hi - margin, size=(n_points, n_modes))
    return pts


def run_gradcheck(config: RunConfig, n_points: int, seed: int,
                  corrupt_scale: float = 1.0) -> dict:
    """Audit analytic gradients against central differences at random points.

    Always audits the per-mode NLML gradients; the joint objective is audited
    too when the config method is cons-sogp.  ``corrupt_scale`` is a test hook
    that multiplies the first analytic gradient component, letting the audit
    itself be audited.
    """
    if n_points < 0:
        raise ValueError("n_points must be non-negative")
    report = {
        "n_points": int(n_points),
        "seed": int(seed),
        "method": config.method,
        "nlml_tolerance": NLML_AUDIT_TOL,
        "joint_tolerance": JOINT_AUDIT_TOL,
    }
    if n_points == 0:
        report.update({"nlml_max_error": None, "joint_max_error": None, "passed": True})
        return report

    model, _, measurements = simulate(config)
    datasets = datasets_from_measurements(measurements, config.base_jitter)

    def corrupted(value, grad):
        if corrupt_scale != 1.0:
            grad = np.array(grad, dtype=float)
            grad[0] *= corrupt_scale
        return value, grad

    nlml_err = 0.0
    points = _random_interior_points(config, n_points, seed, 1)
    for j, data in enumerate(datasets):
        def handle(theta, data=data):
            h = KernelHyper(theta[0], theta[1], config.log_bounds)
            return corrupted(*nlml_value_and_gradient(data, h))
        for pt in points:
            nlml_err = max(nlml_err, gradient_audit(handle, pt))
    report["nlml_max_error"] = nlml_err
    passed = nlml_err <= NLML_AUDIT_TOL

    joint_err = None
    if config.method == "cons-sogp":
        bank = make_bank(config, measurements, model.mass_matrix())

        def joint_handle(theta):
            ev = joint_objective(bank.with_hypers(vector_to_hypers(theta, config.log_bounds)))
            return corrupted(ev.total, ev.gradient)

        joint_err = 0.0
        joint_points = _random_interior_points(config, n_points, seed + 1, bank.n_modes)
        for pt in joint_points:
            joint_err = max(joint_err, gradient_audit(joint_handle, pt))
        passed = passed and joint_err <= JOINT_AUDIT_TOL
    report["joint_max_error"] = joint_err
    report["passed"] = bool(passed)
    return report
