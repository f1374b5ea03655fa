"""Command-line pipeline: simulate, expand, nlml-scan and gradcheck.

Exit codes form a stable CI contract: 0 success, 1 gradient-verification
failure, 2 input/parse/IO error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import fileio
from .pipeline import (
    JOINT_AUDIT_TOL,
    NLML_AUDIT_TOL,
    RunConfig,
    run_expansion,
    run_gradcheck,
    scan_mode,
    simulate,
)

__all__ = ["main", "entrypoint"]

EXIT_OK = 0
EXIT_VERIFICATION = 1
EXIT_INPUT = 2


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="JSON config file; flags override it")
    parser.add_argument("--out", metavar="DIR", default=".", help="output directory (default: .)")
    parser.add_argument("--seed", type=int, help="simulation RNG seed")
    parser.add_argument("--method", choices=("sogp", "cons-sogp"), help="expansion method")
    parser.add_argument("--lambda", dest="lam", type=float, help="orthogonality penalty weight")
    parser.add_argument("--n-floors", type=int, help="floors above base")
    parser.add_argument("--n-modes", type=int, help="number of modes")
    parser.add_argument("--noise-pct", type=float, help="noise std as a fraction of each mode norm")
    parser.add_argument("--sensor-floors", metavar="F1,F2,...",
                        help="comma-separated instrumented floors")
    parser.add_argument("--damage-floor", type=int, help="damaged story index (0 disables damage)")
    parser.add_argument("--damage-retained", type=float, help="retained stiffness fraction")


def _load_config(args) -> RunConfig:
    data = {}
    if args.config:
        with open(args.config, "r") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{args.config}: config must be a JSON object")
    overrides = {
        "seed": args.seed,
        "method": args.method,
        "lam": args.lam,
        "n_floors": args.n_floors,
        "n_modes": args.n_modes,
        "noise_pct": args.noise_pct,
        "damage_retained": args.damage_retained,
    }
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    if args.sensor_floors is not None:
        data["sensor_floors"] = [int(v) for v in args.sensor_floors.split(",")]
    if args.damage_floor is not None:
        data["damage_floor"] = None if args.damage_floor == 0 else args.damage_floor
    return RunConfig.from_dict(data)


def _meta_extra(config: RunConfig) -> dict:
    return {
        "noise_pct": config.noise_pct,
        "n_floors": config.n_floors,
        "n_modes": config.n_modes,
        "damage_floor": config.damage_floor,
        "damage_retained": config.damage_retained,
        "config": config.to_dict(),
    }


def cmd_simulate(args) -> int:
    config = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    model, truth, measurements = simulate(config)
    fileio.write_modeset_csv(os.path.join(args.out, "truth.csv"), truth)
    fileio.write_measurements(
        os.path.join(args.out, "measurements.csv"),
        os.path.join(args.out, "meta.json"),
        measurements,
        extra_meta=_meta_extra(config),
    )
    fileio.write_matrix_csv(os.path.join(args.out, "mass_matrix.csv"), model.mass_matrix())
    for name in ("truth.csv", "measurements.csv", "meta.json", "mass_matrix.csv"):
        print(os.path.join(args.out, name))
    return EXIT_OK


def _expansion_inputs(args, config):
    data_dir = args.data or args.out
    measurements, meta = fileio.read_measurements(
        os.path.join(data_dir, "measurements.csv"),
        os.path.join(data_dir, "meta.json"),
    )
    M = fileio.read_matrix_csv(os.path.join(data_dir, "mass_matrix.csv"))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("mass_matrix.csv: matrix must be square")
    n = M.shape[0]
    if np.any(measurements.sensor_floors > n):
        raise ValueError(
            f"sensor_floors: floor {int(measurements.sensor_floors.max())} "
            f"exceeds the {n}-floor mass matrix"
        )
    truth = None
    truth_path = os.path.join(data_dir, "truth.csv")
    if os.path.exists(truth_path):
        truth = fileio.read_modeset_csv(truth_path)
        if truth.n_floors != n:
            raise ValueError(f"truth.csv: {truth.n_floors} floors, mass matrix has {n}")
        if truth.n_modes < measurements.n_modes:
            raise ValueError(
                f"truth.csv: {truth.n_modes} mode columns, measurements have "
                f"{measurements.n_modes}"
            )
    return measurements, meta, M, truth


def cmd_expand(args) -> int:
    config = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    measurements, meta, M, truth = _expansion_inputs(args, config)
    result = run_expansion(config, measurements, M, truth)

    n_modes = measurements.n_modes
    header = ["height"]
    columns = [result.heights]
    for j in range(n_modes):
        header += [f"mode_{j + 1}_mean", f"mode_{j + 1}_std"]
        columns += [result.means[:, j], result.stds[:, j]]
    fileio.write_columns_csv(os.path.join(args.out, "expanded.csv"), header, columns)

    fileio.write_columns_csv(
        os.path.join(args.out, "hyperparameters.csv"),
        ["mode", "gamma", "beta"],
        [np.arange(1, n_modes + 1, dtype=float),
         result.report.gammas, result.report.betas],
    )

    report = {
        "schema_version": fileio.SCHEMA_VERSION,
        "seed": int(measurements.rng_seed),
        "optimization": result.report.as_dict(),
        "metrics": result.metrics_dict(),
    }
    fileio.write_json(os.path.join(args.out, "report.json"), report)

    for j in range(n_modes):
        print(f"mode {j + 1}: gamma={result.report.gammas[j]:.4f} "
              f"beta={result.report.betas[j]:.4f}")
    if result.method == "cons-sogp":
        nlml_total = float(np.sum(result.report.nlml_per_mode))
        print(f"objective J={result.report.objective:.6f} "
              f"(sum NLML={nlml_total:.6f}, lambda*penalty={result.lam * result.penalty:.6f})")
    else:
        print(f"objective sum NLML={result.report.objective:.6f}")
    if result.mac is not None:
        print("MAC vs truth: " + " ".join(f"{v:.4f}" for v in result.mac))
    return EXIT_OK


def cmd_nlml_scan(args) -> int:
    config = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    _, _, measurements = simulate(config)
    beta_lo = args.beta_min if args.beta_min is not None else config.beta_bounds[0]
    beta_hi = args.beta_max if args.beta_max is not None else config.beta_bounds[1]
    if args.n_grid < 1:
        raise ValueError("--n-grid must be at least 1")
    if args.n_grid == 1:
        betas = np.array([beta_lo])
    else:
        if not beta_lo < beta_hi:
            raise ValueError("--beta-min must be smaller than --beta-max")
        betas = np.geomspace(beta_lo, beta_hi, args.n_grid)
    scan = scan_mode(config, measurements, args.mode, args.gamma, betas)

    fileio.write_columns_csv(os.path.join(args.out, "scan.csv"),
                             ["beta", "nlml"], [scan.betas, scan.values])
    fileio.write_json(os.path.join(args.out, "scan.json"), {
        "schema_version": fileio.SCHEMA_VERSION,
        "mode": int(args.mode),
        "gamma": float(args.gamma),
        "interior_minimum": scan.interior_minimum,
        "plateau": scan.plateau,
        "low_window": [float(v) for v in scan.low_window],
        "window_range": float(scan.window_range),
        "full_range": float(scan.full_range),
    })
    print(f"mode {args.mode}: interior_minimum={scan.interior_minimum} "
          f"plateau={scan.plateau}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    report = run_gradcheck(config, args.n_points, args.audit_seed,
                           corrupt_scale=args.corrupt_gradient)
    fileio.write_json(os.path.join(args.out, "gradcheck.json"),
                      {"schema_version": fileio.SCHEMA_VERSION, **report})
    if report["nlml_max_error"] is not None:
        print(f"nlml gradient: max rel error {report['nlml_max_error']:.3e} "
              f"(tolerance {NLML_AUDIT_TOL:.0e})")
    if report["joint_max_error"] is not None:
        print(f"joint gradient: max rel error {report['joint_max_error']:.3e} "
              f"(tolerance {JOINT_AUDIT_TOL:.0e})")
    if not report["passed"]:
        print("gradient verification FAILED", file=sys.stderr)
        return EXIT_VERIFICATION
    print("gradient verification passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modegp",
        description="GP-based mode-shape expansion with mass-orthogonality "
                    "constrained hyperparameter learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write truth, measurements and mass matrix")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("expand", help="optimize hyperparameters and expand the modes")
    _add_common(p)
    p.add_argument("--data", metavar="DIR",
                   help="directory with simulate outputs (default: --out)")
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("nlml-scan", help="sweep the NLML over beta at fixed gamma")
    _add_common(p)
    p.add_argument("--mode", type=int, required=True, help="1-based mode index")
    p.add_argument("--gamma", type=float, required=True, help="fixed signal std")
    p.add_argument("--beta-min", type=float, help="grid start (default: lower bound)")
    p.add_argument("--beta-max", type=float, help="grid end (default: upper bound)")
    p.add_argument("--n-grid", type=int, default=120, help="grid size (default 120)")
    p.set_defaults(func=cmd_nlml_scan)

    p = sub.add_parser("gradcheck", help="audit analytic gradients with finite differences")
    _add_common(p)
    p.add_argument("--n-points", type=int, default=20,
                   help="random in-bounds points per objective (default 20)")
    p.add_argument("--audit-seed", type=int, default=0,
                   help="RNG seed for the audit points (default 0)")
    p.add_argument("--corrupt-gradient", type=float, default=1.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
