"""Acceptance gate: ten criteria, one test each, one printed verdict line per.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines.
Criteria 2-4 evaluate a fixed five-seed panel (42..46, the default seed and
its successors).  Criteria 3 and 4 are currently expected to fail: the
penalized objective at the reference noise level admits collapsed local
minima that descent from the prescribed initial point reaches for most noise
draws (see the repository notes on the joint-optimization landscape).
"""

from dataclasses import replace

import numpy as np
import pytest

from modegp import (
    KernelHyper,
    OptimizerConfig,
    RunConfig,
    build_shear_building,
    compute_mac,
    joint_objective,
    gradient_audit,
    mass_normalize,
    nlml_value_and_gradient,
    optimize_cons_sogp,
    optimize_sogp,
    penalty,
    penalty_gradient_modes,
    run_expansion,
    scan_mode,
    simulate,
    solve_modes,
    vector_to_hypers,
)
from modegp.cli import main as cli_main

PANEL_SEEDS = (42, 43, 44, 45, 46)

NLML_GRADIENT_TOL = 1e-5
JOINT_GRADIENT_TOL = 1e-4
SOGP_PIN_TOL = 0.01          # "within 0.01 of the lower bound 0.02"
CONS_BETA_FLOOR = 0.05
CONS_MAC_FLOOR = 0.95
PLATEAU_WINDOW = (0.02, 0.06)
COVERAGE_FLOOR = 0.85
PANEL_MIN_PASS = 4


def verdict(criterion: int, passed: bool, detail: str) -> bool:
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")
    return passed


@pytest.fixture(scope="module")
def panel():
    """SOGP and CONS-SOGP expansions for every panel seed."""
    results = {}
    for seed in PANEL_SEEDS:
        cfg = RunConfig(seed=seed)
        model, truth, measurements = simulate(cfg)
        M = model.mass_matrix()
        sogp = run_expansion(replace(cfg, method="sogp"), measurements, M, truth)
        cons = run_expansion(cfg, measurements, M, truth)
        results[seed] = (sogp, cons)
    return results


def in_bounds_points(rng, n_points, n_modes, margin=1e-3):
    (g_lo, g_hi), (b_lo, b_hi) = KernelHyper(0.0, 0.0).bounds
    pts = np.empty((n_points, 2 * n_modes))
    pts[:, 0::2] = rng.uniform(g_lo + margin, g_hi - margin, (n_points, n_modes))
    pts[:, 1::2] = rng.uniform(b_lo + margin, b_hi - margin, (n_points, n_modes))
    return pts


def test_criterion_1_gradient_correctness(paper_datasets, paper_bank):
    rng = np.random.default_rng(1001)
    points = in_bounds_points(rng, 50, 1)
    nlml_err = 0.0
    for data in paper_datasets:
        def handle(theta, data=data):
            return nlml_value_and_gradient(data, KernelHyper(theta[0], theta[1]))
        for pt in points:
            nlml_err = max(nlml_err, gradient_audit(handle, pt))

    def joint_handle(theta):
        ev = joint_objective(paper_bank.with_hypers(vector_to_hypers(theta)))
        return ev.total, ev.gradient

    joint_err = 0.0
    for pt in in_bounds_points(rng, 50, paper_bank.n_modes):
        joint_err = max(joint_err, gradient_audit(joint_handle, pt))

    ok = nlml_err <= NLML_GRADIENT_TOL and joint_err <= JOINT_GRADIENT_TOL
    assert verdict(1, ok,
                   f"NLML grad FD err {nlml_err:.2e} (tol {NLML_GRADIENT_TOL:.0e}), "
                   f"joint grad FD err {joint_err:.2e} (tol {JOINT_GRADIENT_TOL:.0e}), "
                   "50 random points each")


def test_criterion_2_sogp_beta_pinning(panel):
    hits = []
    for seed in PANEL_SEEDS:
        sogp, _ = panel[seed]
        betas = sogp.report.betas[2:]  # modes 3-5
        hits.append(int(np.sum(betas <= 0.02 + SOGP_PIN_TOL)) >= 2)
    ok = sum(hits) >= PANEL_MIN_PASS
    assert verdict(2, ok,
                   f"SOGP pins >=2 of modes 3-5 near beta=0.02 in {sum(hits)}/5 seeds "
                   f"(need >={PANEL_MIN_PASS})")


def test_criterion_3_cons_beta_stays_off_floor(panel):
    hits = []
    minima = []
    for seed in PANEL_SEEDS:
        _, cons = panel[seed]
        minima.append(float(np.min(cons.report.betas)))
        hits.append(bool(np.all(cons.report.betas >= CONS_BETA_FLOOR)))
    ok = sum(hits) >= PANEL_MIN_PASS
    assert verdict(3, ok,
                   f"all five CONS-SOGP beta >= {CONS_BETA_FLOOR} in {sum(hits)}/5 seeds "
                   f"(need >={PANEL_MIN_PASS}); per-seed min beta: "
                   + ", ".join(f"{m:.3f}" for m in minima))


def test_criterion_4_accuracy_ordering(panel):
    ordering_ok = []
    mac_ok = []
    details = []
    for seed in PANEL_SEEDS:
        sogp, cons = panel[seed]
        sogp_m35 = float(np.mean(sogp.mac[2:]))
        cons_m35 = float(np.mean(cons.mac[2:]))
        ordering_ok.append(cons_m35 > sogp_m35)
        mac_ok.append(bool(np.all(cons.mac >= CONS_MAC_FLOOR)))
        details.append(f"seed {seed}: cons {cons_m35:.3f} vs sogp {sogp_m35:.3f}, "
                       f"min MAC {float(np.min(cons.mac)):.3f}")
    ok = all(ordering_ok) and sum(mac_ok) >= PANEL_MIN_PASS
    assert verdict(4, ok,
                   f"mean MAC(3-5) ordering holds in {sum(ordering_ok)}/5 seeds "
                   f"(need 5), MAC >= {CONS_MAC_FLOOR} for every mode in "
                   f"{sum(mac_ok)}/5 seeds (need >={PANEL_MIN_PASS}); "
                   + "; ".join(details))


def test_criterion_5_nlml_plateau_flags(paper_config, paper_scenario):
    model, truth, measurements = paper_scenario
    cons = run_expansion(paper_config, measurements, model.mass_matrix(), truth)
    betas = np.geomspace(paper_config.beta_bounds[0], paper_config.beta_bounds[1], 120)
    flags = {}
    for mode in (1, 4, 5):
        gamma = float(cons.report.gammas[mode - 1])
        flags[mode] = scan_mode(paper_config, measurements, mode, gamma, betas)
    ok = flags[4].plateau and flags[5].plateau and flags[1].interior_minimum
    assert verdict(5, ok,
                   f"plateau(mode 4)={flags[4].plateau}, plateau(mode 5)={flags[5].plateau}, "
                   f"interior minimum(mode 1)={flags[1].interior_minimum} "
                   f"(window {PLATEAU_WINDOW}, 10% rule)")


def test_criterion_6_penalty_exactness(paper_scenario, mass_matrix):
    _, truth, _ = paper_scenario
    Phi = np.column_stack([mass_normalize(truth.shapes[:, j], mass_matrix)
                           for j in range(truth.n_modes)])
    p = penalty(Phi, mass_matrix)
    g = float(np.max(np.abs(penalty_gradient_modes(Phi, mass_matrix))))
    ok = p <= 1e-12 and g <= 1e-10
    assert verdict(6, ok, f"penalty at true modes {p:.2e} (tol 1e-12), "
                          f"max gradient entry {g:.2e} (tol 1e-10)")


def test_criterion_7_eigen_oracle():
    n = 53
    modes = solve_modes(build_shear_building(n, 1.0, 1.0), 5)
    floors = np.arange(1, n + 1)
    worst = 1.0
    for j in range(1, 6):
        oracle = np.sin((2 * j - 1) * floors * np.pi / (2 * n + 1))
        worst = min(worst, compute_mac(modes.shapes[:, j - 1], oracle))
    ok = worst >= 1.0 - 1e-10
    assert verdict(7, ok, f"uniform-chain sine oracle, worst MAC 1-{1.0 - worst:.2e} "
                          "over modes 1-5 (tol 1e-10)")


def test_criterion_8_lambda_zero_decoupling(paper_datasets, paper_bank):
    sogp = optimize_sogp(paper_datasets)
    cons = optimize_cons_sogp(paper_bank, OptimizerConfig.for_cons_sogp(lam=0.0))
    delta = max(
        max(abs(a.log_gamma - b.log_gamma), abs(a.log_beta - b.log_beta))
        for a, b in zip(cons.hypers, sogp.hypers)
    )
    ok = delta <= 1e-4
    assert verdict(8, ok, f"lambda=0 joint run matches per-mode SOGP to {delta:.2e} "
                          "in log space (tol 1e-4)")


def test_criterion_9_byte_determinism(tmp_path):
    files = ("truth.csv", "measurements.csv", "meta.json", "mass_matrix.csv",
             "expanded.csv", "hyperparameters.csv", "report.json")
    outs = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        assert cli_main(["simulate", "--out", out]) == 0
        assert cli_main(["expand", "--out", out, "--method", "cons-sogp"]) == 0
        outs.append(out)
    identical = []
    for fname in files:
        with open(f"{outs[0]}/{fname}", "rb") as fa, open(f"{outs[1]}/{fname}", "rb") as fb:
            identical.append(fa.read() == fb.read())
    ok = all(identical)
    assert verdict(9, ok, f"{sum(identical)}/{len(files)} output files byte-identical "
                          "across two identical runs")


def test_criterion_10_ci_coverage(paper_config, paper_scenario):
    model, truth, measurements = paper_scenario
    cons = run_expansion(paper_config, measurements, model.mass_matrix(), truth)
    mean_cov = float(np.mean(cons.coverage))
    ok = mean_cov >= COVERAGE_FLOOR
    assert verdict(10, ok, f"CONS-SOGP 95% bands cover truth at {mean_cov:.1%} of "
                           f"non-sensor floors (tol >= {COVERAGE_FLOOR:.0%})")
