"""Acceptance suite: one test per criterion, each logging a PASS/FAIL summary line.

Expensive artifacts (ten seeded networks, their pipeline runs and method
comparisons) are computed once per module. Tolerances are the stated ones;
a criterion that does not hold is reported as failing, not relaxed.
"""

import json
import math
import time

import numpy as np
import pytest

from meshdiss import lmicore as lc
from meshdiss.cli import main
from meshdiss.dissipativity import (
    DesignConfig,
    ifofp_certificate,
    network_design,
    node_dissipativity,
    passive_certificate,
    run_pipeline,
)
from meshdiss.evaluation import (
    compare_methods,
    degree_prune,
    metric_jm,
    threshold_prune,
    verify_group_trajectory,
    verify_network_trajectory,
    verify_node_certificate,
)
from meshdiss.netmodel import GenConfig, Group, NodeParams, SpreadingNetwork, generate_random, save_network
from meshdiss.sim import DisturbanceProfile, Trajectory, make_disturbance, metric_jx, simulate

from conftest import network_form

pytestmark = pytest.mark.slow

SEEDS = range(10)
T, DT = 200.0, 0.01


def record(log, number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    log.append(line)
    print(line)
    return passed


@pytest.fixture(scope="module")
def node_set():
    rng = np.random.Generator(np.random.PCG64(2024))
    return [NodeParams(float(g), 0.05 * float(g)) for g in rng.uniform(0.4, 0.9, size=200)]


@pytest.fixture(scope="module")
def networks():
    return {s: generate_random(GenConfig(seed=s)) for s in SEEDS}


@pytest.fixture(scope="module")
def comparisons(networks):
    """Uncontrolled, disconnected, DissBC(1,1) and effort-matched baselines per network."""
    return {s: compare_methods(net, T=T, dt=DT, sim_seed=s, dist_seed=s) for s, net in networks.items()}


def test_criterion_1_node_certificate_soundness(node_set, acceptance_log):
    t0 = time.perf_counter()
    results = [verify_node_certificate(node_dissipativity(n), n, tol=1e-8) for n in node_set]
    elapsed = time.perf_counter() - t0
    worst = min(r.minimum for r in results)
    n_ok = sum(r.passed for r in results)
    ok = n_ok == len(node_set) and elapsed < 5.0
    record(acceptance_log, 1, ok, f"{n_ok}/{len(node_set)} certificates pass, grid min {worst:.3g}, {elapsed:.2f}s")
    assert ok


def test_criterion_2_closed_form_certificates(node_set, acceptance_log):
    passive = [verify_node_certificate(passive_certificate(n, 1.0), n, tol=1e-8) for n in node_set]
    ifofp = [verify_node_certificate(ifofp_certificate(n, 1.0), n, tol=1e-8) for n in node_set]
    forms_ok = all(np.array_equal(passive_certificate(n).x.matrix, [[0, 0.5], [0.5, 0]]) for n in node_set[:5])
    rho_ok = all(math.isclose(ifofp_certificate(n).x.params["rho"], n.gamma_min) for n in node_set)
    ok = all(r.passed for r in passive) and all(r.passed for r in ifofp) and forms_ok and rho_ok
    record(acceptance_log, 2, ok,
           f"passive {sum(r.passed for r in passive)}/200, IF-OFP(0, gamma_min) {sum(r.passed for r in ifofp)}/200")
    assert ok


def test_criterion_3_pipeline_feasibility(networks, comparisons, acceptance_log):
    failures = []
    worst_eig, slowest = np.inf, 0.0
    for s, comp in comparisons.items():
        res = comp.pipeline
        if res is None or not res.design.status.ok:
            failures.append(f"seed {s}: pipeline did not complete")
            continue
        elapsed = sum(res.timings.values())
        slowest = max(slowest, elapsed)
        eigs = [gc.phi_min_eig for gc in res.groups] + [gc.phi_tilde_min_eig for gc in res.groups]
        eigs.append(res.design.phi_min_eig)
        d = res.design
        eigs.append(lc.min_eig(network_form(networks[s], res.groups, d.p_groups, d.m_inter, d.g)))
        worst_eig = min(worst_eig, min(eigs))
        if min(eigs) < -1e-6:
            failures.append(f"seed {s}: min eigenvalue {min(eigs):.3g}")
        if elapsed >= 60.0:
            failures.append(f"seed {s}: {elapsed:.1f}s")
    ok = not failures
    record(acceptance_log, 3, ok, f"10 networks, slowest {slowest:.1f}s, worst eigenvalue {worst_eig:.3g}"
           + ("" if ok else f"; {failures}"))
    assert ok, failures


def test_criterion_4_trajectory_dissipation(networks, comparisons, acceptance_log):
    failures, worst = [], np.inf
    checks = 0
    for s, net in networks.items():
        res = comparisons[s].pipeline
        for k in range(3):
            dist = make_disturbance(DisturbanceProfile(), net, T, DT, seed=100 + 3 * s + k)
            traj = simulate(net, res.design.m_inter, dist, T=T, dt=DT, seed=100 + 3 * s + k, record_every=1)
            for v, what in [(verify_group_trajectory(traj, net, gc), f"group {gc.index}") for gc in res.groups] + \
                    [(verify_network_trajectory(traj, res), "network")]:
                checks += 1
                worst = min(worst, v.min_residual / T)
                if not v.passed:
                    failures.append(f"seed {s}/{k} {what}: {v.min_residual:.3g}")
    ok = not failures
    record(acceptance_log, 4, ok, f"{checks - len(failures)}/{checks} checks, worst residual/T {worst:.3g}")
    assert ok, failures


def _table(comp):
    dissbc = comp.row("DissBC(1,1)")
    tbc = next(r for r in comp.rows if r.method == "tbc")
    degbc = next(r for r in comp.rows if r.method == "degbc")
    return comp.row("With interconnections"), dissbc, tbc, degbc


def test_criterion_5a_infection_reduction(comparisons, acceptance_log):
    ratios = {s: _table(c)[0].j_x / _table(c)[1].j_x for s, c in comparisons.items()}
    ok = all(r >= 3.0 for r in ratios.values())
    record(acceptance_log, "5a", ok, f"J_x(uncontrolled)/J_x(DissBC) min {min(ratios.values()):.2f}, "
           f"max {max(ratios.values()):.2f}")
    assert ok, ratios


def test_criterion_5b_matched_effort_ordering(comparisons, acceptance_log):
    wins_tbc = wins_deg = 0
    detail = []
    for s, comp in comparisons.items():
        _, d, t, g = _table(comp)
        t_ok = abs(t.j_m - d.j_m) <= 0.02 and d.j_x <= t.j_x
        g_ok = abs(g.j_m - d.j_m) <= 0.02 and d.j_x <= g.j_x
        wins_tbc += t_ok
        wins_deg += g_ok
        detail.append(f"{s}:{d.j_x:.4f}/{t.j_x:.4f}/{g.j_x:.4f}")
    ok = wins_tbc >= 8 and wins_deg >= 8
    record(acceptance_log, "5b", ok, f"DissBC <= TBC on {wins_tbc}/10, <= DegBC on {wins_deg}/10 "
           f"(J_x DissBC/TBC/DegBC {' '.join(detail)})")
    assert ok


def test_criterion_5c_certified_gain_ordering(comparisons, acceptance_log):
    violations, uncontrolled = [], []
    for s, comp in comparisons.items():
        allrow, d, _, g = _table(comp)
        if allrow.certified:
            uncontrolled.append(s)
        if g.certified and not (d.certified and d.gamma < g.gamma):
            violations.append(f"{s}: {d.gamma:.4g} vs {g.gamma:.4g}")
    ok = not violations and not uncontrolled
    record(acceptance_log, "5c", ok, f"gamma(DissBC) < gamma(DegBC) violated on {len(violations)}/10 {violations}; "
           f"uncontrolled certifiable on {len(uncontrolled)}/10")
    assert ok


def test_criterion_6_constraint_fidelity(networks, comparisons, acceptance_log):
    failures, jm95 = [], {}
    for s, net in networks.items():
        res = comparisons[s].pipeline
        M0 = net.m_inter
        tol = 1e-8  # feasibility tolerance of the LMI layer
        for delta in (1.0, 0.95, 0.9):
            d = res.design if delta == 1.0 else network_design(net, res.groups, DesignConfig(delta_m=delta))
            M = d.m_inter
            if np.any(M[M0 == 0] != 0):
                failures.append(f"seed {s} delta {delta}: pattern")
            if np.any(M < (1 - delta) * M0 - tol) or np.any(M > M0 + tol):
                failures.append(f"seed {s} delta {delta}: bounds")
            if delta == 0.95:
                nz = M0 > 0
                if np.any((M0[nz] - M[nz]) / M0[nz] > 0.95 + 1e-6):
                    failures.append(f"seed {s}: an entry lost more than 95% of its weight")
                jm95[s] = d.j_m
                if d.j_m < 0.9:
                    failures.append(f"seed {s}: J_M {d.j_m:.4f} < 0.9")
    ok = not failures
    record(acceptance_log, 6, ok, f"J_M at delta 0.95 in [{min(jm95.values()):.4f}, {max(jm95.values()):.4f}]"
           + ("" if ok else f"; {failures}"))
    assert ok, failures


def test_criterion_7_mesh_stability(networks, acceptance_log):
    failures, growth, lhs_max = [], [], 0.0
    for s, net in networks.items():
        res = run_pipeline(net, DesignConfig(sms=True))
        rep = res.design.sms
        lhs_max = max(lhs_max, max(r["lhs"] for r in rep["groups"]))
        if not rep["satisfied"]:
            failures.append(f"seed {s}: small-gain condition violated")
        peaks = []
        for amp in (1.0, 2.0):
            dist = make_disturbance(DisturbanceProfile().scaled(amp), net, T, DT, seed=s)
            traj = simulate(net, res.design.m_inter, dist, T=T, dt=DT, seed=s, x0=np.zeros(net.n_nodes))
            peaks.append(float(np.abs(traj.states).max()))
        growth.append(peaks[1] / peaks[0])
        if peaks[1] > 2.5 * peaks[0]:
            failures.append(f"seed {s}: peak grows {peaks[1] / peaks[0]:.2f}x")
    ok = not failures
    record(acceptance_log, 7, ok, f"max small-gain lhs {lhs_max:.6f}, peak growth under 2x amplitude "
           f"<= {max(growth):.2f}x" + ("" if ok else f"; {failures}"))
    assert ok, failures


def test_criterion_8_numerical_integrity(acceptance_log):
    g = Group([NodeParams(0.7, 0.0, 0.9), NodeParams(0.5, 0.0, 0.1)], np.array([[0.0, 0.6], [0.4, 0.0]]))
    net = SpreadingNetwork([g], np.zeros((2, 2)))
    ref = simulate(net, T=4.0, dt=0.001).states[-1]
    errs = [np.abs(simulate(net, T=4.0, dt=h).states[-1] - ref).max() for h in (0.2, 0.1, 0.05)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]

    m0 = np.array([[0.0, 0.1, 0.0], [0.2, 0.0, 0.3], [0.0, 0.0, 0.0]])
    t = np.linspace(0.0, 10.0, 101)
    ramp = Trajectory(t, t[:, None], *(np.zeros((101, 1)),) * 3, [(0, 0)])
    const = Trajectory(t, np.full((101, 1), 0.2), *(np.zeros((101, 1)),) * 3, [(0, 0)])
    metric_checks = [
        abs(metric_jm(m0, threshold_prune(m0, 0.18)) - 2 / 3),
        abs(metric_jm(m0, degree_prune(m0, 0.34)) - 2 / 3),
        abs(metric_jm(m0, 0.5 * m0) - 0.5),
        abs(metric_jx(const) - 0.2),
        abs(metric_jx(ramp) - 5.0),  # trapezoid rule is exact for a linear signal
    ]
    ok = min(orders) >= 3.5 and max(metric_checks) <= 1e-12
    record(acceptance_log, 8, ok, f"observed RK4 order {orders[0]:.2f}, {orders[1]:.2f}; "
           f"max metric error {max(metric_checks):.1e}")
    assert ok


def test_criterion_9_determinism(tmp_path, networks, acceptance_log):
    path = tmp_path / "net.json"
    save_network(networks[0], path)
    bodies = []
    for k in range(2):
        out = tmp_path / "cmp"
        assert main(["compare", "--network", str(path), "--seed", "0", "--out", str(out)]) == 0
        doc = json.loads((out / "report.json").read_text())
        doc.pop("header")
        bodies.append((doc, (out / "series.csv").read_text()))
    ok = bodies[0] == bodies[1]
    record(acceptance_log, 9, ok, "two compare runs give identical reports and series")
    assert ok
