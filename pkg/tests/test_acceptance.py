"""End-to-end gates tying the quadrature, samplers, solver and formulas
together, with a wall-clock budget for each.

Every test prints exactly one `ACCEPTANCE <n> PASS|FAIL` verdict straight
to the terminal (so it survives pytest's capture) and then asserts, so a
FAIL also fails the suite.  Run this module alone with

    pytest tests/test_acceptance.py -v
"""

import json
import time

import numpy as np
import pytest

from hjparisi.cascade import (
    gg_check,
    overlap_level_law,
    sample_cascade,
    sample_field,
)
from hjparisi.cli import main as cli_main
from hjparisi.critpoint import SolverOptions, parisi_functional, solve_critical
from hjparisi.finiten import free_energy_mc, gibbs_overlap_law, identity_checks
from hjparisi.model import (
    bipartite,
    frobenius_square,
    ising_measure,
    pure_p,
    sk,
    xi_eval,
    xi_grad,
)
from hjparisi.onebody import (
    QuadratureSpec,
    gaussian_cascade_logfree,
    psi_eval,
    psi_grad,
    psi_mc,
)
from hjparisi.paths import PiecewisePath, lp_distance
from hjparisi.util import logsumexp
from hjparisi.variational import hopf_lax_value, parisi_sup

P1D1 = ising_measure(1)
P1D2 = ising_measure(2)
SK1 = sk(1.0)


def spath(zetas, vals):
    return PiecewisePath(list(zetas), [[[float(v)]] for v in vals])


Q0 = spath([0.0], [0.0])
Q2 = spath([0.0, 0.5], [0.1, 0.3])


def _report(capsys, n, ok):
    with capsys.disabled():
        print("ACCEPTANCE %d %s" % (n, "PASS" if ok else "FAIL"))


def _random_increasing_path(rng, D, K):
    while True:
        z = np.sort(rng.uniform(0.15, 0.7, size=K))
        if K < 2 or np.min(np.diff(z)) > 0.1:
            break
    vals, acc = [], np.zeros((D, D))
    for _ in range(K + 1):
        a = rng.standard_normal((D, D)) * 0.45
        acc = acc + a @ a.T / D
        vals.append(acc.copy())
    nrm = float(np.linalg.norm(vals[-1]))
    cap = float(rng.uniform(0.35, 0.85))
    if nrm > cap:
        vals = [v * (cap / nrm) for v in vals]
    return PiecewisePath([0.0, *z], vals)


def test_01_zero_time_free_energy_equals_one_body_value(capsys):
    """At t=0 the enumeration estimator must reproduce the one-body value
    at every system size."""
    ok, notes = False, []
    try:
        t0 = time.monotonic()
        ref = psi_eval(P1D1, Q2, QuadratureSpec(32)).value
        ok = True
        for N in (1, 2, 4):
            est = free_energy_mc(SK1, P1D1, N, 0.0, Q2, 0.0, samples=2000,
                                 n_max=64, seed=11)
            gap = abs(est.mean - ref)
            notes.append(f"N={N}: gap={gap:.5f} allowed={3 * est.stderr:.5f}")
            ok = ok and gap <= 3 * est.stderr
        elapsed = time.monotonic() - t0
        notes.append(f"elapsed={elapsed:.1f}s")
        ok = ok and elapsed < 60
    finally:
        _report(capsys, 1, ok)
    assert ok, "; ".join(notes)


def test_02_quadrature_and_simulation_backends_agree(capsys):
    """Twenty random (measure, path) instances covering D in {1,2} and
    depth up to two; the independent direct-simulation estimate must sit
    within three stderr of the recursion value."""
    ok, notes = False, []
    try:
        t0 = time.monotonic()
        rng = np.random.default_rng(20)
        specs = ([(1, 0)] * 4 + [(2, 0)] * 2 + [(1, 1)] * 8 + [(2, 1)] * 4
                 + [(1, 2), (2, 2)])
        ok = True
        for i, (D, K) in enumerate(specs):
            q = _random_increasing_path(rng, D, K)
            p1 = P1D1 if D == 1 else P1D2
            nodes = 32 if D == 1 else 12
            ev = psi_eval(p1, q, QuadratureSpec(nodes))
            mc = psi_mc(p1, q, n_max=256, samples=10 ** 4, seed=100 + i)
            gap = abs(ev.value - mc.value)
            tol = 3 * mc.error_estimate + 1e-5
            if gap > tol:
                ok = False
                notes.append(f"inst {i} D={D} K={K}: gap={gap:.5f} "
                             f"tol={tol:.5f}")
        elapsed = time.monotonic() - t0
        notes.append(f"elapsed={elapsed:.1f}s")
        ok = ok and elapsed < 300
    finally:
        _report(capsys, 2, ok)
    assert ok, "; ".join(notes)


def test_03_cascade_closed_form_matches_simulation(capsys):
    """The Gaussian log-average closed form versus a truncated-cascade
    simulation, ten random level/variance instances."""
    ok, notes = False, []
    try:
        t0 = time.monotonic()
        rng = np.random.default_rng(30)
        ok = True
        for i in range(10):
            m = 1 if i == 0 else int(rng.integers(2, 4))
            while True:
                s_int = np.sort(rng.uniform(0.15, 0.6, size=m - 1))
                if m < 3 or np.min(np.diff(s_int)) > 0.1:
                    break
            s = (0.0, *s_int, 1.0)
            tt = tuple(np.cumsum(rng.uniform(0.25, 1.0, size=m)))
            cf = gaussian_cascade_logfree(s, tt)
            interior = list(s[1:-1])
            q = spath([0.0, *interior], tt)
            draws, base = 1500, 300 + 1000 * i
            vals, worst = np.empty(draws), 0.0
            for d in range(draws):
                casc = sample_cascade(interior, 128, base + d)
                worst = max(worst, casc.truncation_ratio)
                y = sample_field(casc, q, 1, base + d).all[:, 0, 0]
                vals[d] = logsumexp(casc.log_leaf_weights + y)
            gap = abs(float(vals.mean()) - cf)
            tol = 3 * float(vals.std(ddof=1) / np.sqrt(draws)) + worst
            if gap > tol:
                ok = False
                notes.append(f"inst {i}: s={s} gap={gap:.4f} tol={tol:.4f}")
        elapsed = time.monotonic() - t0
        notes.append(f"elapsed={elapsed:.1f}s")
        ok = ok and elapsed < 120
    finally:
        _report(capsys, 3, ok)
    assert ok, "; ".join(notes)


def test_04_solver_is_start_independent_below_threshold(capsys):
    """Below the uniqueness threshold five random starts give the same
    fixed point, and the two functional forms coincide there."""
    ok, notes = False, []
    try:
        t0 = time.monotonic()
        quad = QuadratureSpec(32)
        rng = np.random.default_rng(40)
        sols = []
        for _ in range(5):
            start = spath([0.0], [float(rng.uniform(0.0, 1.0))])
            sols.append(solve_critical(SK1, P1D1, 0.02, 0.0, Q0,
                                       SolverOptions(initial_p=start), quad))
        ok = all(c.converged and c.residual_l2 < 1e-8 for c in sols)
        spread = max(lp_distance(c.p, sols[0].p, 2) for c in sols[1:])
        notes.append(f"start spread={spread:.2e}")
        ok = ok and spread < 1e-6
        for c in sols:
            dv = abs(parisi_functional(SK1, P1D1, 0.02, Q0, c.p, quad)
                     - c.j_value)
            ok = ok and dv <= 1e-10
        elapsed = time.monotonic() - t0
        notes.append(f"elapsed={elapsed:.1f}s")
        ok = ok and elapsed < 60
    finally:
        _report(capsys, 4, ok)
    assert ok, "; ".join(notes)


def test_05_finite_size_values_trend_to_the_solver_value(capsys):
    """Enumeration free energies shrink with N toward the solved value."""
    ok, notes = False, []
    try:
        t0 = time.monotonic()
        cp = solve_critical(SK1, P1D1, 0.1, 0.0, Q0, SolverOptions(),
                            QuadratureSpec(32))
        ests = {}
        for N, smp in ((4, 4000), (8, 2000), (12, 1200)):
            ests[N] = free_energy_mc(SK1, P1D1, N, 0.1, Q0, 0.0, samples=smp,
                                     n_max=4, seed=50 + N)
            notes.append(f"N={N}: {ests[N].mean:.4f}+-{ests[N].stderr:.4f}")
        ok = cp.converged and abs(ests[12].mean - cp.j_value) < 0.05
        for a, b in ((4, 8), (8, 12)):
            jump = ests[b].mean - ests[a].mean
            ok = ok and jump <= 3 * float(np.hypot(ests[a].stderr,
                                                   ests[b].stderr))
        elapsed = time.monotonic() - t0
        notes.append(f"j={cp.j_value:.5f} elapsed={elapsed:.1f}s")
        ok = ok and elapsed < 1200
    finally:
        _report(capsys, 5, ok)
    assert ok, "; ".join(notes)


def test_06_variational_routes_agree_on_convex_models(capsys):
    """The step-path supremum and the conjugate-form value agree on ten
    convex instances, and neither dips below the fixed-point value."""
    ok, notes = False, []
    try:
        t0 = time.monotonic()
        qz1 = spath([0.0, 0.5], [0.0, 0.0])
        qa1 = spath([0.0, 0.5], [0.05, 0.15])
        z2 = np.zeros((2, 2))
        qz2 = PiecewisePath([0.0, 0.5], [z2, z2])
        qa2 = PiecewisePath([0.0, 0.5],
                            [np.diag([0.05, 0.02]), np.diag([0.16, 0.1])])
        ramp1 = spath([0.0, 0.5], [0.04, 0.12])
        ramp2 = PiecewisePath([0.0, 0.5],
                              [0.04 * np.eye(2), 0.12 * np.eye(2)])
        cases = [
            (sk(1.0), qz1, 0.02), (sk(1.0), qz1, 0.35), (sk(1.0), qz1, 0.5),
            (sk(1.0), qa1, 0.1), (sk(1.2), qa1, 0.45), (sk(0.8), qa1, 0.3),
            (frobenius_square(1.0), qz2, 0.5),
            (frobenius_square(0.7), qz2, 0.35),
            (frobenius_square(1.0), qa2, 0.3),
            (frobenius_square(0.6), qa2, 0.5),
        ]
        ok = True
        for i, (model, q, t) in enumerate(cases):
            p1 = P1D1 if model.D == 1 else P1D2
            quad = QuadratureSpec(24 if model.D == 1 else 10)
            ramp = ramp1 if model.D == 1 else ramp2
            cp = solve_critical(model, p1, t, 0.0, q,
                                SolverOptions(max_iters=1500,
                                              initial_p=ramp), quad)
            sup = parisi_sup(model, p1, t, q, partition=(0.5,),
                             opts=SolverOptions(initial_p=cp.p), quad=quad)
            qp_seed = PiecewisePath(
                q.zetas, [t * xi_grad(model, b) for b in cp.p.values])
            hl = hopf_lax_value(model, p1, t, q,
                                opts=SolverOptions(initial_p=qp_seed),
                                quad=quad, partition=(0.5,))
            gap = abs(sup.value - hl)
            good = (cp.converged and gap <= 1e-4
                    and sup.value >= cp.j_value - 1e-8
                    and hl >= cp.j_value - 1e-8)
            if not good:
                ok = False
                notes.append(f"case {i}: conv={cp.converged} gap={gap:.2e} "
                             f"sup-j={sup.value - cp.j_value:.2e} "
                             f"hl-j={hl - cp.j_value:.2e}")
        elapsed = time.monotonic() - t0
        notes.append(f"elapsed={elapsed:.1f}s")
        ok = ok and elapsed < 600
    finally:
        _report(capsys, 6, ok)
    assert ok, "; ".join(notes)


def test_07_cascade_level_law_and_moment_identities(capsys):
    """The ancestor-level law matches the level increments (chi-square at
    99%), and the moment identities hold for five statistics."""
    ok, notes = False, []
    try:
        t0 = time.monotonic()
        casc = sample_cascade([0.2, 0.4], n_max=96, seed=70)
        law = overlap_level_law(casc, draws=10 ** 5, seed=71)
        # 9.21034 is the 99% point of chi-square with 2 degrees of freedom
        chi2 = law.draws * float(
            np.sum((law.freqs - law.expected) ** 2 / law.expected))
        notes.append(f"chi2={chi2:.2f}")
        ok = chi2 <= 9.21034
        small = sample_cascade([0.2, 0.4], n_max=64, seed=72)
        funcs = [
            lambda r: 1.0,
            lambda r: r[0, 1],
            lambda r: r[0, 1] ** 2,
            lambda r: float(np.mean(r[np.triu_indices_from(r, 1)])),
            lambda r: float(np.max(r - np.eye(len(r)))),
        ]
        for j, f in enumerate(funcs):
            res = gg_check(small, f, n=3, draws=4000, seed=73 + j)
            if res.residual > 3 * res.stderr + res.truncation_bias:
                ok = False
                notes.append(f"func {j}: resid={res.residual:.4f} "
                             f"tol={3 * res.stderr + res.truncation_bias:.4f}")
        elapsed = time.monotonic() - t0
        notes.append(f"elapsed={elapsed:.1f}s")
        ok = ok and elapsed < 120
    finally:
        _report(capsys, 7, ok)
    assert ok, "; ".join(notes)


def test_08_derivative_and_regularity_identities(capsys):
    """Gradient versus finite differences, the two Lipschitz bounds on
    random path pairs, and the finite-size t-derivative identity."""
    ok, notes = False, []
    try:
        t0 = time.monotonic()
        rng = np.random.default_rng(80)
        models = [sk(1.0), sk(0.6), pure_p(3, 0.9), frobenius_square(0.8),
                  bipartite(1.1)]
        worst_rel = 0.0
        for i in range(100):
            model = models[i % len(models)]
            D = model.D
            w = rng.standard_normal((D, D))
            a = (w @ w.T) / D * float(rng.uniform(0.3, 0.9))
            e = rng.standard_normal((D, D))
            e = (e + e.T) / 2
            e /= float(np.linalg.norm(e))
            g = float(np.sum(xi_grad(model, a) * e))
            h = 1e-4

            def fd(step):
                return (xi_eval(model, a + step * e)
                        - xi_eval(model, a - step * e)) / (2 * step)

            fd4 = (4 * fd(h / 2) - fd(h)) / 3
            rel = abs(g - fd4) / max(abs(fd4), abs(g), 1e-8)
            worst_rel = max(worst_rel, rel)
        notes.append(f"worst grad rel err={worst_rel:.2e}")
        ok = worst_rel < 1e-6

        quad = QuadratureSpec(24)
        worst_v = worst_g = -np.inf
        for i in range(50):
            K = int(rng.integers(0, 3))
            cuts = np.sort(rng.uniform(0.1, 0.9, size=K))
            qa = spath([0.0, *cuts], np.cumsum(rng.uniform(0, 0.4, K + 1)))
            qb = spath([0.0, *cuts], np.cumsum(rng.uniform(0, 0.4, K + 1)))
            dv = abs(psi_eval(P1D1, qa, quad).value
                     - psi_eval(P1D1, qb, quad).value)
            worst_v = max(worst_v, dv - lp_distance(qa, qb, 1))
            dg = lp_distance(psi_grad(P1D1, qa, quad),
                             psi_grad(P1D1, qb, quad), 2)
            worst_g = max(worst_g, dg - 16.0 * lp_distance(qa, qb, 2))
        notes.append(f"lip margins: value={worst_v:.2e} grad={worst_g:.2e}")
        ok = ok and worst_v <= 1e-8 and worst_g <= 1e-5

        rep = identity_checks(SK1, P1D1, 8, 0.1, Q2, samples=600, seed=9)
        dt = rep.checks["dt_identity"]
        notes.append(f"dt: lhs={dt.lhs:.4f} rhs={dt.rhs:.4f} "
                     f"sigma={dt.sigma:.4f}")
        ok = ok and dt.passed
        elapsed = time.monotonic() - t0
        notes.append(f"elapsed={elapsed:.1f}s")
        ok = ok and elapsed < 600
    finally:
        _report(capsys, 8, ok)
    assert ok, "; ".join(notes)


def test_09_sampled_overlap_law_tracks_the_solver_path(capsys):
    """With the overlap-coupling perturbation on, per-level conditional
    overlap means increase and sit near the solver's fixed point."""
    ok, notes = False, []
    try:
        t0 = time.monotonic()
        qa = spath([0.0, 0.5], [0.05, 0.15])
        cp = solve_critical(SK1, P1D1, 0.1, 0.05, qa, SolverOptions(),
                            QuadratureSpec(32))
        law = gibbs_overlap_law(SK1, P1D1, 12, 0.1, qa, 0.05, samples=1600,
                                n_max=32, seed=91)
        cond = [float(c[0, 0]) for c in law.cond_mean]
        pv = [float(v[0, 0]) for v in cp.p.values]
        notes.append(f"cond={['%.4f' % c for c in cond]} "
                     f"p={['%.4f' % v for v in pv]}")
        ok = cp.converged and cond[0] < cond[1]
        for c, v in zip(cond, pv):
            ok = ok and abs(c - v) <= 0.1
        elapsed = time.monotonic() - t0
        notes.append(f"elapsed={elapsed:.1f}s")
        ok = ok and elapsed < 1800
    finally:
        _report(capsys, 9, ok)
    assert ok, "; ".join(notes)


def test_10_stochastic_commands_are_thread_invariant(capsys, tmp_path):
    """Byte-identical command output under a fixed seed for one and four
    threads (and across repeat runs for the unthreaded sampler)."""

    def run(args):
        try:
            code = cli_main(list(args))
        except SystemExit as exc:
            code = exc.code
        cap = capsys.readouterr()
        return code, cap.out

    ok, notes = False, []
    try:
        files = {}
        for name, payload in (
                ("sk.json", {"D": 1, "terms": [{"family": "sk",
                                                "beta": 1.0}]}),
                ("fr.json", {"D": 2, "terms": [{"family": "frobenius",
                                                "beta": 1.0}]}),
                ("q2.json", {"zetas": [0.0, 0.5],
                             "values": [[[0.1]], [[0.3]]]}),
                ("q22.json", {"zetas": [0.0, 0.3, 0.6], "values": [
                    [[0.1, 0.0], [0.0, 0.08]],
                    [[0.25, 0.05], [0.05, 0.3]],
                    [[0.4, 0.05], [0.05, 0.45]]]}),
        ):
            p = tmp_path / name
            p.write_text(json.dumps(payload))
            files[name] = str(p)
        ok = True
        runs = [
            ["finiteN", "fe", "--model", files["sk.json"], "--path",
             files["q2.json"], "--t", "0.1", "--that", "0.05", "--n", "6",
             "--samples", "400", "--nmax", "16", "--seed", "3"],
            ["finiteN", "overlap", "--model", files["sk.json"], "--path",
             files["q2.json"], "--t", "0.1", "--n", "6", "--samples", "300",
             "--nmax", "16", "--seed", "2", "--histogram"],
            ["finiteN", "check", "--model", files["sk.json"], "--path",
             files["q2.json"], "--t", "0.1", "--n", "4", "--samples", "400",
             "--seed", "13"],
            ["psi", "eval", "--model", files["fr.json"], "--path",
             files["q22.json"], "--nodes", "32", "--mc-samples", "200",
             "--mc-seed", "5"],
        ]
        for args in runs:
            c1, out1 = run(args + ["--threads", "1"])
            c4, out4 = run(args + ["--threads", "4"])
            if not (c1 == c4 == 0 and out1 == out4):
                ok = False
                notes.append(f"{args[0]} {args[1]}: codes={c1},{c4} "
                             f"identical={out1 == out4}")
        diag = ["cascade", "diag", "--zetas", "0.3,0.6", "--nmax", "16",
                "--draws", "2000", "--gg-draws", "400",
                "--gg-functions", "one,r12"]
        ca, outa = run(diag)
        cb, outb = run(diag)
        if not (ca == cb == 0 and outa == outb):
            ok = False
            notes.append("cascade diag repeat runs differ")
    finally:
        _report(capsys, 10, ok)
    assert ok, "; ".join(notes)
