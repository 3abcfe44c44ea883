"""Acceptance criteria, one PASS/FAIL line each.

Every test computes its metrics, reports one line through ``conftest.report``
and then asserts the same condition, so the summary at the end of the run
and the test outcome always agree.
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy.optimize import linprog

from conftest import random_measure, report, two_blobs
from otcoherent import dynamics as dyn
from otcoherent.kernels import (
    BlurSpec,
    kernel_from_regularized,
    kernel_from_unbalanced,
    smooth_plan_kernel,
)
from otcoherent.measures import DiscreteMeasure, cost_matrix, epsilon_heuristic
from otcoherent.ot_solvers import solve_exact, solve_sinkhorn, solve_unbalanced
from otcoherent.spectral import (
    cluster_coherent_sets,
    normalized_plan_matrix,
    segment,
    segment_series,
    series_operator,
    truncated_svd,
)

TWO_PI_3 = 2 * math.pi / 3


def _leading(dec):
    s1 = float(dec.singular_values[0])
    cos = min(dec.flags["leading_alignment_left"], dec.flags["leading_alignment_right"])
    return s1, cos


def _label_disagreement(a, b, k):
    """Fraction of differing hard labels, minimised over relabelings."""
    return min(np.mean(np.asarray(p)[a] != b) for p in itertools.permutations(range(k)))


# ---------------------------------------------------------------- double gyre

@pytest.fixture(scope="module")
def gyre():
    t0 = time.perf_counter()
    ens = dyn.integrate_gyre(dyn.GyreConfig())
    Q, mu_w, nu_w, _ = series_operator(ens.measures(), 1e-3)
    runs = []
    for seed in (0, 1):
        dec = truncated_svd(Q, 3, seed=seed, method="lanczos").with_weights(mu_w, nu_w)
        runs.append((dec, cluster_coherent_sets(dec, 2, K=2, seed=0)))
    return ens, runs, time.perf_counter() - t0


@pytest.mark.slow
def test_double_gyre_reproduction(gyre):
    ens, runs, elapsed = gyre
    dec, cl = runs[0]
    s2, s3 = dec.singular_values[1], dec.singular_values[2]
    left = ens.positions[0][:, 0] < 1.0
    lab = cl.labels_at(0)
    split = max(np.mean((lab == 0) == left), np.mean((lab == 1) == left))
    seed_diff = _label_disagreement(lab, runs[1][1].labels_at(0), 2)
    ok = (abs(s2 - 0.71) <= 0.05 and abs(s3 - 0.35) <= 0.05 and split >= 0.9
          and seed_diff <= 0.05 and elapsed <= 600)
    report("double gyre sigma_2, sigma_3, left/right split", ok,
           f"sigma_2={s2:.4f} (0.71+-0.05) sigma_3={s3:.4f} (0.35+-0.05) "
           f"left/right agreement={split:.3f} seed disagreement={seed_diff:.3f} time={elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------- exact solver

def test_exact_solver_matches_brute_force():
    rng = np.random.default_rng(20)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 8))
        pts_a, pts_b = rng.random((n, 2)), rng.random((n, 2))
        mu, nu = DiscreteMeasure.uniform(pts_a), DiscreteMeasure.uniform(pts_b)
        c = np.asarray(cost_matrix(mu, nu).entries)
        best = min(c[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n))) / n
        got = float((solve_exact(mu, nu, c).matrix * c).sum())
        worst = max(worst, abs(got - best))
    ok = worst <= 1e-10
    report("exact solver vs permutation brute force (50 instances)", ok, f"max |diff|={worst:.2e}")
    assert ok


# ---------------------------------------------------------------- epsilon limit

def _lp_value(mu, nu, c):
    m, n = c.shape
    A = np.vstack([np.kron(np.eye(m), np.ones(n)), np.kron(np.ones(m), np.eye(n))])
    res = linprog(c.ravel(), A_eq=A, b_eq=np.concatenate([mu.weights, nu.weights]),
                  bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


def test_regularized_cost_tends_to_lp_value():
    rng = np.random.default_rng(32)
    mu, nu = random_measure(rng, 32), random_measure(rng, 32)
    c = np.asarray(cost_matrix(mu, nu).entries)
    lp = _lp_value(mu, nu, c)
    costs = [float((solve_sinkhorn(mu, nu, c, e, tol=1e-10).matrix * c).sum())
             for e in (1e-1, 1e-2, 1e-3)]
    monotone = costs[0] > costs[1] > costs[2]
    above = all(v >= lp - 1e-12 for v in costs)
    close = (costs[2] - lp) / lp <= 0.05
    ok = monotone and above and close
    report("regularized cost monotone in epsilon, above LP, within 5%", ok,
           f"costs={[round(v, 6) for v in costs]} lp={lp:.6f} rel gap={(costs[2] - lp) / lp:.4f}")
    assert ok


# ---------------------------------------------------------------- kernels

def _sorted_line(rng, n):
    x = np.sort(rng.random(n)) * n
    w = rng.random(n) + 0.2
    return DiscreteMeasure(x[:, None], w / w.sum())


def test_kernel_stochasticity_suite():
    rng = np.random.default_rng(100)
    worst = {}
    for i in range(100):
        kind = ("balanced", "kappa=0.1", "kappa=1", "kappa=10", "gaussian", "ball")[i % 6]
        n, m = (int(v) for v in rng.integers(4, 30, 2))
        if kind in ("gaussian", "ball"):
            mu, nu = _sorted_line(rng, n), _sorted_line(rng, m)
            plan = solve_exact(mu, nu, cost_matrix(mu, nu))
            k = smooth_plan_kernel(plan, BlurSpec(kind, float(rng.uniform(0.3, 4.0))))
        else:
            mu, nu = random_measure(rng, n), random_measure(rng, m)
            eps = float(rng.uniform(0.01, 0.5))
            if kind == "balanced":
                k = kernel_from_regularized(solve_sinkhorn(mu, nu, cost_matrix(mu, nu), eps))
            else:
                nu = nu.with_weights(nu.weights * rng.uniform(0.5, 2.0))
                kappa = float(kind.split("=")[1])
                k = kernel_from_unbalanced(solve_unbalanced(mu, nu, cost_matrix(mu, nu), eps, kappa))
        worst[kind] = max(worst.get(kind, 0.0), *k.residuals())
    ok = max(worst.values()) <= 1e-8
    report("kernel (K1)/(K2) residuals over 100 instances", ok,
           " ".join(f"{k}={v:.1e}" for k, v in worst.items()))
    assert ok


# ---------------------------------------------------------------- leading pair

def _corpus():
    rng = np.random.default_rng(5)
    for _ in range(5):
        mu, nu = random_measure(rng, 15), random_measure(rng, 12)
        yield "balanced", segment(mu, nu, epsilon=0.05, K=3)
    for kappa in (0.1, 1.0, 10.0):
        mu, nu = random_measure(rng, 15), random_measure(rng, 12)
        nu = nu.with_weights(nu.weights * 1.3)
        yield f"kappa={kappa}", segment(mu, nu, epsilon=0.05, kappa=kappa, K=3)
    for shape in ("gaussian", "ball"):
        mu, nu = _sorted_line(rng, 20), _sorted_line(rng, 18)
        k = smooth_plan_kernel(solve_exact(mu, nu, cost_matrix(mu, nu)), BlurSpec(shape, 1.5))
        yield f"smoothed {shape}", truncated_svd(normalized_plan_matrix(k), 3).with_weights(
            k.mu_ref.weights, k.nu_ref.weights)
    blobs = two_blobs(rng, n_per=8, gap=20.0)
    yield "separated blobs", segment(blobs, blobs, epsilon=0.01, K=3)
    ens = dyn.integrate_gyre(dyn.GyreConfig(steps=10, grid=(10, 5)))
    yield "gyre series", segment_series(ens.measures(), 1e-2, K=3)
    mu0, mu1, _ = dyn.sample_wells_dataset(dyn.WellsConfig(n_particles=300, equilibration_steps=5000))
    yield "wells", segment(mu0, mu1, epsilon=epsilon_heuristic(mu0), kappa=1.0, K=3)


def test_leading_pair_invariant():
    bad, worst_s, worst_c = [], 0.0, 1.0
    for name, dec in _corpus():
        s1, cos = _leading(dec)
        worst_s, worst_c = max(worst_s, abs(s1 - 1)), min(worst_c, cos)
        if abs(s1 - 1) > 1e-6 or cos < 1 - 1e-8:
            bad.append(name)
    ok = not bad
    report("leading pair sigma_1 = 1 with sqrt-weight vectors", ok,
           f"max |sigma_1-1|={worst_s:.1e} min cosine={worst_c:.12f}" + (f" bad={bad}" if bad else ""))
    assert ok


# ---------------------------------------------------------------- closed forms

def test_sinkhorn_closed_forms():
    m = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    c = np.array([[0.0, 1.0], [1.0, 0.0]])
    errs = []
    for eps in (0.5, 1.0, 2.0):
        P = solve_sinkhorn(m, m, c, eps, tol=1e-13).matrix
        errs.append(abs(P[0, 1] / P[0, 0] - math.exp(-1 / eps)))
    one = DiscreteMeasure([[0.0]], [1.0])
    C, eps, kappa = 0.7, 0.3, 1.0
    mass = solve_unbalanced(one, one, [[C]], eps, kappa, tol=1e-13).matrix.sum()
    errs.append(abs(mass - math.exp(-C / (eps + 2 * kappa))))
    ok = max(errs) <= 1e-9
    report("2x2 ratio exp(-1/eps) and 1x1 unbalanced mass", ok,
           f"errors={[f'{e:.1e}' for e in errs]}")
    assert ok


# ---------------------------------------------------------------- unbalanced

def test_unbalanced_vs_balanced_blobs():
    rng = np.random.default_rng(0)
    n = 25
    pts = np.vstack([rng.normal([0, 0], 0.3, (n, 2)), rng.normal([2, 0], 0.3, (n, 2))])
    # the first blob carries 60% of the initial mass, both carry 50% at the end
    mu = DiscreteMeasure(pts, np.r_[np.full(n, 0.6 / n), np.full(n, 0.4 / n)])
    nu = DiscreteMeasure(pts + rng.normal(0, 0.02, pts.shape), np.full(2 * n, 0.5 / n))
    bal = segment(mu, nu, epsilon=0.05, K=3)
    unb = segment(mu, nu, epsilon=0.05, kappa=1.0, K=3)
    fb = bal.partition_left[:, 1]
    fu, gu = unb.partition_left[:, 1], unb.partition_right[:, 1]
    mixed = len(set(np.sign(fb[:n]))) > 1
    halves = (slice(0, n), slice(n, None))
    pure = (all(len(set(np.sign(v[h]))) == 1 for v in (fu, gu) for h in halves)
            and np.sign(fu[0]) != np.sign(fu[-1]) and np.sign(gu[0]) != np.sign(gu[-1]))
    s2 = float(unb.singular_values[1])
    ok = mixed and pure and s2 >= 0.95
    report("20% imbalance: balanced mixes heavy blob, unbalanced pure", ok,
           f"balanced sign flips in heavy blob={int(min((fb[:n] > 0).sum(), (fb[:n] < 0).sum()))} "
           f"unbalanced pure={pure} sigma_2={s2:.4f}")
    assert ok


# ---------------------------------------------------------------- wells

def _angular_gaps(points, labels, k=3):
    ang = []
    for j in range(k):
        th = np.arctan2(points[labels == j, 1], points[labels == j, 0])
        ang.append(math.atan2(np.sin(th).mean(), np.cos(th).mean()))
    a = np.sort(np.mod(ang, 2 * math.pi))
    return np.diff(np.r_[a, a[0] + 2 * math.pi])


@pytest.fixture(scope="module")
def wells_runs():
    t0 = time.perf_counter()
    runs = []
    for seed in range(10):
        mu0, mu1, _ = dyn.sample_wells_dataset(dyn.WellsConfig(seed=seed))
        dec = segment(mu0, mu1, epsilon=epsilon_heuristic(mu0), kappa=1.0, K=3)
        cl = cluster_coherent_sets(dec, 3, K=3, seed=0)
        runs.append((mu0, cl))
    return runs, time.perf_counter() - t0


def test_wells_three_sets(wells_runs):
    runs, elapsed = wells_runs
    good = 0
    worst = 0.0
    for mu0, cl in runs:
        dev = np.abs(_angular_gaps(mu0.points, cl.labels_at(0)) - TWO_PI_3).max()
        worst = max(worst, dev)
        good += dev <= 0.5
    ok = good >= 9 and elapsed <= 300
    report("wells: three sets 2pi/3 apart", ok,
           f"{good}/10 seeds, max deviation={worst:.3f} rad, time={elapsed:.0f}s")
    assert ok


def test_wells_label_retention(wells_runs):
    runs, _ = wells_runs
    ret = np.array([cl.retention() for _, cl in runs])
    ok = ret.min() >= 0.70
    report("wells: label retention >= 70% on every seed", ok,
           f"min={ret.min():.3f} mean={ret.mean():.3f}")
    assert ok


# ---------------------------------------------------------------- integrators

def test_integrator_checks():
    def endpoint(dt):
        return dyn.integrate_rk4(dyn.double_gyre_velocity, np.array([0.3, 0.4]), 0.0, dt,
                                 int(round(2.0 / dt)))[-1]

    ref = endpoint(0.1 / 8)
    ratio = np.linalg.norm(endpoint(0.1) - ref) / np.linalg.norm(endpoint(0.05) - ref)

    rng = np.random.default_rng(7)
    r, phi = rng.uniform(0.3, 2.0, 20), rng.uniform(-math.pi, math.pi, 20)
    X = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    h = 1e-6
    fd = np.column_stack([
        -(dyn.wells_potential(X + e) - dyn.wells_potential(X - e)) / (2 * h)
        for e in (np.array([h, 0.0]), np.array([0.0, h]))])
    fd_err = np.abs(dyn.wells_gradient_force(X) - fd).max()

    rise = -np.inf
    for _ in range(5):
        r0, p0 = rng.uniform(0.5, 1.5), rng.uniform(-math.pi, math.pi)
        path = dyn.euler_maruyama(dyn.wells_gradient_force, 2.0, [r0 * math.cos(p0), r0 * math.sin(p0)],
                                  1e-3, 2000, noise_scale=0.0)
        rise = max(rise, np.diff(dyn.wells_potential(path)).max())
    ok = ratio >= 12 and fd_err <= 1e-6 and rise <= 1e-12
    report("RK4 order, wells gradient, noiseless Euler-Maruyama descent", ok,
           f"rk4 ratio={ratio:.1f} fd error={fd_err:.1e} max W increase={rise:.1e}")
    assert ok
