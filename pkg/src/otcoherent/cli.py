"""``otcoherent`` command line: segmentation, simulation and kernel export.

Exit codes: 0 success, 2 input error, 3 solver non-convergence, 4 internal
failure. On failure a JSON error record is printed to stderr and, when the
output directory is usable, written to ``error.json``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dynamics, export
from .errors import ConvergenceError, InputError, ParameterError, SolverError
from .kernels import BlurSpec, check_sorted_1d, kernel_from_regularized, smooth_plan_kernel
from .measures import (
    DiscreteMeasure,
    cost_matrix,
    epsilon_heuristic,
    load_snapshot,
    mask_zero_atoms,
    save_snapshot,
)
from .ot_solvers import DEFAULT_MAX_ITER, DEFAULT_TOL, solve_exact, solve_sinkhorn
from .spectral import cluster_coherent_sets, segment, segment_series, threshold_partition

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("otcoherent")


def _epsilon(text: str):
    if text == "auto":
        return "auto"
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from None
    return v


def _grid(text: str):
    try:
        nx, ny = (int(s) for s in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 30x15, got {text!r}") from None
    return nx, ny


def _add_solver_flags(p, epsilon_default="auto"):
    p.add_argument("--epsilon", type=_epsilon, default=epsilon_default,
                   help="entropic regularisation, or 'auto' for 2*(mean distance/3)^2")
    p.add_argument("--kappa", type=float, default=None,
                   help="marginal penalty; switches to unbalanced transport")
    p.add_argument("--clusters", type=int, default=2, help="number of coherent sets")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.add_argument("--svd", choices=("auto", "dense", "lanczos"), default="auto")
    p.add_argument("--svg", action="store_true", help="also write SVG scatters")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="otcoherent",
                                 description="Coherent sets from optimal transport plans.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="segment a pair of snapshots")
    p.add_argument("initial")
    p.add_argument("final")
    p.add_argument("--out", default=".", help="output directory")
    _add_solver_flags(p)

    p = sub.add_parser("concat-segment", help="segment a trajectory via the concatenated operator")
    p.add_argument("trajectory")
    p.add_argument("--out", default=".")
    _add_solver_flags(p, epsilon_default=1e-3)

    p = sub.add_parser("simulate", help="generate benchmark trajectories")
    p.add_argument("system", choices=("double-gyre", "wells"))
    p.add_argument("--out", default=".")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--grid", type=_grid, default=(30, 15))
    p.add_argument("--layout", choices=dynamics.GRID_LAYOUTS, default="cell-centered")
    p.add_argument("--beta", type=float, default=2.0)
    p.add_argument("--n-particles", type=int, default=1000)
    p.add_argument("--equilibration-steps", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("kernel-compare", help="entropic vs smoothed kernels on 1-D densities")
    p.add_argument("initial")
    p.add_argument("final")
    p.add_argument("--widths", type=float, nargs="*", default=[], required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    return ap


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _check_cluster_args(args, n_points: int):
    if args.clusters < 2:
        raise ParameterError(f"--clusters must be at least 2, got {args.clusters}")
    if args.max_iter < 1 or not args.tol > 0:
        raise ParameterError("--max-iter must be positive and --tol > 0")
    if args.clusters > n_points:
        raise ParameterError(f"--clusters={args.clusters} exceeds the {n_points} points")


def _resolve_epsilon(args, first: DiscreteMeasure) -> float:
    eps = epsilon_heuristic(first) if args.epsilon == "auto" else args.epsilon
    if not eps > 0:
        raise ParameterError(f"epsilon must be positive, got {eps}")
    log.info("epsilon = %.6g", eps)
    return float(eps)


def _require_converged(plans):
    bad = [k for k, p in enumerate(plans) if not p.converged]
    if bad:
        p = plans[bad[0]]
        raise ConvergenceError(
            f"transport solver did not converge for step {bad[0]} "
            f"(residual {p.residual:.3g} after {p.iterations} iterations); "
            "raise --max-iter or --epsilon")


def _finish(args, out: Path, dec, clusters, mu, nu, extra):
    rec = export.result_record(dec, clusters, extra)
    export.write_json(out / "result.json", rec)
    if args.svg:
        f2 = dec.partition_left[:, 1] if dec.rank > 1 else None
        g2 = dec.partition_right[:, 1] if dec.rank > 1 else None
        export.write_svg(out / "initial_f2.svg", mu.points, values=f2, title="f2, initial")
        export.write_svg(out / "final_g2.svg", nu.points, values=g2, title="g2, final")
        export.write_svg(out / "initial_clusters.svg", mu.points,
                         labels=clusters.labels_at(0), title="clusters, initial")
        export.write_svg(out / "final_clusters.svg", nu.points,
                         labels=clusters.labels_at(1), title="clusters, final")
    return rec


def _segment_pair(args, mu, nu, out: Path, extra=None):
    _check_cluster_args(args, min(mu.size, nu.size))
    eps = _resolve_epsilon(args, mu)
    K = max(args.clusters, 3)
    K = min(K, mu.size, nu.size)
    dec = segment(mu, nu, cost_matrix(mu, nu), epsilon=eps, kappa=args.kappa, K=K,
                  seed=args.seed, tol=args.tol, max_iter=args.max_iter, svd_method=args.svd)
    _require_converged(dec.plans)
    clusters = cluster_coherent_sets(dec, args.clusters, K=max(args.clusters, 2), seed=args.seed)
    extra = dict(extra or {})
    extra.update({
        "epsilon": eps,
        "kappa": args.kappa,
        "sign_partition_initial": threshold_partition(dec.partition_left[:, 1]),
        "sign_partition_final": threshold_partition(dec.partition_right[:, 1]),
        "initial_index_map": mu.index_map,
        "final_index_map": nu.index_map,
    })
    return _finish(args, out, dec, clusters, mu, nu, extra)


def cmd_segment(args) -> int:
    mu = mask_zero_atoms(load_snapshot(args.initial))
    nu = mask_zero_atoms(load_snapshot(args.final))
    out = _outdir(args.out)
    _segment_pair(args, mu, nu, out, {"command": "segment"})
    return EXIT_OK


def cmd_concat_segment(args) -> int:
    ens = dynamics.load_trajectory(args.trajectory)
    if len(ens) < 2:
        raise InputError("trajectory needs at least two time slices")
    out = _outdir(args.out)
    measures = ens.measures()
    if len(measures) == 2:
        _segment_pair(args, measures[0], measures[1], out,
                      {"command": "concat-segment", "t_initial": ens.times[0], "t_final": ens.times[-1]})
        return EXIT_OK
    _check_cluster_args(args, ens.n_particles)
    eps = _resolve_epsilon(args, measures[0])
    K = min(max(args.clusters, 3), ens.n_particles)
    plans_info = []

    def progress(t, plan):
        if not plan.converged:
            _require_converged([plan])
        plans_info.append({"iterations": plan.iterations, "residual": plan.residual})
        log.debug("step %d: %d iterations", t, plan.iterations)

    dec = segment_series(measures, eps, K=K, kappa=args.kappa, seed=args.seed, tol=args.tol,
                         max_iter=args.max_iter, svd_method=args.svd, progress=progress)
    clusters = cluster_coherent_sets(dec, args.clusters, K=max(args.clusters, 2), seed=args.seed)
    extra = {
        "command": "concat-segment",
        "epsilon": eps,
        "kappa": args.kappa,
        "t_initial": ens.times[0],
        "t_final": ens.times[-1],
        "sign_partition_initial": threshold_partition(dec.partition_left[:, 1]),
        "sign_partition_final": threshold_partition(dec.partition_right[:, 1]),
    }
    rec = _finish(args, out, dec, clusters, measures[0], measures[-1], extra)
    rec_steps = {"steps": plans_info}
    export.write_json(out / "steps.json", rec_steps)
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = _outdir(args.out)
    if args.system == "double-gyre":
        cfg = dynamics.GyreConfig(
            dt=0.02 if args.dt is None else args.dt,
            steps=500 if args.steps is None else args.steps,
            grid=tuple(args.grid), layout=args.layout)
        ens = dynamics.integrate_gyre(cfg)
        params = {"system": "double-gyre", "A": cfg.A, "alpha": cfg.alpha, "omega": cfg.omega,
                  "dt": cfg.dt, "steps": cfg.steps, "grid": list(cfg.grid), "layout": cfg.layout}
    else:
        cfg = dynamics.WellsConfig(
            beta=args.beta, dt=0.01 if args.dt is None else args.dt,
            steps=300 if args.steps is None else args.steps,
            n_particles=args.n_particles, seed=args.seed,
            equilibration_steps=args.equilibration_steps)
        _, _, ens = dynamics.sample_wells_dataset(cfg)
        params = {"system": "wells", "beta": cfg.beta, "dt": cfg.dt, "steps": cfg.steps,
                  "n_particles": cfg.n_particles, "seed": cfg.seed,
                  "equilibration_steps": cfg.equilibration_steps, "start": list(cfg.start)}
    dynamics.save_trajectory(out / "trajectory.csv", ens)
    save_snapshot(out / "snapshot_first.csv", ens.snapshot(0))
    save_snapshot(out / "snapshot_last.csv", ens.snapshot(len(ens) - 1))
    params["slices"] = len(ens)
    params["n"] = ens.n_particles
    export.write_json(out / "params.json", params)
    return EXIT_OK


def _index_width(m: DiscreteMeasure, w: float) -> float:
    x = m.points[:, 0]
    h = float(np.median(np.diff(x))) if len(x) > 1 else 1.0
    return w / h if h > 0 else w


def cmd_kernel_compare(args) -> int:
    if not args.widths:
        raise ParameterError("give at least one blur width via --widths")
    if any(not w > 0 for w in args.widths):
        raise ParameterError("blur widths must be positive")
    mu = load_snapshot(args.initial)
    nu = load_snapshot(args.final)
    check_sorted_1d(mu, "initial density")
    check_sorted_1d(nu, "final density")
    out = _outdir(args.out)
    c = cost_matrix(mu, nu)
    exact = solve_exact(mu, nu, c)
    summary = []
    for w in args.widths:
        eps = 2.0 * w * w
        plan = solve_sinkhorn(mu, nu, c, eps, tol=args.tol, max_iter=args.max_iter)
        _require_converged([plan])
        wi = _index_width(mu, w)
        kernels = {
            "regularized": kernel_from_regularized(plan),
            "gaussian": smooth_plan_kernel(exact, BlurSpec("gaussian", wi)),
            "ball": smooth_plan_kernel(exact, BlurSpec("ball", wi)),
        }
        row = {"width": w, "epsilon": eps, "index_width": wi}
        for name, k in kernels.items():
            export.save_matrix_csv(out / f"kernel_{name}_w{w:g}.csv", k.matrix)
            r1, r2 = k.residuals()
            row[name] = {"k1_residual": r1, "k2_residual": r2}
        summary.append(row)
    export.write_json(out / "kernels.json", {"command": "kernel-compare", "widths": summary})
    return EXIT_OK


COMMANDS = {
    "segment": cmd_segment,
    "concat-segment": cmd_concat_segment,
    "simulate": cmd_simulate,
    "kernel-compare": cmd_kernel_compare,
}


def _fail(args, exc, code) -> int:
    rec = exc.to_dict() if hasattr(exc, "to_dict") else {"error": "internal_error", "message": str(exc)}
    rec["type"] = type(exc).__name__
    rec["exit_code"] = code
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    try:
        export.write_json(Path(getattr(args, "out", ".")) / "error.json", rec)
    except Exception:  # the output location itself may be the problem
        pass
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        return _fail(args, exc, EXIT_INPUT)
    except (ConvergenceError, SolverError) as exc:
        return _fail(args, exc, EXIT_SOLVER)
    except (OSError, ValueError) as exc:
        return _fail(args, exc, EXIT_INPUT)
    except Exception as exc:  # noqa: BLE001 - report anything else as internal
        log.debug("internal failure", exc_info=True)
        return _fail(args, exc, EXIT_INTERNAL)


if __name__ == "__main__":
    sys.exit(main())
