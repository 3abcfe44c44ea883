"""Benchmark dynamical systems: the periodically forced double gyre and a
three-well potential with a rotating drive, plus trajectory files.
"""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ChainMismatchError,
    DimensionMismatchError,
    EmptyInputError,
    ParameterError,
    ParseError,
    SingularPointError,
)
from .measures import DiscreteMeasure

GRID_LAYOUTS = ("cell-centered", "inclusive")


@dataclass(frozen=True, eq=False)
class TrajectoryEnsemble:
    """Positions ``positions[t, i]`` of particle ``i`` at ``times[t]``.

    Row order within a slice is the particle identity (ground truth).
    """

    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64).reshape(-1)
        x = np.asarray(self.positions, dtype=np.float64)
        if x.ndim != 3 or x.shape[0] != t.shape[0]:
            raise DimensionMismatchError(
                f"positions must have shape (len(times), n, d); got {x.shape} for {t.shape[0]} times")
        if t.size > 1:
            steps = np.diff(t)
            if np.any(steps <= 0):
                raise ParameterError("times must be strictly increasing")
            if np.abs(steps - steps[0]).max() > 1e-6 * max(abs(steps[0]), 1e-300) + 1e-12:
                raise ParameterError("times must have a uniform step")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", x)

    @property
    def n_particles(self) -> int:
        return self.positions.shape[1]

    @property
    def dim(self) -> int:
        return self.positions.shape[2]

    def __len__(self):
        return self.times.shape[0]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self) > 1 else 0.0

    def snapshot(self, index: int) -> DiscreteMeasure:
        return DiscreteMeasure.uniform(self.positions[index])

    def measures(self, stride: int = 1) -> list[DiscreteMeasure]:
        idx = list(range(0, len(self), stride))
        if idx[-1] != len(self) - 1:
            idx.append(len(self) - 1)
        return [self.snapshot(k) for k in idx]


# ---------------------------------------------------------------- double gyre

@dataclass(frozen=True)
class GyreConfig:
    A: float = 0.25
    alpha: float = 0.25
    omega: float = 2 * math.pi
    dt: float = 0.02
    steps: int = 500
    grid: tuple[int, int] = (30, 15)
    layout: str = "cell-centered"

    def __post_init__(self):
        if not (self.A > 0 and self.omega > 0):
            raise ParameterError("A and omega must be positive")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if self.steps < 0:
            raise ParameterError("steps must be nonnegative")
        if len(self.grid) != 2 or min(self.grid) < 1:
            raise ParameterError(f"invalid grid {self.grid}")
        if self.layout not in GRID_LAYOUTS:
            raise ParameterError(f"layout must be one of {GRID_LAYOUTS}")


def double_gyre_velocity(t, x, A=0.25, alpha=0.25, omega=2 * math.pi):
    """Velocity of the forced double gyre on ``[0, 2] x [0, 1]``.

    ``x`` has shape ``(..., 2)``; with ``s = alpha sin(omega t)`` and
    ``f = s x^2 + (1 - 2s) x`` the field is
    ``(-pi A sin(pi f) cos(pi y), pi A cos(pi f) sin(pi y) df/dx)``.
    """
    x = np.asarray(x, dtype=np.float64)
    px, py = x[..., 0], x[..., 1]
    s = alpha * np.sin(omega * t)
    f = s * px * px + (1.0 - 2.0 * s) * px
    dfdx = 2.0 * s * px + 1.0 - 2.0 * s
    vx = -np.pi * A * np.sin(np.pi * f) * np.cos(np.pi * py)
    vy = np.pi * A * np.cos(np.pi * f) * np.sin(np.pi * py) * dfdx
    return np.stack([vx, vy], axis=-1)


def rk4_step(field, t, x, dt):
    k1 = field(t, x)
    k2 = field(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = field(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = field(t + dt, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_rk4(field, x0, t0, dt, steps):
    out = np.empty((steps + 1,) + np.shape(x0))
    out[0] = x0
    x = np.asarray(x0, dtype=np.float64)
    for k in range(steps):
        x = rk4_step(field, t0 + k * dt, x, dt)
        out[k + 1] = x
    return out


def gyre_grid(nx: int, ny: int, layout: str = "cell-centered") -> np.ndarray:
    """Equispaced ``nx * ny`` grid on ``[0, 2] x [0, 1]``, x-major order."""
    if layout == "cell-centered":
        xs = (np.arange(nx) + 0.5) * (2.0 / nx)
        ys = (np.arange(ny) + 0.5) * (1.0 / ny)
    elif layout == "inclusive":
        xs = np.linspace(0.0, 2.0, nx)
        ys = np.linspace(0.0, 1.0, ny)
    else:
        raise ParameterError(f"layout must be one of {GRID_LAYOUTS}")
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=1)


def integrate_gyre(cfg: GyreConfig = GyreConfig()) -> TrajectoryEnsemble:
    def field(t, x):
        return double_gyre_velocity(t, x, cfg.A, cfg.alpha, cfg.omega)

    x0 = gyre_grid(*cfg.grid, layout=cfg.layout)
    pos = integrate_rk4(field, x0, 0.0, cfg.dt, cfg.steps)
    times = cfg.dt * np.arange(cfg.steps + 1)
    return TrajectoryEnsemble(times, pos)


# ---------------------------------------------------------------- three wells

@dataclass(frozen=True)
class WellsConfig:
    beta: float = 2.0
    dt: float = 0.01
    steps: int = 300
    n_particles: int = 1000
    seed: int = 0
    equilibration_steps: int = 50_000
    start: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        if not self.beta > 0:
            raise ParameterError(f"beta must be positive, got {self.beta}")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if self.steps < 0 or self.equilibration_steps < 1:
            raise ParameterError("step counts must be positive")
        if not 1 <= self.n_particles <= self.equilibration_steps:
            raise ParameterError(
                f"n_particles must be between 1 and {self.equilibration_steps}")


def _polar(x):
    x = np.asarray(x, dtype=np.float64)
    r = np.hypot(x[..., 0], x[..., 1])
    if np.any(r == 0):
        raise SingularPointError("the potential's angular gradient is undefined at the origin")
    return x, r, np.arctan2(x[..., 1], x[..., 0])


def wells_potential(x):
    """``W = cos(3 phi) + 10 (r - 1)^2``."""
    x = np.asarray(x, dtype=np.float64)
    r = np.hypot(x[..., 0], x[..., 1])
    phi = np.arctan2(x[..., 1], x[..., 0])
    return np.cos(3.0 * phi) + 10.0 * (r - 1.0) ** 2


def wells_gradient_force(x):
    """``-grad W`` in Cartesian coordinates."""
    x, r, phi = _polar(x)
    dW_dr = 20.0 * (r - 1.0)
    dW_dphi = -3.0 * np.sin(3.0 * phi)
    c, s = x[..., 0] / r, x[..., 1] / r
    # grad W = dW/dr e_r + (1/r) dW/dphi e_phi
    gx = dW_dr * c - dW_dphi * s / r
    gy = dW_dr * s + dW_dphi * c / r
    return -np.stack([gx, gy], axis=-1)


def wells_force(x, beta: float, circular: bool = True):
    """Potential force plus the clockwise drive ``exp(-beta W) (x2, -x1)``."""
    F = wells_gradient_force(x)
    if circular:
        x = np.asarray(x, dtype=np.float64)
        damp = np.exp(-beta * wells_potential(x))
        F = F + damp[..., None] * np.stack([x[..., 1], -x[..., 0]], axis=-1)
    return F


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator; accepts an int or a SeedSequence."""
    return np.random.Generator(np.random.Philox(seed))


def euler_maruyama(force, beta: float, x0, dt: float, steps: int, seed=0,
                   noise_scale: float = 1.0, rng: np.random.Generator | None = None):
    """Integrate ``dx = F(x) dt + sqrt(2/beta) dW`` for one or many particles.

    Returns an array of shape ``(steps + 1,) + x0.shape``. ``noise_scale=0``
    gives the deterministic Euler scheme.
    """
    if not dt > 0:
        raise ParameterError("dt must be positive")
    if not beta > 0:
        raise ParameterError("beta must be positive")
    rng = make_rng(seed) if rng is None else rng
    x = np.array(x0, dtype=np.float64)
    amp = noise_scale * math.sqrt(2.0 * dt / beta)
    out = np.empty((steps + 1,) + x.shape)
    out[0] = x
    for k in range(steps):
        xi = rng.standard_normal(x.shape)
        x = x + force(x) * dt + amp * xi
        out[k + 1] = x
    return out


def sample_wells_dataset(cfg: WellsConfig = WellsConfig()):
    """Initial/final snapshots of the three-well experiment.

    A single trajectory without the rotating drive is run for
    ``equilibration_steps`` from ``start``; ``n_particles`` of its points
    (after each step) are drawn without replacement and then advanced
    ``steps`` steps with the drive switched on. Returns uniform-weight
    measures of the start and end positions and the full ensemble.
    """
    s_eq, s_pick, s_fwd = np.random.SeedSequence(cfg.seed).spawn(3)
    eq = euler_maruyama(lambda x: wells_force(x, cfg.beta, circular=False), cfg.beta,
                        cfg.start, cfg.dt, cfg.equilibration_steps, rng=make_rng(s_eq))[1:]
    pick = make_rng(s_pick).choice(len(eq), size=cfg.n_particles, replace=False)
    x0 = eq[pick]
    fwd = euler_maruyama(lambda x: wells_force(x, cfg.beta, circular=True), cfg.beta,
                         x0, cfg.dt, cfg.steps, rng=make_rng(s_fwd))
    ens = TrajectoryEnsemble(cfg.dt * np.arange(cfg.steps + 1), fwd)
    return ens.snapshot(0), ens.snapshot(len(ens) - 1), ens


# ---------------------------------------------------------------- files

def save_trajectory(path, ens: TrajectoryEnsemble) -> None:
    """CSV with columns ``t, id, x0..x{d-1}``."""
    header = ["t", "id"] + [f"x{k}" for k in range(ens.dim)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for t, slab in zip(ens.times, ens.positions):
            tt = repr(float(t))
            for i, p in enumerate(slab):
                wr.writerow([tt, i] + [repr(float(v)) for v in p])


def load_trajectory(path) -> TrajectoryEnsemble:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [(k, r) for k, r in enumerate(csv.reader(fh), start=1) if r and any(s.strip() for s in r)]
    if not rows:
        raise EmptyInputError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0][1]]
    d = len(header) - 2
    if d < 1 or header[:2] != ["t", "id"] or header[2:] != [f"x{k}" for k in range(d)]:
        raise ParseError(f"{path}: header must be t,id,x0..x{{d-1}}, got {header}", rows[0][0])
    slices: OrderedDict[float, list] = OrderedDict()
    for line, row in rows[1:]:
        if len(row) != d + 2:
            raise DimensionMismatchError(f"{path}: line {line}: expected {d + 2} fields")
        try:
            t = float(row[0])
            pid = int(row[1])
            p = [float(s) for s in row[2:]]
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}", line) from None
        slices.setdefault(t, []).append((pid, p))
    if not slices:
        raise EmptyInputError(f"{path}: no data rows")
    counts = {len(v) for v in slices.values()}
    if len(counts) != 1:
        raise ChainMismatchError(f"{path}: time slices have differing particle counts {sorted(counts)}")
    times = sorted(slices)
    positions = np.array([[p for _, p in sorted(slices[t], key=lambda r: r[0])] for t in times])
    return TrajectoryEnsemble(np.array(times), positions)
