"""Periodic space-time grids, centered stencils, quadrature and manufactured fields.

The spatial domain is the torus [0, L) with nodes x_i = i*dx; time runs over
t_n = t_start + n*dt, n = 0..M.  Fields are stored as (M+1, N) arrays.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ROLES = ("value", "density", "diagnostic")
DENSITY_CLIP_TOL = 1e-13


@dataclass(frozen=True)
class GridSpec:
    length: float
    num_cells: int
    horizon: float
    num_steps: int
    t_start: float = 0.0

    def __post_init__(self):
        if not self.length > 0 or not self.horizon > 0:
            raise ValueError("length and horizon must be positive")
        if self.num_cells < 8:
            raise ValueError(f"num_cells must be >= 8, got {self.num_cells}")
        if self.num_steps < 2:
            raise ValueError(f"num_steps must be >= 2, got {self.num_steps}")

    @property
    def dx(self) -> float:
        return self.length / self.num_cells

    @property
    def dt(self) -> float:
        return self.horizon / self.num_steps

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.num_cells) * self.dx

    @property
    def t(self) -> np.ndarray:
        return self.t_start + np.arange(self.num_steps + 1) * self.dt

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_steps + 1, self.num_cells)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.t, self.x, indexing="ij")

    def refined(self, factor: int = 2) -> GridSpec:
        return dataclasses.replace(
            self, num_cells=self.num_cells * factor, num_steps=self.num_steps * factor
        )


@dataclass(frozen=True, eq=False)
class Field2D:
    values: np.ndarray
    grid: GridSpec
    role: str = "diagnostic"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite entries")
        if self.role == "density":
            if v.min() < -DENSITY_CLIP_TOL:
                raise ValueError(f"density below -{DENSITY_CLIP_TOL}: {v.min()}")
            v = np.maximum(v, 0.0)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def with_values(self, values: np.ndarray, role: str | None = None) -> Field2D:
        return Field2D(values, self.grid, role or self.role)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class JetPoint:
    """Second-order jet (t, x, u, m and partials).

    Entries are floats or equally shaped arrays; every operation consuming a
    jet is vectorized over that shape.
    """

    t: np.ndarray | float
    x: np.ndarray | float
    u: np.ndarray | float
    m: np.ndarray | float
    u_t: np.ndarray | float = 0.0
    m_t: np.ndarray | float = 0.0
    u_x: np.ndarray | float = 0.0
    m_x: np.ndarray | float = 0.0
    u_tx: np.ndarray | float = 0.0
    m_tx: np.ndarray | float = 0.0
    u_xx: np.ndarray | float = 0.0
    m_xx: np.ndarray | float = 0.0

    def replace(self, **changes) -> JetPoint:
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def take(self, index) -> JetPoint:
        """Sub-jet at ``index`` of every array-valued entry."""
        return JetPoint(
            **{k: (v[index] if np.ndim(v) else v) for k, v in self.as_dict().items()}
        )


def spatial_derivative(f: Field2D, order: int) -> Field2D:
    """Centered periodic first or second difference along x."""
    v, dx = f.values, f.grid.dx
    if order == 1:
        d = (np.roll(v, -1, axis=1) - np.roll(v, 1, axis=1)) / (2 * dx)
    elif order == 2:
        d = (np.roll(v, -1, axis=1) - 2 * v + np.roll(v, 1, axis=1)) / dx**2
    else:
        raise ValueError(f"order must be 1 or 2, got {order}")
    return Field2D(d, f.grid, "diagnostic")


def time_derivative(f: Field2D) -> Field2D:
    v, dt = f.values, f.grid.dt
    d = np.empty_like(v)
    d[1:-1] = (v[2:] - v[:-2]) / (2 * dt)
    d[0] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * dt)
    d[-1] = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * dt)
    return Field2D(d, f.grid, "diagnostic")


def total_mass(density: Field2D, time_index: int) -> float:
    if density.role != "density":
        raise ValueError("total_mass expects a density field")
    return float(np.sum(density.values[time_index]) * density.grid.dx)


# -- manufactured fields ------------------------------------------------------


@dataclass(frozen=True)
class Mode:
    """Re[amplitude * e^{i phase} * exp((decay + i omega) t + i kappa x)], kappa = 2 pi n / L."""

    amplitude: float
    wavenumber: int
    omega: float = 0.0
    phase: float = 0.0
    decay: float = 0.0


@dataclass(frozen=True)
class AnalyticField:
    """Closed-form periodic pair u(t,x), m(t,x) built from exponential-trigonometric modes."""

    length: float
    u_modes: tuple[Mode, ...] = ()
    m_modes: tuple[Mode, ...] = ()
    u_offset: float = 0.0
    m_offset: float = 1.0
    u_slope: float = 0.0
    u_drift: float = 0.0

    def __post_init__(self):
        if any(md.decay != 0.0 for md in self.m_modes):
            raise ValueError("density modes must be purely oscillatory")
        if self.m_offset <= sum(abs(md.amplitude) for md in self.m_modes):
            raise ValueError("density offset must dominate the mode amplitudes")

    @classmethod
    def random(cls, rng: np.random.Generator, length: float = 1.0, n_modes: int = 3,
               margin: float = 0.2, amplitude: float = 0.5, max_wavenumber: int = 3,
               slope: float | None = None) -> AnalyticField:
        """Random field; ``amplitude`` bounds each mode, ``slope`` fixes the linear part of u."""
        def modes(decay):
            return tuple(
                Mode(
                    amplitude=float(rng.uniform(-amplitude, amplitude)),
                    wavenumber=int(rng.integers(1, max_wavenumber + 1)),
                    omega=float(rng.uniform(-1.5, 1.5)),
                    phase=float(rng.uniform(0, 2 * np.pi)),
                    decay=float(rng.uniform(-0.5, 0.5)) if decay else 0.0,
                )
                for _ in range(n_modes)
            )
        um, mm = modes(True), modes(False)
        m_off = sum(abs(md.amplitude) for md in mm) + margin + float(rng.uniform(0, 1))
        u_slope = float(rng.uniform(-0.5, 0.5)) if slope is None else float(slope)
        return cls(length, um, mm, float(rng.uniform(-1, 1)), m_off,
                   u_slope, float(rng.uniform(-0.5, 0.5)))

    def _sum(self, modes, t, x, i, j):
        t, x = np.asarray(t, float), np.asarray(x, float)
        out = np.zeros(np.broadcast(t, x).shape)
        for md in modes:
            kappa = 2 * np.pi * md.wavenumber / self.length
            lam = complex(md.decay, md.omega)
            coef = md.amplitude * np.exp(1j * md.phase) * lam**i * (1j * kappa) ** j
            out = out + np.real(coef * np.exp(lam * t + 1j * kappa * x))
        return out

    def u(self, t, x, i: int = 0, j: int = 0):
        """Partial derivative d^i/dt^i d^j/dx^j of u; u carries a linear gauge slope*x + drift*t."""
        val = self._sum(self.u_modes, t, x, i, j)
        if i == 0 and j == 0:
            val = val + self.u_offset + self.u_slope * np.asarray(x) + self.u_drift * np.asarray(t)
        elif i == 0 and j == 1:
            val = val + self.u_slope
        elif i == 1 and j == 0:
            val = val + self.u_drift
        return val

    def m(self, t, x, i: int = 0, j: int = 0):
        val = self._sum(self.m_modes, t, x, i, j)
        if i == 0 and j == 0:
            val = val + self.m_offset
        return val

    def sample(self, grid: GridSpec) -> tuple[Field2D, Field2D]:
        """Periodic parts of (u, m) on a grid; u_slope is dropped and must be carried separately."""
        T, X = grid.mesh()
        u = self.u(T, X) - self.u_slope * X
        return Field2D(u, grid, "value"), Field2D(self.m(T, X), grid, "density")


def jet_from_analytic(f: AnalyticField, t, x) -> JetPoint:
    return JetPoint(
        t=np.asarray(t, float) + 0 * np.asarray(x, float),
        x=np.asarray(x, float) + 0 * np.asarray(t, float),
        u=f.u(t, x), m=f.m(t, x),
        u_t=f.u(t, x, 1, 0), m_t=f.m(t, x, 1, 0),
        u_x=f.u(t, x, 0, 1), m_x=f.m(t, x, 0, 1),
        u_tx=f.u(t, x, 1, 1), m_tx=f.m(t, x, 1, 1),
        u_xx=f.u(t, x, 0, 2), m_xx=f.m(t, x, 0, 2),
    )


# -- CSV interchange ----------------------------------------------------------


def write_field_csv(f: Field2D, path: str | Path) -> None:
    """Write ``t,x,value`` rows, row-major by time level."""
    T, X = f.grid.mesh()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "value"])
        for t, x, v in zip(T.ravel(), X.ravel(), f.values.ravel()):
            w.writerow([repr(float(t)), repr(float(x)), repr(float(v))])


def read_field_csv(path: str | Path, role: str = "diagnostic",
                   grid: GridSpec | None = None) -> Field2D:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    ts, xs = np.unique(data[:, 0]), np.unique(data[:, 1])
    if grid is None:
        n = len(xs)
        dx = xs[1] - xs[0]
        grid = GridSpec(length=n * dx, num_cells=n, horizon=ts[-1] - ts[0],
                        num_steps=len(ts) - 1, t_start=float(ts[0]))
    values = data[:, 2].reshape(grid.shape)
    return Field2D(values, grid, role)
