"""Forward-backward Picard solver for the periodic MFG system.

Backward HJB step (diffusion implicit, Hamiltonian explicit):

    (u^n - u^{n+1})/dt - eps D2 u^n + H(D1 u^{n+1}) - f(m^n) = 0

Forward Kolmogorov step in conservative flux form with velocity v = -H'(u_x)
at cell interfaces, a positivity-limited centered advective flux and implicit
diffusion:

    (m^{n+1} - m^n)/dt + div J(m^n, u^n) - eps D2 m^{n+1} = 0

Both implicit solves are circulant and are done exactly by FFT.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NumericalFailure
from .grid import Field2D, GridSpec, spatial_derivative, time_derivative, total_mass
from .model import ProblemSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PicardConfig:
    damping: float = 0.5
    tolerance: float = 1e-8
    max_iter: int = 500
    stability_safety: float = 0.9

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.stability_safety > 0:
            raise ValueError("stability_safety must be positive")


@dataclass(frozen=True, eq=False)
class SolutionPair:
    """Discrete (u, m); the value function is values + u_slope * x.

    The linear part lets gauge-transformed (non-periodic) value functions
    live on the torus: only u_x, u_t and u_xx enter the equations.
    """

    u: Field2D
    m: Field2D
    u_slope: float = 0.0

    @property
    def grid(self) -> GridSpec:
        return self.u.grid


@dataclass
class SolveReport:
    iterations: int
    final_update_norm: float
    residual_norms: tuple[float, float]
    mass_drift: float
    converged: bool
    pde_residual_norms: tuple[float, float] = (math.nan, math.nan)
    history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["residual_norm_F1"], d["residual_norm_F2"] = d.pop("residual_norms")
        d["pde_residual_norm_F1"], d["pde_residual_norm_F2"] = d.pop("pde_residual_norms")
        d.pop("history")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# -- building blocks -----------------------------------------------------------


def _diffusion_symbol(grid: GridSpec, c: float) -> np.ndarray:
    k = np.arange(grid.num_cells // 2 + 1)
    return 1.0 + c * 4.0 / grid.dx**2 * np.sin(np.pi * k / grid.num_cells) ** 2


def _implicit_diffusion(rhs: np.ndarray, symbol: np.ndarray) -> np.ndarray:
    """Solve (I - c D2) y = rhs on the torus."""
    return np.fft.irfft(np.fft.rfft(rhs) / symbol, n=rhs.shape[-1])


def _d1(v: np.ndarray, dx: float) -> np.ndarray:
    return (np.roll(v, -1) - np.roll(v, 1)) / (2 * dx)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalFailure(f"non-finite values in {what}")


def _substeps(speed: float, grid: GridSpec, safety: float) -> int:
    if speed == 0:
        return 1
    return max(1, math.ceil(grid.dt * speed / (safety * grid.dx)))


def _hjb_step(u_next, m_level, spec, grid, symbol, n_sub, slope):
    dts = grid.dt / n_sub
    fm = spec.f(m_level)
    u = u_next
    for _ in range(n_sub):
        ham = spec.H(_d1(u, grid.dx) + slope)
        _check_finite(ham, "Hamiltonian")
        u = _implicit_diffusion(u - dts * ham + dts * fm, symbol)
    return u


def _interface_velocity(u_level, spec, grid, slope):
    ux_half = (np.roll(u_level, -1) - u_level) / grid.dx + slope
    v = -spec.H(ux_half, 1)
    _check_finite(v, "drift velocity")
    return v


def _advect(m, v, lam):
    """One explicit advective update with a positivity-preserving flux limiter.

    Low order: upwind flux.  High order: centered flux.  The antidiffusive
    difference leaving cell i is scaled by R_i <= 1 so that cell i cannot be
    emptied below zero; mass is conserved flux by flux.
    """
    m_right = np.roll(m, -1)
    j_low = np.maximum(v, 0) * m + np.minimum(v, 0) * m_right
    j_high = 0.5 * v * (m + m_right)
    anti = j_high - j_low
    m_low = m - lam * (j_low - np.roll(j_low, 1))
    out_flow = lam * (np.maximum(anti, 0) + np.maximum(-np.roll(anti, 1), 0))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = np.where(out_flow > 0, np.maximum(m_low, 0) / out_flow, 1.0)
    r = np.minimum(1.0, ratio)
    limit = np.where(anti >= 0, r, np.roll(r, -1))
    flux = j_low + limit * anti
    return m - lam * (flux - np.roll(flux, 1))


def _fp_step(m_level, u_level, spec, grid, symbol_sub, safety, slope):
    v = _interface_velocity(u_level, spec, grid, slope)
    outflow_speed = float(np.max(np.maximum(v, 0) + np.maximum(-np.roll(v, 1), 0)))
    n_sub = _substeps(outflow_speed, grid, safety)
    symbol = symbol_sub(n_sub)
    lam = grid.dt / n_sub / grid.dx
    m = m_level
    for _ in range(n_sub):
        m = _implicit_diffusion(_advect(m, v, lam), symbol)
    _check_finite(m, "density")
    return m


class _Symbols:
    """Cache of diffusion symbols keyed by the number of substeps."""

    def __init__(self, grid: GridSpec, eps: float):
        self.grid, self.eps, self._cache = grid, eps, {}

    def __call__(self, n_sub: int) -> np.ndarray:
        if n_sub not in self._cache:
            self._cache[n_sub] = _diffusion_symbol(self.grid, self.eps * self.grid.dt / n_sub)
        return self._cache[n_sub]


def _hjb_substeps(u_next, spec, grid, safety, slope) -> int:
    speed = float(np.max(np.abs(spec.H(_d1(u_next, grid.dx) + slope, 1))))
    if not math.isfinite(speed):
        raise NumericalFailure("non-finite H' in HJB sweep")
    return _substeps(speed, grid, safety)


def _check_grid(spec: ProblemSpec, grid: GridSpec) -> None:
    if not math.isclose(spec.horizon, grid.horizon, rel_tol=1e-12):
        raise ValueError(f"problem horizon {spec.horizon} != grid horizon {grid.horizon}")


def initial_density_values(spec: ProblemSpec, grid: GridSpec) -> np.ndarray:
    if spec.initial_density is None:
        m0 = np.full(grid.num_cells, 1.0 / grid.length)
    else:
        m0 = np.asarray(spec.initial_density(grid.x), float) * np.ones(grid.num_cells)
    mass = float(np.sum(m0) * grid.dx)
    if abs(mass - 1.0) > 1e-12:
        raise ValueError(f"initial density has mass {mass!r}, expected 1 within 1e-12")
    if np.any(m0 < 0):
        raise ValueError("initial density must be nonnegative")
    return m0


# -- sweeps ------------------------------------------------------------------------


def hjb_backward_sweep(m_traj: Field2D, spec: ProblemSpec, grid: GridSpec,
                       safety: float = 0.9, u_slope: float = 0.0) -> Field2D:
    _check_grid(spec, grid)
    m = m_traj.values
    u = np.empty(grid.shape)
    u[-1] = spec.G(grid.x, m[-1])
    _check_finite(u[-1], "terminal cost")
    symbols = _Symbols(grid, spec.epsilon)
    for n in range(grid.num_steps - 1, -1, -1):
        n_sub = _hjb_substeps(u[n + 1], spec, grid, safety, u_slope)
        u[n] = _hjb_step(u[n + 1], m[n], spec, grid, symbols(n_sub), n_sub, u_slope)
        _check_finite(u[n], "value function")
    return Field2D(u, grid, "value")


def fp_forward_sweep(u_traj: Field2D, spec: ProblemSpec, grid: GridSpec,
                     safety: float = 0.9, u_slope: float = 0.0) -> Field2D:
    _check_grid(spec, grid)
    u = u_traj.values
    m = np.empty(grid.shape)
    m[0] = initial_density_values(spec, grid)
    symbols = _Symbols(grid, spec.epsilon)
    for n in range(grid.num_steps):
        m[n + 1] = _fp_step(m[n], u[n], spec, grid, symbols, safety, u_slope)
    return Field2D(m, grid, "density")


def scheme_residuals(pair: SolutionPair, spec: ProblemSpec, grid: GridSpec,
                     safety: float = 0.9) -> tuple[float, float]:
    """Step-map defects of the solver's own discretization.

    Returns max_n |u^n - S_hjb(u^{n+1}; m^n)| and max_n |m^{n+1} - S_fp(m^n; u^n)|,
    in the units of u and m respectively; both vanish on an exact discrete
    equilibrium.
    """
    u, m, s = pair.u.values, pair.m.values, pair.u_slope
    symbols = _Symbols(grid, spec.epsilon)
    r1 = r2 = 0.0
    for n in range(grid.num_steps):
        n_sub = _hjb_substeps(u[n + 1], spec, grid, safety, s)
        uh = _hjb_step(u[n + 1], m[n], spec, grid, symbols(n_sub), n_sub, s)
        r1 = max(r1, float(np.max(np.abs(u[n] - uh))))
        mf = _fp_step(m[n], u[n], spec, grid, symbols, safety, s)
        r2 = max(r2, float(np.max(np.abs(m[n + 1] - mf))))
    return r1, r2


def pde_residuals(pair: SolutionPair, spec: ProblemSpec, grid: GridSpec
                  ) -> tuple[Field2D, Field2D]:
    """Pointwise F1, F2 from centered grid stencils (independent of the sweeps)."""
    eps = spec.epsilon
    u_t = time_derivative(pair.u).values
    m_t = time_derivative(pair.m).values
    u_x = spatial_derivative(pair.u, 1).values + pair.u_slope
    u_xx = spatial_derivative(pair.u, 2).values
    m_x = spatial_derivative(pair.m, 1).values
    m_xx = spatial_derivative(pair.m, 2).values
    m = pair.m.values
    F1 = -u_t - eps * u_xx + spec.H(u_x) - spec.f(m)
    F2 = m_t - eps * m_xx - m_x * spec.H(u_x, 1) - m * spec.H(u_x, 2) * u_xx
    return Field2D(F1, grid, "diagnostic"), Field2D(F2, grid, "diagnostic")


def mass_drift(m: Field2D) -> float:
    return max(abs(total_mass(m, n) - 1.0) for n in range(m.grid.num_steps + 1))


def solve_picard(spec: ProblemSpec, grid: GridSpec, cfg: PicardConfig | None = None,
                 m_guess: Field2D | None = None) -> tuple[SolutionPair, SolveReport]:
    """Damped fixed-point iteration m -> FP(HJB(m)).

    The update norm of iteration k is the fixed-point defect
    sup|FP(HJB(m_k)) - m_k| (plus the change of u from the previous
    iteration).  The returned pair is (HJB(m_k), FP(HJB(m_k))) for the best
    iterate, so the forward equation holds exactly and the backward one up to
    the last density change.
    """
    cfg = cfg or PicardConfig()
    _check_grid(spec, grid)
    m0 = initial_density_values(spec, grid)
    if m_guess is None:
        m = np.tile(m0, (grid.num_steps + 1, 1))
    else:
        m = np.array(m_guess.values, dtype=float)
    safety = cfg.stability_safety
    u_prev = None
    best = None
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        u = hjb_backward_sweep(Field2D(m, grid, "density"), spec, grid, safety)
        m_new = fp_forward_sweep(u, spec, grid, safety)
        update = float(np.max(np.abs(m_new.values - m)))
        if u_prev is not None:
            update = max(update, float(np.max(np.abs(u.values - u_prev))))
        history.append(update)
        if best is None or update < best[0]:
            best = (update, u, m_new, it)
        if update <= cfg.tolerance:
            converged = True
            break
        u_prev = u.values
        m = (1 - cfg.damping) * m + cfg.damping * m_new.values
        logger.debug("picard iteration %d: update %.3e", it, update)
    update, u, m_field, best_it = best
    if converged:
        best_it = it
    pair = SolutionPair(u, m_field)
    report = SolveReport(
        iterations=best_it,
        final_update_norm=update,
        residual_norms=scheme_residuals(pair, spec, grid, safety),
        mass_drift=mass_drift(m_field),
        converged=converged,
        pde_residual_norms=tuple(f.sup() for f in pde_residuals(pair, spec, grid)),
        history=history,
    )
    return pair, report
