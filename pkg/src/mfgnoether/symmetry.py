"""Lie point generators of the 1-D MFG system.

A generator X = xi_t d/dt + xi_x d/dx + eta_u d/du + eta_m d/dm stores its
four coefficients as sympy expressions in (t, x, u, m); values and partial
derivatives up to second order are compiled to numpy once and cached, so
prolongation and the invariance checks below are evaluated in closed form
on (vectorized) jets.
"""

from __future__ import annotations

import json
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from itertools import combinations_with_replacement

import numpy as np
import sympy as sp

from .errors import FlowDomainError, NotCanonicalError
from .grid import Field2D, GridSpec, JetPoint
from .model import ProblemSpec, eval_lagrangian, gamma_star, lagrangian_partials

T, X, U, M = sp.symbols("t x u m", real=True)
VARS = (T, X, U, M)
_NAMES = "txum"
_PAIRS = [a + b for a, b in combinations_with_replacement(_NAMES, 2)]

PASS_TOL = 1e-10
WITNESS_TOL = 1e-4


@lru_cache(maxsize=None)
def _compile(expr: sp.Expr) -> Callable:
    exprs = [expr] + [sp.diff(expr, v) for v in VARS]
    exprs += [sp.diff(expr, a, b) for a, b in combinations_with_replacement(VARS, 2)]
    return sp.lambdify(VARS, exprs, modules="numpy")


class CoefficientValues:
    """Value, gradient and Hessian of one coefficient at a batch of points."""

    __slots__ = ("value", "d", "dd")

    def __init__(self, expr: sp.Expr, t, x, u, m):
        shape = np.broadcast(t, x, u, m).shape
        vals = [np.zeros(shape) + v for v in _compile(expr)(t, x, u, m)]
        self.value = vals[0]
        self.d = dict(zip(_NAMES, vals[1:5]))
        self.dd = dict(zip(_PAIRS, vals[5:]))

    def Dt(self, jet: JetPoint):
        return self.d["t"] + jet.u_t * self.d["u"] + jet.m_t * self.d["m"]

    def Dx(self, jet: JetPoint):
        return self.d["x"] + jet.u_x * self.d["u"] + jet.m_x * self.d["m"]

    def Dxx(self, jet: JetPoint):
        ux, mx, dd = jet.u_x, jet.m_x, self.dd
        return (dd["xx"] + 2 * ux * dd["xu"] + 2 * mx * dd["xm"] + ux * ux * dd["uu"]
                + 2 * ux * mx * dd["um"] + mx * mx * dd["mm"]
                + jet.u_xx * self.d["u"] + jet.m_xx * self.d["m"])


def potential(expr) -> sp.Expr:
    return sp.sympify(0 if expr is None else expr)


def eval_function(expr, jet: JetPoint) -> CoefficientValues:
    return CoefficientValues(potential(expr), jet.t, jet.x, jet.u, jet.m)


@dataclass(frozen=True, eq=False)
class Generator:
    name: str
    xi_t: sp.Expr
    xi_x: sp.Expr
    eta_u: sp.Expr
    eta_m: sp.Expr
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for attr in ("xi_t", "xi_x", "eta_u", "eta_m"):
            expr = sp.sympify(getattr(self, attr))
            extra = expr.free_symbols - set(VARS)
            if extra:
                raise ValueError(f"{attr} has free symbols {extra}; substitute parameters first")
            object.__setattr__(self, attr, expr)

    @property
    def coefficients(self) -> tuple[sp.Expr, ...]:
        return (self.xi_t, self.xi_x, self.eta_u, self.eta_m)

    def evaluate(self, jet: JetPoint) -> tuple[CoefficientValues, ...]:
        return tuple(CoefficientValues(c, jet.t, jet.x, jet.u, jet.m) for c in self.coefficients)

    def __add__(self, other: Generator) -> Generator:
        return Generator(f"({self.name}+{other.name})",
                         *(a + b for a, b in zip(self.coefficients, other.coefficients)))

    def __rmul__(self, c: float) -> Generator:
        return Generator(f"{c}*{self.name}", *(c * a for a in self.coefficients))

    def display(self) -> dict:
        return {k: str(v) for k, v in zip(("xi_t", "xi_x", "eta_u", "eta_m"), self.coefficients)}

    def __repr__(self):
        return f"Generator({self.name}, {self.display()})"


# -- catalog ------------------------------------------------------------------------


def X1() -> Generator:
    return Generator("X1", 1, 0, 0, 0)


def X2() -> Generator:
    return Generator("X2", 0, 1, 0, 0)


def X3() -> Generator:
    return Generator("X3", 0, 0, 1, 0)


def X_f(alpha: float) -> Generator:
    return Generator("X_f", 0, 0, sp.Float(alpha) * T, -M, {"alpha": alpha})


def X4a(p: float, gamma: float, name: str = "X4a") -> Generator:
    p_, g_ = sp.nsimplify(p), sp.nsimplify(gamma)
    return Generator(name, 2 * (p_ - 1) * T, (p_ - 1) * X, (p_ - 2) * U, -(p_ / g_) * M,
                     {"p": p, "gamma": gamma})


def Y4a(p: float) -> Generator:
    return X4a(p, gamma_star(p), "Y4a")


def X4b(k: float, gamma: float, name: str = "X4b") -> Generator:
    k_, g_ = sp.nsimplify(k), sp.nsimplify(gamma)
    return Generator(name, 2 * T, X, U - X / k_, -M / g_, {"k": k, "gamma": gamma})


def Y4b(k: float) -> Generator:
    return X4b(k, 0.5, "Y4b")


def Xc() -> Generator:
    return Generator("Xc", 0, T, -X, 0)


def Y4c() -> Generator:
    return X4a(2, 2, "Y4c")


def X5c(eps: float) -> Generator:
    e = sp.nsimplify(eps)
    return Generator("X5c", T**2, T * X, -X**2 / 2 + e * T, -T * M, {"epsilon": eps})


CATALOG_CONDITIONS = {
    "X1": "any H, any f",
    "X2": "any H, any f",
    "X3": "any H, any f",
    "X_f": "any H, f = alpha ln m",
    "X4a": "H = u_x^p/p (p != 2, cubic included), f = alpha m^gamma",
    "X4b": "H = exp(k u_x)/k, f = alpha m^gamma",
    "Xc": "H = u_x^2/2, any f",
    "Y4c": "H = u_x^2/2, f = alpha m^2 (X4a at p = gamma = 2)",
    "X5c": "H = u_x^2/2, f = alpha m^2",
}


def _require_canonical(spec: ProblemSpec) -> None:
    if not spec.hamiltonian.is_canonical:
        raise NotCanonicalError("normalize the Hamiltonian before cataloguing symmetries")


def catalog_generators(spec: ProblemSpec) -> list[Generator]:
    """Admitted generators for the (H, f) cell of a problem."""
    _require_canonical(spec)
    ham, cpl = spec.hamiltonian, spec.coupling
    gens = [X1(), X2(), X3()]
    if cpl.family == "log":
        gens.append(X_f(cpl.alpha))
    power_f = cpl.family == "power"
    fam = ham.family
    if fam == "quadratic":
        gens.append(Xc())
        if power_f and cpl.gamma == 2:
            gens += [Y4c(), X5c(spec.epsilon)]
        elif power_f:
            gens.append(X4a(2, cpl.gamma))
    elif fam in ("power", "cubic") and ham.h2 == 0 and power_f:
        gens.append(X4a(ham.exponent, cpl.gamma))
    elif fam == "exponential" and ham.h2 == 0 and power_f:
        gens.append(X4b(ham.k, cpl.gamma))
    return gens


def catalog_json(specs: Sequence[ProblemSpec] | None = None) -> str:
    """Generator catalog as JSON; with ``specs`` the concrete members per spec."""
    if specs is None:
        entries = [
            {"id": g.name, "coefficients": g.display(), "applies_to": CATALOG_CONDITIONS[g.name]}
            for g in (X1(), X2(), X3(), X_f(1.0), X4a(4, 0.8), X4b(1.0, 0.5),
                      Xc(), Y4c(), X5c(1.0))
        ]
        return json.dumps({"generators": entries}, indent=2)
    out = []
    for spec in specs:
        out.append({
            "hamiltonian": spec.hamiltonian.to_dict(),
            "coupling": spec.coupling.to_dict(),
            "generators": [{"id": g.name, "coefficients": g.display(), "params": g.params,
                            "applies_to": CATALOG_CONDITIONS.get(g.name, "custom")}
                           for g in catalog_generators(spec)],
        })
    return json.dumps(out, indent=2)


# -- prolongation and invariance ------------------------------------------------------


@dataclass(frozen=True)
class ProlongedCoefficients:
    zeta_u_t: np.ndarray | float
    zeta_m_t: np.ndarray | float
    zeta_u_x: np.ndarray | float
    zeta_m_x: np.ndarray | float
    zeta_u_xx: np.ndarray | float
    zeta_m_xx: np.ndarray | float


def prolong(g: Generator, jet: JetPoint, coeffs=None) -> ProlongedCoefficients:
    xt, xx, eu, em = coeffs or g.evaluate(jet)
    Dt_xt, Dt_xx = xt.Dt(jet), xx.Dt(jet)
    Dx_xt, Dx_xx = xt.Dx(jet), xx.Dx(jet)
    Dxx_xt, Dxx_xx = xt.Dxx(jet), xx.Dxx(jet)

    z_ut = eu.Dt(jet) - jet.u_t * Dt_xt - jet.u_x * Dt_xx
    z_mt = em.Dt(jet) - jet.m_t * Dt_xt - jet.m_x * Dt_xx
    z_ux = eu.Dx(jet) - jet.u_t * Dx_xt - jet.u_x * Dx_xx
    z_mx = em.Dx(jet) - jet.m_t * Dx_xt - jet.m_x * Dx_xx
    # D_x of zeta_x expanded through the jet, then the second prolongation step
    Dx_z_ux = (eu.Dxx(jet) - jet.u_tx * Dx_xt - jet.u_t * Dxx_xt
               - jet.u_xx * Dx_xx - jet.u_x * Dxx_xx)
    Dx_z_mx = (em.Dxx(jet) - jet.m_tx * Dx_xt - jet.m_t * Dxx_xt
               - jet.m_xx * Dx_xx - jet.m_x * Dxx_xx)
    z_uxx = Dx_z_ux - jet.u_tx * Dx_xt - jet.u_xx * Dx_xx
    z_mxx = Dx_z_mx - jet.m_tx * Dx_xt - jet.m_xx * Dx_xx
    return ProlongedCoefficients(z_ut, z_mt, z_ux, z_mx, z_uxx, z_mxx)


def on_shell(jet: JetPoint, spec: ProblemSpec) -> JetPoint:
    """Replace u_xx and m_xx by their values on the solution manifold."""
    eps = spec.epsilon
    u_xx = (-jet.u_t + spec.H(jet.u_x) - spec.f(jet.m)) / eps
    m_xx = (jet.m_t - jet.m_x * spec.H(jet.u_x, 1) - jet.m * spec.H(jet.u_x, 2) * u_xx) / eps
    return jet.replace(u_xx=u_xx, m_xx=m_xx)


def _determining_terms(g: Generator, jet: JetPoint, spec: ProblemSpec):
    jet = on_shell(jet, spec)
    eps, ux = spec.epsilon, jet.u_x
    H1, H2, H3 = spec.H(ux, 1), spec.H(ux, 2), spec.H(ux, 3)
    eta_m = CoefficientValues(g.eta_m, jet.t, jet.x, jet.u, jet.m).value
    z = prolong(g, jet)
    E1 = (-z.zeta_u_t, -eps * z.zeta_u_xx, H1 * z.zeta_u_x, -spec.df(jet.m) * eta_m)
    E2 = (z.zeta_m_t, -eps * z.zeta_m_xx, -z.zeta_m_x * H1, -jet.m_x * H2 * z.zeta_u_x,
          -eta_m * H2 * jet.u_xx, -jet.m * H3 * z.zeta_u_x * jet.u_xx,
          -jet.m * H2 * z.zeta_u_xx)
    return E1, E2


def determining_residuals(g: Generator, jet: JetPoint, spec: ProblemSpec):
    """(E1, E2): the prolonged generator applied to (F1, F2) on the solution manifold."""
    E1, E2 = _determining_terms(g, jet, spec)
    return sum(E1), sum(E2)


def determining_scales(g: Generator, jet: JetPoint, spec: ProblemSpec):
    """Sums of the absolute values of the terms of E1 and E2.

    Roundoff in the residuals is proportional to these, which matters for
    families whose derivatives are large on the sampling box (negative powers
    near u_x = 0, steep exponentials).
    """
    E1, E2 = _determining_terms(g, jet, spec)
    return sum(np.abs(e) for e in E1), sum(np.abs(e) for e in E2)


def variational_defect(g: Generator, V_t, V_x, jet: JetPoint, spec: ProblemSpec):
    """X L + L (D_t xi_t + D_x xi_x) - D_t V_t - D_x V_x at the jet.

    L depends on (u_t, u_x, m, m_x) only; the u_t, u_x and m_x slots are
    acted on by the prolonged coefficients.
    """
    coeffs = g.evaluate(jet)
    xt, xx, eu, em = coeffs
    z = prolong(g, jet, coeffs)
    dL = lagrangian_partials(jet, spec)
    XL = (em.value * dL["m"] + z.zeta_u_t * dL["u_t"] + z.zeta_u_x * dL["u_x"]
          + z.zeta_m_x * dL["m_x"])
    L = eval_lagrangian(jet, spec)
    vt, vx = eval_function(V_t, jet), eval_function(V_x, jet)
    return XL + L * (xt.Dt(jet) + xx.Dx(jet)) - vt.Dt(jet) - vx.Dx(jet)


# -- jet sampling ----------------------------------------------------------------------


def sample_jets(rng: np.random.Generator, n: int, spec: ProblemSpec | None = None,
                box: float = 2.0, m_range=(0.1, 3.0)) -> JetPoint:
    """Random jets in the verification box; u_x restricted to [0.1, 2] for real-branch powers."""
    def uni(lo=-box, hi=box):
        return rng.uniform(lo, hi, n)

    ux = uni()
    if spec is not None and spec.hamiltonian.real_branch_only:
        ux = rng.uniform(0.1, 2.0, n) - spec.hamiltonian.q
    elif spec is not None and spec.hamiltonian.family == "power" and spec.hamiltonian.p < 0:
        ux = rng.choice([-1, 1], n) * rng.uniform(0.1, 2.0, n)
    lo, hi = m_range
    if spec is not None and spec.coupling.family == "table":
        ms = spec.coupling.table[0]
        lo, hi = max(lo, ms[0]), min(hi, ms[-1])
    return JetPoint(t=uni(), x=uni(), u=uni(), m=rng.uniform(lo, hi, n),
                    u_t=uni(), m_t=uni(), u_x=ux, m_x=uni(), u_tx=uni(), m_tx=uni(),
                    u_xx=uni(), m_xx=uni())


# -- finite flows ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FlowRequest:
    generator: Generator
    a: float
    target: object  # (t, x, u, m) tuple of arrays, or a SolutionPair


def _flow_point(g: Generator, a: float, t, x, u, m):
    name, prm = g.name, g.params
    t, x, u, m = (np.asarray(v, float) for v in (t, x, u, m))
    if name == "X1":
        return t + a, x, u, m
    if name == "X2":
        return t, x + a, u, m
    if name == "X3":
        return t, x, u + a, m
    if name == "X_f":
        return t, x, u + a * prm["alpha"] * t, np.exp(-a) * m
    if name == "Xc":
        return t, x + a * t, u - a * x - a * a * t / 2, m
    if name in ("X4a", "Y4a", "Y4c"):
        # diagonal linear field: each coordinate scales by exp(a * rate)
        p, gam = prm["p"], prm["gamma"]
        return (np.exp(2 * (p - 1) * a) * t, np.exp((p - 1) * a) * x,
                np.exp((p - 2) * a) * u, np.exp(-p / gam * a) * m)
    if name in ("X4b", "Y4b"):
        # integrated by hand: du/da = u - x e^a / k with x(a) = e^a x
        k, gam = prm["k"], prm["gamma"]
        return (np.exp(2 * a) * t, np.exp(a) * x, np.exp(a) * (u - a * x / k),
                np.exp(-a / gam) * m)
    if name == "X5c":
        eps = prm["epsilon"]
        s = 1 - a * t
        if np.any(s <= 0):
            raise FlowDomainError("projective flow needs a*t < 1")
        return t / s, x / s, u - a * x * x / (2 * s) - eps * np.log(s), s * m
    raise FlowDomainError(f"no closed-form flow for generator {name!r}")


def _periodic_shift(values: np.ndarray, shifts: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Row n of the result is row n of ``values`` translated right by shifts[n]."""
    out = np.empty_like(values)
    kappa = 2 * np.pi * np.fft.rfftfreq(grid.num_cells, d=grid.dx)
    for n, s in enumerate(np.broadcast_to(shifts, values.shape[:1])):
        cells = s / grid.dx
        if abs(cells - round(cells)) < 1e-12:
            out[n] = np.roll(values[n], int(round(cells)))
        else:
            out[n] = np.fft.irfft(np.fft.rfft(values[n]) * np.exp(-1j * kappa * s),
                                  n=grid.num_cells)
    return out


def group_flow(req: FlowRequest):
    """Apply exp(a X) to a point (t, x, u, m) or to a periodic SolutionPair.

    Pair targets are supported for flows that preserve the periodic time-slab
    structure (X1, X2, X3, X_f, Xc); the others rescale or bend the slab and
    are rejected.
    """
    from .solver import SolutionPair

    g, a, target = req.generator, req.a, req.target
    if not isinstance(target, SolutionPair):
        return _flow_point(g, a, *target)
    pair = target
    grid = pair.grid
    u, m, s = pair.u.values, pair.m.values, pair.u_slope
    t = grid.t[:, None]
    if g.name == "X1":
        import dataclasses
        new_grid = dataclasses.replace(grid, t_start=grid.t_start + a)
        return SolutionPair(Field2D(u, new_grid, "value"), Field2D(m, new_grid, "density"), s)
    if g.name == "X2":
        return SolutionPair(pair.u.with_values(_periodic_shift(u, a, grid) - s * a),
                            pair.m.with_values(_periodic_shift(m, a, grid)), s)
    if g.name == "X3":
        return SolutionPair(pair.u.with_values(u + a), pair.m, s)
    if g.name == "X_f":
        alpha = g.params["alpha"]
        return SolutionPair(pair.u.with_values(u + a * alpha * t),
                            pair.m.with_values(np.exp(-a) * m), s)
    if g.name == "Xc":
        # u'(t, y) = u(t, y - a t) - a y + a^2 t / 2, written as periodic part + slope
        shifts = a * grid.t
        periodic = _periodic_shift(u, shifts, grid) + (a * a / 2 - s * a) * t
        return SolutionPair(pair.u.with_values(periodic),
                            pair.m.with_values(_periodic_shift(m, shifts, grid)), s - a)
    raise FlowDomainError(f"flow {g.name} is not compatible with the periodic grid")


def verify_transformed_solution(pair, req: FlowRequest, spec: ProblemSpec, grid: GridSpec):
    """Sup-norms of the PDE residuals of the transformed pair."""
    from .solver import pde_residuals

    new = group_flow(FlowRequest(req.generator, req.a, pair))
    r1, r2 = pde_residuals(new, spec, new.grid)
    return r1.sup(), r2.sup()
