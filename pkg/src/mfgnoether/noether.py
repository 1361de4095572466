"""Noether currents, the closed-form conservation-law catalog and conservation diagnostics.

Convention: every current (T^t, T^x) satisfies D_t T^t + D_x T^x = 0 on
solutions.  The closed forms are stored as the bracket pair (P_t, P_x) in
the orientation they are usually displayed, together with the signs
(s_t, s_x) such that T^t = s_t P_t and T^x = s_x P_x.

The two d-dimensional currents of the general system,
    D_t[eps grad m . grad u + m H - F] - div[eps(u_t grad m + m_t grad u) + m u_t grad_p H] = 0,
    -D_t[m] + div[eps grad m + m grad_p H] = 0,
reduce to CLG1 and CLG3 for d = 1; only those restrictions are executable here.
"""

from __future__ import annotations

import csv
import json
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import sympy as sp

from .errors import NotCanonicalError
from .grid import AnalyticField, Field2D, GridSpec, JetPoint, time_derivative
from .model import (CouplingSpec, HamiltonianSpec, ProblemSpec, eval_lagrangian,
                    euler_lagrange_residuals, gamma_star)
from .symmetry import (M, X, Generator, X1, X2, X3, X4a, X4b, X5c, X_f, Xc, Y4a, Y4b,
                       Y4c, eval_function, potential)

CLOSE = 1e-12


# -- generic assembly --------------------------------------------------------------


def characteristics(g: Generator, jet: JetPoint, coeffs=None):
    xt, xx, eu, em = coeffs or g.evaluate(jet)
    Q_u = eu.value - xt.value * jet.u_t - xx.value * jet.u_x
    Q_m = em.value - xt.value * jet.m_t - xx.value * jet.m_x
    return Q_u, Q_m


def noether_current(g: Generator, V_t, V_x, jet: JetPoint, spec: ProblemSpec):
    """(T^t - V^t, T^x - V^x) of the generator, canonical orientation."""
    eps = spec.epsilon
    coeffs = g.evaluate(jet)
    xt, xx = coeffs[0].value, coeffs[1].value
    Q_u, Q_m = characteristics(g, jet, coeffs)
    L = eval_lagrangian(jet, spec)
    P_u = eps * jet.m_x + jet.m * spec.H(jet.u_x, 1)
    Tt = xt * L - jet.m * Q_u
    Tx = xx * L + Q_u * P_u + Q_m * eps * jet.u_x
    return Tt - eval_function(V_t, jet).value, Tx - eval_function(V_x, jet).value


def noether_identity_defect(g: Generator, V_t, V_x, f: AnalyticField, t, x,
                            spec: ProblemSpec):
    """D_t(T^t - V^t) + D_x(T^x - V^x) + Q_u dL/du + Q_m dL/dm on a closed-form field.

    Vanishes identically (off solutions) exactly when (g, V) is a
    variational or divergence symmetry.  Total derivatives are expanded by
    the chain rule, so only field partials up to (u_tt, u_xx, u_tx) enter.
    """
    from .grid import jet_from_analytic

    eps = spec.epsilon
    jet = jet_from_analytic(f, t, x)
    u_tt, m_tt = f.u(t, x, 2, 0), f.m(t, x, 2, 0)
    ux, m = jet.u_x, jet.m
    H, H1, H2 = spec.H(ux), spec.H(ux, 1), spec.H(ux, 2)
    fm = spec.f(m)

    coeffs = g.evaluate(jet)
    xt, xx, eu, em = coeffs
    Q_u, Q_m = characteristics(g, jet, coeffs)
    L = eval_lagrangian(jet, spec)
    DtL = (-jet.m_t * jet.u_t - m * u_tt + eps * (jet.m_tx * ux + jet.m_x * jet.u_tx)
           + jet.m_t * H + m * H1 * jet.u_tx - fm * jet.m_t)
    DxL = (-jet.m_x * jet.u_t - m * jet.u_tx + eps * (jet.m_xx * ux + jet.m_x * jet.u_xx)
           + jet.m_x * H + m * H1 * jet.u_xx - fm * jet.m_x)
    DtQu = (eu.Dt(jet) - xt.Dt(jet) * jet.u_t - xt.value * u_tt
            - xx.Dt(jet) * ux - xx.value * jet.u_tx)
    DxQu = (eu.Dx(jet) - xt.Dx(jet) * jet.u_t - xt.value * jet.u_tx
            - xx.Dx(jet) * ux - xx.value * jet.u_xx)
    DxQm = (em.Dx(jet) - xt.Dx(jet) * jet.m_t - xt.value * jet.m_tx
            - xx.Dx(jet) * jet.m_x - xx.value * jet.m_xx)
    P_u = eps * jet.m_x + m * H1
    DxP_u = eps * jet.m_xx + jet.m_x * H1 + m * H2 * jet.u_xx

    DtTt = xt.Dt(jet) * L + xt.value * DtL - jet.m_t * Q_u - m * DtQu
    DxTx = (xx.Dx(jet) * L + xx.value * DxL + DxQu * P_u + Q_u * DxP_u
            + DxQm * eps * ux + Q_m * eps * jet.u_xx)
    div_V = eval_function(V_t, jet).Dt(jet) + eval_function(V_x, jet).Dx(jet)
    dL_du, dL_dm = euler_lagrange_residuals(jet, spec)
    return DtTt + DxTx - div_V + Q_u * dL_du + Q_m * dL_dm


# -- closed-form catalog -----------------------------------------------------------


def _brackets_clg1(j, s):
    eps = s.epsilon
    Pt = eps * j.m_x * j.u_x + j.m * s.H(j.u_x) - s.F(j.m)
    Px = eps * (j.u_t * j.m_x + j.m_t * j.u_x) + j.m * j.u_t * s.H(j.u_x, 1)
    return Pt, Px


def _brackets_clg2(j, s):
    Pt = j.m * j.u_x
    Px = (j.m * j.u_t + s.epsilon * j.m_x * j.u_x
          + j.m * (j.u_x * s.H(j.u_x, 1) - s.H(j.u_x)) + s.F(j.m))
    return Pt, Px


def _brackets_clg3(j, s):
    return j.m, s.epsilon * j.m_x + j.m * s.H(j.u_x, 1)


def _brackets_cl4a(j, s):
    eps, p = s.epsilon, s.hamiltonian.exponent
    t, x, u, m, ux = j.t, j.x, j.u, j.m, j.u_x
    F = s.F(m)
    Pt = (2 * (p - 1) * t * (eps * j.m_x * ux + m * ux**p / p - F)
          + (p - 1) * x * m * ux - (p - 2) * m * u)
    Px = (2 * (p - 1) * t * (eps * (j.u_t * j.m_x + j.m_t * ux) + m * j.u_t * ux ** (p - 1))
          + (p - 1) * x * (m * j.u_t + eps * j.m_x * ux + (p - 1) / p * m * ux**p + F)
          - (p - 2) * u * (eps * j.m_x + m * ux ** (p - 1))
          + (2 * p - 3) * eps * m * ux)
    return Pt, Px


def _brackets_cl4b(j, s):
    eps, k, alpha = s.epsilon, s.hamiltonian.k, s.coupling.alpha
    t, x, u, m, ux = j.t, j.x, j.u, j.m, j.u_x
    e = np.exp(k * ux)
    F = 2 * alpha / 3 * m**1.5
    Pt = 2 * t * (eps * j.m_x * ux + m * e / k - F) + x * m * (ux + 1 / k) - m * u
    Px = (2 * t * (eps * (j.u_t * j.m_x + j.m_t * ux) + m * j.u_t * e)
          + x * (m * j.u_t + eps * j.m_x * ux + m * ux * e + eps / k * j.m_x + F)
          - u * (eps * j.m_x + m * e) + 2 * eps * m * ux - eps / k * m)
    return Pt, Px


def _brackets_clc(j, s):
    eps, t, x, m, ux = s.epsilon, j.t, j.x, j.m, j.u_x
    Pt = m * (t * ux + x)
    Px = (t * (m * j.u_t + eps * j.m_x * ux + 0.5 * m * ux**2 + s.F(m))
          + x * (eps * j.m_x + m * ux) - eps * m)
    return Pt, Px


def _brackets_cl4a_mod(j, s):
    eps, alpha = s.epsilon, s.coupling.alpha
    t, x, m, ux = j.t, j.x, j.m, j.u_x
    cube = alpha * m**3 / 3
    Pt = 2 * t * (eps * j.m_x * ux + 0.5 * m * ux**2 - cube) + x * m * ux
    Px = (2 * t * (eps * (j.u_t * j.m_x + j.m_t * ux) + m * j.u_t * ux)
          + x * (m * j.u_t + eps * j.m_x * ux + 0.5 * m * ux**2 + cube) + eps * m * ux)
    return Pt, Px


def _brackets_cl5a(j, s):
    eps, alpha = s.epsilon, s.coupling.alpha
    t, x, m, ux = j.t, j.x, j.m, j.u_x
    cube = alpha * m**3 / 3
    Pt = (t * t * (eps * j.m_x * ux + 0.5 * m * ux**2 - cube) + t * x * m * ux
          + x * x * m / 2 - eps * t * m)
    Px = (t * t * (eps * (j.u_t * j.m_x + j.m_t * ux) + m * j.u_t * ux)
          + t * x * (m * j.u_t + eps * j.m_x * ux + 0.5 * m * ux**2 + cube)
          + x * x / 2 * (eps * j.m_x + m * ux) - eps**2 * t * j.m_x - eps * x * m)
    return Pt, Px


def _is_power_family(ham: HamiltonianSpec) -> bool:
    return ham.family in ("power", "cubic") and ham.h2 == 0


def _power_f(cpl: CouplingSpec, gamma=None) -> bool:
    if cpl.family != "power":
        return False
    return gamma is None or np.isclose(cpl.gamma, gamma, rtol=0, atol=1e-12)


def _cl4a_applies(ham, cpl):
    return _is_power_family(ham) and _power_f(cpl, gamma_star(ham.exponent))


@dataclass(frozen=True, eq=False)
class ConservationLaw:
    id: str
    generator_factory: Callable[[ProblemSpec], Generator]
    potentials: Callable[[ProblemSpec], tuple[sp.Expr, sp.Expr]]
    brackets: Callable
    signs: tuple[int, int]
    applies: Callable[[HamiltonianSpec, CouplingSpec], bool] = field(repr=False)
    explicit_x: bool = False

    def generator(self, spec: ProblemSpec) -> Generator:
        return self.generator_factory(spec)

    def V(self, spec: ProblemSpec) -> tuple[sp.Expr, sp.Expr]:
        return self.potentials(spec)

    def current(self, jet: JetPoint, spec: ProblemSpec):
        Pt, Px = self.brackets(jet, spec)
        return self.signs[0] * Pt, self.signs[1] * Px

    def density(self, jet: JetPoint, spec: ProblemSpec):
        return self.current(jet, spec)[0]

    def flux(self, jet: JetPoint, spec: ProblemSpec):
        return self.current(jet, spec)[1]

    def assembled(self, jet: JetPoint, spec: ProblemSpec):
        return noether_current(self.generator(spec), *self.V(spec), jet, spec)

    def is_applicable(self, spec: ProblemSpec) -> bool:
        return self.applies(spec.hamiltonian, spec.coupling)


def _zero(spec):
    return sp.S.Zero, sp.S.Zero


LAWS: dict[str, ConservationLaw] = {
    law.id: law for law in (
        ConservationLaw("CLG1", lambda s: X1(), _zero, _brackets_clg1, (1, -1),
                        lambda h, c: True),
        ConservationLaw("CLG2", lambda s: X2(), _zero, _brackets_clg2, (1, -1),
                        lambda h, c: True),
        ConservationLaw("CLG3", lambda s: X3(), _zero, _brackets_clg3, (-1, 1),
                        lambda h, c: True),
        ConservationLaw("CL4a", lambda s: Y4a(s.hamiltonian.exponent), _zero,
                        _brackets_cl4a, (1, -1), _cl4a_applies, explicit_x=True),
        ConservationLaw("CL4b", lambda s: Y4b(s.hamiltonian.k),
                        lambda s: (sp.S.Zero, -sp.nsimplify(s.epsilon / s.hamiltonian.k) * M),
                        _brackets_cl4b, (1, -1),
                        lambda h, c: h.family == "exponential" and h.h2 == 0
                        and _power_f(c, 0.5), explicit_x=True),
        ConservationLaw("CL_c", lambda s: Xc(),
                        lambda s: (sp.S.Zero, -sp.nsimplify(s.epsilon) * M),
                        _brackets_clc, (1, -1),
                        lambda h, c: h.family == "quadratic", explicit_x=True),
        ConservationLaw("CL4a_mod", lambda s: Y4c(), _zero, _brackets_cl4a_mod, (1, -1),
                        lambda h, c: h.family == "quadratic" and _power_f(c, 2),
                        explicit_x=True),
        ConservationLaw("CL5a", lambda s: X5c(s.epsilon),
                        lambda s: (sp.S.Zero, -sp.nsimplify(s.epsilon) * X * M),
                        _brackets_cl5a, (1, -1),
                        lambda h, c: h.family == "quadratic" and _power_f(c, 2),
                        explicit_x=True),
    )
}


def catalog_conservation_laws(spec: ProblemSpec) -> list[ConservationLaw]:
    if not spec.hamiltonian.is_canonical:
        raise NotCanonicalError("normalize the Hamiltonian before cataloguing conservation laws")
    return [law for law in LAWS.values() if law.is_applicable(spec)]


@dataclass(frozen=True, eq=False)
class SymmetryCheck:
    """One (generator, V) pair of the variational classification with its expected verdict."""

    label: str
    spec: ProblemSpec
    generator: Generator
    V_t: sp.Expr
    V_x: sp.Expr
    expect_zero: bool


def variational_checks(spec: ProblemSpec) -> list[SymmetryCheck]:
    """Classification entries relevant to ``spec``, each with its expected outcome."""
    ham, cpl, eps = spec.hamiltonian, spec.coupling, spec.epsilon
    z = sp.S.Zero
    out = [SymmetryCheck(g.name, spec, g, z, z, True) for g in (X1(), X2(), X3())]
    if cpl.family == "log":
        out.append(SymmetryCheck("X_f", spec, X_f(cpl.alpha), z, z, False))
    if cpl.family != "power":
        if ham.family == "quadratic":
            out.append(SymmetryCheck("Xc", spec, Xc(), z, -sp.nsimplify(eps) * M, True))
        return out
    gam = cpl.gamma
    if _is_power_family(ham):
        p = ham.exponent
        ok = np.isclose(gam, gamma_star(p), rtol=0, atol=1e-12)
        out.append(SymmetryCheck("Y4a" if ok else "X4a", spec, X4a(p, gam), z, z, bool(ok)))
    elif ham.family == "exponential" and ham.h2 == 0:
        k = ham.k
        ok = np.isclose(gam, 0.5, rtol=0, atol=1e-12)
        out.append(SymmetryCheck("Y4b" if ok else "X4b", spec, X4b(k, gam),
                                 z, -sp.nsimplify(eps / k) * M, bool(ok)))
    elif ham.family == "quadratic":
        out.append(SymmetryCheck("Xc", spec, Xc(), z, -sp.nsimplify(eps) * M, True))
        if np.isclose(gam, 2, rtol=0, atol=1e-12):
            out.append(SymmetryCheck("Y4c", spec, Y4c(), z, z, True))
            out.append(SymmetryCheck("X5c", spec, X5c(eps), z,
                                     -sp.nsimplify(eps) * X * M, True))
        else:
            out.append(SymmetryCheck("X4a", spec, X4a(2, gam), z, z, False))
    return out


def variational_scan_checks(epsilon: float = 0.3, alpha: float = 1.0, k: float = 1.5
                  ) -> list[SymmetryCheck]:
    """The full variational classification scan over representative families."""
    checks = []
    H_log = ProblemSpec(HamiltonianSpec.exponential(k), CouplingSpec.log(alpha), epsilon)
    checks += variational_checks(H_log)
    for p in (4, 5, -1):
        for gam, ok in ((gamma_star(p), True), (gamma_star(p) + 0.1, False)):
            spec = ProblemSpec(HamiltonianSpec.power(p), CouplingSpec.power(alpha, gam), epsilon)
            checks += [c for c in variational_checks(spec) if c.expect_zero is ok
                       and c.generator.name == "X4a"]
    for gam in (0.5, 0.6):
        spec = ProblemSpec(HamiltonianSpec.exponential(k), CouplingSpec.power(alpha, gam),
                           epsilon)
        checks += [c for c in variational_checks(spec) if c.generator.name == "X4b"]
    quad = ProblemSpec(HamiltonianSpec.quadratic(), CouplingSpec.power(alpha, 2), epsilon)
    checks += [c for c in variational_checks(quad) if c.generator.name in ("Xc", "Y4c", "X5c")]
    return checks


# -- numerical diagnostics ----------------------------------------------------------


def _d1(v, dx):
    return (np.roll(v, -1, axis=1) - np.roll(v, 1, axis=1)) / (2 * dx)


def _d2(v, dx):
    return (np.roll(v, -1, axis=1) - 2 * v + np.roll(v, 1, axis=1)) / dx**2


def numerical_jets(pair, spec: ProblemSpec, grid: GridSpec, time_stencil: bool = False
                   ) -> JetPoint:
    """Grid jets of a discrete pair; u_t and m_t from the PDE right-hand sides.

    With ``time_stencil`` the time derivatives come from centered differences
    in t instead (cross-check variant).  ``u`` carries the pair's linear part.
    """
    eps, dx = spec.epsilon, grid.dx
    T, Xg = grid.mesh()
    up, m = pair.u.values, pair.m.values
    s = pair.u_slope
    u_x = _d1(up, dx) + s
    u_xx, m_x, m_xx = _d2(up, dx), _d1(m, dx), _d2(m, dx)
    if time_stencil:
        u_t = time_derivative(pair.u).values
        m_t = time_derivative(pair.m).values
    else:
        u_t = -eps * u_xx + spec.H(u_x) - spec.f(m)
        m_t = eps * m_xx + _d1(m * spec.H(u_x, 1), dx)
    return JetPoint(t=T, x=Xg, u=up + s * Xg, m=m, u_t=u_t, m_t=m_t, u_x=u_x, m_x=m_x,
                    u_tx=_d1(u_t, dx), m_tx=_d1(m_t, dx), u_xx=u_xx, m_xx=m_xx)


def _shifted_jet(jet: JetPoint, cells: int, grid: GridSpec, slope: float) -> JetPoint:
    """Jet of the neighbour ``cells`` to the right, continued off the torus.

    Values are those of the periodic fields; the coordinate x and the linear
    part of u are unwrapped, so explicit-x currents see a continuous line.
    """
    d = {k: (np.roll(v, -cells, axis=1) if np.ndim(v) else v) for k, v in jet.as_dict().items()}
    shift = cells * grid.dx
    d["x"] = jet.x + shift
    d["u"] = np.roll(jet.u - slope * jet.x, -cells, axis=1) + slope * d["x"]
    return JetPoint(**d)


def _check_law(law: ConservationLaw, spec: ProblemSpec) -> None:
    if not law.is_applicable(spec):
        raise ValueError(f"law {law.id} does not apply to this problem")


def divergence_residual(law: ConservationLaw, pair, spec: ProblemSpec, grid: GridSpec,
                        time_stencil: bool = False) -> tuple[Field2D, float]:
    """Pointwise D_t T^t + D_x T^x on the grid and its sup over interior time levels."""
    _check_law(law, spec)
    jet = numerical_jets(pair, spec, grid, time_stencil)
    Tt = Field2D(law.density(jet, spec), grid, "diagnostic")
    right = law.flux(_shifted_jet(jet, 1, grid, pair.u_slope), spec)
    left = law.flux(_shifted_jet(jet, -1, grid, pair.u_slope), spec)
    res = time_derivative(Tt).values + (right - left) / (2 * grid.dx)
    field_ = Field2D(res, grid, "diagnostic")
    return field_, float(np.max(np.abs(res[1:-1])))


@dataclass(frozen=True)
class ConservedSeries:
    law_id: str
    t: np.ndarray
    Q: np.ndarray

    @property
    def drift(self) -> float:
        return float(np.max(np.abs(self.Q - self.Q[0])))

    def rows(self):
        for t, q in zip(self.t, self.Q):
            yield self.law_id, float(t), float(q), float(abs(q - self.Q[0]))


def conserved_integral(law: ConservationLaw, pair, spec: ProblemSpec, grid: GridSpec
                       ) -> ConservedSeries:
    """Q(t) = int_0^L T^t dx + int_0^t [T^x]_{x=0}^{x=L} ds.

    For currents without explicit x both corrections vanish on the torus and
    Q is the plain Riemann sum.  Otherwise the density integral uses the
    trapezoid rule over the unwrapped period and the boundary flux is
    accumulated by the trapezoid rule in time.
    """
    _check_law(law, spec)
    jet = numerical_jets(pair, spec, grid)
    dx, s = grid.dx, pair.u_slope
    Tt = law.density(jet, spec)
    Q = np.sum(Tt, axis=1) * dx
    if law.explicit_x:
        wrap = _shifted_jet(jet, grid.num_cells, grid, s)
        Tt_L, Tt_0 = law.density(wrap, spec)[:, 0], Tt[:, 0]
        Q = Q + dx / 2 * (Tt_L - Tt_0)
        jump = law.flux(wrap, spec)[:, 0] - law.flux(jet, spec)[:, 0]
        boundary = np.concatenate([[0.0], np.cumsum((jump[1:] + jump[:-1]) / 2 * grid.dt)])
        Q = Q + boundary
    return ConservedSeries(law.id, grid.t.copy(), Q)


# -- output -------------------------------------------------------------------------


def write_series_csv(series: list[ConservedSeries], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["law_id", "t", "Q", "drift"])
        for s in series:
            for law_id, t, q, d in s.rows():
                w.writerow([law_id, repr(t), repr(q), repr(d)])


def residual_summary(levels: list[dict[str, float]]) -> dict:
    """Per-law residuals across refinement levels and successive ratios."""
    out = {}
    for law_id in levels[0]:
        vals = [lvl[law_id] for lvl in levels]
        ratios = [a / b if b > 0 else float("inf") for a, b in zip(vals, vals[1:])]
        out[law_id] = {"values": vals, "ratios": ratios}
    return out


def write_residual_summary(summary: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True))
