"""Hamiltonian and coupling families, equivalence normalization, Lagrangian.

The system under study is

    F1 = -u_t - eps u_xx + H(u_x) - f(m) = 0
    F2 =  m_t - eps m_xx - m_x H'(u_x) - m H''(u_x) u_xx = 0

with Lagrangian L = -m u_t + eps m_x u_x + m H(u_x) - F(m), F' = f.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from .errors import DensityFloorError, DomainError, SingularExponentError
from .grid import JetPoint

H_FAMILIES = ("quadratic", "cubic", "power", "exponential", "custom")
F_FAMILIES = ("log", "power", "table")
DEFAULT_M_MIN = 1e-10


def _is_integer(p: float) -> bool:
    return float(p).is_integer()


def _falling(p: float, n: int) -> float:
    out = 1.0
    for j in range(n):
        out *= p - j
    return out


@dataclass(frozen=True)
class HamiltonianSpec:
    """H(u_x) in one of the classified families.

    General forms (``h`` is the leading coefficient, ``None`` meaning the
    canonical choice):

    * quadratic:    h u^2 + h1 u + h0                      (canonical h = 1/2)
    * cubic:        h u^3 + h2 u^2 + h1 u + h0             (canonical h = 1/3)
    * power:        h (u + q)^p + h2 u^2 + h1 u + h0       (canonical h = 1/p)
    * exponential:  h exp(k u) + h2 u^2 + h1 u + h0        (canonical h = 1/k)
    * custom:       user callables for H, H', H'', H'''
    """

    family: str
    p: float | None = None
    k: float | None = None
    h: float | None = None
    h2: float = 0.0
    h1: float = 0.0
    h0: float = 0.0
    q: float = 0.0
    custom: tuple[Callable, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        fam = self.family
        if fam not in H_FAMILIES:
            raise ValueError(f"unknown Hamiltonian family {fam!r}")
        if fam == "power":
            if self.p is None or self.p in (0, 1, 2, 3):
                raise ValueError(f"power family needs p not in {{0,1,2,3}}, got {self.p}")
        if fam == "exponential" and not self.k:
            raise ValueError("exponential family needs k != 0")
        if fam == "quadratic" and (self.h2 != 0.0 or self.q != 0.0):
            raise ValueError("quadratic family takes only h, h1, h0")
        if fam in ("cubic", "exponential") and self.q != 0.0:
            raise ValueError(f"{fam} family has no shift q")
        if fam == "custom":
            if self.custom is None or len(self.custom) != 4:
                raise ValueError("custom family needs callables for H, H', H'', H'''")
        elif self.leading == 0:
            raise ValueError("leading coefficient must be nonzero")

    # convenience constructors for canonical members
    @classmethod
    def quadratic(cls) -> HamiltonianSpec:
        return cls("quadratic")

    @classmethod
    def cubic(cls) -> HamiltonianSpec:
        return cls("cubic")

    @classmethod
    def power(cls, p: float, h2: float = 0.0) -> HamiltonianSpec:
        return cls("power", p=p, h2=h2)

    @classmethod
    def exponential(cls, k: float, h2: float = 0.0) -> HamiltonianSpec:
        return cls("exponential", k=k, h2=h2)

    @classmethod
    def from_callables(cls, H, dH, d2H, d3H) -> HamiltonianSpec:
        return cls("custom", custom=(H, dH, d2H, d3H))

    @property
    def exponent(self) -> float | None:
        return {"quadratic": 2.0, "cubic": 3.0, "power": self.p}.get(self.family)

    @property
    def leading(self) -> float:
        if self.h is not None:
            return self.h
        if self.family == "exponential":
            return 1.0 / self.k
        if self.family == "custom":
            return float("nan")
        return 1.0 / self.exponent

    @property
    def is_canonical(self) -> bool:
        fam = self.family
        if fam == "custom":
            return True
        close = math.isclose
        if fam == "exponential":
            return close(self.leading, 1 / self.k) and self.h1 == 0 and self.h0 == 0
        ok = close(self.leading, 1 / self.exponent) and self.h1 == 0 and self.h0 == 0
        if fam == "power":
            return ok and self.q == 0
        return ok and self.h2 == 0

    @property
    def real_branch_only(self) -> bool:
        """Non-integer powers are evaluated only where u_x + q > 0."""
        return self.family == "power" and not _is_integer(self.p)

    def to_dict(self) -> dict:
        d = {"family": self.family}
        for key in ("p", "k", "h"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        for key in ("h2", "h1", "h0", "q"):
            if getattr(self, key) != 0.0:
                d[key] = getattr(self, key)
        return d

    def probe_points(self, n: int = 8) -> np.ndarray:
        if self.real_branch_only:
            return np.linspace(0.2, 3.0, n) - self.q
        pts = np.linspace(-2.0, 2.0, n) + 0.137
        return pts - self.q


def eval_hamiltonian(spec: HamiltonianSpec, p_arg, order: int = 0):
    """H^(order)(p_arg) for order in 0..3; vectorized over ``p_arg``."""
    if order not in (0, 1, 2, 3):
        raise ValueError(f"unsupported derivative order {order}")
    if spec.family == "custom":
        return spec.custom[order](p_arg)
    u = np.asarray(p_arg, dtype=float)
    poly = (spec.h2 * u**2 + spec.h1 * u + spec.h0, 2 * spec.h2 * u + spec.h1,
            2 * spec.h2 + 0 * u, 0 * u)[order]
    h = spec.leading
    with np.errstate(over="ignore", invalid="ignore"):
        if spec.family == "exponential":
            lead = h * spec.k**order * np.exp(spec.k * u)
        else:
            p = spec.exponent
            s = u + spec.q
            if spec.real_branch_only and np.any(s <= 0):
                raise DomainError(f"non-integer power p={p} needs u_x + q > 0")
            if p < 0 and np.any(s == 0):
                raise DomainError("negative power evaluated at zero")
            coef = _falling(p, order)
            lead = h * coef * s ** (p - order) if coef != 0 else 0 * u
    out = lead + poly
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class CouplingSpec:
    """Coupling f(m): alpha ln m, alpha m^gamma, or a sampled table (m_i, f_i).

    ``interpolation`` selects the table interpolant ("cubic" or "pchip").
    For tables the primitive is the interpolant's antiderivative from the
    first knot, which therefore plays the role of the density floor.
    """

    family: str
    alpha: float = 1.0
    gamma: float | None = None
    m_min: float = DEFAULT_M_MIN
    table: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    interpolation: str = "cubic"

    def __post_init__(self):
        if self.family not in F_FAMILIES:
            raise ValueError(f"unknown coupling family {self.family!r}")
        if self.family in ("log", "power") and self.alpha == 0:
            raise ValueError("alpha must be nonzero")
        if self.family == "power" and (self.gamma is None or self.gamma == 0):
            raise ValueError("power coupling needs gamma != 0")
        if self.family == "log" and not self.m_min > 0:
            raise ValueError("log coupling needs a positive density floor m_min")
        if self.family == "table":
            if self.table is None:
                raise ValueError("table coupling needs (m, f) samples")
            ms = np.asarray(self.table[0], float)
            if len(ms) < 4 or np.any(np.diff(ms) <= 0):
                raise ValueError("table densities must be strictly increasing (>= 4 knots)")
            if self.interpolation not in ("cubic", "pchip"):
                raise ValueError(f"unknown interpolation {self.interpolation!r}")

    @classmethod
    def log(cls, alpha: float = 1.0, m_min: float = DEFAULT_M_MIN) -> CouplingSpec:
        return cls("log", alpha=alpha, m_min=m_min)

    @classmethod
    def power(cls, alpha: float, gamma: float, m_min: float = DEFAULT_M_MIN) -> CouplingSpec:
        return cls("power", alpha=alpha, gamma=gamma, m_min=m_min)

    @classmethod
    def from_function(cls, fn: Callable, m_lo: float, m_hi: float, n: int = 200,
                      interpolation: str = "cubic") -> CouplingSpec:
        ms = np.linspace(m_lo, m_hi, n)
        return cls("table", table=(tuple(ms), tuple(float(fn(v)) for v in ms)),
                   interpolation=interpolation, m_min=m_lo)

    @property
    def has_floor(self) -> bool:
        return self.family == "log" or (self.family == "power" and self.gamma <= 0)

    @cached_property
    def _interp(self):
        ms, fs = (np.asarray(a, float) for a in self.table)
        if self.interpolation == "pchip":
            return PchipInterpolator(ms, fs, extrapolate=False)
        return CubicSpline(ms, fs, extrapolate=False)

    @cached_property
    def _antiderivative(self):
        return self._interp.antiderivative()

    def to_dict(self) -> dict:
        d = {"family": self.family}
        if self.family != "table":
            d["alpha"] = self.alpha
        if self.gamma is not None:
            d["gamma"] = self.gamma
        return d

    def probe_points(self, n: int = 8) -> np.ndarray:
        if self.family == "table":
            ms = self.table[0]
            return np.linspace(ms[0], ms[-1], n + 2)[1:-1]
        return np.linspace(0.1, 3.0, n)


def _check_density(spec: CouplingSpec, m: np.ndarray) -> None:
    if spec.has_floor and np.any(m < spec.m_min):
        raise DensityFloorError(f"density below floor m_min={spec.m_min} for {spec.family} coupling")
    if np.any(m < 0):
        raise DomainError("negative density")
    if spec.family == "table":
        lo, hi = spec.table[0][0], spec.table[0][-1]
        if np.any(m < lo) or np.any(m > hi):
            raise DomainError(f"density outside table range [{lo}, {hi}]")


def _scalar(out):
    return float(out) if np.ndim(out) == 0 else out


def eval_coupling(spec: CouplingSpec, m):
    m = np.asarray(m, dtype=float)
    _check_density(spec, m)
    if spec.family == "log":
        return _scalar(spec.alpha * np.log(m))
    if spec.family == "power":
        return _scalar(spec.alpha * m**spec.gamma)
    return _scalar(spec._interp(m))


def eval_coupling_derivative(spec: CouplingSpec, m):
    """f'(m); for 0 < gamma < 1 the singular derivative is evaluated at max(m, m_min)."""
    m = np.asarray(m, dtype=float)
    _check_density(spec, m)
    if spec.family == "log":
        return _scalar(spec.alpha / m)
    if spec.family == "power":
        g = spec.gamma
        base = np.maximum(m, spec.m_min) if g < 1 else m
        return _scalar(spec.alpha * g * base ** (g - 1))
    return _scalar(spec._interp(m, 1))


def eval_coupling_primitive(spec: CouplingSpec, m):
    """F(m) with F(0) = 0 for powers and F = alpha (m ln m - m) for the logarithm."""
    m = np.asarray(m, dtype=float)
    _check_density(spec, m)
    if spec.family == "log":
        return _scalar(spec.alpha * (m * np.log(m) - m))
    if spec.family == "power":
        g = spec.gamma
        if g == -1:
            return _scalar(spec.alpha * np.log(m))
        return _scalar(spec.alpha / (g + 1) * m ** (g + 1))
    return _scalar(spec._antiderivative(m))


def gamma_star(p: float) -> float:
    """Coupling exponent p / (2p - 3) at which the power scaling symmetry is variational."""
    if 2 * p - 3 == 0:
        raise SingularExponentError("gamma_star is singular at p = 3/2")
    return p / (2 * p - 3)


@dataclass(frozen=True)
class ProblemSpec:
    hamiltonian: HamiltonianSpec
    coupling: CouplingSpec
    epsilon: float
    horizon: float = 1.0
    terminal_cost: Callable | None = field(default=None, compare=False)
    initial_density: Callable | None = field(default=None, compare=False)
    terminal_density_dependent: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive (second-order system)")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        h2 = eval_hamiltonian(self.hamiltonian, self.hamiltonian.probe_points(), 2)
        if np.all(np.asarray(h2) == 0):
            raise ValueError("H'' vanishes on the probe set: equations decouple")
        df = eval_coupling_derivative(self.coupling, self.coupling.probe_points())
        if np.all(np.asarray(df) == 0):
            raise ValueError("f' vanishes on the probe set: equations decouple")

    def H(self, p, order: int = 0):
        return eval_hamiltonian(self.hamiltonian, p, order)

    def f(self, m):
        return eval_coupling(self.coupling, m)

    def df(self, m):
        return eval_coupling_derivative(self.coupling, m)

    def F(self, m):
        return eval_coupling_primitive(self.coupling, m)

    def G(self, x, m_terminal=None):
        if self.terminal_cost is None:
            return np.zeros_like(np.asarray(x, float))
        if self.terminal_density_dependent:
            return np.asarray(self.terminal_cost(x, m_terminal), float)
        return np.asarray(self.terminal_cost(x), float)


# -- equivalence transformations ---------------------------------------------


@dataclass(frozen=True)
class TransformRecord:
    """Composition of the four equivalence steps, applied in order.

    1. u -> u + A x                     H(p) -> H(p - A)
    2. u -> u + B t                     H(p) -> H(p) + B
    3. x -> x + drift t                 H(p) -> H(p) - drift p
    4. (t,x,u,m) -> (C1 t, C2 x, C3 u, C4 m), C1 = C2^2
                                        H(p) -> (C3/C1) H((C2/C3) p)

    Scalings keep eps and the normalization: C1 = C2^2, |C2 C4| = 1, C4 > 0.
    A reflection C2 = -1 is needed when the leading sign cannot be fixed otherwise.
    """

    A: float = 0.0
    B: float = 0.0
    drift: float = 0.0
    C1: float = 1.0
    C2: float = 1.0
    C3: float = 1.0
    C4: float = 1.0

    def __post_init__(self):
        if self.C1 * self.C2 * self.C3 * self.C4 == 0:
            raise ValueError("scalings must be nonzero")
        if not math.isclose(abs(self.C2 * self.C4), 1.0, rel_tol=1e-12):
            raise ValueError("|C2 C4| = 1 is required to preserve normalization")
        if self.C4 <= 0:
            raise ValueError("C4 must be positive to keep densities nonnegative")
        if not math.isclose(self.C1, self.C2**2, rel_tol=1e-12):
            raise ValueError("C1 = C2^2 is required to keep epsilon fixed")

    @property
    def is_identity(self) -> bool:
        return (self.A, self.B, self.drift, self.C1, self.C2, self.C3, self.C4) == (
            0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("A", "B", "drift", "C1", "C2", "C3", "C4")}


def apply_record(raw: HamiltonianSpec, record: TransformRecord, p_bar):
    """Transformed Hamiltonian value at p_bar obtained by running the record's steps on ``raw``."""
    r = record
    p3 = (r.C2 / r.C3) * np.asarray(p_bar, float)
    h3 = eval_hamiltonian(raw, p3 - r.A) + r.B - r.drift * p3
    return (r.C3 / r.C1) * h3


def invert_record(canonical: HamiltonianSpec, record: TransformRecord, p_raw):
    """Raw Hamiltonian reconstructed from the canonical one by undoing the record."""
    r = record
    p1 = np.asarray(p_raw, float) + r.A
    h3 = (r.C1 / r.C3) * eval_hamiltonian(canonical, (r.C3 / r.C2) * p1)
    return h3 + r.drift * p1 - r.B


def induced_coupling(coupling: CouplingSpec, record: TransformRecord) -> CouplingSpec:
    """Coupling seen by the transformed system: f(m) -> (C3/C1) f(m/C4).

    The normalizer itself never rescales alpha; this helper reports what the
    scaling step does to the coupling so callers can decide.
    """
    c = record.C3 / record.C1
    if coupling.family == "log":
        if record.C4 != 1.0:
            raise ValueError("log coupling with C4 != 1 shifts f by a constant")
        return CouplingSpec("log", alpha=c * coupling.alpha, m_min=coupling.m_min)
    if coupling.family == "power":
        return CouplingSpec("power", alpha=c * coupling.alpha * record.C4 ** (-coupling.gamma),
                            gamma=coupling.gamma, m_min=coupling.m_min)
    ms, fs = (np.asarray(a, float) for a in coupling.table)
    return CouplingSpec("table", table=(tuple(ms * record.C4), tuple(c * fs)),
                        interpolation=coupling.interpolation, m_min=coupling.m_min * record.C4)


def _shifted_quadratic(h2, h1, h0, A):
    """Coefficients of h2 (p-A)^2 + h1 (p-A) + h0 as (quadratic, linear, constant)."""
    return h2, h1 - 2 * h2 * A, h2 * A * A - h1 * A + h0


def normalize_hamiltonian(raw: HamiltonianSpec, coupling: CouplingSpec | None = None
                          ) -> tuple[HamiltonianSpec, TransformRecord]:
    """Bring a general-form Hamiltonian to its canonical representative.

    ``coupling`` is accepted for interface symmetry only; see
    :func:`induced_coupling` for the effect of the record on f.
    """
    fam = raw.family
    if fam == "custom" or raw.is_canonical:
        return raw, TransformRecord()
    h = raw.leading
    if fam == "quadratic":
        rec = TransformRecord(B=-raw.h0, drift=raw.h1, C3=2 * h)
        return HamiltonianSpec.quadratic(), rec
    if fam == "cubic":
        A = raw.h2 / (3 * h)
        lin = 3 * h * A * A - 2 * raw.h2 * A + raw.h1
        const = -h * A**3 + raw.h2 * A * A - raw.h1 * A + raw.h0
        C2 = 1.0 if h > 0 else -1.0
        rec = TransformRecord(A=A, B=-const, drift=lin, C2=C2, C3=math.sqrt(3 * abs(h)))
        return HamiltonianSpec.cubic(), rec
    if fam == "power":
        p = raw.p
        A = raw.q
        h2, lin, const = _shifted_quadratic(raw.h2, raw.h1, raw.h0, A)
        hp = h * p
        c3 = abs(hp) ** (1.0 / (p - 1))
        C2, C3 = (1.0, c3) if hp > 0 else (-1.0, -c3)
        rec = TransformRecord(A=A, B=-const, drift=lin, C2=C2, C3=C3)
        return HamiltonianSpec.power(p, h2=h2 / C3), rec
    # exponential: the shift A scales h to +-1/k, a reflection fixes the sign
    k = raw.k
    hk = h * k
    A = math.log(abs(hk)) / k
    h2, lin, const = _shifted_quadratic(raw.h2, raw.h1, raw.h0, A)
    C2 = 1.0 if hk > 0 else -1.0
    rec = TransformRecord(A=A, B=-const, drift=lin, C2=C2)
    return HamiltonianSpec.exponential(k * C2, h2=h2), rec


# -- Lagrangian ---------------------------------------------------------------


def lagrangian_partials(jet: JetPoint, spec: ProblemSpec) -> dict:
    """Partial derivatives of L with respect to its jet arguments."""
    H1 = spec.H(jet.u_x, 1)
    return {
        "m": -jet.u_t + spec.H(jet.u_x) - spec.f(jet.m),
        "u_t": -jet.m,
        "m_t": 0.0,
        "u_x": spec.epsilon * jet.m_x + jet.m * H1,
        "m_x": spec.epsilon * jet.u_x,
    }


def eval_lagrangian(jet: JetPoint, spec: ProblemSpec):
    eps = spec.epsilon
    return -jet.m * jet.u_t + eps * jet.m_x * jet.u_x + jet.m * spec.H(jet.u_x) - spec.F(jet.m)


def euler_lagrange_residuals(jet: JetPoint, spec: ProblemSpec):
    """(dL/du, dL/dm) built from total derivatives of the Lagrangian partials.

    L has no explicit u, and dL/dm_t = 0, so
        dL/du = -D_t(-m) - D_x(eps m_x + m H'(u_x))
        dL/dm = dL/dm - D_x(eps u_x)
    """
    eps = spec.epsilon
    H1, H2 = spec.H(jet.u_x, 1), spec.H(jet.u_x, 2)
    part = lagrangian_partials(jet, spec)
    dt_dLdut = -jet.m_t
    dx_dLdux = eps * jet.m_xx + jet.m_x * H1 + jet.m * H2 * jet.u_xx
    dx_dLdmx = eps * jet.u_xx
    return 0.0 - dt_dLdut - dx_dLdux, part["m"] - dx_dLdmx


def mfg_residuals(jet: JetPoint, spec: ProblemSpec):
    """(F1, F2) evaluated directly from the PDE formulas."""
    eps, ux = spec.epsilon, jet.u_x
    F1 = -jet.u_t - eps * jet.u_xx + spec.H(ux) - spec.f(jet.m)
    F2 = (jet.m_t - eps * jet.m_xx - jet.m_x * spec.H(ux, 1)
          - jet.m * spec.H(ux, 2) * jet.u_xx)
    return F1, F2
