import numpy as np
import pytest
import sympy as sp
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.integrate import quad

from mfgnoether.errors import DensityFloorError, DomainError, SingularExponentError
from mfgnoether.grid import JetPoint
from mfgnoether.model import (CouplingSpec, HamiltonianSpec, ProblemSpec, TransformRecord,
                              apply_record, eval_coupling, eval_coupling_derivative,
                              eval_coupling_primitive, eval_hamiltonian, eval_lagrangian,
                              euler_lagrange_residuals, gamma_star, induced_coupling,
                              invert_record, lagrangian_partials, mfg_residuals,
                              normalize_hamiltonian)
from oracles import MJ, UJ, variational_derivative

P = sp.Symbol("p", real=True)


def _sympy_hamiltonian(spec: HamiltonianSpec) -> sp.Expr:
    h = sp.Float(spec.leading)
    poly = spec.h2 * P**2 + spec.h1 * P + spec.h0
    if spec.family == "exponential":
        return h * sp.exp(spec.k * P) + poly
    return h * (P + spec.q) ** sp.nsimplify(spec.exponent) + poly


HAMILTONIANS = [
    HamiltonianSpec.quadratic(),
    HamiltonianSpec("quadratic", h=0.7, h1=-0.3, h0=1.1),
    HamiltonianSpec.cubic(),
    HamiltonianSpec("cubic", h=-0.4, h2=0.5, h1=0.2, h0=-1.0),
    HamiltonianSpec.power(4),
    HamiltonianSpec("power", p=2.5, h=1.3, q=0.4, h2=0.1, h1=0.2, h0=0.3),
    HamiltonianSpec("power", p=-1, h=-0.5, h1=0.7),
    HamiltonianSpec.exponential(1.5),
    HamiltonianSpec("exponential", k=-0.8, h=2.0, h2=0.3, h1=0.1, h0=0.4),
]


@pytest.mark.parametrize("ham", HAMILTONIANS, ids=lambda h: f"{h.family}-{h.p or h.k}")
def test_hamiltonian_derivatives_match_sympy(ham):
    expr = _sympy_hamiltonian(ham)
    pts = np.linspace(0.3, 1.7, 9) if ham.family == "power" else np.linspace(-1.5, 1.5, 9)
    for order in range(4):
        ref = sp.lambdify(P, sp.diff(expr, P, order), "numpy")(pts)
        assert np.allclose(eval_hamiltonian(ham, pts, order), ref, rtol=1e-12, atol=1e-12)


def test_hamiltonian_validation_and_domain():
    with pytest.raises(ValueError):
        HamiltonianSpec.power(2)
    with pytest.raises(ValueError):
        HamiltonianSpec("exponential", k=0.0)
    with pytest.raises(ValueError):
        HamiltonianSpec("quadratic", h=0.0)
    with pytest.raises(ValueError):
        HamiltonianSpec("quadratic", h2=1.0)
    with pytest.raises(DomainError):
        eval_hamiltonian(HamiltonianSpec.power(2.5), -0.1)
    with pytest.raises(DomainError):
        eval_hamiltonian(HamiltonianSpec.power(-1), 0.0)
    with pytest.raises(ValueError):
        eval_hamiltonian(HamiltonianSpec.quadratic(), 1.0, 4)
    assert eval_hamiltonian(HamiltonianSpec.quadratic(), 2.0) == 2.0


def test_custom_hamiltonian_uses_callables():
    ham = HamiltonianSpec.from_callables(np.cosh, np.sinh, np.cosh, np.sinh)
    assert eval_hamiltonian(ham, 0.5, 2) == pytest.approx(np.cosh(0.5))
    assert ham.is_canonical


@pytest.mark.parametrize("cpl", [
    CouplingSpec.log(0.7), CouplingSpec.power(1.3, 2.0), CouplingSpec.power(0.5, 0.5),
    CouplingSpec.power(2.0, -1.0), CouplingSpec.power(1.0, -0.5),
])
def test_coupling_derivative_and_primitive(cpl):
    ms = np.linspace(0.2, 3.0, 7)
    h = 1e-6
    fd = (eval_coupling(cpl, ms + h) - eval_coupling(cpl, ms - h)) / (2 * h)
    assert np.allclose(eval_coupling_derivative(cpl, ms), fd, rtol=1e-7)
    for a, b in zip(ms, ms[1:]):
        integral, _ = quad(lambda s: eval_coupling(cpl, s), a, b)
        diff = eval_coupling_primitive(cpl, b) - eval_coupling_primitive(cpl, a)
        assert diff == pytest.approx(integral, rel=1e-10)


def test_table_coupling_matches_sampled_function():
    cpl = CouplingSpec.from_function(lambda m: m**2, 0.1, 3.0, n=60)
    ms = np.linspace(0.2, 2.9, 11)
    assert np.allclose(eval_coupling(cpl, ms), ms**2, atol=1e-10)
    assert np.allclose(eval_coupling_derivative(cpl, ms), 2 * ms, atol=1e-6)
    assert np.allclose(eval_coupling_primitive(cpl, ms), (ms**3 - 0.1**3) / 3, atol=1e-8)
    with pytest.raises(DomainError):
        eval_coupling(cpl, 3.5)
    pchip = CouplingSpec.from_function(np.sqrt, 0.1, 3.0, interpolation="pchip")
    assert eval_coupling(pchip, 1.0) == pytest.approx(1.0, abs=1e-4)


def test_coupling_floors_and_validation():
    with pytest.raises(DensityFloorError):
        eval_coupling(CouplingSpec.log(), 0.0)
    with pytest.raises(DomainError):
        eval_coupling(CouplingSpec.power(1.0, 2.0), -1.0)
    with pytest.raises(ValueError):
        CouplingSpec.power(0.0, 2.0)
    with pytest.raises(ValueError):
        CouplingSpec("power", alpha=1.0)
    with pytest.raises(ValueError):
        CouplingSpec("table", table=((1.0, 0.5, 2.0, 3.0), (1, 2, 3, 4)))
    # sublinear powers keep a finite derivative at the floor
    assert np.isfinite(eval_coupling_derivative(CouplingSpec.power(1.0, 0.5), 0.0))


def test_gamma_star():
    assert gamma_star(4) == pytest.approx(0.8)
    assert gamma_star(-1) == pytest.approx(0.2)
    assert gamma_star(2) == pytest.approx(2.0)
    with pytest.raises(SingularExponentError):
        gamma_star(1.5)


def test_problem_spec_rejects_decoupled_systems():
    with pytest.raises(ValueError):
        ProblemSpec(HamiltonianSpec.quadratic(), CouplingSpec.log(), 0.0)
    linear = HamiltonianSpec.from_callables(lambda p: p, lambda p: 1 + 0 * p,
                                            lambda p: 0 * p, lambda p: 0 * p)
    with pytest.raises(ValueError):
        ProblemSpec(linear, CouplingSpec.log(), 0.3)
    flat = CouplingSpec.from_function(lambda m: 1.0, 0.1, 2.0, n=10)
    with pytest.raises(ValueError):
        ProblemSpec(HamiltonianSpec.quadratic(), flat, 0.3)


def test_terminal_cost_variants():
    x = np.linspace(0, 1, 5)
    spec = ProblemSpec(HamiltonianSpec.quadratic(), CouplingSpec.log(), 0.3)
    assert np.array_equal(spec.G(x), np.zeros(5))
    spec = ProblemSpec(HamiltonianSpec.quadratic(), CouplingSpec.log(), 0.3,
                       terminal_cost=lambda x, m: x * m, terminal_density_dependent=True)
    assert np.allclose(spec.G(x, 2.0), 2 * x)


# -- normalization ----------------------------------------------------------------------

def _random_general(draw_family, rng):
    h = rng.choice([-1, 1]) * rng.uniform(0.2, 3.0)
    h1, h0 = rng.uniform(-2, 2, 2)
    if draw_family == "quadratic":
        return HamiltonianSpec("quadratic", h=h, h1=h1, h0=h0)
    h2 = rng.uniform(-2, 2)
    if draw_family == "cubic":
        return HamiltonianSpec("cubic", h=h, h2=h2, h1=h1, h0=h0)
    if draw_family == "power":
        p = float(rng.choice([4.0, 5.0, -1.0, 2.5]))
        return HamiltonianSpec("power", p=p, h=h, q=rng.uniform(-1, 1), h2=h2, h1=h1, h0=h0)
    return HamiltonianSpec("exponential", k=rng.choice([-1, 1]) * rng.uniform(0.3, 2.0),
                           h=h, h2=h2, h1=h1, h0=h0)


def _test_points(canonical):
    if canonical.real_branch_only:
        return np.linspace(0.3, 2.0, 7)
    if canonical.family == "power" and canonical.p < 0:
        return np.concatenate([np.linspace(-2, -0.3, 4), np.linspace(0.3, 2, 4)])
    return np.linspace(-1.5, 1.5, 7)


NORMALIZE_SEEDS = {"quadratic": 11, "cubic": 12, "power": 13, "exponential": 14}


@pytest.mark.parametrize("family", list(NORMALIZE_SEEDS))
def test_normalization_reproduces_canonical_form(family):
    rng = np.random.default_rng(NORMALIZE_SEEDS[family])
    for _ in range(20):
        raw = _random_general(family, rng)
        canonical, rec = normalize_hamiltonian(raw)
        assert canonical.is_canonical
        pts = _test_points(canonical)
        ref = eval_hamiltonian(canonical, pts)
        assert np.allclose(apply_record(raw, rec, pts), ref, rtol=1e-10, atol=1e-10)
        raw_pts = (rec.C3 / rec.C2) * pts - rec.A
        assert np.allclose(invert_record(canonical, rec, raw_pts),
                           eval_hamiltonian(raw, raw_pts), rtol=1e-10, atol=1e-10)
        again, rec2 = normalize_hamiltonian(canonical)
        assert again == canonical and rec2.is_identity


def test_normalization_records_translation_shift():
    canonical, rec = normalize_hamiltonian(HamiltonianSpec("power", p=4, h=2, q=1, h1=3, h0=-1))
    assert canonical == HamiltonianSpec.power(4)
    assert rec.A == 1 and rec.drift == 3 and rec.B == pytest.approx(4.0)
    assert rec.C3 == pytest.approx(2.0)


def test_transform_record_constraints():
    with pytest.raises(ValueError):
        TransformRecord(C1=2.0)
    with pytest.raises(ValueError):
        TransformRecord(C2=2.0, C1=4.0)
    with pytest.raises(ValueError):
        TransformRecord(C2=-1.0, C4=-1.0)
    assert TransformRecord(C2=-1.0).C4 == 1.0


def test_induced_coupling_scales_alpha():
    rec = TransformRecord(C3=2.0)
    assert induced_coupling(CouplingSpec.power(1.5, 2.0), rec).alpha == pytest.approx(3.0)
    assert induced_coupling(CouplingSpec.log(1.0), rec).alpha == pytest.approx(2.0)


# -- Lagrangian ---------------------------------------------------------------------------

def _jet_strategy():
    fl = st.floats(-2, 2)
    return st.builds(JetPoint, t=fl, x=fl, u=fl, m=st.floats(0.1, 3.0), u_t=fl, m_t=fl,
                     u_x=st.floats(0.1, 2.0), m_x=fl, u_tx=fl, m_tx=fl, u_xx=fl, m_xx=fl)


SPECS = [
    ProblemSpec(HamiltonianSpec.quadratic(), CouplingSpec.power(1.3, 2.0), 0.3),
    ProblemSpec(HamiltonianSpec.power(2.5), CouplingSpec.log(0.7), 0.5),
    ProblemSpec(HamiltonianSpec.exponential(1.2, h2=0.4), CouplingSpec.power(1.0, 0.5), 0.2),
]


@pytest.mark.parametrize("spec", SPECS, ids=["quadratic", "power", "exponential"])
@given(jet=_jet_strategy())
def test_euler_lagrange_expressions_are_the_pde_residuals(spec, jet):
    F1, F2 = mfg_residuals(jet, spec)
    dLdu, dLdm = euler_lagrange_residuals(jet, spec)
    assert dLdu == pytest.approx(F2, abs=1e-10)
    assert dLdm == pytest.approx(F1, abs=1e-10)


def test_euler_lagrange_matches_symbolic_euler_operator():
    eps, alpha = sp.Rational(3, 10), sp.Rational(13, 10)
    ut, ux, mx, m = UJ[(1, 0)], UJ[(0, 1)], MJ[(0, 1)], MJ[(0, 0)]
    L = -m * ut + eps * mx * ux + m * ux**2 / 2 - alpha * m**3 / 3
    dLdu = sp.lambdify(list(UJ.values()) + list(MJ.values()), variational_derivative(L, "u"))
    dLdm = sp.lambdify(list(UJ.values()) + list(MJ.values()), variational_derivative(L, "m"))
    rng = np.random.default_rng(3)
    spec = SPECS[0]
    for _ in range(20):
        vals_u = dict(zip(UJ, rng.uniform(-2, 2, len(UJ))))
        vals_m = dict(zip(MJ, rng.uniform(0.2, 2, len(MJ))))
        jet = JetPoint(t=0.0, x=0.0, u=vals_u[(0, 0)], m=vals_m[(0, 0)],
                       u_t=vals_u[(1, 0)], m_t=vals_m[(1, 0)], u_x=vals_u[(0, 1)],
                       m_x=vals_m[(0, 1)], u_tx=vals_u[(1, 1)], m_tx=vals_m[(1, 1)],
                       u_xx=vals_u[(0, 2)], m_xx=vals_m[(0, 2)])
        args = list(vals_u.values()) + list(vals_m.values())
        el_u, el_m = euler_lagrange_residuals(jet, spec)
        assert el_u == pytest.approx(float(dLdu(*args)), abs=1e-12)
        assert el_m == pytest.approx(float(dLdm(*args)), abs=1e-12)


def test_lagrangian_partials_match_finite_differences():
    spec = SPECS[1]
    jet = JetPoint(t=0.1, x=0.2, u=0.3, m=1.2, u_t=0.4, u_x=0.9, m_x=-0.5)
    parts = lagrangian_partials(jet, spec)
    h = 1e-6
    for name in ("m", "u_t", "u_x", "m_x"):
        v = getattr(jet, name)
        fd = (eval_lagrangian(jet.replace(**{name: v + h}), spec)
              - eval_lagrangian(jet.replace(**{name: v - h}), spec)) / (2 * h)
        assert parts[name] == pytest.approx(fd, rel=1e-7)


@given(p=st.floats(-3, 6).filter(lambda v: abs(2 * v - 3) > 1e-3))
def test_gamma_star_solves_scaling_balance(p):
    # weights of H and f under the power scaling balance exactly at gamma*
    g = gamma_star(p)
    assume(abs(g) < 1e6)
    assert g * (2 * p - 3) == pytest.approx(p, rel=1e-9, abs=1e-9)
