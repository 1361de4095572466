import json

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from mfgnoether.errors import FlowDomainError, NotCanonicalError
from mfgnoether.grid import AnalyticField, Field2D, GridSpec, JetPoint
from mfgnoether.model import CouplingSpec, HamiltonianSpec, ProblemSpec, gamma_star
from mfgnoether.solver import SolutionPair, pde_residuals, solve_picard
from mfgnoether.symmetry import (M, PASS_TOL, WITNESS_TOL, CoefficientValues, FlowRequest,
                                 Generator, T, U, X, X1, X2, X3, X4a, X4b, X5c, X_f, Xc, Y4c,
                                 catalog_generators, catalog_json, determining_residuals,
                                 determining_scales, group_flow, prolong, sample_jets,
                                 variational_defect, verify_transformed_solution)
from oracles import oracle_determining, oracle_prolongation

EPS = 0.3
P = sp.Symbol("p", real=True)


def spec_of(ham, cpl, eps=EPS):
    return ProblemSpec(ham, cpl, eps)


QUAD_M2 = spec_of(HamiltonianSpec.quadratic(), CouplingSpec.power(1.3, 2.0))

ALL_GENERATORS = [X1(), X2(), X3(), X_f(0.7), X4a(4, 3.0), X4a(-1, 0.2), X4b(1.5, 0.6),
                  Xc(), Y4c(), X5c(EPS)]


# -- generators ---------------------------------------------------------------------------

@pytest.mark.parametrize("g", ALL_GENERATORS, ids=lambda g: g.name)
def test_coefficient_partials_match_finite_differences(g, rng):
    pts = [rng.uniform(-2, 2, 100), rng.uniform(-2, 2, 100), rng.uniform(-2, 2, 100),
           rng.uniform(0.1, 3, 100)]
    h = 1e-6
    for c in g.coefficients:
        vals = CoefficientValues(c, *pts)
        for k, name in enumerate("txum"):
            up = [p + (h if j == k else 0) for j, p in enumerate(pts)]
            dn = [p - (h if j == k else 0) for j, p in enumerate(pts)]
            fd = (CoefficientValues(c, *up).value - CoefficientValues(c, *dn).value) / (2 * h)
            assert np.allclose(vals.d[name], fd, rtol=1e-6, atol=1e-7)


def test_generator_rejects_unbound_parameters():
    with pytest.raises(ValueError):
        Generator("bad", sp.Symbol("a") * T, 0, 0, 0)


def test_generator_linear_combination():
    g = 2.0 * X1() + Xc()
    assert sp.simplify(g.xi_t - 2) == 0 and g.xi_x == T and g.eta_u == -X


# -- prolongation -------------------------------------------------------------------------

def test_time_translation_prolongs_to_zero(rng):
    z = prolong(X1(), sample_jets(rng, 20))
    for v in vars(z).values():
        assert np.all(v == 0)


def test_galilean_prolongation(rng):
    jet = sample_jets(rng, 20)
    z = prolong(Xc(), jet)
    assert np.allclose(z.zeta_u_t, -jet.u_x)
    assert np.allclose(z.zeta_u_x, -1.0)
    assert np.allclose(z.zeta_u_xx, 0.0)
    assert np.allclose(z.zeta_m_t, -jet.m_x)


def test_projective_prolongation_at_t_zero(rng):
    jet = sample_jets(rng, 20).replace(t=0.0)
    assert np.allclose(prolong(X5c(EPS), jet).zeta_u_x, -jet.x)


@pytest.mark.parametrize("g", ALL_GENERATORS, ids=lambda g: g.name)
@given(seed=st.integers(0, 2**32 - 1))
def test_prolongation_matches_characteristic_oracle(g, seed):
    jet = sample_jets(np.random.default_rng(seed), 16)
    z = prolong(g, jet)
    ref = oracle_prolongation(g, jet)
    for name, val in ref.items():
        assert np.allclose(getattr(z, name), val, rtol=1e-12, atol=1e-12)


@given(seed=st.integers(0, 2**32 - 1), c=st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_prolongation_is_linear(seed, c):
    gens = [Xc(), Y4c(), X5c(EPS), X4b(1.5, 0.6)]
    combo = c[0] * gens[0] + c[1] * gens[1] + c[2] * gens[2] + c[3] * gens[3]
    jet = sample_jets(np.random.default_rng(seed), 8)
    parts = [prolong(g, jet) for g in gens]
    whole = prolong(combo, jet)
    for name in vars(whole):
        expected = sum(ci * getattr(p, name) for ci, p in zip(c, parts))
        assert np.allclose(getattr(whole, name), expected, rtol=1e-10, atol=1e-10)


# -- determining equations --------------------------------------------------------------------

ORACLE_CASES = [
    (HamiltonianSpec.quadratic(), P**2 / 2, CouplingSpec.power(1.3, 2.0),
     sp.Float(1.3) * M**2, [Xc(), Y4c(), X5c(EPS), X_f(1.0)]),
    (HamiltonianSpec.power(4), P**4 / 4, CouplingSpec.power(1.0, 3.0), M**3,
     [X4a(4, 3.0), X4a(4, 2.0)]),
    (HamiltonianSpec.exponential(1.5), sp.exp(sp.Rational(3, 2) * P) / sp.Rational(3, 2),
     CouplingSpec.log(0.5), sp.Rational(1, 2) * sp.log(M), [X_f(0.5), X4b(1.5, 0.5)]),
]


@pytest.mark.parametrize("ham,H,cpl,f,gens", ORACLE_CASES, ids=["quad", "power", "exp"])
def test_determining_residuals_match_symbolic_oracle(ham, H, cpl, f, gens, rng):
    spec = spec_of(ham, cpl)
    jet = sample_jets(rng, 200, spec)
    for g in gens:
        E = determining_residuals(g, jet, spec)
        ref = oracle_determining(g, H, f, P, jet, EPS)
        scale = 1 + max(np.abs(r).max() for r in ref)
        for a, b in zip(E, ref):
            assert np.allclose(a, b, atol=1e-11 * scale, rtol=0)


def test_determining_residuals_ignore_supplied_second_derivatives(rng):
    jet = sample_jets(rng, 10, QUAD_M2)
    a = determining_residuals(X5c(EPS), jet, QUAD_M2)
    b = determining_residuals(X5c(EPS), jet.replace(u_xx=99.0, m_xx=-7.0), QUAD_M2)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


CELLS = {
    "custom-power": (HamiltonianSpec.from_callables(np.cosh, np.sinh, np.cosh, np.sinh),
                     CouplingSpec.power(1.0, 2.0), {"X1", "X2", "X3"}),
    "custom-log": (HamiltonianSpec.from_callables(np.cosh, np.sinh, np.cosh, np.sinh),
                   CouplingSpec.log(1.0), {"X1", "X2", "X3", "X_f"}),
    "exp-log": (HamiltonianSpec.exponential(1.0), CouplingSpec.log(1.0),
                {"X1", "X2", "X3", "X_f"}),
    "quad-m2": (HamiltonianSpec.quadratic(), CouplingSpec.power(1.3, 2.0),
                {"X1", "X2", "X3", "Xc", "Y4c", "X5c"}),
    "quad-power": (HamiltonianSpec.quadratic(), CouplingSpec.power(1.0, 3.0),
                   {"X1", "X2", "X3", "Xc", "X4a"}),
    "power-h2": (HamiltonianSpec.power(4, h2=0.5), CouplingSpec.power(1.0, 2.0),
                 {"X1", "X2", "X3"}),
}


@pytest.mark.parametrize("cell", list(CELLS))
def test_catalog_cells(cell, rng):
    ham, cpl, expected = CELLS[cell]
    spec = spec_of(ham, cpl)
    gens = catalog_generators(spec)
    assert {g.name for g in gens} == expected
    if ham.family == "custom":
        return
    jet = sample_jets(rng, 300, spec)
    for g in gens:
        assert max(np.abs(e).max() for e in determining_residuals(g, jet, spec)) <= PASS_TOL


def test_catalog_rejects_non_canonical():
    with pytest.raises(NotCanonicalError):
        catalog_generators(spec_of(HamiltonianSpec("quadratic", h=2.0), CouplingSpec.log()))


def test_negative_power_scaling_holds_relative_to_term_size(rng):
    spec = spec_of(HamiltonianSpec.power(-1), CouplingSpec.power(1.0, 0.2))
    jet = sample_jets(rng, 1000, spec)
    g = X4a(-1, 0.2)
    for e, s in zip(determining_residuals(g, jet, spec), determining_scales(g, jet, spec)):
        assert np.all(np.abs(e) <= PASS_TOL * np.maximum(s, 1.0))


def test_log_scaling_fails_for_power_coupling(rng):
    jet = sample_jets(rng, 100, QUAD_M2)
    E1, _ = determining_residuals(X_f(1.0), jet, QUAD_M2)
    assert np.abs(E1).max() > WITNESS_TOL


def test_power_scaling_fails_with_quadratic_perturbation(rng):
    spec = spec_of(HamiltonianSpec.power(4, h2=0.5), CouplingSpec.power(1.0, 3.0))
    jet = sample_jets(rng, 100, spec)
    E1, E2 = determining_residuals(X4a(4, 3.0), jet, spec)
    assert (np.abs(E1) + np.abs(E2)).max() > WITNESS_TOL


# -- variational classification ------------------------------------------------------------

def test_variational_defect_examples(rng):
    jet = sample_jets(rng, 1000, QUAD_M2)
    assert np.all(variational_defect(X3(), 0, 0, jet, QUAD_M2) == 0)
    for gam in (2.0, 0.7, 3.5):
        spec = spec_of(HamiltonianSpec.quadratic(), CouplingSpec.power(1.0, gam))
        d = variational_defect(Xc(), 0, -EPS * M, jet, spec)
        assert np.abs(d).max() <= PASS_TOL
    log_spec = spec_of(HamiltonianSpec.quadratic(), CouplingSpec.log(1.0))
    assert np.abs(variational_defect(X_f(1.0), 0, 0, jet, log_spec)).max() > WITNESS_TOL


@pytest.mark.parametrize("p", [4, 5, -1])
def test_power_scaling_variational_exactly_at_gamma_star(p, rng):
    for gam, zero in ((gamma_star(p), True), (gamma_star(p) + 0.1, False)):
        spec = spec_of(HamiltonianSpec.power(p), CouplingSpec.power(1.0, gam))
        d = np.abs(variational_defect(X4a(p, gam), 0, 0, sample_jets(rng, 1000, spec), spec))
        assert (d.max() <= PASS_TOL) if zero else (d.max() > WITNESS_TOL)


# -- flows ----------------------------------------------------------------------------------

FLOW_GENERATORS = [X1(), X2(), X3(), X_f(0.7), Xc(), Y4c(), X5c(EPS), X4a(4, 3.0),
                   X4a(-1, 0.2), X4b(1.5, 0.6)]


def _points(rng, n=50):
    return (rng.uniform(-1, 1, n), rng.uniform(-2, 2, n), rng.uniform(-2, 2, n),
            rng.uniform(0.1, 3, n))


@pytest.mark.parametrize("g", FLOW_GENERATORS, ids=lambda g: g.name)
@given(a=st.floats(-0.3, 0.3), b=st.floats(-0.3, 0.3), seed=st.integers(0, 2**32 - 1))
def test_flow_group_law(g, a, b, seed):
    pts = _points(np.random.default_rng(seed))
    two = group_flow(FlowRequest(g, a, group_flow(FlowRequest(g, b, pts))))
    one = group_flow(FlowRequest(g, a + b, pts))
    for p, q in zip(two, one):
        assert np.allclose(p, q, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("g", FLOW_GENERATORS, ids=lambda g: g.name)
def test_flow_tangent_is_the_generator(g, rng):
    pts = _points(rng)
    h = 1e-6
    fwd = group_flow(FlowRequest(g, h, pts))
    bwd = group_flow(FlowRequest(g, -h, pts))
    for k, c in enumerate(g.coefficients):
        expected = CoefficientValues(c, *pts).value
        assert np.allclose((fwd[k] - bwd[k]) / (2 * h), expected, rtol=1e-6, atol=1e-7)


@pytest.mark.parametrize("g", [X4a(4, 3.0), X4a(-1, 0.2), Y4c()], ids=lambda g: g.params["p"])
def test_scaling_flow_matches_matrix_exponential(g, rng):
    p, gam = g.params["p"], g.params["gamma"]
    A = np.diag([2 * (p - 1), p - 1, p - 2, -p / gam])
    pts = np.array(_points(rng, 10))
    for a in (-0.4, 0.25):
        assert np.allclose(np.array(group_flow(FlowRequest(g, a, tuple(pts)))),
                           expm(a * A) @ pts, rtol=1e-12)


def test_exponential_scaling_flow_matches_ode_integration(rng):
    k, gam = 1.5, 0.6
    g = X4b(k, gam)
    pts = np.array(_points(rng, 10))

    def rhs(_, y):
        t, x, u, m = y.reshape(4, -1)
        return np.concatenate([2 * t, x, u - x / k, -m / gam])

    for a in (-0.5, 0.7):
        sol = solve_ivp(rhs, (0, a), pts.ravel(), rtol=1e-12, atol=1e-12)
        assert np.allclose(np.array(group_flow(FlowRequest(g, a, tuple(pts)))),
                           sol.y[:, -1].reshape(4, -1), rtol=1e-9, atol=1e-9)


def test_projective_flow_domain():
    pts = (np.array([0.5, 1.0]), np.zeros(2), np.zeros(2), np.ones(2))
    with pytest.raises(FlowDomainError):
        group_flow(FlowRequest(X5c(EPS), 1.0, pts))
    t_new = group_flow(FlowRequest(X5c(EPS), 0.9, pts))[0]
    assert np.allclose(t_new, pts[0] / (1 - 0.9 * pts[0]))


@pytest.fixture(scope="module")
def desk_pair():
    spec = ProblemSpec(HamiltonianSpec.quadratic(), CouplingSpec.power(1.0, 2.0), EPS,
                       horizon=0.5, initial_density=lambda x: 1 + 0.5 * np.cos(2 * np.pi * x))
    grid = GridSpec(1.0, 32, 0.5, 64)
    pair, _ = solve_picard(spec, grid)
    return spec, grid, pair


def test_space_translation_by_whole_cells_is_a_cyclic_shift(desk_pair):
    spec, grid, pair = desk_pair
    out = group_flow(FlowRequest(X2(), 3 * grid.dx, pair))
    assert np.array_equal(out.m.values, np.roll(pair.m.values, 3, axis=1))
    assert np.array_equal(out.u.values, np.roll(pair.u.values, 3, axis=1))


def test_fractional_translation_uses_spectral_shift(desk_pair):
    spec, grid, pair = desk_pair
    half = group_flow(FlowRequest(X2(), 0.5 * grid.dx, pair))
    back = group_flow(FlowRequest(X2(), -0.5 * grid.dx, half))
    assert np.allclose(back.m.values, pair.m.values, atol=1e-12)


def test_trivial_flows_preserve_residuals(desk_pair):
    spec, grid, pair = desk_pair
    base = [f.values for f in pde_residuals(pair, spec, grid)]
    for g in (Xc(), X2(), X3()):
        new = group_flow(FlowRequest(g, 0.0, pair))
        for r, b in zip(pde_residuals(new, spec, new.grid), base):
            assert np.array_equal(r.values, b)
    # u + a only perturbs the residuals through rounding of the shifted values
    new = group_flow(FlowRequest(X3(), 0.7, pair))
    for r, b in zip(pde_residuals(new, spec, new.grid), base):
        assert np.allclose(r.values, b, rtol=0, atol=1e-9)


def test_time_translation_moves_the_slab(desk_pair):
    spec, grid, pair = desk_pair
    out = group_flow(FlowRequest(X1(), 0.2, pair))
    assert out.grid.t_start == pytest.approx(0.2)
    assert np.array_equal(out.u.values, pair.u.values)


def test_galilean_flow_on_constant_solution():
    L, Tend, a = 1.0, 0.5, 0.3
    grid = GridSpec(L, 16, Tend, 8)
    spec = ProblemSpec(HamiltonianSpec.quadratic(), CouplingSpec.power(1.0, 2.0), EPS,
                       horizon=Tend)
    c = spec.f(1 / L) - spec.H(0.0)
    t = grid.t[:, None]
    pair = SolutionPair(Field2D(c * (Tend - t) + 0 * grid.x, grid, "value"),
                        Field2D(np.full(grid.shape, 1 / L), grid, "density"))
    out = group_flow(FlowRequest(Xc(), a, pair))
    x = grid.x[None, :]
    # point map u - a x - a^2 t / 2 written in the new coordinate y = x + a t
    assert np.allclose(out.u.values + out.u_slope * x, c * (Tend - t) - a * x + a * a * t / 2)
    assert np.allclose(out.m.values, 1 / L)
    assert max(f.sup() for f in pde_residuals(out, spec, grid)) <= 1e-12


def test_galilean_flow_preserves_residual_level(desk_pair):
    spec, grid, pair = desk_pair
    base = [f.sup() for f in pde_residuals(pair, spec, grid)]
    for a in (-0.2, 0.1, 0.25):
        tr = verify_transformed_solution(pair, FlowRequest(Xc(), a, pair), spec, grid)
        assert all(x <= 5 * y for x, y in zip(tr, base))


def test_log_scaling_flow_on_pair(desk_pair):
    spec, grid, pair = desk_pair
    out = group_flow(FlowRequest(X_f(0.5), 0.3, pair))
    assert np.allclose(out.m.values, np.exp(-0.3) * pair.m.values)


def test_rescaling_flows_rejected_on_pairs(desk_pair):
    _, _, pair = desk_pair
    for g in (Y4c(), X5c(EPS), X4a(4, 3.0)):
        with pytest.raises(FlowDomainError):
            group_flow(FlowRequest(g, 0.1, pair))


def test_custom_generator_has_no_closed_flow():
    with pytest.raises(FlowDomainError):
        group_flow(FlowRequest(X1() + X2(), 0.1, (0.0, 0.0, 0.0, 1.0)))


# -- export and sampling ------------------------------------------------------------------

def test_catalog_json_lists_formulas_and_conditions():
    doc = json.loads(catalog_json())
    ids = {g["id"] for g in doc["generators"]}
    assert ids == {"X1", "X2", "X3", "X_f", "X4a", "X4b", "Xc", "Y4c", "X5c"}
    assert all(g["applies_to"] for g in doc["generators"])
    per_spec = json.loads(catalog_json([QUAD_M2]))
    assert len(per_spec[0]["generators"]) == 6


def test_sample_jets_respect_the_box(rng):
    jet = sample_jets(rng, 500)
    assert np.all((jet.m >= 0.1) & (jet.m <= 3.0))
    assert np.all(np.abs(jet.u_x) <= 2)
    frac = spec_of(HamiltonianSpec.power(2.5), CouplingSpec.log())
    assert np.all(sample_jets(rng, 500, frac).u_x >= 0.1)
    neg = spec_of(HamiltonianSpec.power(-1), CouplingSpec.log())
    assert np.all(np.abs(sample_jets(rng, 500, neg).u_x) >= 0.1)
