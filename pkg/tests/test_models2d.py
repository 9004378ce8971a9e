import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kimura_mixed.kernels1d import KimuraKernel1D, kimura_density
from kimura_mixed.models2d import (
    BoundaryClass,
    BoundaryTag,
    FrozenCoefficients,
    ModelKernel2D,
    QuadratureError,
    apply_model_operator,
    coordinate_rule,
    factor_density,
    model_kernel,
    model_kernel_atoms,
    model_solve_cauchy,
    model_solve_inhomogeneous,
    model_solve_with_derivatives,
)

CLASSES = ["c_reg", "e_reg", "c_mix", "e_inf", "c_inf"]


def sample_point(name, i=0):
    """A source point inside the model space of each class."""
    pts = {
        "c_reg": [(0.0, 0.0), (0.3, 0.7), (1.2, 0.05)],
        "e_reg": [(0.0, -0.4), (0.4, 0.3), (1.5, 1.0)],
        "c_mix": [(0.0, 1.0), (0.5, 0.3), (1.1, 2.5)],
        "e_inf": [(-0.3, 1.0), (0.2, 0.4), (1.0, 3.0)],
        "c_inf": [(1.0, 1.0), (0.3, 2.0), (2.2, 0.6)],
        "interior": [(0.0, 0.0), (0.5, -0.5), (1.0, 1.0)],
    }
    return np.array(pts[name][i])


@pytest.fixture
def frozen():
    return FrozenCoefficients(a=0.8, b=1.3, d=0.6, e=0.4)


def test_boundary_class_names():
    for name in CLASSES + ["interior"]:
        assert BoundaryClass.from_name(name).name == name
    assert BoundaryClass.from_name("c_infty").tag is BoundaryTag.INFINITY_CORNER
    assert BoundaryClass.from_name("e_reg", swapped=True).kinds == ("euclid", "kimura")
    with pytest.raises(ValueError):
        BoundaryClass.from_name("c_weird")


def test_frozen_validation():
    with pytest.raises(ValueError):
        FrozenCoefficients(a=0.0)
    with pytest.raises(ValueError):
        FrozenCoefficients(b=-1.0)
    with pytest.raises(ValueError):
        ModelKernel2D(BoundaryClass.from_name("c_reg"), FrozenCoefficients(d=-0.5), 1.0)
    with pytest.raises(ValueError):
        ModelKernel2D(BoundaryClass.from_name("c_reg"), FrozenCoefficients(), 0.0)


def test_kernel_examples():
    mk = ModelKernel2D(BoundaryClass.from_name("c_reg"), FrozenCoefficients(1, 1, 1, 1), 1.0)
    assert float(model_kernel(mk, [0, 0], [1, 1])) == pytest.approx(math.exp(-2), rel=1e-13)
    mk = ModelKernel2D(BoundaryClass.from_name("c_inf"), FrozenCoefficients(1, 1), 1.0)
    assert float(model_kernel(mk, [1, 1], [1, 1])) == pytest.approx(1 / (4 * math.pi), rel=1e-13)


def test_domain_mismatch():
    mk = ModelKernel2D(BoundaryClass.from_name("c_inf"), FrozenCoefficients(), 1.0)
    with pytest.raises(ValueError):
        model_kernel(mk, [0.0, 1.0], [1.0, 1.0])
    mk = ModelKernel2D(BoundaryClass.from_name("c_reg"), FrozenCoefficients(), 1.0)
    with pytest.raises(ValueError):
        model_kernel(mk, [-0.1, 1.0], [1.0, 1.0])


@pytest.mark.parametrize("name", CLASSES + ["interior"])
def test_factorization(name, frozen):
    mk = ModelKernel2D(BoundaryClass.from_name(name), frozen, 0.4)
    p = sample_point(name, 1)
    q = sample_point(name, 2)
    k1, k2 = mk.cls.kinds
    expected = factor_density(k1, frozen.a, frozen.d, 0.4, p[0], q[0]) * factor_density(k2, frozen.b, frozen.e, 0.4, p[1], q[1])
    assert float(model_kernel(mk, p, q)) == expected


def test_swapped_orientation(frozen):
    mk = ModelKernel2D(BoundaryClass.from_name("e_reg"), frozen, 0.3)
    swapped = ModelKernel2D(
        BoundaryClass.from_name("e_reg", swapped=True),
        FrozenCoefficients(frozen.b, frozen.a, frozen.e, frozen.d),
        0.3,
    )
    p, q = np.array([0.4, 0.2]), np.array([0.9, -0.1])
    assert float(model_kernel(mk, p, q)) == pytest.approx(float(model_kernel(swapped, p[::-1], q[::-1])), rel=1e-14)


@pytest.mark.parametrize("name", CLASSES + ["interior"])
@pytest.mark.parametrize("t", [0.05, 1.0])
def test_mass_conservation(name, t, frozen):
    mk = ModelKernel2D(BoundaryClass.from_name(name), frozen, t)
    pts = np.array([sample_point(name, i) for i in range(3)])
    v = model_solve_cauchy(mk, lambda a, b: np.ones_like(a), pts)
    np.testing.assert_allclose(v, 1.0, atol=1e-5)


def test_atoms_reported_and_counted():
    fr = FrozenCoefficients(a=1.0, b=1.0, d=0.0, e=0.0)
    mk = ModelKernel2D(BoundaryClass.from_name("c_reg"), fr, 0.5)
    atoms = model_kernel_atoms(mk, [0.3, 0.2], [0.4, 0.1])
    assert set(atoms) == {"face0", "face1", "corner"}
    assert float(atoms["corner"]) == pytest.approx(math.exp(-0.3 / 0.5) * math.exp(-0.2 / 0.5), rel=1e-12)
    # quadrature includes atoms: total mass is one
    v = model_solve_cauchy(mk, lambda a, b: np.ones_like(a), np.array([[0.3, 0.2]]))
    assert float(v[0]) == pytest.approx(1.0, abs=1e-8)
    # from the corner every bit of mass stays at the corner
    v0 = model_solve_cauchy(mk, lambda a, b: (a == 0) & (b == 0), np.array([[0.0, 0.0]]))
    assert float(v0[0]) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("name", CLASSES)
def test_semigroup(name, frozen):
    t, s = 0.2, 0.3
    mk_t = ModelKernel2D(BoundaryClass.from_name(name), frozen, t)
    mk_s = mk_t.with_time(s)
    mk_ts = mk_t.with_time(t + s)
    p = sample_point(name, 1)
    for q in (sample_point(name, 1), sample_point(name, 2)):
        composed = model_solve_cauchy(mk_t, lambda a, b: model_kernel(mk_s, np.stack([a, b], -1), q), p[None, :])
        direct = float(model_kernel(mk_ts, p, q))
        assert float(composed[0]) == pytest.approx(direct, rel=1e-3)


def _residual(mk, p, q, h):
    def f(x, y):
        return float(model_kernel(mk, [x, y], q))

    dt = (float(model_kernel(mk.with_time(mk.t + h), p, q)) - float(model_kernel(mk.with_time(mk.t - h), p, q))) / (2 * h)
    return abs(dt - apply_model_operator(mk.cls, mk.frozen, f, p, h))


@pytest.mark.parametrize("name", CLASSES)
@pytest.mark.parametrize("t", [0.25, 1.0])
def test_residual_second_order(name, t, frozen):
    mk = ModelKernel2D(BoundaryClass.from_name(name), frozen, t)
    p = sample_point(name, 1)
    q = sample_point(name, 2)
    r1, r2 = _residual(mk, p, q, 0.02), _residual(mk, p, q, 0.01)
    assert math.log2(r1 / r2) == pytest.approx(2.0, abs=0.3)


def test_apply_operator_examples(frozen):
    for name in CLASSES:
        cls = BoundaryClass.from_name(name)
        p = sample_point(name, 1)
        assert apply_model_operator(cls, frozen, lambda x, y: 1.0, p) == pytest.approx(0.0, abs=1e-9)
    cmix = BoundaryClass.from_name("c_mix")
    assert apply_model_operator(cmix, frozen, lambda x, y: x, [0.5, 1.0]) == pytest.approx(frozen.d, rel=1e-9)
    assert apply_model_operator(cmix, frozen, lambda x, y: x, [0.0, 1.0]) == pytest.approx(frozen.d, rel=1e-9)
    cinf = BoundaryClass.from_name("c_inf")
    # a (y^2 d^2 + y d) annihilates ln y and sends (ln y)^2 / 2 to a
    assert apply_model_operator(cinf, frozen, lambda x, y: math.log(x), [0.7, 1.0]) == pytest.approx(0.0, abs=1e-8)
    assert apply_model_operator(cinf, frozen, lambda x, y: 0.5 * math.log(x) ** 2, [0.7, 1.0]) == pytest.approx(frozen.a, rel=1e-8)
    with pytest.raises(ValueError):
        apply_model_operator(BoundaryClass.from_name("c_reg"), frozen, lambda x, y: x, [1e-8, 0.5], h=1e-2)


def test_cauchy_small_time_limit():
    mk = ModelKernel2D(BoundaryClass.from_name("c_reg"), FrozenCoefficients(1, 1, 1.0, 0.5), 1e-4)
    f = lambda a, b: np.cos(a) * (1 + b)
    pts = np.array([[0.0, 0.0], [0.3, 0.2], [0.05, 0.7]])
    v = model_solve_cauchy(mk, f, pts)
    np.testing.assert_allclose(v, f(pts[:, 0], pts[:, 1]), atol=0.01)


@pytest.mark.parametrize("d", [0.0, 0.5, 2.0])
def test_cauchy_mean_displacement(d):
    mk = ModelKernel2D(BoundaryClass.from_name("c_mix"), FrozenCoefficients(1.0, 1.0, d, 0.0), 0.3)
    v = model_solve_cauchy(mk, lambda a, b: a, np.array([[0.4, 1.0], [0.0, 2.0]]))
    np.testing.assert_allclose(v, [0.4 + d * 0.3, d * 0.3], atol=1e-9)


def test_cauchy_tolerance_check():
    mk = ModelKernel2D(BoundaryClass.from_name("c_reg"), FrozenCoefficients(1, 1, 1, 1), 0.5)
    pts = np.array([[0.2, 0.3]])
    v = model_solve_cauchy(mk, lambda a, b: np.exp(-a - b), pts, rtol=1e-6)
    assert np.isfinite(v).all()
    with pytest.raises(QuadratureError):
        model_solve_cauchy(mk, lambda a, b: np.sign(np.sin(40 * a)), pts, order=3, panels=1, rtol=1e-12)


@pytest.mark.parametrize("name", CLASSES)
def test_inhomogeneous_constants(name, frozen):
    mk = ModelKernel2D(BoundaryClass.from_name(name), frozen, 0.37)
    pts = np.array([sample_point(name, i) for i in range(3)])
    np.testing.assert_allclose(model_solve_inhomogeneous(mk, lambda s, a, b: np.ones_like(a), pts), 0.37, rtol=1e-6)
    np.testing.assert_array_equal(model_solve_inhomogeneous(mk, lambda s, a, b: np.zeros_like(a), pts), 0.0)


def test_inhomogeneous_time_dependent():
    # g = s integrates to t^2 / 2
    mk = ModelKernel2D(BoundaryClass.from_name("e_reg"), FrozenCoefficients(), 0.4)
    v = model_solve_inhomogeneous(mk, lambda s, a, b: s * np.ones_like(a), np.array([[0.2, 0.1]]))
    assert float(v[0]) == pytest.approx(0.08, rel=1e-8)


def test_solve_derivatives_vs_finite_differences():
    mk = ModelKernel2D(BoundaryClass.from_name("c_reg"), FrozenCoefficients(1.0, 0.7, 0.8, 1.2), 0.2)
    g = lambda s, a, b: np.sin(a + 2 * b) + s
    p = np.array([[0.3, 0.4]])
    out = model_solve_with_derivatives(mk, g, p, n_time=16, order=14, panels=6)
    h = 1e-4
    u = lambda q: float(model_solve_with_derivatives(mk, g, np.array([q]), n_time=16, order=14, panels=6, deriv=0)["u"][0])
    d1 = (u([0.3 + h, 0.4]) - u([0.3 - h, 0.4])) / (2 * h)
    d2 = (u([0.3, 0.4 + h]) - u([0.3, 0.4 - h])) / (2 * h)
    assert float(out["d1"][0]) == pytest.approx(d1, rel=1e-4)
    assert float(out["d2"][0]) == pytest.approx(d2, rel=1e-4)


def test_tangential_derivative_scaling():
    """sup |D_y u| <= C T^{gamma/2} ||g||: the fitted slope in T is at least gamma/2."""
    gamma = 0.5
    g = lambda s, a, b: np.abs(np.sin(b)) ** gamma
    pts = np.array([[0.3, y] for y in np.linspace(-0.2, 0.2, 9)])
    sups = []
    Ts = [1.0, 0.5, 0.25]
    for T in Ts:
        mk = ModelKernel2D(BoundaryClass.from_name("e_reg"), FrozenCoefficients(1, 1, 0.5, 0), T)
        out = model_solve_with_derivatives(mk, g, pts, n_time=16, order=16, deriv=1)
        sups.append(np.abs(out["d2"]).max())
    slope = np.polyfit(np.log(Ts), np.log(sups), 1)[0]
    assert slope >= gamma / 2 - 0.1


@given(lam=st.floats(0.1, 10.0))
@settings(max_examples=25, deadline=None)
def test_quadratic_measure_invariance(lam):
    mk = ModelKernel2D(BoundaryClass.from_name("c_mix"), FrozenCoefficients(1.0, 0.6, 0.5, 0.0), 0.3)
    ind = lambda lo, hi: (lambda a, b: ((b > lo) & (b < hi)).astype(float))
    p = np.array([[0.4, 1.0]])
    m1 = model_solve_cauchy(mk, ind(0.7, 1.6), p, order=30)
    m2 = model_solve_cauchy(mk, ind(0.7 * lam, 1.6 * lam), p * [1.0, lam], order=30)
    assert float(m1[0]) == pytest.approx(float(m2[0]), abs=1e-12)


def test_kimura_rule_matches_density():
    # the rule reproduces the density's expectation of a smooth test function
    r = coordinate_rule("kimura", 1.0, 0.3, 0.5, np.array([0.2]))
    est = float(np.sum(r.weights[0] * np.cos(r.nodes)))
    from scipy import integrate

    k = KimuraKernel1D(0.3, 0.5)
    ref = integrate.quad(lambda v: float(kimura_density(k, 0.2, v)) * math.cos(v), 0, 30, points=[0.2], limit=200)[0]
    assert est == pytest.approx(ref, rel=1e-8)
