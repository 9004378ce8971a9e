import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kimura_mixed.geometry import WFMetric
from kimura_mixed.models2d import BoundaryClass
from kimura_mixed.validation import (
    KIMURA_BOUNDS,
    SUITES,
    ValidationReport,
    check_appendix_bounds,
    check_chapman_kolmogorov,
    check_kernel_mass,
    check_max_principle,
    check_pde_residual,
    exit_code,
    holder_seminorm,
    j_interval,
    run_suite,
    write_csv,
    write_jsonl,
)
import kimura_mixed.validation as V


def euclid(p, q):
    return np.linalg.norm(np.asarray(p) - np.asarray(q), axis=-1)


@pytest.fixture
def c_reg_metric():
    return WFMetric(BoundaryClass.from_name("c_reg"))


# ---------------------------------------------------------------------------
# Hoelder seminorm


def test_holder_constant_is_zero():
    pts = np.random.default_rng(0).random((30, 2))
    assert holder_seminorm(np.full(30, 2.5), pts, euclid, 0.5) == 0.0


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 1.0), st.integers(0, 10_000))
def test_holder_of_distance_power_is_one(gamma, seed):
    # |d(x,p)^g - d(y,p)^g| <= d(x,y)^g, with equality on pairs containing p
    rng = np.random.default_rng(seed)
    pts = rng.random((20, 2))
    p = pts[0]
    vals = euclid(pts, p) ** gamma
    assert holder_seminorm(vals, pts, euclid, gamma) == pytest.approx(1.0, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_holder_monotone_in_samples(seed):
    rng = np.random.default_rng(seed)
    pts = rng.random((25, 2))
    vals = np.sin(3 * pts[:, 0]) * pts[:, 1]
    small = holder_seminorm(vals[:12], pts[:12], euclid, 0.7)
    big = holder_seminorm(vals, pts, euclid, 0.7)
    assert big >= small


def test_holder_sqrt_in_singular_metric(c_reg_metric):
    # f = sqrt(x) is Lipschitz with constant 1/2 for the distance 2|sqrt x - sqrt x'|
    xs = np.linspace(0.0, 1.0, 15)
    pts = np.column_stack([xs, np.full_like(xs, 0.4)])
    assert holder_seminorm(np.sqrt(xs), pts, c_reg_metric, 1.0) == pytest.approx(0.5, rel=1e-12)
    # but not Lipschitz in the Euclidean distance
    assert holder_seminorm(np.sqrt(xs), pts, euclid, 1.0) > 1.0


def test_holder_random_pairs_lower_bound():
    rng = np.random.default_rng(1)
    pts = rng.random((60, 2))
    vals = np.cos(4 * pts).sum(axis=1)
    full = holder_seminorm(vals, pts, euclid, 0.5)
    sub = holder_seminorm(vals, pts, euclid, 0.5, max_points=20, seed=3)
    assert 0 < sub <= full + 1e-12
    assert sub == holder_seminorm(vals, pts, euclid, 0.5, max_points=20, seed=3)


@pytest.mark.parametrize(
    "kw",
    [dict(values=[1.0], points=[[0.0, 0.0]]), dict(values=[1.0, 2.0], points=[[0.0, 0.0]])],
)
def test_holder_rejects_bad_input(kw):
    with pytest.raises(ValueError):
        holder_seminorm(dist=euclid, gamma=0.5, **kw)


@pytest.mark.parametrize("gamma", [0.0, 1.5])
def test_holder_rejects_bad_gamma(gamma):
    with pytest.raises(ValueError):
        holder_seminorm([0.0, 1.0], [[0.0], [1.0]], euclid, gamma)


# ---------------------------------------------------------------------------
# bound checks


@pytest.mark.parametrize("x1, x2, expected", [(0.0, 1.0, (-0.5, 1.5)), (2.0, 1.0, (0.5, 2.5)), (0.3, 0.3, (0.3, 0.3))])
def test_j_interval(x1, x2, expected):
    assert j_interval(x1, x2) == pytest.approx(expected)


@settings(max_examples=50)
@given(st.floats(-10, 10), st.floats(-10, 10))
def test_j_interval_midpoint_and_length(x1, x2):
    a, b = j_interval(x1, x2)
    assert (a + b) / 2 == pytest.approx((x1 + x2) / 2, abs=1e-9)
    assert b - a == pytest.approx(2 * abs(x2 - x1), abs=1e-9)


@pytest.mark.parametrize("lemma_id", sorted(KIMURA_BOUNDS))
def test_kimura_bound_checks_pass(lemma_id):
    rep = check_appendix_bounds(d_grid=np.linspace(0, 3, 7), lemma_id=lemma_id)
    assert rep.passed, rep.measured
    assert math.isfinite(rep.measured["C_max"])


def test_ydy_zero_power_is_density_bound():
    grid = np.linspace(0, 2, 5)
    a = check_appendix_bounds(d_grid=grid, lemma_id="ydy", k=0)
    b = check_appendix_bounds(d_grid=grid, lemma_id="density")
    assert a.measured["C_max"] == b.measured["C_max"]


def test_bound_check_rejects_unknown():
    with pytest.raises(ValueError):
        check_appendix_bounds(lemma_id="nope")


def test_bound_check_range_flag():
    rep = check_appendix_bounds(d_grid=[0.0, 4.0], lemma_id="density", B=3.0)
    assert not rep.passed


@pytest.mark.parametrize("lid", ["gradient_holder", "second_near", "second_far"])
def test_heat_ratios_vanish_on_diagonal(lid):
    fn = {"gradient_holder": lambda: V._heat_gradient_holder(0.2, 0.2, 0.0, 0.05, 0.1, 0.5, 1.0),
          "second_near": lambda: V._heat_second_near(0.2, 0.2, 0.0, 0.1, 0.5, 0),
          "second_far": lambda: V._heat_second_far(0.2, 0.2, 0.0, 0.1, 0.5)}[lid]
    assert fn() == 0.0


def test_time_rule_against_closed_form():
    # int_0^t s (t - s)^a ds = t^(a+2) / ((a+1)(a+2))
    t, a = 0.3, -0.75
    assert V._time_rule(lambda s: s, t, a, 0.1) == pytest.approx(t ** (a + 2) / ((a + 1) * (a + 2)), rel=1e-8)


def test_heat_lemma_rejects_bad_input():
    with pytest.raises(ValueError):
        V.check_heat_lemmas(gamma=1.0)
    with pytest.raises(ValueError):
        V.check_heat_lemmas(lemma_id="nope")


@pytest.mark.slow
def test_heat_lemmas_pass():
    reps = V.check_heat_lemmas(0.5)
    assert all(r.passed for r in reps), [r.measured for r in reps]


# ---------------------------------------------------------------------------
# kernel, model and oracle checks


def test_kernel_mass_check():
    rep = check_kernel_mass(ds=(0.0, 0.5, 2.0), ts=(0.5,), xs=(0.0, 0.7))
    assert rep.passed and rep.measured["max_error"] <= 1e-6


def test_chapman_kolmogorov_check():
    reps = check_chapman_kolmogorov(classes=("c_reg",))
    assert [r.check_id for r in reps] == ["chapman_kolmogorov:1d", "chapman_kolmogorov:c_reg"]
    assert all(r.passed for r in reps)


def test_pde_residual_check():
    assert all(r.passed for r in check_pde_residual(classes=("c_reg", "e_inf")))


def test_max_principle_check():
    assert check_max_principle(n_data=3, n=16, T=0.02).passed


# ---------------------------------------------------------------------------
# reports and suites


def _reports():
    return [
        ValidationReport("a", {"x": np.arange(2)}, {"v": np.float64(0.5), "inf": math.inf}, 1.0, True, 0.01, "n"),
        ValidationReport("b", {}, {"v": 2.0}, 1.0, False, 0.02),
    ]


def test_report_json_round_trip():
    r = _reports()[0]
    d = json.loads(r.to_json())
    assert d["check_id"] == "a" and d["verdict"] == "pass"
    assert d["parameters"]["x"] == [0, 1]
    assert d["measured"]["inf"] == "inf"
    assert json.loads(json.dumps(d)) == r.to_dict()


def test_jsonl_and_csv(tmp_path):
    reps = _reports()
    write_jsonl(reps, tmp_path / "r.jsonl")
    lines = (tmp_path / "r.jsonl").read_text().splitlines()
    assert [json.loads(line)["verdict"] for line in lines] == ["pass", "fail"]
    write_csv(reps, tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["check_id", "verdict", "threshold", "runtime", "parameters"]
    assert [r[1] for r in rows[1:]] == ["pass", "fail"]


@pytest.mark.parametrize("passed, code", [((True, True), 0), ((True, False), 1), ((), 0)])
def test_exit_code(passed, code):
    reps = [ValidationReport(str(i), {}, {}, 0.0, p, 0.0) for i, p in enumerate(passed)]
    assert exit_code(reps) == code


def test_unknown_suite():
    with pytest.raises(ValueError):
        run_suite("nope")


def test_suite_ids():
    assert set(SUITES) == {"kernels", "models", "parametrix", "oracles", "limits", "bounds"}


def test_suite_is_deterministic(monkeypatch):
    # stub the expensive sampler so the suite stays fast
    monkeypatch.setattr(V, "check_sampler", lambda n, seed: [ValidationReport("sampler", {"seed": seed}, {}, 0, True, 0)])

    def strip(reps):
        out = []
        for r in reps:
            d = r.to_dict()
            d.pop("runtime")
            out.append(d)
        return out

    a = strip(run_suite("kernels", {"seed": 1}))
    b = strip(run_suite("kernels", {"seed": 1}))
    assert a == b


@pytest.mark.slow
def test_sampler_check():
    assert all(r.passed for r in V.check_sampler(n=20_000, seed=0))
