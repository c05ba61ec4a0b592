import math

import numpy as np
import pytest

from switchavg import ValidationError
from switchavg.chain import build_generator
from switchavg.montecarlo import (
    CertificationError,
    ExperimentSpec,
    gronwall_constants,
    run_ccc_study,
    run_deviation_study,
    run_moment_bound_study,
    sample_paths,
    trend_slope,
)
from switchavg.system import CatalogField


def spec_for(G, field, **kw):
    kw.setdefault("n_paths", 200)
    kw.setdefault("epsilons", (0.1, 0.01))
    return ExperimentSpec(G, field, np.atleast_1d(kw.pop("u0", 1.0)), **kw)


class TestSpec:
    def test_defaults(self, two_state, linear_field):
        s = ExperimentSpec(two_state, linear_field, [1.0])
        assert s.epsilons == (0.1, 0.01, 0.001) and s.n_paths == 2000 and s.horizon == 1.0
        assert s.deviation_thresholds == (0.05, 0.1, 0.2)
        assert s.containment_levels == (4.0, 10.0, 20.0)

    @pytest.mark.parametrize("kw", [{"horizon": 0.0}, {"n_paths": 0}, {"epsilons": (0.1, -1.0)},
                                    {"deviation_thresholds": (0.0,)}, {"containment_levels": (-1.0,)}])
    def test_invalid(self, two_state, linear_field, kw):
        with pytest.raises(ValidationError):
            ExperimentSpec(two_state, linear_field, [1.0], **kw)

    def test_state_mismatch(self, two_state):
        with pytest.raises(ValidationError, match="regimes"):
            ExperimentSpec(two_state, CatalogField("linear", a=[1.0, 2.0, 3.0]), [1.0])


def test_zero_field_has_no_deviation(two_state):
    table = run_deviation_study(spec_for(two_state, CatalogField("constant", c=[0.0, 0.0])))
    for eps in (0.1, 0.01):
        assert table.value(eps, "D_q0.99") == 0.0
        assert table.value(eps, "D_mean") == 0.0


@pytest.mark.parametrize("field", [
    CatalogField("linear", a=[1.3], c=[0.2]),
    CatalogField("bounded-trig", a=[2.0], c=[-0.5]),
    CatalogField("logistic", r=[1.0], K=[2.0]),
    CatalogField("constant", c=[0.7]),
], ids=lambda f: f.kind)
def test_single_state_matches_average(single_state, field):
    table = run_deviation_study(spec_for(single_state, field, u0=0.5, n_paths=20))
    assert table.value(0.1, "D_q0.99") <= 1e-5


def test_path_stats_invariants(two_state, linear_field):
    sample = sample_paths(spec_for(two_state, linear_field, n_paths=50), 0)
    stats = list(sample.path_stats())
    assert len(stats) == 50
    for s in stats:
        assert s.sup_u >= 1.0 and s.sup_dev >= 0 and s.sup_u_sq == pytest.approx(s.sup_u**2, rel=1e-15)


def test_chunking_and_threads_do_not_change_results(two_state, linear_field):
    spec = spec_for(two_state, linear_field, n_paths=120)
    a = sample_paths(spec, 1, n_jobs=1, chunk_size=120)
    b = sample_paths(spec, 1, n_jobs=3, chunk_size=17)
    np.testing.assert_array_equal(a.sup_dev, b.sup_dev)
    np.testing.assert_array_equal(a.sup_u, b.sup_u)


def test_reproducible_csv(two_state, linear_field):
    spec = spec_for(two_state, linear_field, n_paths=300)
    assert run_deviation_study(spec, n_jobs=1).to_csv() == run_deviation_study(spec, n_jobs=4).to_csv()


def test_seed_changes_results(two_state, linear_field):
    a = run_deviation_study(spec_for(two_state, linear_field, seed=1)).to_csv()
    b = run_deviation_study(spec_for(two_state, linear_field, seed=2)).to_csv()
    assert a != b


class TestCertification:
    def test_quadratic_refused(self, two_state):
        spec = spec_for(two_state, CatalogField("quadratic", a=[1.0, -0.5]), u0=0.5)
        with pytest.raises(CertificationError):
            run_deviation_study(spec)

    def test_declared_constant_violated(self, two_state):
        f = CatalogField("linear", a=[3.0, -3.0], growth_constant=1.0)
        with pytest.raises(CertificationError, match="linear growth"):
            run_moment_bound_study(spec_for(two_state, f))

    def test_override_marks_uncertified_and_excludes_blowups(self, two_state):
        # averaged drift is u^2, finite on [0, 1] from 0.9; long stays in the
        # a = 3 regime blow up after about 1 / 2.7
        f = CatalogField("quadratic", a=[3.0, -3.0])
        spec = spec_for(two_state, f, u0=0.9, allow_uncertified=True, n_paths=200, epsilons=(0.1,))
        table = run_deviation_study(spec)
        assert not table.certified
        row = table.get(0.1, "D_mean")
        assert 0 < row.n_excluded < 200 and not row.certified
        assert row.n_used + row.n_excluded == 200
        assert any("excluded" in n for n in table.notes)

    def test_logistic_outside_domain(self, two_state):
        f = CatalogField("logistic", r=[1.0, 0.5], K=[2.0, 1.0])
        with pytest.raises(CertificationError, match="invariant box"):
            run_deviation_study(spec_for(two_state, f, u0=5.0))

    def test_logistic_inside_domain(self, two_state):
        f = CatalogField("logistic", r=[1.0, 0.5], K=[2.0, 1.0])
        table = run_deviation_study(spec_for(two_state, f, u0=0.5, n_paths=50))
        assert table.certified and any("invariant box" in n for n in table.notes)


class TestMomentStudy:
    def test_gronwall_constants(self):
        k1, k2 = gronwall_constants(np.array([2.0]), 0.5, 3.0)
        assert k1 == pytest.approx(2 * 4 + 4 * 0.25 * 9)
        assert k2 == pytest.approx(4 * 0.25 * 3)

    def test_zero_field(self, two_state):
        table = run_moment_bound_study(spec_for(two_state, CatalogField("constant", c=[0.0, 0.0]), u0=1.5))
        for eps in (0.1, 0.01):
            assert table.value(eps, "E_sup_sq") == 2.25

    def test_bounded_trig_under_envelope(self, two_state):
        f = CatalogField("bounded-trig", a=[1.0, -1.0], c=[1.0, -1.0])
        table = run_moment_bound_study(spec_for(two_state, f))
        env = table.value("all", "gronwall_envelope")
        assert env == pytest.approx(6 * math.exp(4))
        for eps in (0.1, 0.01):
            assert table.value(eps, "E_sup_sq") <= env

    def test_trend_slope(self):
        eps = [1.0, 0.1, 0.01]
        slope, se = trend_slope(eps, [1.0, 1.0 + math.log(10), 1.0 + 2 * math.log(10)], [0.1, 0.1, 0.1])
        assert slope == pytest.approx(1.0)
        assert se > 0


class TestCCC:
    def test_below_initial_value(self, two_state):
        f = CatalogField("bounded-trig", a=[1.0, -1.0], c=[1.0, -1.0])
        table = run_ccc_study(spec_for(two_state, f, u0=2.0, containment_levels=(0.5, 1.9, 100.0)))
        for eps in (0.1, 0.01):
            assert table.value(eps, "P(sup>0.5)") == 1.0
            assert table.value(eps, "P(sup>1.9)") == 1.0
            assert table.value(eps, "P(sup>100)") == 0.0

    def test_reachability_and_chebyshev(self, two_state):
        f = CatalogField("bounded-trig", a=[1.0, -1.0], c=[1.0, -1.0])
        table = run_ccc_study(spec_for(two_state, f))
        reach = table.value("all", "reachability_level")
        assert reach == pytest.approx(1.0 + 2.0 + 1.0)
        for eps in (0.1, 0.01):
            assert table.value(eps, f"P(sup>{reach:g})") == 0.0
            assert table.value(eps, "monotone_in_c") == 1.0
            for c in table_levels(table, eps):
                assert table.value(eps, f"chebyshev_consistent(c={c})") == 1.0


def table_levels(table, eps):
    return [r.statistic[len("chebyshev_bound(c="):-1] for r in table.rows
            if r.epsilon == eps and r.statistic.startswith("chebyshev_bound")]


def test_csv_shape(two_state, linear_field):
    csv = run_deviation_study(spec_for(two_state, linear_field, n_paths=10)).to_csv()
    lines = csv.splitlines()
    assert lines[0] == "epsilon,statistic,value,stderr,n_used,n_excluded,certified"
    assert all(len(line.split(",")) == 7 for line in lines)
    # full round-trip precision
    for line in lines[1:]:
        value = line.split(",")[2]
        assert repr(float(value)) == value
