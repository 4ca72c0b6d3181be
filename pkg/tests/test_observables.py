import numpy as np
import pytest

from segmarkets.core import AgentState
from segmarkets import observables as obs


def test_reduce_symmetric_state():
    rc = obs.reduce_coords(AgentState(np.full(4, 1.3)), temperature=0.2)
    assert rc.delta_bs == 0.0 and rc.delta_12 == 0.0
    assert rc.p_buy == pytest.approx(0.5) and rc.p_market1 == pytest.approx(0.5)


def test_reduce_single_action_preference():
    rc = obs.reduce_coords(AgentState(np.array([1.0, 0.0, 0.0, 0.0])), 0.5)
    assert rc.delta_bs == pytest.approx(0.5)
    assert rc.delta_12 == pytest.approx(0.5)
    assert rc.p_buy > 0.5 and rc.p_market1 > 0.5


def test_swapping_markets_negates_delta12():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(30, 4))
    swapped = A[:, [2, 3, 0, 1]]   # relabel market 1 <-> market 2
    dbs, d12 = obs.reduce_attractions(A)
    dbs2, d12s = obs.reduce_attractions(swapped)
    assert np.allclose(d12s, -d12)
    assert np.allclose(dbs2, dbs)


def test_reduction_is_linear_and_quadrants_scale_free():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(50, 4))
    dbs, d12 = obs.reduce_attractions(A)
    for c in (0.5, 2.0, 7.3):
        dbs_c, d12_c = obs.reduce_attractions(c * A)
        assert np.allclose(dbs_c, c * dbs)
        assert np.allclose(d12_c, c * d12)
        assert np.array_equal(obs.quadrant_labels(dbs_c, d12_c),
                              obs.quadrant_labels(dbs, d12))


def test_binder_gaussian_is_zero():
    x = np.random.default_rng(7).standard_normal(1_000_000)
    assert obs.binder_cumulant(x) == pytest.approx(0.0, abs=0.01)


def test_binder_two_point_is_two_thirds():
    x = np.array([1.0, -1.0] * 500)
    assert obs.binder_cumulant(x) == pytest.approx(2.0 / 3.0, abs=1e-15)


def test_binder_degenerate_and_small_samples():
    with pytest.raises(obs.DegenerateSample):
        obs.binder_cumulant(np.zeros(10))
    with pytest.raises(ValueError):
        obs.binder_cumulant(np.array([1.0]))


@pytest.mark.parametrize("seed", range(25))
def test_binder_never_exceeds_two_thirds(seed):
    rng = np.random.default_rng(seed)
    kind = seed % 3
    if kind == 0:
        x = rng.standard_normal(5000)
    elif kind == 1:
        x = rng.standard_cauchy(5000)          # heavy tails push B negative
    else:
        x = rng.choice([-2.0, -1.0, 1.0, 2.0], 5000)
    assert obs.binder_cumulant(x) <= 2.0 / 3.0 + 1e-12


def test_binder_jackknife_matches_pooled_value():
    rng = np.random.default_rng(5)
    runs = [rng.standard_normal(4000) for _ in range(12)]
    m2 = [float((x ** 2).sum()) for x in runs]
    m4 = [float((x ** 4).sum()) for x in runs]
    n = [x.size for x in runs]
    b, se = obs.binder_jackknife(m2, m4, n)
    assert b == pytest.approx(obs.binder_cumulant(np.concatenate(runs)), abs=1e-12)
    assert 0 < se < 0.05


def test_persistence_constant_quadrant_is_censored():
    q = np.ones((10_000, 1), np.int8)
    rec = obs.persistence_times(q, forgetting_rate=0.1)
    assert len(rec.completed) == 0
    assert list(rec.censored) == [pytest.approx(1000.0)]
    assert rec.censored_fraction == 1.0
    assert rec.mean_is_lower_bound


def test_persistence_single_transition():
    q = np.array([[1], [1], [1], [2]], np.int8)
    rec = obs.persistence_times(q, forgetting_rate=0.1)
    assert list(rec.completed) == [pytest.approx(0.3)]
    assert list(rec.censored) == [pytest.approx(0.1)]
    assert list(rec.completed_quadrants) == [1]
    assert list(rec.censored_quadrants) == [2]


def test_persistence_skips_leading_unlabelled_periods():
    q = np.array([[-1], [-1], [3], [3], [0]], np.int8)
    rec = obs.persistence_times(q, forgetting_rate=0.5)
    assert list(rec.completed) == [pytest.approx(1.0)]   # 2 periods in quadrant 3
    assert list(rec.censored) == [pytest.approx(0.5)]


def test_persistence_interior_gap_extends_interval():
    q = np.array([[2], [-1], [2], [1]], np.int8)
    rec = obs.persistence_times(q, forgetting_rate=1.0)
    assert list(rec.completed) == [pytest.approx(3.0)]


def test_persistence_mean_invariant_under_agent_relabeling():
    rng = np.random.default_rng(2)
    q = rng.integers(0, 4, size=(300, 20)).astype(np.int8)
    rec = obs.persistence_times(q, 0.1)
    perm = rng.permutation(20)
    rec_p = obs.persistence_times(q[:, perm], 0.1)
    assert rec.mean_completed == pytest.approx(rec_p.mean_completed)
    assert rec.mean_observed == pytest.approx(rec_p.mean_observed)
    assert sorted(rec.completed) == pytest.approx(sorted(rec_p.completed))


def test_persistence_merge_pools_everything():
    q1 = np.array([[1], [2]], np.int8)
    q2 = np.array([[0], [0]], np.int8)
    a = obs.persistence_times(q1, 0.1)
    b = obs.persistence_times(q2, 0.1)
    m = obs.PersistenceRecord.merge([a, b])
    assert m.n_intervals == a.n_intervals + b.n_intervals
    assert m.censored_fraction == pytest.approx(2 / 3)


def test_quadrant_labels_zero_is_unlabelled():
    q = obs.quadrant_labels(np.array([0.0, 1.0, -1.0]), np.array([1.0, 0.0, -2.0]))
    assert list(q) == [-1, -1, 0]


def test_histogram_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=1000), rng.normal(size=1000)
    counts, xe, ye = obs.histogram2d(x, y, bins=10)
    path = tmp_path / "h.csv"
    obs.write_histogram_csv(path, counts, xe, ye)
    rows = path.read_text().strip().split("\n")
    assert rows[0] == "bin_x_low,bin_y_low,count"
    assert len(rows) == 1 + 100
    total = sum(int(r.split(",")[2]) for r in rows[1:])
    assert total == 1000


def test_crossing_temperature_interpolates():
    temps = [0.1, 0.2, 0.3, 0.4]
    values = [0.6, 0.4, 0.2, 0.1]
    # crosses 1/3 between 0.2 and 0.3: 0.2 + 0.1*(0.4-1/3)/(0.4-0.2)
    assert obs.crossing_temperature(temps, values) == pytest.approx(0.2333333, abs=1e-6)
    # order of the grid must not matter
    assert obs.crossing_temperature(temps[::-1], values[::-1]) == pytest.approx(
        0.2333333, abs=1e-6)


def test_crossing_temperature_no_crossing_is_nan():
    assert np.isnan(obs.crossing_temperature([0.1, 0.2], [0.2, 0.1]))
    assert np.isnan(obs.crossing_temperature([0.1, 0.2], [0.6, 0.5]))
    with pytest.raises(ValueError):
        obs.crossing_temperature([0.1], [0.5])


def test_count_modes_synthetic():
    h = np.zeros((20, 20))
    h[2:4, 2:4] = 10
    h[2:4, 15:17] = 9
    h[15:17, 2:4] = 8
    h[15:17, 15:17] = 11
    assert obs.count_modes(h) == 4
    single = np.zeros((20, 20))
    single[8:12, 8:12] = 5
    single[9, 9] = 7
    assert obs.count_modes(single) == 1
    # a secondary bump below half max does not count
    single[0, 0] = 3.0
    assert obs.count_modes(single) == 1
