import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog
from scipy.stats import wasserstein_distance

from lobdiffusion.book import BookSeries
from lobdiffusion.metrics import (
    EvalConfig, book_imbalance, bootstrap_ci, evaluate, histograms, l1_distance, mid_returns, ofi,
    spread, volume_at_level, wasserstein1,
)
from lobdiffusion.synthetic import gen_stream


def brute_force_ot(a, b):
    """Exact transport cost between uniform empiricals via a linear program."""
    n, m = len(a), len(b)
    cost = np.abs(np.subtract.outer(a, b)).ravel()
    rows = np.zeros((n, n * m))
    cols = np.zeros((m, n * m))
    for i in range(n):
        rows[i, i * m : (i + 1) * m] = 1
    for j in range(m):
        cols[j, j::m] = 1
    res = linprog(cost, A_eq=np.vstack([rows, cols]), b_eq=np.r_[np.full(n, 1 / n), np.full(m, 1 / m)],
                  bounds=(0, None), method="highs")
    return res.fun


@settings(max_examples=60, deadline=None)
@given(a=st.lists(st.integers(-20, 20), min_size=1, max_size=8),
       b=st.lists(st.integers(-20, 20), min_size=1, max_size=8))
def test_wasserstein_matches_linear_program(a, b):
    a, b = np.array(a, float) / 3, np.array(b, float) / 3
    assert wasserstein1(a, b) == pytest.approx(brute_force_ot(a, b), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 200), m=st.integers(1, 200))
def test_wasserstein_matches_scipy(seed, n, m):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=n), rng.exponential(size=m)
    assert wasserstein1(a, b) == pytest.approx(wasserstein_distance(a, b), abs=1e-9)


def test_wasserstein_fixtures():
    assert wasserstein1([0, 1], [0, 1]) == 0
    assert wasserstein1([0.0], [3.0]) == 3.0
    assert wasserstein1([0, 2], [1]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        wasserstein1([], [1])


def test_l1_fixtures():
    assert l1_distance([1, 2, 3], [1, 2, 3]) == 0
    assert l1_distance([0, 0], [1, 1], bins=2) == 2.0
    # edges [0, 1, 2]: p = (1/2, 1/2), q = (1, 0)
    assert l1_distance([0, 2], [0, 0.5], bins=2) == pytest.approx(1.0)
    edges, p, q = histograms([5.0], [5.0])
    assert edges.tolist() == [4.5, 5.5] and p.tolist() == q.tolist() == [1.0]


def _book(rows):
    """rows of (bid_px, bid_sz, ask_px, ask_sz) with one level."""
    a = np.array(rows)
    return BookSeries(a[:, 2:3], a[:, 3:4], a[:, 0:1], a[:, 1:2])


def test_ofi_hand_fixture():
    s = _book([(100, 5, 102, 4), (101, 3, 102, 6), (100, 7, 101, 2), (100, 9, 101, 2)])
    # rise: +3 - (6 - 4) = 1; fall on both sides: -3 - 2 = -5; unchanged: +2 - 0 = 2
    assert ofi(s).values.tolist() == [1.0, -5.0, 2.0]
    assert len(ofi(s[:1])) == 0


def test_ofi_depth_two_sums_levels():
    s = BookSeries([[102, 103], [102, 104]], [[1, 1], [1, 5]], [[100, 99], [100, 99]], [[2, 2], [4, 1]])
    # level 1: bid +2, ask 0; level 2: bid -1, ask price rose so -(old 1) on ask -> +1
    assert ofi(s, depth=2).values.tolist() == [2.0 - 1.0 + 1.0]
    with pytest.raises(ValueError):
        ofi(s, depth=3)


def test_imbalance_and_simple_scores():
    s = _book([(100, 3, 102, 1), (100, 2, 104, 2)])
    assert book_imbalance(s).values.tolist() == [0.5, 0.0]
    assert spread(s).values.tolist() == [2, 4]
    assert spread(s, tick_size=2).values.tolist() == [1, 2]
    assert mid_returns(s).values.tolist() == [1.0]
    assert volume_at_level(s, 1, "ask").values.tolist() == [1, 2]
    empty = BookSeries([[9999999999]], [[0]], [[-9999999999]], [[0]])
    assert len(book_imbalance(empty)) == 0 and book_imbalance(empty).skipped == 1
    assert spread(empty).skipped == 1


def test_bootstrap_ci_contains_point_and_is_seeded():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=80), rng.normal(0.5, 1, size=60)
    ci1 = bootstrap_ci(wasserstein1, a, b, resamples=200, rng=4)
    ci2 = bootstrap_ci(wasserstein1, a, b, resamples=200, rng=4)
    assert ci1 == ci2
    assert ci1[0] <= wasserstein1(a, b) <= ci1[1]
    with pytest.raises(ValueError):
        bootstrap_ci(wasserstein1, a, b, resamples=10)


def test_evaluate_identical_is_zero():
    s = gen_stream("walk", 400, n=3, seed=1)
    rep = evaluate(s, s, EvalConfig(resamples=100))
    assert rep.mean_l1 == 0 and rep.mean_wasserstein == 0
    assert all(e.wasserstein == 0 and e.l1 == 0 for e in rep.entries.values())
    assert not rep.missing


def test_evaluate_report_structure(tmp_path):
    real = gen_stream("walk", 300, n=3, seed=1)
    gen = gen_stream("walk", 300, n=3, seed=2)
    cfg = EvalConfig(resamples=100, metrics=("spread", "ofi", "bid_volume_7"), condition_buckets=None)
    rep = evaluate(real, gen, cfg)
    assert set(rep.entries) == {"spread", "ofi"} and "bid_volume_7" in rep.missing
    lo, hi = rep.mean_wasserstein_ci
    assert lo <= rep.mean_wasserstein <= hi
    assert rep.to_dict()["summary"]["mean_l1"] == rep.mean_l1
    rep.write(tmp_path / "r.json", tmp_path / "r.csv", tmp_path / "h.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "metric,loss_type,value,ci_low,ci_high"
    assert evaluate(real, gen, cfg).to_dict() == rep.to_dict()


def test_segments_do_not_straddle():
    s = _book([(100, 5, 102, 4), (101, 3, 102, 6), (100, 7, 101, 2), (100, 9, 101, 2)])
    rep = evaluate([s[:2], s[2:]], s, EvalConfig(resamples=100, metrics=("ofi",)))
    assert rep.entries["ofi"].n_real == 2 and rep.entries["ofi"].n_gen == 3


def test_condition_buckets():
    s = gen_stream("walk", 200, n=2, seed=0)
    rep = evaluate(s, s, EvalConfig(resamples=100, metrics=("spread",), condition_buckets=4))
    assert sorted(rep.entries) == [f"spread@{b}" for b in range(4)]
