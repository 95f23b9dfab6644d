import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from lobdiffusion.book import BookSeries
from lobdiffusion.codec import (
    LobImage, NormParams, build_inpaint_input, decode_image, denormalize, dump_lob_image_csv,
    encode_window, load_lob_image, normalize, pad_provenance, pad_to_square, save_lob_image, unpad,
    unpad_grid,
)
from lobdiffusion.synthetic import gen_stream
from helpers import random_window


def test_single_state_layout():
    s = BookSeries([[101]], [[5]], [[99]], [[7]])
    img = encode_window(s)
    assert img.prices[:, 0].tolist() == [99, 101]
    assert img.sizes[:, 0].tolist() == [7, -5]


def test_row_order_and_sign_convention(small_book):
    img = encode_window(small_book)
    # row 0 deepest bid, row n-1 best bid, row n best ask, row 2n-1 deepest ask
    assert img.prices[:, 0].tolist() == [999800, 999900, 1000200, 1000300]
    assert (img.sizes[:2] >= 0).all() and (img.sizes[2:] <= 0).all()
    assert np.all(np.diff(img.prices, axis=0) > 0)


def test_constant_book_columns_identical():
    img = encode_window(gen_stream("constant", 16, n=5))
    assert (img.prices == img.prices[:, :1]).all() and (img.sizes == img.sizes[:, :1]).all()


def test_encode_rejects_wrong_length(walk):
    with pytest.raises(ValueError, match="expected T"):
        encode_window(walk[:10], T=12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), T=st.integers(1, 40), n=st.integers(1, 8))
def test_encode_decode_identity(seed, T, n):
    w = random_window(np.random.default_rng(seed), T, n)
    back, report = decode_image(encode_window(w), tick_size=100, return_report=True)
    assert back == w
    assert report.repaired_columns == 0


def _raw(prices, sizes):
    return LobImage(np.asarray(prices, float), np.asarray(sizes, float))


def test_flat_prices_fall_back_to_unit_std():
    img = _raw([[50.0] * 4, [50.0] * 4], [[1.0] * 4, [-1.0] * 4])
    out = normalize(img)
    assert (out.prices == 0).all()
    assert out.norm.flat_price and (out.norm.price_std == 1.0).all()


def test_alternating_prices_normalize_to_unit():
    s = 7.0
    prices = np.array([[100 - s, 100 + s] * 3, [100 + s, 100 - s] * 3])
    prices[:, 0] = [100 - s, 100 + s]
    img = _raw(prices, np.ones_like(prices) * [[1], [-1]])
    out = normalize(img, clip_prices=False)
    assert out.norm.mid0 == 100.0
    np.testing.assert_allclose(np.abs(out.prices), 1.0)


def test_outlier_clipped_to_recorded_bound():
    rng = np.random.default_rng(0)
    n, T = 5, 40
    sizes = rng.normal(100, 10, (2 * n, T)) * np.r_[np.ones(n), -np.ones(n)][:, None]
    std = np.sqrt(np.mean(sizes**2))
    sizes[1, 7] = 50 * std
    std = np.sqrt(np.mean(sizes**2))
    prices = np.arange(2 * n, dtype=float)[:, None] + np.zeros(T)
    out = normalize(_raw(prices, sizes))
    v = (sizes / std)[sizes != 0]
    lo, hi = np.quantile(v, [0.025, 0.975])
    assert out.norm.size_clip == pytest.approx((lo, hi))
    assert out.sizes[1, 7] == pytest.approx(hi)
    assert out.sizes.max() <= hi + 1e-12


def test_statistics_use_history_only(walk):
    img = encode_window(walk[:64])
    a = normalize(img, history_len=40)
    doctored = encode_window(walk[:64])
    doctored.sizes[:, 40:] *= 1000
    b = normalize(doctored, history_len=40)
    assert np.array_equal(a.norm.size_std, b.norm.size_std)
    assert a.norm.size_clip == b.norm.size_clip


def test_rolling_std_per_column(walk):
    img = encode_window(walk[:64])
    out = normalize(img, rolling_window=5, history_len=40)
    centred = img.prices - out.norm.mid0
    for t in (0, 3, 10, 39):
        cols = slice(max(0, t - 4), t + 1)
        expect = np.std(centred[:, cols])
        assert out.norm.price_std[t] == pytest.approx(expect if expect > 0 else 1.0)
    assert (out.norm.price_std[40:] == out.norm.price_std[39]).all()


def test_translation_invariance(walk):
    w = walk[:64]
    shifted = BookSeries(w.ask_px + 1700, w.ask_sz, w.bid_px + 1700, w.bid_sz, w.timestamps)
    a, b = normalize(encode_window(w)), normalize(encode_window(shifted))
    np.testing.assert_allclose(a.prices, b.prices, atol=1e-12)
    np.testing.assert_array_equal(a.sizes, b.sizes)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_normalize_denormalize_in_band(seed):
    w = random_window(np.random.default_rng(seed), 32, 5)
    img = encode_window(w)
    norm = normalize(img, tick_size=100)
    back = denormalize(norm)
    present = img.sizes != 0
    lo, hi = norm.norm.price_clip
    inband = present & (norm.prices > lo) & (norm.prices < hi)
    np.testing.assert_array_equal(back.prices[inband], img.prices[inband])
    slo, shi = norm.norm.size_clip
    sband = (norm.sizes > slo) & (norm.sizes < shi)
    np.testing.assert_array_equal(back.sizes[sband], img.sizes[sband])
    # sign invariant before denormalization
    n = img.n_levels
    assert (norm.sizes[:n] >= 0).all() and (norm.sizes[n:] <= 0).all()


def _norm(T, **kw):
    base = dict(mid0=1000.0, price_std=np.full(T, 1.0), size_std=np.full(T, 4.0), price_clip=(-1, 1),
                size_clip=(-1, 1), tick_size=100)
    base.update(kw)
    return NormParams(**base)


def test_denormalize_zero_prices_and_ask_sign():
    img = LobImage(np.zeros((2, 3)), np.array([[1.0] * 3, [-1.0] * 3]), _norm(3, mid0=1_000_000.0))
    raw = denormalize(img)
    assert (raw.prices == 1_000_000).all()
    assert raw.sizes[1].tolist() == [-4, -4, -4]


def test_denormalize_requires_norm():
    with pytest.raises(ValueError):
        denormalize(LobImage(np.zeros((2, 1)), np.zeros((2, 1))))


def test_norm_params_validation_and_dict():
    with pytest.raises(ValueError):
        _norm(2, price_std=np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        _norm(2, size_clip=(1.0, 1.0))
    p = _norm(2)
    q = NormParams.from_dict(p.to_dict())
    assert q.mid0 == p.mid0 and np.array_equal(q.size_std, p.size_std) and q.price_clip == p.price_clip


def test_decode_all_absent_column():
    img = LobImage(np.array([[0.0], [0.0], [0.0], [0.0]]), np.zeros((4, 1)))
    s = decode_image(img)
    assert all(q.absent for q in s[0].asks + s[0].bids)


def test_decode_repairs_swapped_ask_rows(small_book):
    img = encode_window(small_book[:1])
    img.prices[[2, 3]] = img.prices[[3, 2]]
    s, report = decode_image(img, tick_size=100, return_report=True)
    assert report.repaired_columns == 1 and report.order == 1
    assert s[0].asks[0].price < s[0].asks[1].price


def test_decode_repairs_sign_holes_and_crossing():
    # one level each side: positive ask size, crossed prices
    img = LobImage(np.array([[1000.0], [900.0]]), np.array([[3.0], [2.0]]))
    s, report = decode_image(img, tick_size=100, return_report=True)
    assert report.sign == 1 and report.repaired_columns == 1
    assert s[0].asks[0].absent
    img = LobImage(np.array([[1000.0, 1000.0], [900.0, 990.0]]), np.array([[3.0, 3.0], [-2.0, -2.0]]))
    s, report = decode_image(img, tick_size=10, return_report=True)
    assert report.crossed == 2
    assert all(st.best_ask.price > st.best_bid.price for st in s)
    img = LobImage(np.array([[90.0], [95.0], [105.0], [110.0]]), np.array([[4.0], [0.0], [-1.0], [-1.0]]))
    s, report = decode_image(img, tick_size=5, return_report=True)
    assert report.holes == 1 and s[0].bids[0].size == 1


def test_decode_refuses_normalized(walk):
    with pytest.raises(ValueError):
        decode_image(normalize(encode_window(walk[:8])))


def test_pad_exact_division():
    prov = pad_provenance(128, 256)
    assert (np.bincount(prov) == 2).all()


def test_pad_central_rows_get_leftover():
    prov = pad_provenance(20, 256)
    counts = np.bincount(prov)
    assert sorted(set(counts)) == [12, 13]
    assert (counts == 13).sum() == 16
    assert (counts[2:18] == 13).all()
    assert np.all(np.diff(prov) >= 0)


def test_pad_too_many_levels():
    with pytest.raises(ValueError):
        pad_provenance(30, 16)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 8), T=st.sampled_from([16, 24, 32]))
def test_pad_unpad_round_trip(seed, n, T):
    rng = np.random.default_rng(seed)
    img = LobImage(rng.normal(size=(2 * n, T)), rng.normal(size=(2 * n, T)))
    grid, prov = pad_to_square(img)
    assert grid.shape == (T, T, 2)
    back = unpad(grid, prov)
    assert np.abs(back.prices - img.prices).max() <= 1e-12
    assert np.abs(back.sizes - img.sizes).max() <= 1e-12


def test_unpad_symmetric_perturbation():
    img = LobImage(np.arange(4.0)[:, None] * np.ones((4, 8)), np.ones((4, 8)))
    grid, prov = pad_to_square(img)
    delta = np.zeros_like(grid)
    for r in range(4):
        rows = np.flatnonzero(prov == r)
        delta[rows[0]] += 0.25
        delta[rows[1]] -= 0.25
    np.testing.assert_allclose(unpad(grid + delta, prov).prices, img.prices, atol=1e-15)


def test_unpad_batched_and_mismatch():
    prov = pad_provenance(4, 8)
    x = np.random.default_rng(1).normal(size=(3, 4, 8, 2))
    grids = x[:, prov]
    np.testing.assert_allclose(unpad_grid(grids, prov), x, atol=1e-12)
    with pytest.raises(ValueError):
        unpad_grid(grids[:, :7], prov)


def test_inpaint_input_construction():
    T = 8
    square = np.random.default_rng(0).normal(size=(T, T, 2))
    noised = np.random.default_rng(1).normal(size=(T, T, 2))
    inp = build_inpaint_input(square, noised, T - 1)
    assert inp.stacked.shape == (T, T, 5)
    assert inp.mask.sum() == T and (inp.mask[:, -1] == 1).all()
    inp = build_inpaint_input(square, noised, 3)
    assert (inp.history[:, 3:] == 0).all()
    np.testing.assert_array_equal(inp.history[:, :3], square[:, :3])
    np.testing.assert_array_equal(inp.noised, noised)
    with pytest.raises(ValueError):
        build_inpaint_input(square, noised, T)


def test_inpaint_mask_full_geometry():
    z = torch.zeros(256, 256, 2)
    inp = build_inpaint_input(z, z, 156)
    assert float(inp.mask.sum()) == 100 * 256
    assert (inp.mask[:, :156] == 0).all() and (inp.mask[:, 156:] == 1).all()


def test_binary_and_csv_serialization(tmp_path, walk):
    img = normalize(encode_window(walk[:16]), tick_size=100)
    save_lob_image(img, tmp_path / "img.bin")
    back = load_lob_image(tmp_path / "img.bin")
    assert np.array_equal(back.prices, img.prices) and np.array_equal(back.sizes, img.sizes)
    assert np.array_equal(back.norm.price_std, img.norm.price_std)
    assert np.array_equal(back.timestamps, img.timestamps)
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_lob_image(tmp_path / "bad.bin")
    dump_lob_image_csv(img, tmp_path / "img.csv")
    lines = (tmp_path / "img.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 20
    first = lines[1].split(",")
    assert [float(v) for v in first[2:]] == img.prices[0].tolist()
