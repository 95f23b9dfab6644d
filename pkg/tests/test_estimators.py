import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lobdiffusion.estimators import ContBaseline, LobDiffusionForecaster, LobImageEncoder
from lobdiffusion.ingest import WindowSpec, iterate_windows
from lobdiffusion.synthetic import gen_stream
from lobdiffusion.validation import check_book_series
from helpers import TINY_OVERRIDES


def _forecaster(**kw):
    params = dict(history_len=10, pred_len=6, n_levels=3, unet_overrides=TINY_OVERRIDES, T_diff=50,
                  batch_size=4, lr=1e-3, sample_steps=5, random_state=1)
    params.update(kw)
    return LobDiffusionForecaster(**params)


def test_params_and_clone():
    est = _forecaster()
    assert est.get_params()["pred_len"] == 6
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est
    assert clone(ContBaseline(depth=4)).depth == 4
    enc = LobImageEncoder(history_len=3).set_params(pred_len=5)
    assert enc.pred_len == 5


def test_encoder_round_trip(walk):
    spec = WindowSpec(10, 6, 3, 16)
    windows = iterate_windows(walk[:160], spec, "eval")
    enc = LobImageEncoder(10, 6, 3, clip_prices=False, clip_sizes=False)
    with pytest.raises(NotFittedError):
        enc.transform(windows)
    grids = enc.fit(windows).transform(windows)
    assert grids.shape == (len(windows), 16, 16, 2)
    back = enc.inverse_transform(grids)
    assert all(b.same_book(check_book_series(w, 3)) for b, w in zip(back, windows))
    with pytest.raises(ValueError):
        enc.inverse_transform(grids[:2])
    with pytest.raises(ValueError):
        LobImageEncoder(2, 2, 3).fit(walk[:4])


def test_forecaster_fit_predict_save_load(tmp_path):
    states = gen_stream("walk", 200, n=3, seed=0)
    est = _forecaster().fit(states)
    assert est.n_windows_ == 19 and est.n_steps_ == 5 and len(est.loss_trace_) == 5
    futs = est.predict(states[:30], n_samples=2)
    assert len(futs) == 2 and all(len(f) == 6 and f.n_levels == 3 for f in futs)
    assert est.last_repair_.n_columns == 12
    again = est.predict(states[:30], seeds=[1, 2])
    assert again == futs
    path = tmp_path / "est.pt"
    est.save(path)
    loaded = LobDiffusionForecaster.load(path)
    assert loaded.get_params() == est.get_params()
    assert loaded.predict(states[:30], n_samples=2) == futs
    held, rep = est.forecast(states[100:], stride=16)
    assert len(held) == len(iterate_windows(states[100:], WindowSpec(10, 6, 3, 16), "eval"))
    assert rep.n_columns == 6 * len(held)


def test_forecaster_fit_is_deterministic():
    states = gen_stream("walk", 120, n=3, seed=0)
    a, b = _forecaster().fit(states), _forecaster().fit(states)
    assert a.loss_trace_ == b.loss_trace_


def test_forecaster_errors(tmp_path):
    with pytest.raises(NotFittedError):
        _forecaster().predict(gen_stream("walk", 20, n=3))
    with pytest.raises(ValueError, match="resolution"):
        _forecaster(pred_len=7).fit(gen_stream("walk", 100, n=3))
    with pytest.raises(ValueError):
        _forecaster().fit(gen_stream("walk", 10, n=3))


def test_cont_baseline_estimator():
    data = gen_stream("walk", 1500, n=5, seed=2)
    est = ContBaseline(depth=5, random_state=3).fit(data)
    assert est.params_.n_levels == 5 and est.params_.seed == 3
    out = est.sample(500)
    assert len(out) <= 500 and out == est.sample(500)
    assert np.all(out.ask_px[:, 0] > out.bid_px[:, 0])
    with pytest.raises(NotFittedError):
        ContBaseline().sample(10)
