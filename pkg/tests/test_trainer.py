import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rspin.trainer import (
    METRIC_FIELDS,
    EncoderConfig,
    RSpin,
    TrainConfig,
    TrainState,
    forward,
    frame_batches,
    init_params,
    load_state,
    loss_and_grads,
    lr_at,
    train,
    train_step,
)

from .oracles import central_difference, max_rel_error


class TestLrSchedule:
    def test_endpoints_are_exact(self):
        cfg = TrainConfig()
        assert lr_at(0, cfg) == 1e-6
        assert lr_at(5000, cfg) == 1e-4
        assert lr_at(10000, cfg) == 1e-6

    def test_quarter_points(self):
        cfg = TrainConfig(total_updates=100, lr_peak=1.0, lr_floor=0.5, frames_per_batch=32)
        assert lr_at(25, cfg) == pytest.approx(0.75)
        assert lr_at(75, cfg) == pytest.approx(0.75)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            lr_at(10001, TrainConfig())
        with pytest.raises(ValueError):
            lr_at(-1, TrainConfig())

    @settings(max_examples=30, deadline=None)
    @given(total=st.integers(2, 400), warm=st.floats(0.05, 0.95))
    def test_peak_at_warmup_boundary_and_continuous(self, total, warm):
        cfg = TrainConfig(total_updates=total, warmup_fraction=warm, frames_per_batch=32)
        lrs = np.array([lr_at(s, cfg) for s in range(total + 1)])
        assert lrs.max() <= cfg.lr_peak
        assert np.all(lrs >= cfg.lr_floor * (1 - 1e-12))
        step = (cfg.lr_peak - cfg.lr_floor) / min(warm * total, (1 - warm) * total)
        assert np.abs(np.diff(lrs)).max() <= step * (1 + 1e-9)
        if float(warm * total).is_integer():
            assert lrs[int(warm * total)] == cfg.lr_peak


class TestForward:
    def test_single_layer_hand_oracle(self):
        enc = EncoderConfig(input_dim=2, hidden_dim=2, n_layers=1, proj_dim=2)
        params = {"enc.0.W": np.eye(2), "enc.0.b": np.array([0.5, -0.5])}
        X = np.array([[1.0, 2.0], [-1.0, 0.0]])
        H, acts, _ = forward(X, params, enc)
        np.testing.assert_allclose(H, np.tanh(X + [0.5, -0.5]), atol=1e-15)
        assert len(acts) == 2 and acts[0] is not None

    def test_zero_input_tanh_is_zero(self):
        enc = EncoderConfig(input_dim=3, hidden_dim=5, n_layers=3)
        params = init_params(enc, 4, 2, seed=0)
        H, _, _ = forward(np.zeros((4, 3)), params, enc)
        assert np.all(H == 0)

    def test_relu(self):
        enc = EncoderConfig(input_dim=2, hidden_dim=2, n_layers=1, nonlinearity="relu")
        params = {"enc.0.W": np.eye(2), "enc.0.b": np.zeros(2)}
        H, _, _ = forward(np.array([[1.0, -2.0]]), params, enc)
        np.testing.assert_array_equal(H, [[1.0, 0.0]])

    @settings(max_examples=20, deadline=None)
    @given(T=st.integers(1, 20), d=st.integers(1, 6), h=st.integers(1, 8), n=st.integers(1, 4))
    def test_shapes(self, T, d, h, n):
        enc = EncoderConfig(input_dim=d, hidden_dim=h, n_layers=n)
        H, acts, _ = forward(np.ones((T, d)), init_params(enc, 2, 2), enc)
        assert H.shape == (T, h) and len(acts) == n + 1

    def test_dim_mismatch(self):
        enc = EncoderConfig(input_dim=3)
        with pytest.raises(ValueError):
            forward(np.ones((2, 4)), init_params(enc, 2, 2), enc)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            EncoderConfig(nonlinearity="gelu")
        with pytest.raises(ValueError):
            EncoderConfig(hidden_dim=0)


def small_problem(seed, nonlinearity="tanh", lam=5.0):
    r = np.random.default_rng(seed)
    B, K, D, V = 8, int(r.integers(2, 5)), int(r.integers(2, 7)), int(r.integers(2, 6))
    enc = EncoderConfig(input_dim=D, hidden_dim=int(r.integers(2, 6)), n_layers=2,
                        proj_dim=int(r.integers(2, 6)), nonlinearity=nonlinearity)
    cfg = TrainConfig(total_updates=10, frames_per_batch=B, codebook_size=K, aux_vocab=V,
                      temperature=0.5, lam=lam, seed=seed)
    params = init_params(enc, K, V, seed=seed)
    for k in params:
        if k.endswith(".b"):
            params[k] = r.standard_normal(params[k].shape) * 0.1
    clean = r.standard_normal((B, D))
    pert = clean + 0.3 * r.standard_normal((B, D))
    labels = r.integers(0, V, B)
    return params, clean, pert, labels, enc, cfg


class TestGradients:
    @pytest.mark.parametrize("seed", range(20))
    def test_full_objective_matches_finite_differences(self, seed):
        params, clean, pert, labels, enc, cfg = small_problem(seed)
        _, grads, targets = loss_and_grads(params, clean, pert, labels, enc, cfg)

        def f():
            return loss_and_grads(params, clean, pert, labels, enc, cfg, targets)[0]["l_total"]

        for name in params:
            numeric = central_difference(f, params[name])
            assert max_rel_error(grads[name], numeric, floor=1e-7) <= 1e-4, name

    def test_relu_and_spin_only(self):
        params, clean, pert, labels, enc, cfg = small_problem(3, "relu", lam=0.0)
        _, grads, targets = loss_and_grads(params, clean, pert, labels, enc, cfg)

        def f():
            return loss_and_grads(params, clean, pert, labels, enc, cfg, targets)[0]["l_total"]

        for name in params:
            assert max_rel_error(grads[name], central_difference(f, params[name]), floor=1e-7) <= 1e-4
        assert np.all(grads["aux.W"] == 0)

    def test_update_direction_matches_finite_differences(self):
        params, clean, pert, labels, enc, cfg = small_problem(11)
        _, grads, targets = loss_and_grads(params, clean, pert, labels, enc, cfg)

        def f():
            return loss_and_grads(params, clean, pert, labels, enc, cfg, targets)[0]["l_total"]

        a = np.concatenate([grads[k].ravel() for k in params])
        n = np.concatenate([central_difference(f, params[k]).ravel() for k in params])
        assert np.linalg.norm(a - n) / np.linalg.norm(n) <= 1e-4


def batch(seed, B=32, D=16, V=5):
    r = np.random.default_rng(seed)
    X = r.standard_normal((B, D))
    return X, X + 0.1 * r.standard_normal((B, D)), r.integers(0, V, B)


def state_for(**kw):
    enc = EncoderConfig()
    cfg = TrainConfig(**{**dict(total_updates=20, frames_per_batch=32, codebook_size=8,
                                aux_vocab=5, lr_peak=0.5, lr_floor=1e-3), **kw})
    return TrainState.initial(enc, cfg)


class TestTrainStep:
    def test_everything_frozen_is_noop(self):
        st_ = state_for(lam=0.0, freeze_below=2, freeze_heads=True)
        before = {k: v.copy() for k, v in st_.params.items()}
        m = train_step(*batch(0), st_)
        for k in before:
            assert np.array_equal(before[k], st_.params[k])
        assert np.isfinite(m.l_spin) and m.grad_norm == 0.0

    @pytest.mark.parametrize("freeze_below", [1, 2])
    def test_frozen_layers_bit_identical(self, freeze_below):
        st_ = state_for(freeze_below=freeze_below)
        before = {k: v.copy() for k, v in st_.params.items()}
        for i in range(3):
            train_step(*batch(i), st_)
        for i in range(2):
            same = np.array_equal(before[f"enc.{i}.W"], st_.params[f"enc.{i}.W"])
            assert same == (i < freeze_below)
        assert not np.array_equal(before["codebook"], st_.params["codebook"])

    def test_codebook_stays_unit_norm(self):
        st_ = state_for()
        for i in range(5):
            train_step(*batch(i), st_)
        np.testing.assert_allclose(np.linalg.norm(st_.params["codebook"], axis=1), 1.0, atol=1e-12)

    def test_deterministic(self):
        runs = []
        for _ in range(2):
            st_ = state_for()
            runs.append([train_step(*batch(i), st_).l_total for i in range(5)])
        assert runs[0] == runs[1]

    def test_batch_smaller_than_codebook(self):
        st_ = state_for()
        X, Xp, y = batch(0, B=4)
        with pytest.raises(ValueError):
            train_step(X, Xp, y, st_)

    def test_config_rejects_b_below_k(self):
        with pytest.raises(ValueError):
            TrainConfig(frames_per_batch=16, codebook_size=32)

    def test_view_shape_mismatch(self):
        st_ = state_for()
        X, Xp, y = batch(0)
        with pytest.raises(ValueError):
            train_step(X, Xp[:-1], y, st_)


class TestTrain:
    def test_zero_updates_returns_initial_state(self):
        enc = EncoderConfig()
        cfg = TrainConfig(total_updates=0, frames_per_batch=32, codebook_size=8, aux_vocab=5)
        state, log = train([], enc, cfg)
        ref = TrainState.initial(enc, cfg)
        assert log == [] and state.step == 0
        for k in ref.params:
            assert np.array_equal(ref.params[k], state.params[k])

    def test_exhausted_corpus(self):
        enc = EncoderConfig()
        cfg = TrainConfig(total_updates=3, frames_per_batch=32, codebook_size=8, aux_vocab=5)
        with pytest.raises(RuntimeError, match="exhausted"):
            train([batch(0)], enc, cfg)
        state, log = train([batch(0)], enc, cfg, repeat=True)
        assert len(log) == 3

    def test_log_and_checkpoint(self, tmp_path):
        enc = EncoderConfig()
        cfg = TrainConfig(total_updates=4, frames_per_batch=32, codebook_size=8, aux_vocab=5,
                          lr_peak=0.5, lr_floor=1e-3)
        state, log = train([batch(i) for i in range(4)], enc, cfg,
                           log_path=tmp_path / "m.csv", checkpoint_path=tmp_path / "c.rspn")
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == ",".join(METRIC_FIELDS) and len(lines) == 5
        back = load_state(tmp_path / "c.rspn")
        assert back.step == 4 and back.enc == enc
        for k in state.params:
            np.testing.assert_array_equal(back.params[k], state.params[k])

    def test_loss_decreases(self):
        r = np.random.default_rng(0)
        centers = r.standard_normal((5, 16)) * 2
        y = r.integers(0, 5, 400)
        X = centers[y] + 0.2 * r.standard_normal((400, 16))
        Xp = centers[y] + 0.2 * r.standard_normal((400, 16))
        enc = EncoderConfig()
        cfg = TrainConfig(total_updates=100, frames_per_batch=64, codebook_size=8, aux_vocab=5,
                          lr_peak=2.0, lr_floor=1e-2)
        _, log = train(frame_batches(X, Xp, y, 64), enc, cfg)
        assert log[-1].l_total < log[0].l_total


class TestEstimator:
    def test_fit_predict(self):
        r = np.random.default_rng(0)
        y = r.integers(0, 4, 300)
        X = np.eye(16)[y] * 3 + 0.1 * r.standard_normal((300, 16))
        Xp = X + 0.1 * r.standard_normal((300, 16))
        model = RSpin(codebook_size=8, total_updates=30, frames_per_batch=64).fit(X, y, X_perturbed=Xp)
        assert model.predict(X).shape == (300,)
        assert model.transform(X).shape == (300, 64)
        np.testing.assert_allclose(model.predict_proba(X).sum(axis=1), 1.0)
        assert len(model.layer_outputs(X)) == 3
        assert 0 < model.codebook_usage(X) <= 1
        assert len(model.history_) == 30

    def test_params_roundtrip(self):
        m = RSpin(codebook_size=16, lam=2.0)
        assert m.get_params()["codebook_size"] == 16
        assert m.set_params(lam=1.0).lam == 1.0

    def test_needs_perturbed_view(self):
        with pytest.raises(ValueError):
            RSpin().fit(np.ones((300, 4)), np.zeros(300, dtype=int))
