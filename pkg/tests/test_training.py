import numpy as np
import pytest

from gravrec.data import BehaviourSequence, DatasetSplit, generate_synthetic, split_sequences
from gravrec.errors import CheckpointError, ContractViolation, NumericError
from gravrec.gradcheck import finite_difference_check
from gravrec.model import (
    CellConfig,
    field_of,
    init_model,
    lift_model,
    model_from_arrays,
    model_to_arrays,
)
from gravrec.tape import Tape, reverse_gradients
from gravrec.training import (
    AdamState,
    EarlyStopper,
    TrainConfig,
    _batch_loss,
    _checkpoint_arrays,
    _quantized_view,
    adam_step,
    load_checkpoint,
    save_checkpoint,
    train,
    warmup_lr,
)
from gravrec.unconscious import padded_step_count


class TestWarmup:
    def test_epoch_zero_is_tenth(self):
        cfg = TrainConfig(learning_rate=1e-4, warmup_epochs=5)
        assert warmup_lr(0, cfg) == pytest.approx(1e-5, rel=1e-12)

    def test_after_warmup_full_rate(self):
        cfg = TrainConfig(learning_rate=1e-4, warmup_epochs=5)
        for epoch in (5, 6, 99):
            assert warmup_lr(epoch, cfg) == 1e-4

    def test_nondecreasing(self):
        cfg = TrainConfig(learning_rate=3e-3, warmup_epochs=7)
        rates = [warmup_lr(e, cfg) for e in range(20)]
        assert all(b >= a for a, b in zip(rates, rates[1:]))

    def test_negative_epoch_rejected(self):
        with pytest.raises(ContractViolation):
            warmup_lr(-1, TrainConfig())


class TestAdam:
    def test_zero_gradients_leave_parameters(self):
        params = {"w": np.array([1.0, -2.0])}
        state = AdamState.initialize(params)
        for _ in range(5):
            adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
        assert np.array_equal(params["w"], [1.0, -2.0])

    def test_first_step_magnitude(self):
        params = {"w": np.array([0.5])}
        state = AdamState.initialize(params)
        adam_step(params, {"w": np.array([3.7])}, state, lr=1e-3)
        # bias-corrected first step is -lr * g / (|g| + eps)
        assert params["w"][0] == pytest.approx(0.5 - 1e-3, rel=1e-6)

    def test_deterministic(self):
        def run():
            params = {"w": np.array([0.1, 0.2])}
            state = AdamState.initialize(params)
            for i in range(4):
                adam_step(params, {"w": np.array([1.0, -1.0]) * (i + 1)}, state, 1e-2)
            return params["w"]

        assert np.array_equal(run(), run())

    def test_non_finite_gradient_aborts(self):
        params = {"w": np.zeros(2)}
        state = AdamState.initialize(params)
        with pytest.raises(NumericError):
            adam_step(params, {"w": np.array([1.0, np.nan])}, state, 1e-3)


class TestEarlyStopper:
    def test_worsening_from_first_epoch_stops_at_eleven(self):
        stopper = EarlyStopper(patience=10)
        epoch = 0
        for loss in [1.0 + 0.1 * i for i in range(100)]:
            epoch += 1
            stopper.update(loss)
            if stopper.should_stop:
                break
        assert epoch == 11

    def test_improvement_resets(self):
        stopper = EarlyStopper(patience=2)
        for loss in (3.0, 2.0, 2.5, 1.9, 2.2):
            stopper.update(loss)
            assert not stopper.should_stop
        stopper.update(2.1)
        assert stopper.should_stop


def tiny_split(n=8, n_items=6, seed=0):
    rng = np.random.default_rng(seed)
    seqs = [
        BehaviourSequence(f"s{i}", rng.integers(0, n_items, 4),
                          np.cumsum(rng.uniform(0.2, 1.4, 4)))
        for i in range(n)
    ]
    return DatasetSplit(train=seqs[:6], valid=seqs[6:7], test=seqs[7:], seed=seed)


class TestTrain:
    def test_constant_validation_stops_after_patience(self):
        # lr = 0 freezes the parameters, so the validation loss never
        # improves after epoch 1 and training stops at epoch 11
        split = tiny_split()
        model = init_model(6, 3, 2, seed=1)
        cfg = TrainConfig(learning_rate=0.0, max_epochs=100, patience=10, batch_size=4)
        _, history = train(model, split, cfg)
        assert len(history.rows) == 11
        assert history.best_epoch == 1

    def test_deterministic_history(self):
        split = tiny_split()
        cfg = TrainConfig(max_epochs=4, batch_size=3, seed=5)
        run1 = train(init_model(6, 3, 2, seed=2), split, cfg)
        run2 = train(init_model(6, 3, 2, seed=2), split, cfg)
        assert [r.train_loss for r in run1[1].rows] == [r.train_loss for r in run2[1].rows]
        for name in model_to_arrays(run1[0]):
            assert np.array_equal(model_to_arrays(run1[0])[name],
                                  model_to_arrays(run2[0])[name])

    def test_best_epoch_parameters_returned(self):
        split = tiny_split()
        cfg = TrainConfig(max_epochs=6, batch_size=4, learning_rate=5e-3, seed=3)
        model, history = train(init_model(6, 3, 2, seed=4), split, cfg)
        from gravrec.training import _validation_loss

        arrays = {k: np.asarray(v) for k, v in model_to_arrays(model).items()}
        val = _validation_loss(arrays, split.valid, cfg.cell_config())
        assert val == pytest.approx(min(r.validation_loss for r in history.rows), rel=1e-12)
        assert history.best_validation_loss == pytest.approx(val, rel=1e-12)

    def test_loss_decreases_on_learnable_data(self):
        catalog, seqs = generate_synthetic(8, 12, 4, seed=6)
        split = split_sequences(seqs, seed=6)
        cfg = TrainConfig(max_epochs=25, learning_rate=3e-3, seed=6)
        _, history = train(init_model(catalog.n_items, 4, 3, seed=6), split, cfg)
        assert history.rows[-1].train_loss < history.rows[0].train_loss

    def test_empty_split_rejected(self):
        from gravrec.errors import DataError

        model = init_model(6, 3, 2, seed=1)
        with pytest.raises(DataError):
            train(model, DatasetSplit([], [], [], 0), TrainConfig())


class TestBatchPath:
    def test_batch_gradients_match_finite_differences(self):
        # covers the shared-grid drift, stacking, row extraction, and the
        # acceleration clamp in one recorded computation
        rng = np.random.default_rng(8)
        n_items, d_u, d_c = 6, 3, 2
        base = {k: rng.uniform(-1, 1, np.shape(v))
                for k, v in model_to_arrays(init_model(n_items, d_u, d_c, 0)).items()}
        base["embeddings"] = rng.normal(0, 1.0, (n_items, d_u))
        base["log_masses"] = rng.normal(0.5, 0.3, n_items)
        cell = CellConfig(softening=0.5, accel_cap=0.2, steps_per_unit=2)
        pad = 1.5
        steps_for_pad = padded_step_count(cell.steps_per_unit, pad)
        grid = pad / steps_for_pad
        seqs = [
            BehaviourSequence(f"s{i}", rng.integers(0, n_items, 4),
                              np.cumsum(rng.choice([grid, 2 * grid, 3 * grid], 4)))
            for i in range(3)
        ]
        views = [_quantized_view(s, grid, pad) for s in seqs]

        def f(params):
            m = model_from_arrays(params)
            loss, _ = _batch_loss(m, field_of(m, cell), views, cell, pad, steps_for_pad)
            return float(loss)

        tape = Tape()
        lifted = lift_model(tape, model_from_arrays(base))
        loss, terms = _batch_loss(lifted, field_of(lifted, cell), views, cell,
                                  pad, steps_for_pad)
        assert terms == sum(len(s) - 1 for s in seqs)
        grads = reverse_gradients(tape, loss)
        report = finite_difference_check(f, base, grads, step=1e-6, tol=1e-4)
        assert report.passed, report.summary()

    def test_quantized_view_snaps_to_grid(self):
        seq = BehaviourSequence("a", [0, 1, 2], [0.0, 0.1001, 1.3002])
        view = _quantized_view(seq, grid=0.1, pad=1.5)
        assert np.allclose(view.intervals, [0.1, 1.2], atol=1e-12)
        tiny = BehaviourSequence("b", [0, 1], [0.0, 0.01])
        assert _quantized_view(tiny, 0.1, 1.5).intervals[0] == 0.0

    def test_interval_above_pad_rejected(self):
        seq = BehaviourSequence("a", [0, 1], [0.0, 2.0])
        with pytest.raises(ContractViolation):
            _quantized_view(seq, 0.1, 1.5)


class TestCheckpoint:
    def roundtrip_setup(self):
        model = init_model(5, 3, 2, seed=9)
        arrays = {k: np.asarray(v) for k, v in model_to_arrays(model).items()}
        adam = AdamState.initialize(arrays)
        adam_step(arrays, {k: np.full_like(v, 0.01) for k, v in arrays.items()},
                  adam, 1e-3)
        meta = {"epoch": 7, "best_epoch": 5,
                "validation_history": np.array([3.0, 2.5, 2.7])}
        return model_from_arrays(arrays), adam, meta

    def test_round_trip_bit_exact(self, tmp_path):
        model, adam, meta = self.roundtrip_setup()
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, adam, meta, path)
        loaded = load_checkpoint(path)
        for name, value in model_to_arrays(model).items():
            assert np.array_equal(loaded.params[name], np.asarray(value))
            assert np.array_equal(loaded.adam_m[name], adam.m[name])
            assert np.array_equal(loaded.adam_v[name], adam.v[name])
        assert loaded.epoch == 7 and loaded.best_epoch == 5
        assert loaded.adam_steps == adam.steps
        assert np.array_equal(loaded.validation_history, meta["validation_history"])

    def test_save_is_byte_stable(self, tmp_path):
        model, adam, meta = self.roundtrip_setup()
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(model, adam, meta, a)
        save_checkpoint(model, adam, meta, b)
        assert a.read_bytes() == b.read_bytes()

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + bytes(64))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_version_mismatch_rejected(self, tmp_path):
        model, adam, meta = self.roundtrip_setup()
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, adam, meta, path)
        blob = bytearray(path.read_bytes())
        blob[4] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_truncation_names_array(self, tmp_path):
        model, adam, meta = self.roundtrip_setup()
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, adam, meta, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 10])
        with pytest.raises(CheckpointError, match="history.validation"):
            load_checkpoint(path)

    def test_mid_payload_truncation_names_first_missing(self, tmp_path):
        model, adam, meta = self.roundtrip_setup()
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, adam, meta, path)
        blob = path.read_bytes()
        # keep the header and half of the first array's payload
        first = 5 * 3 * 8 // 2
        payload = sum(a.size * 8 for _, a in
                      _checkpoint_arrays(model, adam, meta["validation_history"]))
        path.write_bytes(blob[: len(blob) - payload + first])
        with pytest.raises(CheckpointError, match="embeddings"):
            load_checkpoint(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        model, adam, meta = self.roundtrip_setup()
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, adam, meta, path)
        path.write_bytes(path.read_bytes() + b"extra")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)
