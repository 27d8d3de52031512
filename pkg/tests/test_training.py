import numpy as np
import pytest

from fusionlab import model as fm
from fusionlab import tensor_core as tc
from fusionlab import training as tr
from fusionlab.embedding_store import Dataset, ModalitySpec
from fusionlab.errors import ConfigError, TrainingDivergedError
from fusionlab.rng import RngState

MODS = [ModalitySpec("text", 4), ModalitySpec("audio", 3)]


def separable_dataset(n=32, informative="text", seed=0, mods=MODS,
                      val_frac=0.25):
    """Labels decided by the informative modality's mean sign; margin 1."""
    rng = RngState(seed)
    rows = []
    n_val = max(2, int(n * val_frac))
    for i in range(n):
        label = i % 2
        tensors = {}
        for m in mods:
            base = rng.normal((m.dim,)) * 0.25
            if m.name == informative:
                base = base + (1.0 if label else -1.0)
            else:
                base = base + 1.0
            tensors[m.name] = base.astype(np.float32)
        split = "val" if i < n_val else "train"
        rows.append((f"s{i}", label, split, tensors))
    return Dataset.from_arrays("separable", list(mods), rows)


def config(strategy="early_concat", mods=MODS, **kw):
    infos = [fm.ModalityInfo(m.name, m.dim, m.sequential) for m in mods]
    kw.setdefault("lstm_hidden", 4)
    kw.setdefault("head_hidden", 8)
    kw.setdefault("seed", 3)
    kw.setdefault("dropout_p", 0.1)
    return fm.ModelConfig(strategy=strategy, modalities=infos, **kw)


class TestAdamStep:
    def _param(self, value):
        return {"w": tc.leaf(np.array(value, np.float32), requires_grad=True)}

    def test_zero_grads_leave_params_unchanged(self):
        params = self._param([1.0, -2.0])
        moments = tr.init_moments(params)
        tr.adam_step(params, {"w": np.zeros(2, np.float32)}, moments, 1,
                     tr.TrainConfig())
        assert np.array_equal(params["w"].value, [1.0, -2.0])

    def test_moments_decay_under_zero_grads(self):
        params = self._param([1.0])
        moments = {"w": (np.array([0.5], np.float32), np.array([0.25], np.float32))}
        tr.adam_step(params, {"w": np.zeros(1, np.float32)}, moments, 5,
                     tr.TrainConfig())
        m, v = moments["w"]
        assert abs(m[0] - 0.45) < 1e-6      # 0.9 * 0.5
        assert abs(v[0] - 0.24975) < 1e-6   # 0.999 * 0.25

    def test_first_step_from_zero_moments(self):
        # t=1: update is -lr * g / (|g| + eps-hat) on scalars
        cfg = tr.TrainConfig(lr=0.01)
        for g in (0.3, -1.7, 2.5):
            params = self._param([0.0])
            moments = tr.init_moments(params)
            tr.adam_step(params, {"w": np.array([g], np.float32)}, moments, 1, cfg)
            expected = -cfg.lr * g / (abs(g) + cfg.eps)
            assert abs(params["w"].value[0] - expected) < 1e-7

    def test_constant_gradient_step_approaches_lr_sign(self):
        cfg = tr.TrainConfig(lr=1e-3)
        params = self._param([0.0])
        moments = tr.init_moments(params)
        g = np.array([0.37], np.float32)
        prev = params["w"].value.copy()
        for t in range(1, 10_001):
            prev = params["w"].value.copy()
            tr.adam_step(params, {"w": g}, moments, t, cfg)
        step = float((prev - params["w"].value)[0])
        assert abs(step - cfg.lr) / cfg.lr < 0.05

    def test_rejects_bad_t(self):
        params = self._param([0.0])
        with pytest.raises(ConfigError):
            tr.adam_step(params, {"w": np.zeros(1)}, tr.init_moments(params),
                         0, tr.TrainConfig())


class TestTrainLoop:
    def test_early_stop_rule_trace(self, monkeypatch):
        # patience=1 with strictly decreasing val F1 after epoch 1:
        # train epoch 2, see no improvement, stop, return epoch-1 state
        ds = separable_dataset(16)
        state = fm.build_model(config())
        f1_seq = iter([0.9, 0.5, 0.4, 0.3])
        snapshots = []

        def fake_eval(st, dataset, split, threshold=0.5, enabled_modalities=None):
            snapshots.append({k: n.value.copy() for k, n in st.params.items()})
            f1 = next(f1_seq)
            from fusionlab.evaluation import ConfusionCounts, EvalReport, per_class_metrics
            counts = ConfusionCounts(1, 1, 1, 1)
            return EvalReport(counts=counts, per_class=per_class_metrics(counts),
                              macro_precision=f1, macro_recall=f1, macro_f1=f1,
                              accuracy=f1, auroc=None)

        monkeypatch.setattr(tr, "evaluate_model", fake_eval)
        best, log = tr.train(state, ds, tr.TrainConfig(batch_size=8, lr=1e-3,
                                                       max_epochs=10, patience=1,
                                                       seed=1))
        assert len(log.epochs) == 2 and log.stopped_early
        assert log.best_epoch == 0
        for k in best.params:
            assert np.array_equal(best.params[k].value, snapshots[0][k])

    def test_same_seed_identical_log_and_params(self):
        cfg = tr.TrainConfig(batch_size=8, lr=1e-3, max_epochs=4, patience=4,
                             seed=9)
        runs = []
        for _ in range(2):
            ds = separable_dataset(24, seed=2)
            best, log = tr.train(fm.build_model(config(seed=5)), ds, cfg)
            runs.append((best, [
                {k: v for k, v in e.items() if k != "wall_time"}
                for e in log.epochs]))
        assert runs[0][1] == runs[1][1]
        for k in runs[0][0].params:
            assert (runs[0][0].params[k].value.tobytes()
                    == runs[1][0].params[k].value.tobytes())

    def test_separable_reaches_low_loss(self):
        ds = separable_dataset(32, seed=4)
        cfg = tr.TrainConfig(batch_size=8, lr=0.01, max_epochs=200,
                             patience=200, seed=7)
        best, log = tr.train(fm.build_model(config(seed=8, dropout_p=0.0)),
                             ds, cfg)
        assert min(e["train_loss"] for e in log.epochs) < 0.05

    def test_best_epoch_dominates_log(self):
        ds = separable_dataset(24, seed=6)
        cfg = tr.TrainConfig(batch_size=8, lr=5e-3, max_epochs=6, patience=6,
                             seed=3)
        _, log = tr.train(fm.build_model(config(seed=2)), ds, cfg)
        best_f1 = log.epochs[log.best_epoch]["val_macro_f1"]
        assert all(best_f1 >= e["val_macro_f1"] for e in log.epochs)

    def test_nan_loss_aborts_naming_batch(self):
        ds = separable_dataset(16)
        state = fm.build_model(config())
        state.params["head.b2"].value[0] = np.nan
        with pytest.raises(TrainingDivergedError, match="epoch 0 batch 0"):
            tr.train(state, ds, tr.TrainConfig(batch_size=8, seed=1))

    def test_single_step_decreases_single_sample_loss(self):
        # one Adam step at tiny lr strictly decreases the sample's loss
        mods = [ModalitySpec("text", 3)]
        for seed in range(20):
            rng = RngState(100 + seed)
            x = rng.normal((3,))
            ds = Dataset.from_arrays("one", list(mods),
                                     [("a", 1, "train", {"text": x})])
            state = fm.build_model(config(mods=mods, seed=seed, dropout_p=0.0))
            batch = next(ds.make_batches("train", 1, None, shuffle=False))
            cfg = tr.TrainConfig(lr=1e-5, batch_size=1, seed=seed)
            before = float(tr._loss_node(state, batch, False).value.ravel()[0])
            loss = tr._loss_node(state, batch, False)
            tc.zero_grads(state.params.values())
            tc.backward(loss)
            tr.adam_step(state.params,
                         {k: n.grad for k, n in state.params.items()},
                         tr.init_moments(state.params), 1, cfg)
            after = float(tr._loss_node(state, batch, False).value.ravel()[0])
            assert after < before

    def test_empty_split_rejected(self):
        mods = [ModalitySpec("text", 2)]
        ds = Dataset.from_arrays("e", list(mods),
                                 [("a", 1, "test", {"text": np.zeros(2, np.float32)})])
        from fusionlab.errors import EmptySplitError
        with pytest.raises(EmptySplitError):
            tr.train(fm.build_model(config(mods=mods)), ds, tr.TrainConfig(seed=1))


class TestTrainLateStacked:
    def _run(self, seed=1):
        ds = separable_dataset(32, informative="text", seed=seed)
        cfg_m = config(strategy="late_stacked", seed=seed, dropout_p=0.0)
        tcfg = tr.TrainConfig(batch_size=8, lr=0.01, max_epochs=30, patience=30,
                              seed=seed)
        return ds, cfg_m, tcfg

    def test_stage2_width_is_modality_count(self):
        ds, cfg_m, tcfg = self._run()
        best, _ = tr.train_late_stacked(cfg_m, ds, tcfg)
        assert best.params["stack.w"].shape == (2, 1)

    def test_stage1_frozen_during_stage2(self, monkeypatch):
        ds, cfg_m, tcfg = self._run()
        captured = {}
        orig_train = tr.train

        def capturing_train(state, dataset, cfg, **kw):
            result = orig_train(state, dataset, cfg, **kw)
            if kw.get("trainable"):
                captured["before"] = {
                    k: n.value.copy() for k, n in state.params.items()
                    if k.startswith("head.")}
            return result

        # simpler: train normally, then verify stage-1 params of the result
        best, _ = tr.train_late_stacked(cfg_m, ds, tcfg)
        # retrain only stage 2 further; stage-1 bytes must not move
        before = {k: n.value.tobytes() for k, n in best.params.items()
                  if k.startswith("head.")}
        tr.train(best, ds, tcfg, trainable=["stack.w", "stack.b"],
                 use_dropout=False)
        after = {k: n.value.tobytes() for k, n in best.params.items()
                 if k.startswith("head.")}
        assert before == after

    def test_predictive_modality_gets_dominant_weight(self):
        ds, cfg_m, tcfg = self._run(seed=5)
        best, _ = tr.train_late_stacked(cfg_m, ds, tcfg)
        w = np.abs(best.params["stack.w"].value.ravel())
        assert w[0] > w[1]  # text is the planted signal

    def test_stacker_fits_separable_probabilities(self):
        # 16 synthetic stage-1 probability rows, separable on modality 0:
        # the dense stacker alone reaches 100% train accuracy in <= 200 epochs
        rng = RngState(3)
        probs = np.empty((16, 2), np.float32)
        labels = np.array([i % 2 for i in range(16)], np.float32)
        probs[:, 0] = np.where(labels == 1, 0.8, 0.2) + \
            (rng.uniform((16,)) - 0.5) * 0.15
        probs[:, 1] = 0.3 + rng.uniform((16,)) * 0.4  # uninformative
        w = tc.leaf(np.zeros((2, 1), np.float32), requires_grad=True)
        b = tc.leaf(np.zeros(1, np.float32), requires_grad=True)
        cfg = tr.TrainConfig(lr=0.05, batch_size=16, seed=3)
        moments = tr.init_moments({"w": w, "b": b})
        from fusionlab.fusion import fuse_late_stacked
        for t in range(1, 201):
            logit = fuse_late_stacked(tc.constant(probs), w, b)
            loss = tc.bce_with_logits(logit, labels)
            tc.zero_grads([w, b])
            tc.backward(loss)
            tr.adam_step({"w": w, "b": b}, {"w": w.grad, "b": b.grad},
                         moments, t, cfg)
        final = fuse_late_stacked(tc.constant(probs), w, b).value
        assert np.all((final > 0) == (labels == 1))
