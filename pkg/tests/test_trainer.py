import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peohoi import numcore as nc
from peohoi import trainer as tr
from peohoi.config import (LossConfig, ModelConfig, TrainConfig, apply_overrides, from_flat,
                           load_config_file, to_flat)
from peohoi.data import compute_frequencies
from peohoi.errors import CheckpointError, ConfigError, SchemaError, TrainingDiverged
from peohoi.model import PackedData, PeoHoiModel
from peohoi.proto import propensity


def _cfg(base, mode, **kw):
    return dataclasses.replace(base, ablation_mode=mode, **kw)


class TestTrainDeterminism:
    @pytest.mark.parametrize("mode", ["baseline", "pen", "pen_pwce"])
    def test_byte_identical_checkpoints(self, tiny_synth, tiny_train_cfg, tmp_path, mode):
        train, _, _ = tiny_synth
        cfg = _cfg(tiny_train_cfg, mode)
        logs = []
        for name in ("a", "b"):
            ckpt, tlog = tr.train(train, None, cfg)
            tr.save_checkpoint(ckpt, tmp_path / f"{name}.ckpt")
            logs.append(tlog.to_dict())
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        assert logs[0] == logs[1]

    def test_seed_changes_result(self, tiny_synth, tiny_train_cfg):
        train, _, _ = tiny_synth
        a, _ = tr.train(train, None, tiny_train_cfg)
        b, _ = tr.train(train, None, dataclasses.replace(tiny_train_cfg, seed=6))
        assert any(not np.array_equal(a.state[k], b.state[k]) for k in a.state)

    def test_log_entries_finite(self, tiny_synth, tiny_train_cfg):
        train, _, _ = tiny_synth
        _, tlog = tr.train(train, None, tiny_train_cfg)
        assert len(tlog.steps) == tiny_train_cfg.steps
        for s in tlog.steps:
            assert all(math.isfinite(s[k]) for k in ("focal", "pwce", "total", "grad_norm"))
            assert s["total"] == pytest.approx(s["focal"] + 0.8 * s["pwce"], rel=1e-5)

    def test_validation_callback(self, tiny_synth, tiny_train_cfg):
        train, test, _ = tiny_synth
        seen = []

        class Rep:
            map_full = map_non_rare = map_rare = 0.25

        def evaluate(model, pk, ds, freqs):
            seen.append(pk.num_rows)
            return Rep()

        cfg = dataclasses.replace(tiny_train_cfg, steps=0, epochs=2, batch_size=50)
        _, tlog = tr.train(train, test, cfg, evaluate=evaluate)
        assert [e["epoch"] for e in tlog.epochs] == [0, 1]
        assert seen == [PackedData(test, 3).num_rows] * 2

    def test_label_space_mismatch(self, tiny_synth, tiny_train_cfg):
        train, test, _ = tiny_synth
        bad = dataclasses.replace(test, d_g=test.d_g + 1)
        with pytest.raises(SchemaError):
            tr.train(train, bad, tiny_train_cfg)


class TestAblationStructure:
    @pytest.mark.parametrize("mode, has_proto, has_cls", [
        ("baseline", False, False), ("pen", True, False), ("pen_pwce", True, True)])
    def test_parameter_sets(self, tiny_synth, tiny_model_cfg, mode, has_proto, has_cls):
        train, _, _ = tiny_synth
        names = PeoHoiModel(train.label_space, train.dims, tiny_model_cfg, mode).params.names()
        assert any(n.startswith("proto.") for n in names) == has_proto
        assert any(n.startswith("proto.cls") for n in names) == has_cls
        assert ("fusion.fc1.weight" in names) == (mode == "baseline")
        assert ("fusion.fc2.weight" in names) == (mode != "baseline")

    def test_baseline_checkpoint_has_no_proto(self, tiny_synth, tiny_train_cfg):
        ckpt, _ = tr.train(tiny_synth[0], None, _cfg(tiny_train_cfg, "baseline"))
        assert not [n for n in ckpt.state if n.startswith("proto.")]

    @pytest.mark.parametrize("mode", ["baseline", "pen"])
    def test_no_pwce_outside_full_mode(self, tiny_synth, tiny_train_cfg, mode):
        _, tlog = tr.train(tiny_synth[0], None, _cfg(tiny_train_cfg, mode))
        assert all(s["pwce"] == 0.0 and s["total"] == s["focal"] for s in tlog.steps)


def bce_sum(p, y):
    p = np.clip(p, 1e-7, 1 - 1e-7)
    return -(y * np.log(p) + (1 - y) * np.log(1 - p))


class TestWiringProbe:
    def test_passthrough_loss_decomposes(self, tiny_synth, tiny_model_cfg):
        """With the prototype output frozen to feat_u, total = baseline focal formula + lambda * PWCE."""
        train, _, _ = tiny_synth
        cfg = TrainConfig(seed=1, model=tiny_model_cfg, loss=LossConfig(lam=0.7))
        with nc.precision("f64"):
            model = PeoHoiModel(train.label_space, train.dims, tiny_model_cfg, "pen_pwce", seed=3)
            model.astype(np.float64)
            model.proto_passthrough = True
            pk = PackedData(train, tiny_model_cfg.window)
            rows = np.arange(pk.num_rows)
            out = model.forward(pk, rows, training=True)
            freqs = compute_frequencies(train)
            omega = propensity(freqs).omega
            total, focal, pwce = tr.compute_losses(model, out, freqs, omega, cfg)
        # the proto features are the anchor union features
        f = pk.windows.anchor_frame[rows]
        s = pk.windows.anchor_slot[rows]
        np.testing.assert_array_equal(out.proto_features.data, pk.f_u[f, s].astype(np.float64))
        # independent numpy oracle for both terms
        y = out.targets.astype(np.float64)
        p = np.clip(out.pred.data, 1e-7, 1 - 1e-7)
        pt = np.where(y > 0, p, 1 - p)
        n = np.maximum(freqs.class_counts, 1)
        cb = (1 - 0.999) / (1 - 0.999 ** n)
        focal_ref = -(cb * (1 - pt) ** 2 * np.log(pt)).sum() / len(rows)
        pwce_ref = (bce_sum(out.proto_probs.data, y) * omega).sum() / len(rows)
        assert focal.item() == pytest.approx(focal_ref, rel=1e-10)
        assert pwce.item() == pytest.approx(pwce_ref, rel=1e-10)
        assert total.item() == pytest.approx(focal_ref + 0.7 * pwce_ref, rel=1e-10)


class TestCheckpointFiles:
    @pytest.fixture
    def saved(self, tiny_synth, tiny_train_cfg, tmp_path):
        ckpt, _ = tr.train(tiny_synth[0], None, tiny_train_cfg)
        path = tmp_path / "m.ckpt"
        tr.save_checkpoint(ckpt, path)
        return ckpt, path

    def test_roundtrip(self, saved, tiny_synth):
        ckpt, path = saved
        back = tr.load_checkpoint(path)
        assert list(back.state) == list(ckpt.state)
        for k in ckpt.state:
            assert back.state[k].tobytes() == ckpt.state[k].tobytes()
        assert back.config == ckpt.config and back.label_space == ckpt.label_space
        assert back.freqs == ckpt.freqs
        pk = PackedData(tiny_synth[1], ckpt.config.model.window)
        assert ckpt.build_model().predict(pk).tobytes() == back.build_model().predict(pk).tobytes()

    def test_manifest_layout(self, saved):
        ckpt, path = saved
        raw = path.read_bytes()
        header = json.loads(raw[:raw.index(b"\n")])
        assert header["schema"] == "peohoi-ckpt/v1"
        offsets = [e["offset"] for e in header["params"]]
        sizes = [int(np.prod(e["shape"])) for e in header["params"]]
        assert offsets == list(np.cumsum([0] + sizes[:-1]))
        assert len(raw) - raw.index(b"\n") - 1 == 4 * sum(sizes)

    @pytest.mark.parametrize("cut", [1, 4, 17])
    def test_truncated(self, saved, tmp_path, cut):
        _, path = saved
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(path.read_bytes()[:-cut])
        with pytest.raises(CheckpointError, match="blob"):
            tr.load_checkpoint(bad)

    def test_version_mismatch(self, saved, tmp_path):
        _, path = saved
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(path.read_bytes().replace(b"peohoi-ckpt/v1", b"peohoi-ckpt/v9", 1))
        with pytest.raises(CheckpointError, match="v9"):
            tr.load_checkpoint(bad)

    def test_no_manifest(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"garbage")
        with pytest.raises(CheckpointError):
            tr.load_checkpoint(tmp_path / "x.ckpt")

    def test_wiring_mismatch(self, saved):
        ckpt, _ = saved
        wrong = dataclasses.replace(ckpt, config=dataclasses.replace(ckpt.config, ablation_mode="baseline"))
        with pytest.raises(CheckpointError, match="baseline"):
            wrong.build_model()


class TestDivergence:
    def test_non_finite_loss_aborts_with_last_good(self, tiny_synth, tiny_train_cfg, monkeypatch):
        real = tr.compute_losses
        calls = []

        def poisoned(model, out, freqs, omega, cfg):
            calls.append(1)
            total, focal, pwce = real(model, out, freqs, omega, cfg)
            if len(calls) == 4:
                return nc.Tensor(float("nan")), focal, pwce
            return total, focal, pwce

        monkeypatch.setattr(tr, "compute_losses", poisoned)
        with pytest.raises(TrainingDiverged) as err:
            tr.train(tiny_synth[0], None, tiny_train_cfg)
        assert err.value.step == 3
        ck = err.value.checkpoint
        assert ck is not None and all(np.all(np.isfinite(v)) for v in ck.state.values())


class TestConfig:
    def test_flat_roundtrip(self):
        cfg = apply_overrides(TrainConfig(), {"loss.lambda": 1.5, "model.d_model": 32, "model.heads": 4})
        assert cfg.loss.lam == 1.5 and cfg.model.d_model == 32
        assert from_flat(to_flat(cfg)) == cfg

    @pytest.mark.parametrize("flat", [{"loss.lamda": 1}, {"model.d_model": "big"}, {"train.epochs": 0},
                                      {"model.d_model": 30, "model.heads": 4}, {"loss.beta_cb": 1.0}])
    def test_rejected(self, flat):
        with pytest.raises(ConfigError):
            apply_overrides(TrainConfig(), flat)

    def test_file(self, tmp_path):
        (tmp_path / "c.json").write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_config_file(tmp_path / "c.json")

    @settings(max_examples=20)
    @given(st.floats(0, 10), st.integers(1, 9))
    def test_override_property(self, lam, window):
        cfg = apply_overrides(TrainConfig(), {"loss.lambda": lam, "model.window": window})
        assert (cfg.loss.lam, cfg.model.window) == (lam, window)

    def test_model_config_defaults(self):
        m = ModelConfig()
        assert (m.window, m.pe_base, m.select_mode) == (5, 1000.0, "mixture")
