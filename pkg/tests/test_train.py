import math

import numpy as np
import pytest
import torch

from mmfw.cli import OPTIONS
from mmfw.data import diffusion_series, make_dataset, synthetic_graph
from mmfw.errors import ConfigError, DivergenceError, FormatError
from mmfw.graph import LleConfig, gaussian_adjacency
from mmfw.train import (
    TrainConfig,
    build_model,
    format_checkpoint,
    format_log,
    learning_rate,
    load_checkpoint,
    parse_checkpoint,
    read_checkpoint_meta,
    save_checkpoint,
    train,
)
from oracles import small_operator


def tiny_setup(epochs=3, seed=0, **kw):
    op, _ = small_operator(6, 3)
    _, a = synthetic_graph(6, 2, seed=0)
    ds = make_dataset(diffusion_series(a, 120, noise=0.1, seed=0), 4, 2)
    cfg = TrainConfig(epochs=epochs, batch=16, hidden=4, layers=1, seed=seed, **kw)
    return build_model(op, cfg), ds, cfg


def params(model):
    return {k: v.detach().clone() for k, v in model.named_parameters()}


class TestSchedule:
    @pytest.mark.parametrize("epoch,lr", [(0, 1e-2), (19, 1e-2), (20, 1e-3), (40, 1e-4)])
    def test_decay(self, epoch, lr):
        assert learning_rate(epoch, TrainConfig()) == pytest.approx(lr, rel=1e-12)


class TestDefaults:
    def test_shipped_defaults(self):
        cfg = TrainConfig()
        assert cfg.lr == 1e-2 and cfg.lr_decay == 0.1 and cfg.lr_decay_every == 20
        assert cfg.hidden == 64 and cfg.layers == 2 and cfg.dropout == 0.1
        assert LleConfig().lambda_a == 1e-5
        assert gaussian_adjacency.__defaults__ == (0.01,)
        assert OPTIONS["adjacency"]["threshold"][1] == 0.01
        assert OPTIONS["adjacency"]["lambda_a"][1] == 1e-5

    def test_validate(self):
        with pytest.raises(ConfigError):
            TrainConfig(lr=0).validate()
        with pytest.raises(ConfigError):
            TrainConfig(dropout=1.0).validate()


class TestTrain:
    def test_zero_epochs(self):
        model, ds, cfg = tiny_setup(epochs=0)
        before = params(model)
        _, records = train(model, ds, cfg)
        assert records == []
        assert all(torch.equal(before[k], v) for k, v in params(model).items())

    def test_loss_decreases(self):
        model, ds, cfg = tiny_setup(epochs=20)
        _, records = train(model, ds, cfg, validate=False)
        assert records[-1].loss < records[0].loss

    def test_deterministic(self):
        runs = []
        for _ in range(2):
            model, ds, cfg = tiny_setup(epochs=2, seed=3)
            _, rec = train(model, ds, cfg)
            runs.append(([(r.mae, r.rmse, r.loss) for r in rec], params(model)))
        assert runs[0][0] == runs[1][0]
        assert all(torch.equal(runs[0][1][k], runs[1][1][k]) for k in runs[0][1])

    def test_records(self):
        model, ds, cfg = tiny_setup(epochs=2)
        _, rec = train(model, ds, cfg)
        assert [(r.epoch, r.split) for r in rec] == [(0, "train"), (0, "val"), (1, "train"), (1, "val")]
        assert all(r.seconds >= 0 and math.isfinite(r.mae) for r in rec)
        log = format_log(rec).splitlines()
        assert log[0] == "epoch,split,mae,rmse,mape,seconds" and len(log) == 5

    def test_divergence(self):
        model, ds, cfg = tiny_setup(epochs=1)
        with torch.no_grad():
            model.proj_b.fill_(float("nan"))
        with pytest.raises(DivergenceError):
            train(model, ds, cfg)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        model, _, cfg = tiny_setup()
        save_checkpoint(tmp_path / "m.ckpt", model, {"hidden": 4, "layers": 1})
        other, _, _ = tiny_setup(seed=9)
        load_checkpoint(tmp_path / "m.ckpt", other)
        assert all(torch.equal(params(model)[k], v) for k, v in params(other).items())
        assert read_checkpoint_meta(tmp_path / "m.ckpt") == {"hidden": "4", "layers": "1"}
        assert format_checkpoint(other, {"hidden": 4, "layers": 1}) == (tmp_path / "m.ckpt").read_text()

    def test_mismatch(self, tmp_path):
        model, _, _ = tiny_setup()
        save_checkpoint(tmp_path / "m.ckpt", model)
        op, _ = small_operator(6, 3)
        bigger = build_model(op, TrainConfig(hidden=5, layers=1))
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "m.ckpt", bigger)

    @pytest.mark.parametrize("text", ["", "MODEL 1\n", "CHECKPOINT 1\nPARAM a 1 2\n1.0\n", "CHECKPOINT 2\nPARAM a 1 1\n1.0\n"])
    def test_malformed(self, text):
        with pytest.raises(FormatError):
            parse_checkpoint(text)

    def test_exact_values(self):
        model, _, _ = tiny_setup()
        state, _ = parse_checkpoint(format_checkpoint(model))
        for k, v in model.named_parameters():
            assert np.array_equal(state[k].numpy(), v.detach().numpy())
