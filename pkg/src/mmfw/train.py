"""Training loop, learning-rate schedule, gradients and checkpoints.

Checkpoint grammar (one block per parameter, in registration order)::

    CHECKPOINT <count>
    META <key>=<value> ...        (optional, architecture settings)
    PARAM <name> <ndim> <dim_1> ... <dim_ndim>
    <values, row-major, space separated>
"""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch

from .data import ForecastDataset
from .errors import ConfigError, DivergenceError, FormatError
from .evaluation import metrics_or_nan
from .forecast import DTYPE, Seq2SeqModel
from .sparse import atomic_write_text

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-2
    lr_decay: float = 0.1
    lr_decay_every: int = 20
    dropout: float = 0.1
    batch: int = 64
    layers: int = 2
    hidden: int = 64
    diffusion_steps_K: int = 2
    sampling_tau: float = 2000.0
    epochs: int = 100
    seed: int = 0
    clip_norm: float = 5.0
    threads: int = 1

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("epochs", "seed"):
                if v < 0:
                    raise ConfigError(f"{f.name} must be >= 0")
            elif f.name == "dropout":
                if not 0 <= v < 1:
                    raise ConfigError("dropout must be in [0, 1)")
            elif not v > 0:
                raise ConfigError(f"{f.name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def learning_rate(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_decay_every)


def build_model(op, cfg: TrainConfig) -> Seq2SeqModel:
    return Seq2SeqModel(op, hidden=cfg.hidden, layers=cfg.layers, depth=cfg.diffusion_steps_K,
                        dropout=cfg.dropout, seed=cfg.seed)


def mae_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    # d|x|/dx at 0 is sign(0) = 0 in torch, so exact ties contribute no gradient
    return (pred - target).abs().mean()


def compute_gradients(model: Seq2SeqModel, x, y, batch_counter: int = 0, tau: float = 2000.0,
                      rng: torch.Generator | None = None) -> dict[str, torch.Tensor]:
    """MAE-loss gradients for every named parameter (training-mode forward)."""
    model.train()
    model.zero_grad()
    x = torch.as_tensor(x, dtype=DTYPE)
    y = torch.as_tensor(y, dtype=DTYPE)
    pred = model(x, y.shape[1], targets=y, batch_counter=batch_counter, tau=tau, rng=rng)
    mae_loss(pred, y).backward()
    return {name: (p.grad.clone() if p.grad is not None else torch.zeros_like(p))
            for name, p in model.named_parameters()}


@dataclass
class EpochRecord:
    epoch: int
    split: str
    mae: float
    rmse: float
    mape: float
    seconds: float
    loss: float = float("nan")  # mean normalized training loss


def predict(model: Seq2SeqModel, x, horizon: int, batch: int = 256) -> np.ndarray:
    """Evaluation-mode predictions on normalized inputs ``(B, H, n)``."""
    model.eval()
    out = []
    with torch.no_grad():
        for s in range(0, len(x), batch):
            xb = torch.as_tensor(x[s:s + batch], dtype=DTYPE)
            out.append(model(xb, horizon).numpy())
    return np.concatenate(out) if out else np.zeros((0, horizon, model.n))


def train(model: Seq2SeqModel, dataset: ForecastDataset, cfg: TrainConfig,
          validate: bool = True) -> tuple[Seq2SeqModel, list[EpochRecord]]:
    """Adam on the normalized MAE loss; returns the model and the per-epoch log.

    Shuffling, dropout and scheduled sampling all draw from one generator
    seeded by ``cfg.seed``, so a run is reproducible on one thread.
    """
    cfg.validate()
    torch.set_num_threads(cfg.threads)
    x_tr, y_tr = dataset.windows("train")
    if len(x_tr) == 0:
        raise ConfigError("training split has no complete windows")
    x_va, y_va = dataset.windows("val")
    rng = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    xt = torch.as_tensor(x_tr, dtype=DTYPE)
    yt = torch.as_tensor(y_tr, dtype=DTYPE)
    records: list[EpochRecord] = []
    counter = 0
    for epoch in range(cfg.epochs):
        for group in opt.param_groups:
            group["lr"] = learning_rate(epoch, cfg)
        model.train()
        t0 = time.perf_counter()
        perm = torch.randperm(len(xt), generator=rng)
        losses, preds = [], []
        for s in range(0, len(perm), cfg.batch):
            ix = perm[s:s + cfg.batch]
            opt.zero_grad()
            pred = model(xt[ix], dataset.horizon, targets=yt[ix], batch_counter=counter,
                         tau=cfg.sampling_tau, rng=rng)
            loss = mae_loss(pred, yt[ix])
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}, batch {s // cfg.batch}")
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
            opt.step()
            counter += 1
            losses.append(loss.item() * len(ix))
            preds.append((ix.numpy(), pred.detach().numpy()))
        seconds = time.perf_counter() - t0
        order = np.concatenate([i for i, _ in preds])
        p_tr = np.empty_like(y_tr)
        p_tr[order] = np.concatenate([p for _, p in preds])
        m = metrics_or_nan(dataset.denormalize(p_tr), dataset.denormalize(y_tr))
        rec = EpochRecord(epoch, "train", m.mae, m.rmse, m.mape, seconds, sum(losses) / len(xt))
        records.append(rec)
        if validate and len(x_va):
            t1 = time.perf_counter()
            p_va = predict(model, x_va, dataset.horizon)
            mv = metrics_or_nan(dataset.denormalize(p_va), dataset.denormalize(y_va))
            records.append(EpochRecord(epoch, "val", mv.mae, mv.rmse, mv.mape, time.perf_counter() - t1))
        log.info("epoch %d: loss %.6f train mae %.4f (%.2fs)", epoch, rec.loss, rec.mae, seconds)
    return model, records


LOG_COLUMNS = ("epoch", "split", "mae", "rmse", "mape", "seconds")


def format_log(records: list[EpochRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in records:
        w.writerow([r.epoch, r.split, repr(r.mae), repr(r.rmse), repr(r.mape), f"{r.seconds:.6f}"])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# checkpoints

def format_checkpoint(model: torch.nn.Module, meta: dict | None = None) -> str:
    params = list(model.named_parameters())
    lines = [f"CHECKPOINT {len(params)}"]
    if meta:
        lines.append("META " + " ".join(f"{k}={v}" for k, v in meta.items()))
    for name, p in params:
        shape = tuple(p.shape)
        lines.append(" ".join(["PARAM", name, str(len(shape))] + [str(d) for d in shape]))
        lines.append(" ".join(repr(float(v)) for v in p.detach().reshape(-1).tolist()))
    return "\n".join(lines) + "\n"


def parse_checkpoint(text: str) -> tuple[dict[str, torch.Tensor], dict[str, str]]:
    """Returns ``(parameters by name, META settings)``."""
    lines = text.splitlines()
    try:
        tag, count = lines[0].split()
        if tag != "CHECKPOINT":
            raise ValueError
        count = int(count)
    except (ValueError, IndexError):
        raise FormatError("checkpoint must start with 'CHECKPOINT <count>'") from None
    meta = {}
    if len(lines) > 1 and lines[1].startswith("META"):
        meta = dict(item.split("=", 1) for item in lines[1].split()[1:] if "=" in item)
        lines = lines[:1] + lines[2:]
    out = {}
    for k in range(count):
        try:
            head = lines[1 + 2 * k].split()
            vals = lines[2 + 2 * k].split()
            if head[0] != "PARAM":
                raise ValueError
            ndim = int(head[2])
            shape = tuple(int(d) for d in head[3:3 + ndim])
            if len(head) != 3 + ndim:
                raise ValueError
            t = torch.tensor([float(v) for v in vals], dtype=DTYPE)
            out[head[1]] = t.reshape(shape)
        except (ValueError, IndexError, RuntimeError):
            raise FormatError(f"bad parameter block {k}") from None
    return out, meta


def save_checkpoint(path, model: torch.nn.Module, meta: dict | None = None) -> None:
    atomic_write_text(path, format_checkpoint(model, meta))


def read_checkpoint_meta(path) -> dict[str, str]:
    return parse_checkpoint(Path(path).read_text())[1]


def load_checkpoint(path, model: torch.nn.Module) -> torch.nn.Module:
    state, _ = parse_checkpoint(Path(path).read_text())
    own = dict(model.named_parameters())
    if set(state) != set(own):
        raise FormatError("checkpoint parameters do not match the model")
    with torch.no_grad():
        for name, p in own.items():
            if tuple(state[name].shape) != tuple(p.shape):
                raise FormatError(f"shape mismatch for {name}")
            p.copy_(state[name])
    return model
