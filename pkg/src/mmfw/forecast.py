"""Wavelet and diffusion graph convolutions, the WCGRU cell and the
encoder-decoder forecaster. Everything runs in float64 on the CPU.

Tensor layout is ``(batch, node, channel)``; single samples ``(node, channel)``
are accepted where noted.
"""
from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ShapeError
from .wavelets import WaveletBasis

DTYPE = torch.float64


class WaveletOperator:
    """Applies ``W^T`` (analysis) and ``W`` (synthesis) for a wavelet basis.

    ``sparse=True`` multiplies with a torch COO tensor; ``sparse=False`` uses
    the densified matrix and exists as a reference control.
    """

    def __init__(self, basis: WaveletBasis, sparse: bool = True):
        coo = basis.basis
        self.n = basis.n
        self.sparse = sparse
        idx = torch.from_numpy(np.vstack([coo.row_idx, coo.col_idx]))
        vals = torch.from_numpy(coo.values.copy())
        w = torch.sparse_coo_tensor(idx, vals, (self.n, self.n), dtype=DTYPE,
                                    check_invariants=True).coalesce()
        if sparse:
            self.w = w
            self.wt = w.t().coalesce()
        else:
            self.w = w.to_dense()
            self.wt = self.w.t().contiguous()

    def _apply(self, m, x: torch.Tensor) -> torch.Tensor:
        single = x.dim() == 2
        if single:
            x = x.unsqueeze(0)
        b, n, f = x.shape
        if n != self.n:
            raise ShapeError(f"signal has {n} nodes, basis dimension is {self.n}")
        flat = x.permute(1, 0, 2).reshape(n, b * f)
        out = torch.sparse.mm(m, flat) if self.sparse else m @ flat
        out = out.reshape(n, b, f).permute(1, 0, 2)
        return out[0] if single else out

    def analysis(self, x):
        return self._apply(self.wt, x)

    def synthesis(self, x):
        return self._apply(self.w, x)


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x, False
    return torch.as_tensor(np.asarray(x, dtype=np.float64)), True


def wavelet_conv(op: WaveletOperator, x, g, nonlinearity=None):
    """``out[..., j] = sigma(W sum_i diag(g[i, j]) W^T x[..., i])``.

    ``g`` has shape ``(F_in, F_out, n)``; ``nonlinearity=None`` is the identity.
    """
    x, from_np = _as_tensor(x)
    g, _ = _as_tensor(g)
    if g.dim() != 3 or g.shape[0] != x.shape[-1] or g.shape[2] != op.n:
        raise ShapeError(f"filter shape {tuple(g.shape)} does not fit input {tuple(x.shape)} on n={op.n}")
    coeff = op.analysis(x)
    if coeff.dim() == 2:
        mixed = torch.einsum("mi,ijm->mj", coeff, g)
    else:
        mixed = torch.einsum("bmi,ijm->bmj", coeff, g)
    out = op.synthesis(mixed)
    if nonlinearity is not None:
        out = nonlinearity(out)
    return out.numpy() if from_np else out


def diffusion_conv(a_tilde, x, theta):
    """``sum_k theta_k A^k x`` by repeated multiplication.

    ``theta`` of shape ``(K,)`` scales every channel; shape ``(K, D_in, D_out)``
    mixes channels after each power.
    """
    a, from_np = _as_tensor(a_tilde)
    x, _ = _as_tensor(x)
    theta, _ = _as_tensor(theta)
    if theta.dim() not in (1, 3) or theta.shape[0] < 1:
        raise ShapeError(f"theta must be (K,) or (K, D_in, D_out), got {tuple(theta.shape)}")
    if a.shape[-1] != x.shape[-2]:
        raise ShapeError(f"operator {tuple(a.shape)} does not fit input {tuple(x.shape)}")
    if theta.dim() == 3 and theta.shape[1] != x.shape[-1]:
        raise ShapeError(f"theta expects {theta.shape[1]} input channels, got {x.shape[-1]}")
    power = x
    out = None
    for k in range(theta.shape[0]):
        if k:
            power = a @ power
        term = theta[k] * power if theta.dim() == 1 else power @ theta[k]
        out = term if out is None else out + term
    return out.numpy() if from_np else out


GATES = ("r", "u", "c")


class WcGruCell(nn.Module):
    """GRU cell whose gate maps are stacks of ``depth`` wavelet convolutions.

    Each gate owns its filters and bias. The first filter maps the
    ``input_dim + hidden`` concatenation to ``hidden`` channels, later filters
    map ``hidden`` to ``hidden``; no nonlinearity between them.
    """

    def __init__(self, n: int, input_dim: int, hidden: int, depth: int = 2):
        super().__init__()
        if depth < 1 or hidden < 1 or input_dim < 1:
            raise ConfigError("depth, hidden and input_dim must be >= 1")
        self.n, self.input_dim, self.hidden, self.depth = n, input_dim, hidden, depth
        for gate in GATES:
            for d in range(depth):
                f_in = input_dim + hidden if d == 0 else hidden
                self.register_parameter(f"{gate}_g{d}", nn.Parameter(torch.zeros(f_in, hidden, n, dtype=DTYPE)))
            self.register_parameter(f"{gate}_b", nn.Parameter(torch.zeros(hidden, dtype=DTYPE)))

    def filters(self, gate: str) -> list[torch.Tensor]:
        return [getattr(self, f"{gate}_g{d}") for d in range(self.depth)]

    def bias(self, gate: str) -> torch.Tensor:
        return getattr(self, f"{gate}_b")


def _gate(op, cell, gate, z):
    for g in cell.filters(gate):
        z = wavelet_conv(op, z, g)
    return z + cell.bias(gate)


def wcgru_step(cell: WcGruCell, op: WaveletOperator, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
    if x.shape[-1] != cell.input_dim or h.shape[-1] != cell.hidden:
        raise ShapeError(f"cell expects {cell.input_dim} input and {cell.hidden} hidden channels")
    xh = torch.cat([x, h], dim=-1)
    r = torch.sigmoid(_gate(op, cell, "r", xh))
    u = torch.sigmoid(_gate(op, cell, "u", xh))
    c = torch.tanh(_gate(op, cell, "c", torch.cat([x, r * h], dim=-1)))
    return u * h + (1.0 - u) * c


def sampling_probability(i: int, tau: float) -> float:
    """Inverse-sigmoid decay ``tau / (tau + exp(i / tau))``."""
    if not tau > 0:
        raise ConfigError("tau must be positive")
    z = i / tau
    if z > 700.0:
        return 0.0
    return tau / (tau + math.exp(z))


def scheduled_sample(i: int, tau: float, rng: torch.Generator) -> bool:
    """True (feed ground truth) with probability ``sampling_probability(i, tau)``."""
    eps = sampling_probability(i, tau)
    return bool(torch.rand((), generator=rng, dtype=DTYPE).item() < eps)


def _dropout(x: torch.Tensor, p: float, rng: torch.Generator) -> torch.Tensor:
    if p == 0.0:
        return x
    keep = (torch.rand(x.shape, generator=rng, dtype=DTYPE) >= p).to(DTYPE)
    return x * keep / (1.0 - p)


class Seq2SeqModel(nn.Module):
    """Encoder-decoder of stacked WCGRU layers with a shared per-node readout.

    The decoder starts from the last observed value. In training mode,
    dropout hits each layer's output and scheduled sampling may replace the
    fed-back prediction by the target.
    """

    def __init__(self, op: WaveletOperator, hidden: int = 64, layers: int = 2,
                 input_dim: int = 1, depth: int = 2, dropout: float = 0.1, seed: int = 0):
        super().__init__()
        if layers < 1:
            raise ConfigError("layers must be >= 1")
        if not 0.0 <= dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        self.op = op
        self.n = op.n
        self.hidden, self.layers, self.input_dim, self.dropout = hidden, layers, input_dim, dropout
        dims = [input_dim] + [hidden] * (layers - 1)
        self.encoder = nn.ModuleList(WcGruCell(self.n, d, hidden, depth) for d in dims)
        self.decoder = nn.ModuleList(WcGruCell(self.n, d, hidden, depth) for d in dims)
        self.proj_w = nn.Parameter(torch.zeros(hidden, dtype=DTYPE))
        self.proj_b = nn.Parameter(torch.zeros(1, dtype=DTYPE))
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        """Uniform in ``+-1/sqrt(fan_in)`` with ``fan_in`` the leading dimension."""
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in self.parameters():
                bound = 1.0 / math.sqrt(p.shape[0])
                p.copy_((torch.rand(p.shape, generator=gen, dtype=DTYPE) * 2.0 - 1.0) * bound)

    def _layers(self, cells, inp, states, rng):
        for l, cell in enumerate(cells):
            states[l] = wcgru_step(cell, self.op, inp, states[l])
            inp = states[l]
            if self.training:
                inp = _dropout(inp, self.dropout, rng)
        return inp

    def forward(self, history, horizon: int, targets=None, batch_counter: int = 0,
                tau: float = 2000.0, rng: torch.Generator | None = None):
        """``history`` is ``(B, H, n)`` or ``(H, n)``; returns ``(B, horizon, n)`` (or ``(horizon, n)``)."""
        history, _ = _as_tensor(history)
        single = history.dim() == 2
        if single:
            history = history.unsqueeze(0)
            targets = None if targets is None else _as_tensor(targets)[0].unsqueeze(0)
        if history.dim() != 3 or history.shape[2] != self.n:
            raise ShapeError(f"history must be (B, H, {self.n}), got {tuple(history.shape)}")
        if history.shape[1] < 1:
            raise ShapeError("history must contain at least one step")
        if self.training and rng is None:
            rng = torch.Generator().manual_seed(0)
        b = history.shape[0]
        states = [history.new_zeros(b, self.n, self.hidden) for _ in range(self.layers)]
        for t in range(history.shape[1]):
            self._layers(self.encoder, history[:, t, :, None], states, rng)
        dec_in = history[:, -1, :, None]
        outs = []
        for t in range(horizon):
            top = self._layers(self.decoder, dec_in, states, rng)
            y = top @ self.proj_w + self.proj_b
            outs.append(y)
            if self.training and targets is not None and scheduled_sample(batch_counter, tau, rng):
                dec_in = targets[:, t, :, None]
            else:
                dec_in = y[..., None]
        pred = torch.stack(outs, dim=1) if outs else history.new_zeros(b, 0, self.n)
        return pred[0] if single else pred
