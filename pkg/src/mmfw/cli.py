"""``mmfw`` command line: factorize, wavelets, adjacency, train, eval, bench.

Exit status: 0 on success, 2 on usage errors (bad flags, missing input
files), 1 on runtime failures. Outputs are written atomically. Settings come
from the command line, then a ``--config`` file of ``key=value`` lines, then
built-in defaults. ``MMFW_LOG`` sets the log level (default WARNING).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import traceback
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from .errors import MmfwError
from .evaluation import (
    bench_sparsity_and_speed,
    format_bench_csv,
    format_bench_table,
    historical_average,
    metrics,
)
from .forecast import WaveletOperator
from .graph import LleConfig, gaussian_adjacency, knn_laplacian, laplacian, lle_adjacency, symmetrize
from .mmf import FactorizeConfig, factorize, read_factorization, write_factorization
from .sparse import atomic_write_text, read_matrix, write_matrix
from .train import (
    TrainConfig,
    build_model,
    format_log,
    load_checkpoint,
    predict,
    read_checkpoint_meta,
    save_checkpoint,
    train,
)
from .wavelets import extract_basis, read_basis, sparsity_report, write_basis

log = logging.getLogger("mmfw")

_TRAIN_DEFAULTS = TrainConfig()

# option name -> (type, default); None means required
OPTIONS = {
    "factorize": {
        "input": (str, None), "out": (str, None), "levels": (int, None), "order": (int, 2),
        "descent_iters": (int, 100), "seed": (int, 0),
    },
    "wavelets": {"input": (str, None), "out": (str, None), "drop_tol": (float, 0.0)},
    "adjacency": {
        "input": (str, None), "out": (str, None), "method": (str, "gaussian"),
        "threshold": (float, 0.01), "lambda_a": (float, 1e-5), "max_iters": (int, 1000),
        "symmetric": (bool, False), "laplacian": (bool, False),
    },
    "train": {
        "input": (str, None), "basis": (str, None), "out": (str, None), "log": (str, ""),
        "history": (int, 12), "horizon": (int, 12), "epochs": (int, _TRAIN_DEFAULTS.epochs),
        "seed": (int, 0), "threads": (int, 1), "hidden": (int, _TRAIN_DEFAULTS.hidden),
        "layers": (int, _TRAIN_DEFAULTS.layers), "batch": (int, _TRAIN_DEFAULTS.batch),
        "lr": (float, _TRAIN_DEFAULTS.lr), "dropout": (float, _TRAIN_DEFAULTS.dropout),
        "diffusion_steps": (int, _TRAIN_DEFAULTS.diffusion_steps_K),
        "tau": (float, _TRAIN_DEFAULTS.sampling_tau),
    },
    "eval": {
        "input": (str, None), "basis": (str, None), "checkpoint": (str, None), "out": (str, ""),
        "history": (int, 12), "horizon": (int, 12), "period": (int, 288), "split": (str, "test"),
        "threads": (int, 1),
    },
    "bench": {
        "out": (str, ""), "n": (int, 512), "levels": (int, 256), "order": (int, 2),
        "neighbors": (int, 8), "runs": (int, 5), "seed": (int, 0), "threads": (int, 1),
    },
}

# inputs that must exist before any work starts
INPUT_FILES = ("input", "basis", "checkpoint")

HELP = {
    "input": "input file", "out": "output file", "levels": "number of MMF levels L",
    "order": "rotation order k", "threshold": "Gaussian kernel distance threshold",
    "lambda_a": "l1 weight of the LLE adjacency", "history": "input window length",
    "horizon": "forecast horizon", "epochs": "training epochs", "seed": "random seed",
    "threads": "torch intra-op threads",
}

COMPONENTS = {
    "sparse.py": "sparse-core", "mmf.py": "mmf-factor", "wavelets.py": "wavelet-basis",
    "graph.py": "graph-adjacency", "data.py": "graph-adjacency", "forecast.py": "neural-forecast",
    "train.py": "neural-forecast", "evaluation.py": "eval-bench",
}


class UsageError(Exception):
    pass


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmfw", description="MMF wavelets and wavelet-convolutional forecasting")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(OPTIONS) + "}")
    sub.required = True
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value settings file")
        for key, (typ, default) in opts.items():
            flag = "--" + key.replace("_", "-")
            extra = ["--factorization"] if (name, key) == ("wavelets", "input") else []
            if typ is bool:
                p.add_argument(flag, dest=key, action="store_const", const=True, default=None,
                               help=HELP.get(key))
            else:
                p.add_argument(flag, *extra, dest=key, type=typ, default=None,
                               help=HELP.get(key, "") + (" (required)" if default is None else f" (default {default})"))
    return parser


def read_config(path) -> dict[str, str]:
    out = {}
    for k, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{k}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Flag, then config file, then default."""
    opts = OPTIONS[command]
    cfg = {}
    if args.config:
        if not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}")
        cfg = read_config(args.config)
        unknown = sorted(set(cfg) - set(opts))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    out = {}
    for key, (typ, default) in opts.items():
        v = getattr(args, key)
        if v is None and key in cfg:
            try:
                v = _bool(cfg[key]) if typ is bool else typ(cfg[key])
            except ValueError:
                raise UsageError(f"bad value for {key} in config: {cfg[key]!r}") from None
        if v is None:
            if default is None:
                raise UsageError(f"--{key.replace('_', '-')} is required")
            v = default
        out[key] = v
    for key in INPUT_FILES:
        if out.get(key) and not Path(out[key]).is_file():
            raise UsageError(f"input file not found: {out[key]}")
    if out.get("out") and not Path(out["out"]).resolve().parent.is_dir():
        raise UsageError(f"output directory does not exist: {Path(out['out']).parent}")
    return out


# ---------------------------------------------------------------------------
# subcommands

def cmd_factorize(o: dict) -> None:
    a = read_matrix(o["input"]).to_dense()
    f = factorize(a, FactorizeConfig(levels=o["levels"], order=o["order"],
                                     descent_iters=o["descent_iters"], seed=o["seed"]))
    write_factorization(o["out"], f)
    print(f"residual {f.residual!r}")


def cmd_wavelets(o: dict) -> None:
    w = extract_basis(read_factorization(o["input"]), o["drop_tol"])
    write_basis(o["out"], w)
    r = sparsity_report(w)
    print(f"wavelets n={r['n']} mothers={r['levels']} fathers={r['n'] - r['levels']} "
          f"nnz={r['nnz']} density={r['density_percent']:.4f}%")


def cmd_adjacency(o: dict) -> None:
    if o["method"] == "gaussian":
        coo = read_matrix(o["input"])
        d = coo.to_dense()
        # entries absent from a sparse distance file are unreachable pairs
        present = np.zeros(d.shape, dtype=bool)
        present[coo.row_idx, coo.col_idx] = True
        np.fill_diagonal(present, True)
        d[~present] = np.inf
        a = gaussian_adjacency(d, o["threshold"]).values
    elif o["method"] == "lle":
        x, _, _ = data_mod.read_series_csv(o["input"])
        a = lle_adjacency(x, LleConfig(lambda_a=o["lambda_a"], max_iters=o["max_iters"])).values
    else:
        raise UsageError(f"unknown --method {o['method']!r} (gaussian or lle)")
    if o["symmetric"] or o["laplacian"]:
        a = symmetrize(a)
    if o["laplacian"]:
        # signed LLE weights enter by magnitude
        a = laplacian(np.abs(a))
    write_matrix(o["out"], a)
    print(f"adjacency n={a.shape[0]} nnz={int(np.count_nonzero(a))}")


def _train_config(o: dict) -> TrainConfig:
    return TrainConfig(lr=o["lr"], dropout=o["dropout"], batch=o["batch"], layers=o["layers"],
                       hidden=o["hidden"], diffusion_steps_K=o["diffusion_steps"],
                       sampling_tau=o["tau"], epochs=o["epochs"], seed=o["seed"], threads=o["threads"])


def _check_basis(basis, ds) -> None:
    if basis.n != ds.n_nodes:
        raise UsageError(f"basis has dimension {basis.n} but the series has {ds.n_nodes} nodes")


def cmd_train(o: dict) -> None:
    cfg = _train_config(o)
    ds = data_mod.load_series(o["input"], o["history"], o["horizon"])
    basis = read_basis(o["basis"])
    _check_basis(basis, ds)
    model, records = train(build_model(WaveletOperator(basis), cfg), ds, cfg)
    meta = {"hidden": cfg.hidden, "layers": cfg.layers, "depth": cfg.diffusion_steps_K}
    save_checkpoint(o["out"], model, meta)
    if o["log"]:
        atomic_write_text(o["log"], format_log(records))
    last = [r for r in records if r.epoch == records[-1].epoch] if records else []
    for r in last:
        print(f"epoch {r.epoch} {r.split} mae {r.mae:.6f} rmse {r.rmse:.6f} mape {r.mape:.4f}")


def cmd_eval(o: dict) -> None:
    torch.set_num_threads(o["threads"])
    ds = data_mod.load_series(o["input"], o["history"], o["horizon"])
    basis = read_basis(o["basis"])
    _check_basis(basis, ds)
    meta = read_checkpoint_meta(o["checkpoint"])
    cfg = TrainConfig(hidden=int(meta.get("hidden", 64)), layers=int(meta.get("layers", 2)),
                      diffusion_steps_K=int(meta.get("depth", 2)))
    model = load_checkpoint(o["checkpoint"], build_model(WaveletOperator(basis), cfg))
    x, y = ds.windows(o["split"])
    if len(x) == 0:
        raise UsageError(f"split {o['split']!r} has no complete windows")
    truth = ds.denormalize(y)
    rows = [("wcgru", metrics(ds.denormalize(predict(model, x, ds.horizon)), truth)),
            ("ha", metrics(historical_average(ds, o["period"], o["split"]), truth))]
    lines = ["model,split,horizon,n_samples,mae,rmse,mape"]
    for name, m in rows:
        lines.append(f"{name},{o['split']},{m.horizon},{m.n_samples},{m.mae!r},{m.rmse!r},{m.mape!r}")
        print(f"{name:6s} mae {m.mae:.6f} rmse {m.rmse:.6f} mape {m.mape:.4f}%")
    if o["out"]:
        atomic_write_text(o["out"], "\n".join(lines) + "\n")


def cmd_bench(o: dict) -> None:
    torch.set_num_threads(o["threads"])
    k = o["neighbors"]
    report = bench_sparsity_and_speed(o["n"], lambda n, s: knn_laplacian(n, k, s), o["levels"],
                                      o["order"], o["runs"], seed=o["seed"])
    print(format_bench_table(report), end="")
    if o["out"]:
        atomic_write_text(o["out"], format_bench_csv([report.sparse, report.dense]))


COMMANDS = {"factorize": cmd_factorize, "wavelets": cmd_wavelets, "adjacency": cmd_adjacency,
            "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench}


def _component(exc: BaseException) -> str:
    frames = traceback.extract_tb(exc.__traceback__)
    for fr in reversed(frames):
        name = os.path.basename(fr.filename)
        if name in COMPONENTS:
            return COMPONENTS[name]
    return "cli"


def _setup_logging() -> None:
    level = os.environ.get("MMFW_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def run(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        opts = resolve(args.command, args)
        COMMANDS[args.command](opts)
    except UsageError as e:
        print(f"mmfw {args.command}: {e}", file=sys.stderr)
        return 2
    except (MmfwError, ValueError, ArithmeticError, OSError, RuntimeError) as e:
        print(f"mmfw {args.command}: {_component(e)}: {e}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1
    return 0


def main(argv=None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
