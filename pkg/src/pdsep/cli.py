"""``pdsep`` command line: synth, train, separate, eval, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
failure (non-finite loss, failed gradient check).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .arrays import read_array, write_array, write_pgm
from .backbone.gradcheck import CATALOGUE, run_suite
from .backbone.tensor import ShapeError
from .config import ConfigError, Option
from .dataset import FormatError, load_dataset, save_dataset, synth_dataset
from .mixing import source_bank
from .nets import ArchDescriptor

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SEED_ENV = "PDSEP_SEED"

log = logging.getLogger("pdsep")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericError(Exception):
    pass


def _int_list(raw: str) -> str:
    # validated here, kept as text so the resolved config echoes it verbatim
    if raw:
        [int(v) for v in raw.split(",")]
    return raw


def _float_list(raw: str) -> str:
    if raw:
        [float(v) for v in raw.split(",")]
    return raw


SEED = Option("seed", int, None, f"base seed (default: ${SEED_ENV}, else 0)")

OPTIONS = {
    "synth": [
        Option("kind", str, "inst", "mixing model", choices=("inst", "conv")),
        Option("n", int, 2, "number of sources"),
        Option("count", int, 200, "number of records"),
        SEED,
        Option("klen", int, 8, "convolution kernel length (2-D: side of a square kernel)"),
        Option("length", int, None, "signal length T or image side (default 256 / 32)"),
        Option("rank", int, 1, "1 for signals, 2 for images", choices=(1, 2)),
        Option("split", str, "train", "weight-draw stream", choices=("train", "test")),
        Option("out", str, None, "output dataset path"),
    ],
    "train": [
        Option("data", str, None, "training dataset"),
        Option("n", int, None, "expected number of sources (default: from dataset)"),
        Option("epochs", int, 2000, "passes over the dataset"),
        Option("n_critic", int, 3, "critic updates per generator update"),
        Option("lr", float, 5e-5, "RMSProp learning rate"),
        Option("mode", str, "clip", "critic regulariser", choices=("clip", "gp")),
        Option("clip", float, 0.05, "critic weight clipping bound"),
        Option("lambda_gp", float, 10.0, "gradient penalty weight"),
        Option("lambda_u", float, 1000.0, "mixture reconstruction weight"),
        Option("lambda_v", float, 1000.0, "source reconstruction weight"),
        SEED,
        Option("ckpt_interval", int, 0, "epochs between interim checkpoints (0: final only)"),
        Option("workers", int, 1, "processes training sub-models in parallel"),
        Option("channels", _int_list, "", "generator channels per level (default per rank)"),
        Option("dropout", _float_list, "", "decoder dropout rates, innermost first"),
        Option("critic_channels", _int_list, "", "critic channels per layer"),
        Option("out", str, None, "checkpoint path"),
        Option("log", str, None, "loss log CSV (default: <out>.log.csv)"),
    ],
    "separate": [
        Option("ckpt", str, None, "checkpoint"),
        Option("input", str, None, "mixture as a raw array file"),
        Option("data", str, None, "dataset to take the mixture from instead"),
        Option("record", int, 0, "record index within --data"),
        Option("out", str, None, "output directory"),
        Option("det", bool, False, "disable dropout at inference (debugging only)", flag=True),
        Option("passes", int, 1, "stochastic passes to average"),
        Option("pgm", bool, False, "also render 2-D estimates as PGM/PPM", flag=True),
        SEED,
    ],
    "eval": [
        Option("ckpt", str, None, "checkpoint (not needed with --oracle)"),
        Option("data", str, None, "test dataset"),
        Option("out", str, None, "metrics CSV path"),
        Option("oracle", bool, False, "score the ground truth against itself", flag=True),
        Option("passes", int, 1, "stochastic passes to average"),
        Option("det", bool, False, "disable dropout at inference (debugging only)", flag=True),
        Option("permute", bool, False, "best-permutation pairing (diagnostic)", flag=True),
        SEED,
    ],
    "gradcheck": [
        Option("tol", float, 1e-3, "relative error tolerance"),
        Option("cases", int, 100, "randomised cases per op"),
        SEED,
        Option("op", str, "", "comma-separated subset of ops"),
        Option("out", str, None, "optional report path"),
    ],
}

HELP = {
    "synth": "synthesise a labelled mixture dataset",
    "train": "train N parallel dual pairs",
    "separate": "estimate the sources of one mixture",
    "eval": "score separations on a dataset",
    "gradcheck": "finite-difference check of every backbone op",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pdsep", description="Single-channel source separation with parallel dual GANs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, options in OPTIONS.items():
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", help="key=value file; flags override its entries")
        for o in options:
            if o.flag:
                p.add_argument(o.cli, dest=o.key, action="store_const", const=True, default=None, help=o.help)
            else:
                p.add_argument(o.cli, dest=o.key, type=o.type, choices=o.choices, default=None, help=o.help)
    return parser


def _resolve(command: str, args: argparse.Namespace) -> dict:
    options = OPTIONS[command]
    file_values = cfgmod.load_file(args.config) if args.config else {}
    values = cfgmod.resolve(options, file_values, {o.key: getattr(args, o.key) for o in options})
    if "seed" in values and values["seed"] is None:
        raw = os.environ.get(SEED_ENV)
        try:
            values["seed"] = int(raw) if raw else 0
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    return values


def _require(values: dict, *keys: str) -> None:
    missing = [k for k in keys if values.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _load_dataset(path):
    try:
        return load_dataset(path)
    except FormatError as exc:
        raise DataError(str(exc)) from None


def _load_checkpoint(path):
    from .checkpoint import load_checkpoint

    try:
        return load_checkpoint(path)
    except FormatError as exc:
        raise DataError(str(exc)) from None


# -- commands ------------------------------------------------------------------

def cmd_synth(v: dict) -> None:
    _require(v, "out")
    length = v["length"] or (256 if v["rank"] == 1 else 32)
    try:
        bank = source_bank(v["rank"], length)
        ds = synth_dataset(bank, v["count"], v["kind"], v["n"], v["klen"], seed=v["seed"], split=v["split"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write(lambda: save_dataset(ds, v["out"]), v["out"])
    cfgmod.write_resolved(v["out"] + ".cfg", v)
    print(f"wrote {v['out']}: N={v['n']} kind={v['kind']} count={v['count']} seed={v['seed']} shape={ds.manifest.shape}")


def _write(fn, path) -> None:
    try:
        fn()
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None


def _arch_for(shape: tuple, v: dict) -> ArchDescriptor:
    if len(shape) == 1:
        base = ArchDescriptor.default_1d(shape[0])
    elif shape[0] == shape[1]:
        base = ArchDescriptor.default_2d(shape[0], shape[2])
    else:
        raise DataError(f"images must be square, got shape {shape}")
    overrides = {}
    if v["channels"]:
        overrides["channels"] = tuple(int(c) for c in v["channels"].split(","))
        if not v["dropout"]:
            overrides["dropout"] = (0.5, 0.5)[: len(overrides["channels"]) - 1] + (0.0,) * max(0, len(overrides["channels"]) - 3)
    if v["dropout"]:
        overrides["dropout"] = tuple(float(r) for r in v["dropout"].split(","))
    if v["critic_channels"]:
        overrides["critic_channels"] = tuple(int(c) for c in v["critic_channels"].split(","))
    if not overrides:
        return base
    fields = {k: getattr(base, k) for k in base.__dataclass_fields__}
    try:
        return ArchDescriptor(**(fields | overrides))
    except ValueError as exc:
        raise UsageError(f"invalid architecture: {exc}") from None


def cmd_train(v: dict) -> None:
    from .checkpoint import save_checkpoint
    from .trainer import NaNLossError, PDualGanModel, TrainConfig, TrainLog, train

    _require(v, "data", "out")
    ds = _load_dataset(v["data"])
    n = ds.manifest.n
    if v["n"] is not None and v["n"] != n:
        raise DataError(f"--n {v['n']} does not match the dataset's N={n}")
    v["n"] = n
    desc = _arch_for(tuple(ds.manifest.shape), v)
    try:
        tc = TrainConfig(
            n_critic=v["n_critic"], lr=v["lr"], epochs=v["epochs"], mode=v["mode"], clip=v["clip"],
            lambda_gp=v["lambda_gp"], lambda_u=v["lambda_u"], lambda_v=v["lambda_v"], seed=v["seed"],
            checkpoint_interval=v["ckpt_interval"], workers=v["workers"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    log_path = v["log"] or v["out"] + ".log.csv"
    v["log"] = log_path
    cfgmod.write_resolved(v["out"] + ".cfg", v)
    model = PDualGanModel.for_config(n, desc, tc)
    try:
        model, trainlog = train(model, ds, tc, checkpoint_path=v["out"])
    except NaNLossError as exc:
        TrainLog(exc.entries).write_csv(log_path)
        raise NumericError(str(exc)) from None
    except OSError as exc:
        raise DataError(f"cannot write checkpoint: {exc}") from None
    _write(lambda: trainlog.write_csv(log_path), log_path)
    print(f"trained N={n} for {tc.epochs} epoch(s) on {len(ds)} record(s); {len(trainlog)} loss entries")
    print(f"checkpoint {v['out']}  log {log_path}")


def _estimates(model, mixture, v: dict, stream: int = 0):
    from .trainer import separate

    if v["passes"] < 1:
        raise UsageError(f"--passes must be >= 1, got {v['passes']}")
    try:
        return separate(model, mixture, seed=v["seed"], passes=v["passes"], deterministic=v["det"], stream=stream)
    except ShapeError as exc:
        raise DataError(str(exc)) from None


def cmd_separate(v: dict) -> None:
    _require(v, "ckpt", "out")
    if (v["input"] is None) == (v["data"] is None):
        raise UsageError("give exactly one of --input or --data")
    model = _load_checkpoint(v["ckpt"])
    if v["input"] is not None:
        try:
            mixture = read_array(v["input"])
        except FormatError as exc:
            raise DataError(str(exc)) from None
    else:
        ds = _load_dataset(v["data"])
        if not 0 <= v["record"] < len(ds):
            raise UsageError(f"--record {v['record']} out of range for {len(ds)} record(s)")
        mixture = ds[v["record"]].mixture
    estimates = _estimates(model, mixture, v)
    out = Path(v["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        for i, est in enumerate(estimates):
            write_array(out / f"source{i}.f32", est)
            if v["pgm"] and model.desc.rank == 2:
                write_pgm(out / f"source{i}.pgm", est)
    except OSError as exc:
        raise DataError(f"cannot write estimates to {out}: {exc}") from None
    cfgmod.write_resolved(out / "separate.cfg", v)
    print(f"wrote {len(estimates)} estimate(s) to {out}")


def cmd_eval(v: dict) -> None:
    from .metrics import UndefinedCorrelationError, evaluate, report_csv

    _require(v, "data", "out")
    ds = _load_dataset(v["data"])
    if v["oracle"]:
        estimates = [list(r.sources) for r in ds]
    else:
        _require(v, "ckpt")
        model = _load_checkpoint(v["ckpt"])
        if model.n != ds.manifest.n:
            raise DataError(f"checkpoint has N={model.n}, dataset has N={ds.manifest.n}")
        estimates = [_estimates(model, r.mixture, v, stream=k) for k, r in enumerate(ds)]
    try:
        report = evaluate(estimates, ds, permute=v["permute"])
    except UndefinedCorrelationError as exc:
        raise NumericError(str(exc)) from None
    _write(lambda: report_csv(report, v["out"]), v["out"])
    cfgmod.write_resolved(v["out"] + ".cfg", v)
    for i, (p, r, b) in enumerate(zip(report.mean_psnr(), report.mean_corr(), report.mean_baseline())):
        print(f"source {i}: psnr_db={p:.4f} corr={r:.4f} baseline_corr={b:.4f}")
    print(f"mean: psnr_db={report.grand_psnr():.4f} corr={report.grand_corr():.4f} "
          f"baseline_corr={report.grand_baseline():.4f} records={report.records} psnr_capped={report.sentinel_count}")


def cmd_gradcheck(v: dict) -> None:
    only = [s for s in v["op"].split(",") if s] or None
    unknown = sorted(set(only or ()) - set(CATALOGUE))
    if unknown:
        raise UsageError(f"unknown op(s) {', '.join(unknown)}; known: {', '.join(CATALOGUE)}")
    if v["cases"] < 1 or v["tol"] <= 0:
        raise UsageError("--cases must be >= 1 and --tol positive")
    results = run_suite(cases=v["cases"], tol=v["tol"], seed=v["seed"], only=only)
    lines = [f"{r.op:<12} cases={r.cases} max_rel_error={r.max_rel_error:.3e} {'PASS' if r.passed else 'FAIL'}"
             for r in results]
    failed = [r.op for r in results if not r.passed]
    lines.append(f"{len(results) - len(failed)}/{len(results)} ops passed at tol={v['tol']:g}")
    print("\n".join(lines))
    if v["out"]:
        _write(lambda: Path(v["out"]).write_text("\n".join(lines) + "\n"), v["out"])
        cfgmod.write_resolved(v["out"] + ".cfg", v)
    if failed:
        raise NumericError("gradient check failed for: " + ", ".join(failed))


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "separate": cmd_separate, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        values = _resolve(args.command, args)
        COMMANDS[args.command](values)
    except (UsageError, ConfigError) as exc:
        print(f"pdsep {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"pdsep {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"pdsep {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK
