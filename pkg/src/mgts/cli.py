"""Command-line workbench: ``python -m mgts <command> [flags]``.

Every command is a pure function of (config, seed); re-running it rewrites
the same bytes. Each output directory receives ``run_config.txt`` holding the
effective configuration, which ``--config`` accepts back unchanged.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import pipeline
from .config import ConfigError, RunConfig
from .diffcore import ContractError, DegenerateInputError
from .evalkit import write_histogram_svg, write_line_svg, write_probe_csv, write_table_csv
from .evalkit import EvalConfigError
from .reidnet import (VARIANT_LABELS, VARIANTS, CheckpointError, TrainingConfigError, load_checkpoint,
                      save_checkpoint)
from .synthdata import DatasetConfigError, DatasetFormatError, GenerationError, load_dataset, save_dataset

COMMANDS = ("gen-data", "train", "eval", "ablate", "sweep-gamma", "sweep-gallery", "inspect-se", "selftest")
ABLATION_ORDER = ("single_O", "single_F", "single_B", "single_OE", "single_BE", "two_stream_OFE")

EXIT_CONFIG, EXIT_IO, EXIT_DATA, EXIT_FAILED = 2, 3, 4, 5


class SelftestFailure(RuntimeError):
    pass


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mgts", description="Mask-guided two-stream person search workbench.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", metavar="PATH", help="key = value run configuration (defaults for missing keys)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--checkpoint", metavar="PATH", help="model checkpoint to write (train) or read")
    p.add_argument("--data", metavar="DIR", help="load this dataset instead of generating one")
    p.add_argument("--variant", choices=sorted(VARIANTS), help="overrides model.variant")
    p.add_argument("--gallery-sizes", type=_int_list, metavar="LIST", help="overrides eval.gallery_sizes")
    p.add_argument("--gamma", type=_float_list, metavar="LIST", help="overrides eval.gammas (sweep-gamma)")
    return p


def effective_config(args) -> RunConfig:
    rc = cfgmod.load(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.variant:
        changes["model__variant"] = args.variant
    if args.gallery_sizes:
        changes["eval__gallery_sizes"] = args.gallery_sizes
    if args.gamma:
        changes["eval__gammas"] = args.gamma
    return cfgmod.override(rc, **changes) if changes else rc


def _out_dir(args) -> Path:
    if not args.out:
        raise ConfigError(f"{args.command} needs --out DIR")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(rc: RunConfig, out: Path) -> None:
    (out / "run_config.txt").write_text(rc.to_text())


def _dataset(rc: RunConfig, args):
    return load_dataset(args.data) if args.data else pipeline.build_dataset(rc)


def _model_from_checkpoint(args, rc: RunConfig):
    """(model, config with the checkpoint's model section) or None without --checkpoint."""
    if not args.checkpoint:
        return None, rc
    path = Path(args.checkpoint)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    model, _ = load_checkpoint(path)
    return model, replace(rc, model=model.cfg)


def _eval_rows(reports) -> list[dict]:
    rows = []
    for n, r in reports.items():
        row = {"gallery_size": n, "map": r.search_map}
        row.update({f"top{k}": v for k, v in sorted(r.cmc.items())})
        row.update(detection_ap=r.detection_ap, detection_recall=r.detection_recall)
        rows.append(row)
    return rows


# ---------------------------------------------------------------- commands


def cmd_gen_data(rc, args):
    out = _out_dir(args)
    save_dataset(pipeline.build_dataset(rc), out)
    _echo(rc, out)
    return f"dataset written to {out}"


def cmd_train(rc, args):
    out = _out_dir(args)
    ds = _dataset(rc, args)
    tm = pipeline.train_model(rc, ds)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.ckpt"
    save_checkpoint(tm.model, tm.oim_state, ckpt)
    rows = [{"epoch": e, "lr": lr, "loss": loss}
            for e, (lr, loss) in enumerate(zip(tm.log.epoch_lr, tm.log.epoch_loss))]
    write_table_csv(rows, out / "train_log.csv", "train-log")
    _echo(rc, out)
    return f"checkpoint {ckpt}, final loss {tm.log.epoch_loss[-1]:.4f}" if rows else f"checkpoint {ckpt}"


def cmd_eval(rc, args):
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint PATH")
    model, rc = _model_from_checkpoint(args, rc)
    out = _out_dir(args)
    ds = _dataset(rc, args)
    reports = pipeline.evaluate_sizes(rc, model, ds)
    for n, r in reports.items():
        write_probe_csv(r, out / f"probes_g{n}.csv")
    write_table_csv(_eval_rows(reports), out / "eval.csv", "eval")
    _echo(rc, out)
    return " ".join(f"mAP@{n}={r.search_map:.4f}" for n, r in reports.items())


def cmd_ablate(rc, args):
    out = _out_dir(args)
    ds = _dataset(rc, args)
    size = rc.eval.gallery_sizes[0]
    rows = []
    for variant in ABLATION_ORDER:
        run = rc.with_model(variant=variant)
        tm = pipeline.train_model(run, ds)
        r = pipeline.evaluate_sizes(run, tm.model, ds, [size])[size]
        rows.append({"label": VARIANT_LABELS[variant], "variant": variant, "gallery_size": size,
                     "map": r.search_map, "top1": r.top1})
    write_table_csv(rows, out / "ablation.csv", "ablation")
    _echo(rc, out)
    return " ".join(f"{row['label']}={row['map']:.4f}" for row in rows)


def cmd_sweep_gamma(rc, args):
    out = _out_dir(args)
    ds = _dataset(rc, args)
    size = rc.eval.gallery_sizes[0]
    rows = []
    for g in rc.eval.gammas:
        run = rc.with_model(gamma=g)
        tm = pipeline.train_model(run, ds)
        r = pipeline.evaluate_sizes(run, tm.model, ds, [size])[size]
        rows.append({"gamma": g, "gallery_size": size, "map": r.search_map, "top1": r.top1})
    write_table_csv(rows, out / "gamma_sweep.csv", "gamma-sweep")
    write_line_svg([r["gamma"] for r in rows], {"mAP": [r["map"] for r in rows], "top-1": [r["top1"] for r in rows]},
                   out / "gamma_sweep.svg", title="Search accuracy vs RoI expansion", xlabel="gamma")
    _echo(rc, out)
    return " ".join(f"{row['gamma']:g}:{row['map']:.4f}" for row in rows)


def cmd_sweep_gallery(rc, args):
    out = _out_dir(args)
    model, rc = _model_from_checkpoint(args, rc)
    ds = _dataset(rc, args)
    if model is None:
        model = pipeline.train_model(rc, ds).model
    rows = _eval_rows(pipeline.evaluate_sizes(rc, model, ds))
    write_table_csv(rows, out / "gallery_sweep.csv", "gallery-sweep")
    xs = [r["gallery_size"] for r in rows]
    series = {"mAP": [r["map"] for r in rows]}
    if "top1" in rows[0]:
        series["top-1"] = [r["top1"] for r in rows]
    write_line_svg(xs, series, out / "gallery_sweep.svg", title="Search accuracy vs gallery size",
                   xlabel="gallery size")
    _echo(rc, out)
    return " ".join(f"{r['gallery_size']}:{r['map']:.4f}" for r in rows)


def cmd_inspect_se(rc, args):
    out = _out_dir(args)
    model, rc = _model_from_checkpoint(args, rc)
    if rc.model.variant != "two_stream_OFE":
        raise ConfigError("inspect-se needs model.variant = two_stream_OFE")
    ds = _dataset(rc, args)
    if model is None:
        model = pipeline.train_model(rc, ds).model
    stats = pipeline.se_inspection(model, ds)
    rows = [{"sample": i, "avg_f": float(f), "avg_o": float(o), "n20f": int(n)}
            for i, (f, o, n) in enumerate(zip(stats.avg_f, stats.avg_o, stats.n20f))]
    write_table_csv(rows, out / "se_stats.csv", "se-stats")
    write_histogram_svg([int(c) for c in stats.histogram], out / "se_histogram.svg",
                        title="Foreground channels among the 20 largest SE weights")
    _echo(rc, out)
    return (f"Avg(F)>Avg(O) for {stats.frac_f_above_o:.3f} of samples; "
            f"N20F>10 for {float(np.mean(stats.n20f > 10)):.3f}")


def cmd_selftest(rc, args):
    from .selftest import run_selftest

    failures, n = run_selftest()
    if failures:
        raise SelftestFailure(f"{len(failures)} of {n} checks failed: {', '.join(failures)}")
    return f"{n} checks passed"


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep-gamma": cmd_sweep_gamma,
    "sweep-gallery": cmd_sweep_gallery,
    "inspect-se": cmd_inspect_se,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = effective_config(args)
        message = HANDLERS[args.command](rc, args)
    except (ConfigError, DatasetConfigError, EvalConfigError, TrainingConfigError) as exc:
        print(f"mgts: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CheckpointError) as exc:
        print(f"mgts: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DatasetFormatError, GenerationError, ContractError, DegenerateInputError) as exc:
        print(f"mgts: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SelftestFailure as exc:
        print(f"mgts: selftest failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    print(f"mgts {args.command}: {message}")
    return 0
