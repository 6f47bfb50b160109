"""Command-line interface: ``deepjam simulate|train|align|template|evaluate``.

Every command writes into ``--out`` under a lockfile, writes each file via a
temporary name and an atomic rename, and appends an entry to
``run.json`` in the output directory. Exit codes: 0 success, 2 invalid
arguments or configuration, 3 missing or corrupt input files, 4 numerical
failure, 5 convergence failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, preset_names, sim_config, train_config
from .estimator import DeepJAM
from .grid import WarpError, _extend_values, _srsf, _srsf_inverse
from .jam import _subject_templates, align_new, apply_warps
from .metrics import VarianceReport
from .simgen import simulate
from .sphere import OrthantError
from .warpnet import load_checkpoint, save_checkpoint

logger = logging.getLogger("deepjam")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INPUT = 3
EXIT_RUNTIME = 4
EXIT_CONVERGENCE = 5

RUN_FORMAT = "deepjam-run"
CHECKPOINT_NAME = "checkpoint.zip"


class InputError(Exception):
    """An input file is missing, corrupt, or inconsistent."""


def software_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


@dataclass
class RunManifest:
    """One command invocation, with enough detail to rerun it bit-for-bit."""

    command: str
    seed: int | None
    config: dict = field(default_factory=dict)
    data: str | None = None
    split: str | None = None
    checkpoint: str | None = None
    outputs: dict = field(default_factory=dict)
    metrics: dict | None = None
    loss_curve: list | None = None
    variance_curve: list | None = None
    software_version: str = field(default_factory=software_version)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def append_manifest(out: Path, entry: RunManifest) -> None:
    path = out / "run.json"
    doc = io.read_json(path) if path.exists() else {"format": RUN_FORMAT, "version": 1, "runs": []}
    if doc.get("format") != RUN_FORMAT:
        raise InputError(f"{path} exists but is not a deepjam run manifest")
    entry.outputs = {name: _sha256(out / name) for name in sorted(entry.outputs)}
    doc["runs"].append(asdict(entry))
    io.write_json(path, doc)


def last_run(path: Path) -> dict:
    doc = io.read_json(path / "run.json")
    if doc.get("format") != RUN_FORMAT or not doc.get("runs"):
        raise InputError(f"{path / 'run.json'} holds no runs")
    return doc["runs"][-1]


@contextmanager
def locked(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".deepjam.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise InputError(f"{out} is locked by another deepjam process (remove {lock} if that process died)") from None
    os.close(fd)
    try:
        yield out
    finally:
        lock.unlink(missing_ok=True)


def _load_dataset(path: str, split: str | None = None) -> io.Dataset:
    try:
        ds = io.read_dataset(path)
    except (io.FormatError, KeyError) as exc:
        raise InputError(f"cannot read dataset {path}: {exc}") from exc
    return ds.subset(split) if split else ds


def _write_functions(out: Path, prefix: str, values: np.ndarray) -> list[str]:
    names = []
    for j in range(values.shape[2]):
        name = f"{prefix}_channel_{j + 1}.csv"
        io.write_text(out / name, io.matrix_to_csv(values[:, :, j], io.unit_grid(values.shape[1])))
        names.append(name)
    return names


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> None:
    if args.scenario not in (1, 2):
        raise ConfigError("--scenario must be 1 or 2")
    cfg = sim_config(args.config, seed=args.seed)
    ds = simulate(args.scenario, cfg)
    truth = {
        "true_total": ds.true_total,
        "true_global": ds.true_global,
        "true_local": ds.true_local,
        "template": ds.template,
        "extended_template": ds.extended_template,
        "amplitudes": ds.amplitudes,
    }
    meta = {"scenario": args.scenario, "seed": cfg.seed, "generator": asdict(cfg)}
    with locked(Path(args.out)) as out:
        files = io.write_dataset(out, ds.functions, cfg.num_periods, meta, truth, ds.split)
        append_manifest(out, RunManifest("simulate", cfg.seed, asdict(cfg), outputs=dict.fromkeys(files)))


def cmd_train(args) -> None:
    values = train_config(args.preset, args.config, seed=args.seed, outer_iterations=args.iterations)
    ds = _load_dataset(args.data)
    split = values["split"] if ds.split is not None else None
    if split:
        ds = ds.subset(split)
    if ds.num_periods != values["num_periods"]:
        raise ConfigError(f"config asks for K={values['num_periods']} but the dataset has K={ds.num_periods}")
    est = DeepJAM.from_config(values)

    def progress(e, loss, variance):
        logger.info("iteration %d/%d loss %.6g variance %s", e, values["outer_iterations"], loss,
                    np.array2string(np.asarray(variance), precision=4))

    est.fit(ds.functions, callback=progress)
    res = est.result_
    with locked(Path(args.out)) as out:
        files = io.write_result(out, res, {"data": args.data, "split": split})
        save_checkpoint(
            est.net_, out / CHECKPOINT_NAME,
            extra={"config": values, "num_periods": res.num_periods},
            extra_arrays={"centering_warp": res.centering_warp},
        )
        files.append(CHECKPOINT_NAME)
        append_manifest(out, RunManifest(
            "train", values["seed"], values, data=args.data, split=split, checkpoint=CHECKPOINT_NAME,
            outputs=dict.fromkeys(files), loss_curve=res.loss_history, variance_curve=res.variance_history,
        ))


def cmd_align(args) -> None:
    if not args.checkpoint:
        raise ConfigError("align needs --checkpoint")
    try:
        net, extra, arrays = load_checkpoint(args.checkpoint)
    except (ValueError, KeyError, OSError) as exc:
        raise InputError(str(exc)) from exc
    if "centering_warp" not in arrays:
        raise InputError(f"{args.checkpoint} lacks the centering warp; was it written by 'deepjam train'?")
    ds = _load_dataset(args.data, args.split)
    if ds.num_periods != extra.get("num_periods"):
        raise InputError(f"dataset has K={ds.num_periods} but the checkpoint was trained with K={extra.get('num_periods')}")
    n, P, J = ds.functions.shape
    if (P, J) != (net.config.num_points, net.config.num_channels):
        raise InputError(f"dataset has {P} points and {J} channels; the checkpoint expects "
                         f"{net.config.num_points} and {net.config.num_channels}")
    warps = align_new(net, ds.functions, arrays["centering_warp"])
    aligned = apply_warps(ds.functions, warps)
    with locked(Path(args.out)) as out:
        io.write_text(out / "total_warps.csv", io.matrix_to_csv(warps, io.unit_grid(P)))
        files = ["total_warps.csv"] + _write_functions(out, "aligned", aligned)
        append_manifest(out, RunManifest(
            "align", extra.get("config", {}).get("seed"), extra.get("config", {}), data=args.data,
            split=args.split, checkpoint=args.checkpoint, outputs=dict.fromkeys(files),
        ))


def _result_dir(args) -> Path:
    path = args.result or args.data
    if not path:
        raise ConfigError("give the result directory with --result")
    return Path(path)


def cmd_template(args) -> None:
    rdir = _result_dir(args)
    try:
        res, meta = io.read_result(rdir)
    except io.FormatError as exc:
        raise InputError(f"{exc}; template needs the output directory of 'deepjam train'") from exc
    run = last_run(rdir)
    ds = _load_dataset(meta["data"], meta.get("split"))
    f = ds.functions
    if f.shape[0] != res.num_subjects:
        raise InputError(f"dataset has {f.shape[0]} subjects but the result has {res.num_subjects}")
    cfg = run.get("config", {})
    mode = args.mode or cfg.get("subject_template_mode", "amplitude")
    anchor_rule = args.anchor or cfg.get("template_anchor", "mean_initial_values")
    period = res.template_srsf.grid
    anchor = f[:, 0, :].mean(axis=0) if anchor_rule == "mean_initial_values" else np.zeros(f.shape[2])
    template = _srsf_inverse(res.template_srsf.values[None], anchor[None], period.spacing)[0]
    spacing = 1.0 / (f.shape[1] - 1)
    subject = _subject_templates(f, _srsf(f, spacing), res.total_warps, res.local_means, res.global_warps,
                                 template, res.num_periods, mode)
    labels = [f"channel_{j + 1}" for j in range(f.shape[2])]
    with locked(Path(args.out) if args.out else rdir) as out:
        io.write_text(out / "common_template.csv", io.matrix_to_csv(template.T, period.points, labels))
        files = ["common_template.csv"]
        for j in range(f.shape[2]):
            name = f"subject_template_{mode}_channel_{j + 1}.csv"
            io.write_text(out / name, io.matrix_to_csv(subject[:, :, j], period.points))
            files.append(name)
        append_manifest(out, RunManifest(
            "template", run.get("seed"), {"subject_template_mode": mode, "template_anchor": anchor_rule},
            data=meta["data"], split=meta.get("split"), outputs=dict.fromkeys(files),
        ))


def _tidy_curves(f: np.ndarray, aligned: np.ndarray) -> str:
    t = io.unit_grid(f.shape[1])
    lines = ["subject,channel,t,observed,aligned"]
    for i in range(f.shape[0]):
        for j in range(f.shape[2]):
            lines.extend(f"{i},{j + 1},{io._fmt(tk)},{io._fmt(o)},{io._fmt(a)}"
                         for tk, o, a in zip(t, f[i, :, j], aligned[i, :, j]))
    return "\n".join(lines) + "\n"


def _tidy_warps(warps: np.ndarray) -> str:
    t = io.unit_grid(warps.shape[1])
    lines = ["subject,t,warp"]
    for i, g in enumerate(warps):
        lines.extend(f"{i},{io._fmt(tk)},{io._fmt(v)}" for tk, v in zip(t, g))
    return "\n".join(lines) + "\n"


def _tidy_means(f: np.ndarray, aligned: np.ndarray, template: np.ndarray | None) -> str:
    t = io.unit_grid(f.shape[1])
    mo, ma = f.mean(axis=0), aligned.mean(axis=0)
    lines = ["channel,t,observed_mean,aligned_mean,template"]
    for j in range(f.shape[2]):
        for k, tk in enumerate(t):
            tmpl = "" if template is None else io._fmt(template[k, j])
            lines.append(f"{j + 1},{io._fmt(tk)},{io._fmt(mo[k, j])},{io._fmt(ma[k, j])},{tmpl}")
    return "\n".join(lines) + "\n"


def cmd_evaluate(args) -> None:
    rdir = _result_dir(args)
    run = last_run(rdir)
    data = run.get("data")
    if data is None:
        raise InputError(f"{rdir}/run.json does not record a dataset")
    ds = _load_dataset(data, run.get("split"))
    warps, _, _ = io.read_matrix(rdir / "total_warps.csv")
    f = ds.functions
    if warps.shape != f.shape[:2]:
        raise InputError(f"warps have shape {warps.shape} but the dataset has {f.shape[:2]}")
    aligned = apply_warps(f, warps)
    if "extended_template" in ds.truth:
        template, source = ds.truth["extended_template"], "true"
    elif (rdir / "template.csv").exists():
        tmpl, _, _ = io.read_matrix(rdir / "template.csv")
        template, source = _extend_values(tmpl.T[None], ds.num_periods)[0], "estimated"
    else:
        template, source = None, None
    reports = {"mean": VarianceReport.from_data(f, aligned, template, reference="mean")}
    if template is not None:
        reports["template"] = VarianceReport.from_data(f, aligned, template, reference="template")
    csv_lines = []
    for ref, rep in reports.items():
        body = rep.to_csv().splitlines()
        if not csv_lines:
            csv_lines.append("reference," + body[0])
        csv_lines.extend(f"{ref},{row}" for row in body[1:])
    metrics = {ref: json.loads(rep.to_json()) for ref, rep in reports.items()}
    metrics["template_source"] = source
    with locked(Path(args.out) if args.out else rdir) as out:
        io.write_json(out / "report.json", metrics)
        io.write_text(out / "report.csv", "\n".join(csv_lines) + "\n")
        io.write_text(out / "plot_curves.csv", _tidy_curves(f, aligned))
        io.write_text(out / "plot_warps.csv", _tidy_warps(warps))
        io.write_text(out / "plot_means.csv", _tidy_means(f, aligned, template))
        files = ["report.json", "report.csv", "plot_curves.csv", "plot_warps.csv", "plot_means.csv"]
        if (rdir / "history.csv").exists():
            hist = (rdir / "history.csv").read_text()
            io.write_text(out / "plot_history.csv", hist)
            files.append("plot_history.csv")
        append_manifest(out, RunManifest("evaluate", run.get("seed"), run.get("config", {}), data=data,
                                         split=run.get("split"), outputs=dict.fromkeys(files), metrics=metrics))
    for line in csv_lines:
        print(line)


def cmd_presets(args) -> None:
    for name in preset_names():
        print(name)


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepjam", description="Joint alignment of quasi-periodic functions.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a simulated dataset")
    p.add_argument("--scenario", type=int, required=True, choices=(1, 2))
    p.add_argument("--config", help="JSON generator config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="run DeepJAM on a dataset and save the network")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--preset", help=f"named hyperparameter preset ({', '.join(preset_names())})")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int, help="outer iterations (overrides the config)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("align", help="align a dataset with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", help="align only this split of the dataset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("template", help="common and subject-specific templates from a training result")
    p.add_argument("--result", help="output directory of 'deepjam train'")
    p.add_argument("--data", help=argparse.SUPPRESS)
    p.add_argument("--mode", choices=("warp", "amplitude"))
    p.add_argument("--anchor", choices=("zero", "mean_initial_values"))
    p.add_argument("--out", help="defaults to the result directory")
    p.set_defaults(func=cmd_template)

    p = sub.add_parser("evaluate", help="variance report and plot data for aligned output")
    p.add_argument("--result", help="output directory of 'deepjam train' or 'deepjam align'")
    p.add_argument("--data", help=argparse.SUPPRESS)
    p.add_argument("--out", help="defaults to the result directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("presets", help="list the bundled hyperparameter presets")
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, WarpError) as exc:
        print(f"deepjam: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (InputError, io.FormatError) as exc:
        print(f"deepjam: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OrthantError as exc:
        print(f"deepjam: convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"deepjam: numerical failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"deepjam: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
