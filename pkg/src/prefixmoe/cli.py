"""Command-line entry point.

Every subcommand takes one JSON config (with a ``version`` field) plus a
small set of flags, writes its outputs and a run manifest into
``--output-dir``, and never overwrites existing files unless ``--force``
is given. Exit codes: 0 success, 1 acceptance failure, 2 configuration
error. Relative paths inside configs resolve against the output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

from .errors import ConfigurationError, UsageError
from .estimation import (
    ESTIMATOR_NOTE,
    FitConfig,
    InitSpec,
    OptimizerConfig,
    fit,
    gradient_check,
)
from .experiments import (
    SweepSpec,
    child_seed,
    default_workers,
    l2_norm_mc,
    run_sweep,
    witness_closed_form,
    witness_sequence,
)
from .model import (
    Dataset,
    check_identifiability,
    gen_dataset,
    measure_from_dict,
    model_from_dict,
    regression_fn,
)
from .attention import run_equivalence_trials
from .voronoi import loss_d1r, loss_for_setting
from . import __version__

WITNESS_AGREEMENT_TOL = 1e-10


# --------------------------------------------------------------------------
# config plumbing


def _load_config(path: Path) -> dict:
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a JSON object")
    if data.get("version") != 1:
        raise ConfigurationError(f"{path}: field 'version' must be 1")
    return data


def _require(cfg: dict, key: str, where: str):
    if key not in cfg:
        raise ConfigurationError(f"{where}: missing field {key!r}")
    return cfg[key]


def _fit_config_from(cfg: dict, setting: str, seed: int, where: str) -> FitConfig:
    init_cfg = _require(cfg, "init", where)
    kind = _require(init_cfg, "kind", f"{where}.init")
    if kind == "multistart":
        init = InitSpec.multistart(int(init_cfg.get("restarts", 16)))
    elif kind == "oracle_perturb":
        init = InitSpec.oracle_perturb(float(init_cfg.get("scale", 0.1)))
    else:
        raise ConfigurationError(f"{where}.init: unknown kind {kind!r}")
    opt_cfg = cfg.get("optimizer", {})
    optimizer = OptimizerConfig(
        learning_rate=float(opt_cfg.get("learning_rate", 0.05)),
        max_iters=int(opt_cfg.get("max_iters", 20000)),
        grad_tol=float(opt_cfg.get("grad_tol", 1e-8)),
        obj_tol=float(opt_cfg.get("obj_tol", 1e-10)),
        patience=int(opt_cfg.get("patience", 40)),
    )
    return FitConfig(
        setting=setting,
        atom_budget=int(_require(cfg, "atom_budget", where)),
        init=init,
        optimizer=optimizer,
        box_bound=float(cfg.get("box_bound", 5.0)),
        seed=int(seed),
        latent_dim=(int(cfg["latent_dim"]) if "latent_dim" in cfg else None),
        activations=tuple(cfg.get("activations", ("tanh", "tanh"))),
    )


# --------------------------------------------------------------------------
# output plumbing


def _resolve(path_str: str, outdir: Path) -> Path:
    p = Path(path_str)
    return p if p.is_absolute() else outdir / p


def _guard_outputs(paths, force: bool) -> None:
    clashes = [str(p) for p in paths if p.exists()]
    if clashes and not force:
        raise ConfigurationError(
            "refusing to overwrite existing outputs (use --force): " + ", ".join(clashes)
        )


def _write_manifest(outdir: Path, command: str, config_path: Path, seed_override, force: bool) -> None:
    manifest = {
        "version": 1,
        "command": command,
        "config_path": str(config_path),
        "config_hash": hashlib.sha256(config_path.read_bytes()).hexdigest(),
        "output_dir": str(outdir),
        "seed_override": seed_override,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "tool_version": __version__,
    }
    path = outdir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _json_text(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _prepare(args, command: str, output_names) -> tuple:
    config_path = Path(args.config)
    cfg = _load_config(config_path)
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    targets = [outdir / name for name in output_names] + [outdir / "run_manifest.json"]
    return cfg, config_path, outdir, targets


# --------------------------------------------------------------------------
# subcommands


def cmd_equiv(args) -> int:
    cfg, config_path, outdir, targets = _prepare(args, "equiv", ["equiv_report.json"])
    seed = args.seed if args.seed is not None else int(_require(cfg, "seed", "equiv config"))
    report = run_equivalence_trials(
        n_trials=int(_require(cfg, "trials", "equiv config")),
        seed=seed,
        tolerance=float(cfg.get("tolerance", 1e-9)),
        max_tokens=int(cfg.get("max_tokens", 8)),
        max_dim=int(cfg.get("max_dim", 16)),
        heads=tuple(cfg.get("heads", (1, 2))),
        max_prompts=int(cfg.get("max_prompts", 4)),
    )
    _guard_outputs(targets, args.force)
    (outdir / "equiv_report.json").write_text(_json_text(report.to_dict()))
    _write_manifest(outdir, "equiv", config_path, args.seed, args.force)
    if not report.passed:
        print(
            f"equivalence failure: prefix diff {report.max_abs_diff_prefix:.3e}, "
            f"prompt diff {report.max_abs_diff_prompt:.3e} > tol {report.tolerance:.1e}",
            file=sys.stderr,
        )
        return 1
    return 0


def _sweep_spec_from(cfg: dict, seed_override) -> SweepSpec:
    truth = model_from_dict(_require(cfg, "model", "sweep config"))
    setting = _require(cfg, "setting", "sweep config")
    seed = seed_override if seed_override is not None else int(_require(cfg, "seed", "sweep config"))
    fit_config = _fit_config_from(_require(cfg, "fit", "sweep config"), setting, seed, "sweep config.fit")
    return SweepSpec(
        setting=setting,
        truth=truth,
        sample_sizes=tuple(int(n) for n in _require(cfg, "sample_sizes", "sweep config")),
        replications=int(_require(cfg, "replications", "sweep config")),
        fit_config=fit_config,
        mc_samples=int(_require(cfg, "mc_samples", "sweep config")),
        seed=seed,
        voronoi_r=int(cfg.get("voronoi_r", 2)),
    )


def cmd_sweep(args) -> int:
    config_path = Path(args.config)
    cfg = _load_config(config_path)
    spec = _sweep_spec_from(cfg, args.seed)
    if args.dry_run:
        plan = {
            "cells": [
                {"n": n, "rep": rep, **{f"{k}_seed": v for k, v in spec.cell_seeds(n, rep).items()}}
                for n in spec.sample_sizes
                for rep in range(spec.replications)
            ],
            "setting": spec.setting,
            "seed": spec.seed,
        }
        print(_json_text(plan), end="")
        return 0
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    result = run_sweep(spec)
    names = ["sweep_results.csv", "sweep_summary.json", f"plot_{result.loss_name}.dat", "plot_l2.dat"]
    targets = [outdir / n for n in names] + [outdir / "run_manifest.json"]
    _guard_outputs(targets, args.force)
    (outdir / "sweep_results.csv").write_text(result.csv_text())
    (outdir / "sweep_summary.json").write_text(result.json_text())
    (outdir / f"plot_{result.loss_name}.dat").write_text(result.plot_text("loss"))
    (outdir / "plot_l2.dat").write_text(result.plot_text("l2"))
    _write_manifest(outdir, "sweep", config_path, args.seed, args.force)
    bad = [a for a in result.aggregates if a["failure_count"] > 0.5 * (a["fit_count"] + a["failure_count"])]
    if bad:
        sizes = ", ".join(str(a["n"]) for a in bad)
        print(f"sweep failure: more than half of the fits failed at n in {{{sizes}}}", file=sys.stderr)
        return 1
    return 0


def cmd_witness(args) -> int:
    cfg, config_path, outdir, targets = _prepare(
        args, "witness", ["witness_table.csv", "witness_summary.json"]
    )
    truth_model = model_from_dict(_require(cfg, "model", "witness config"))
    if truth_model.measure.variant != "non_shared":
        raise ConfigurationError("witness config needs an untied ('non_shared') truth measure")
    r = int(_require(cfg, "r", "witness config"))
    if r < 1:
        raise ConfigurationError("witness config: r must be a positive integer")
    sizes = [int(n) for n in _require(cfg, "sample_sizes", "witness config")]
    mc_samples = int(_require(cfg, "mc_samples", "witness config"))
    seed = args.seed if args.seed is not None else int(_require(cfg, "seed", "witness config"))
    truth = truth_model.measure
    truth_fn = regression_fn(truth_model.bank, truth_model.proj, truth)
    rows = []
    worst = 0.0
    for n in sizes:
        witness = witness_sequence(truth, n, r)
        computed = loss_d1r(witness, truth, r)
        closed = witness_closed_form(truth, n, r)
        witness_fn = regression_fn(truth_model.bank, truth_model.proj, witness)
        l2 = l2_norm_mc(
            witness_fn,
            truth_fn,
            truth_model.input_law,
            truth_model.proj.dim,
            mc_samples,
            child_seed(seed, n, "witness-mc"),
        )
        worst = max(worst, abs(computed - closed))
        rows.append({"n": n, "closed_form": closed, "computed": computed, "l2_mc": l2, "ratio": l2 / computed})
    lines = ["n,closed_form,computed,l2_mc,ratio"]
    for row in rows:
        lines.append(
            f"{row['n']},{row['closed_form']!r},{row['computed']!r},{row['l2_mc']!r},{row['ratio']!r}"
        )
    table_text = "\n".join(lines) + "\n"
    ratios = [row["ratio"] for row in rows]
    summary = {
        "version": 1,
        "r": r,
        "sample_sizes": sizes,
        "mc_samples": mc_samples,
        "seed": seed,
        "max_abs_disagreement": worst,
        "agreement_tol": WITNESS_AGREEMENT_TOL,
        "agreement": worst <= WITNESS_AGREEMENT_TOL,
        "ratios_strictly_decreasing": all(b < a for a, b in zip(ratios, ratios[1:])),
        "rows": rows,
    }
    _guard_outputs(targets, args.force)
    (outdir / "witness_table.csv").write_text(table_text)
    (outdir / "witness_summary.json").write_text(_json_text(summary))
    _write_manifest(outdir, "witness", config_path, args.seed, args.force)
    if worst > WITNESS_AGREEMENT_TOL:
        print(
            f"witness failure: computed loss disagrees with the closed form by {worst:.3e}",
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_gen(args) -> int:
    cfg, config_path, outdir, _ = _prepare(args, "gen", [])
    model = model_from_dict(_require(cfg, "model", "gen config"))
    n = int(_require(cfg, "n", "gen config"))
    seed = args.seed if args.seed is not None else int(_require(cfg, "seed", "gen config"))
    name = cfg.get("name", "dataset")
    csv_path = outdir / f"{name}.csv"
    targets = [csv_path, Dataset.meta_path(csv_path), outdir / "run_manifest.json"]
    _guard_outputs(targets, args.force)
    if model.measure.n_atoms >= 1:
        ident = check_identifiability(model.measure, model.proj)
        if not ident.passed:
            print(
                f"warning: projected key prompts nearly coincide "
                f"(min distance {ident.min_distance:.3e})",
                file=sys.stderr,
            )
    dataset = gen_dataset(model, n, seed)
    dataset.save(csv_path)
    _write_manifest(outdir, "gen", config_path, args.seed, args.force)
    return 0


def cmd_fit(args) -> int:
    cfg, config_path, outdir, targets = _prepare(args, "fit", ["fit_result.json"])
    dataset_path = _resolve(_require(cfg, "dataset", "fit config"), outdir)
    if not dataset_path.is_file():
        raise ConfigurationError(f"dataset file not found: {dataset_path}")
    dataset = Dataset.load(dataset_path)
    meta_model = dataset.provenance.get("model")
    meta_setting = dataset.provenance.get("setting")
    if meta_model is None or meta_setting is None:
        raise ConfigurationError("dataset metadata lacks the generating model description")
    setting = _require(cfg, "setting", "fit config")
    if setting != meta_setting:
        raise ConfigurationError(
            f"config setting {setting!r} does not match the dataset's generating "
            f"setting {meta_setting!r}; refusing to fit mismatched provenance"
        )
    truth_model = model_from_dict(meta_model)
    seed = args.seed if args.seed is not None else int(_require(cfg, "seed", "fit config"))
    fit_config = _fit_config_from(_require(cfg, "fit", "fit config"), setting, seed, "fit config.fit")
    if fit_config.init.kind == "oracle_perturb":
        from dataclasses import replace

        fit_config = replace(
            fit_config, init=replace(fit_config.init, reference=truth_model.measure)
        )
    result = fit(dataset, truth_model.bank, truth_model.proj, fit_config)
    payload = {
        "version": 1,
        "setting": setting,
        "dataset": str(dataset_path),
        "fit": result.to_dict(),
        "estimator_note": ESTIMATOR_NOTE,
    }
    if not result.failed:
        loss_name, loss_fn = loss_for_setting(setting, int(cfg.get("voronoi_r", 2)))
        payload["loss_name"] = loss_name
        payload["voronoi_loss_vs_reference"] = loss_fn(result.measure, truth_model.measure)
        if args.grad_check:
            payload["gradient_check"] = {
                "step": 1e-5,
                "max_rel_error": gradient_check(
                    result.measure, truth_model.bank, truth_model.proj, dataset
                ),
            }
    _guard_outputs(targets, args.force)
    (outdir / "fit_result.json").write_text(_json_text(payload))
    _write_manifest(outdir, "fit", config_path, args.seed, args.force)
    return 1 if result.failed else 0


# --------------------------------------------------------------------------
# argument parsing


def _add_common(sub):
    sub.add_argument("--config", required=True, help="path to the JSON config")
    sub.add_argument("--output-dir", default=".", help="directory for outputs (default: .)")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub.add_argument("--force", action="store_true", help="allow overwriting existing outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefixmoe",
        description=(
            "Gated-mixture view of prompt/prefix attention: equivalence checks, "
            "dataset generation, least-squares fits, witness tables, and rate sweeps."
        ),
    )
    parser.add_argument("--version", action="version", version=f"prefixmoe {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    equiv = subs.add_parser("equiv", help="randomized forward-vs-decomposition checks")
    _add_common(equiv)
    equiv.set_defaults(func=cmd_equiv)

    sweep = subs.add_parser("sweep", help="convergence-rate sweep over sample sizes")
    _add_common(sweep)
    sweep.add_argument("--dry-run", action="store_true", help="print the resolved plan and exit")
    sweep.set_defaults(func=cmd_sweep)

    witness = subs.add_parser("witness", help="slow-rate witness table")
    _add_common(witness)
    witness.set_defaults(func=cmd_witness)

    gen = subs.add_parser("gen", help="generate a dataset CSV with sidecar metadata")
    _add_common(gen)
    gen.set_defaults(func=cmd_gen)

    fit_cmd = subs.add_parser("fit", help="least-squares fit on a generated dataset")
    _add_common(fit_cmd)
    fit_cmd.add_argument(
        "--grad-check", action="store_true", help="emit a finite-difference gradient check section"
    )
    fit_cmd.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
