"""Experiment driver.

Subcommands: gen-data, train, analyze, sweep, dense-demo. Configs are the
same flat ``section.key: value`` text files the runs write back out as
manifests, so any emitted artifact can be regenerated from its manifest
alone.

Exit codes: 0 success, 2 config error, 3 numerical abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import (
    DENSE_BAND_EDGES,
    ExperimentReport,
    boundary_disagreement,
    class_metrics,
    dense_band_mre,
    experiment_report,
    label_examples,
)
from .datasets import (
    Dataset2D,
    DenseGrid,
    dominance_holds,
    gen_dense_task,
    gen_hard_variant,
    gen_two_gaussians,
)
from .engine import (
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    dense_config,
    dense_predictions,
    train,
    train_dense,
)
from .figures import (
    entropy_figure,
    panel_figure,
    prediction_figure,
    scatter_figure,
    tail_figure,
)
from .records import (
    config_from_manifest,
    format_manifest,
    load_model,
    load_step_log,
    load_trace,
    parse_manifest,
    report_fields,
    report_table,
    save_dataset,
    save_gradtail_state,
    save_model,
    save_patch_log,
    save_report,
    save_step_log,
    save_trace,
    summary_table,
    write_record,
)

DENSE_DEFAULTS = {
    "dense.height": "64",
    "dense.width": "64",
    "dense.rare_fraction": "0.05",
    "dense.size_min": "20",
    "dense.size_max": "100",
    "dense.patch_count": "6",
}

SWEEP_PARAMS = {
    "pivot": "gradtail",
    "max_weight": "gradtail",
    "inverse_frequency_w": "inverse_frequency",
}


def _load_entries(config_path: str | None) -> dict[str, str]:
    if config_path is None:
        return {}
    return parse_manifest(Path(config_path).read_text())


def _dataset_for(kind: str, seed: int) -> Dataset2D:
    if kind == "standard":
        return gen_two_gaussians(seed)
    if kind == "hard":
        return gen_hard_variant(seed)
    raise ValueError(f"unknown dataset kind {kind!r} (expected standard or hard)")


def _dense_grid_for(entries: dict[str, str], seed: int) -> tuple[DenseGrid, dict[str, int]]:
    merged = {**DENSE_DEFAULTS, **{k: v for k, v in entries.items() if k.startswith("dense.")}}
    grid = gen_dense_task(
        seed,
        int(merged["dense.height"]),
        int(merged["dense.width"]),
        float(merged["dense.rare_fraction"]),
    )
    sampler = {
        "size_min": int(merged["dense.size_min"]),
        "size_max": int(merged["dense.size_max"]),
        "patch_count": int(merged["dense.patch_count"]),
    }
    return grid, sampler


def _write_run_dir(
    out: Path, run_name: str, dataset_kind: str, data_seed: int, result: TrainResult
) -> Path:
    run_dir = out / run_name
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "manifest.txt").write_text(
        format_manifest(result.config, data_seed, result.model_seed, dataset_kind)
    )
    save_model(run_dir / "model.txt", result.model)
    save_step_log(run_dir / "steps.csv", result.step_log)
    if result.trace is not None:
        save_trace(run_dir / "trace.csv", result.trace)
    if result.gradtail_state is not None:
        save_gradtail_state(run_dir / "state.txt", result.gradtail_state, result.config.gradtail)
    return run_dir


def _median_repr(values: list) -> str:
    present = [v for v in values if v is not None]
    return repr(float(np.median(present))) if present else "absent"


def _dense_overrides(entries: dict[str, str], base: TrainConfig) -> dict:
    """Only config keys actually present override the dense-schedule defaults."""
    overrides = {}
    if any(key.startswith("gradtail.") for key in entries):
        overrides["gradtail"] = base.gradtail
    if "train.steps" in entries:
        overrides["steps"] = base.steps
    if "train.learning_rate" in entries:
        overrides["learning_rate"] = base.learning_rate
    return overrides


def _divergence_snapshot(out: Path, exc: TrainingDiverged) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "divergence.txt"
    fields = {
        k: ",".join(str(i) for i in v) if isinstance(v, list) else v
        for k, v in exc.snapshot.items()
    }
    fields["message"] = str(exc)
    write_record(path, "divergence-snapshot", fields, {})
    return path


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    entries = _load_entries(args.config)
    config, data_seed, model_seed, kind = config_from_manifest(
        {k: v for k, v in entries.items() if not k.startswith("dense.")}
    )
    out = Path(args.out)
    datasets = []
    for k in range(args.seeds):
        dataset = _dataset_for(kind, data_seed + k)
        if kind == "hard" and not dominance_holds(dataset.specs[0], dataset.specs[1]):
            raise ValueError("hard variant fails the density-dominance grid check")
        datasets.append(dataset)
    out.mkdir(parents=True, exist_ok=True)
    for k, dataset in enumerate(datasets):
        save_dataset(out / f"dataset-s{data_seed + k:03d}.csv", dataset)
    (out / "manifest.txt").write_text(format_manifest(config, data_seed, model_seed, kind))
    print(f"wrote {args.seeds} dataset file(s) under {out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    entries = _load_entries(args.config)
    config, data_seed, model_seed, kind = config_from_manifest(
        {k: v for k, v in entries.items() if not k.startswith("dense.")}
    )
    if args.reference_mode:
        config = replace(config, reference_mode=True)
    out = Path(args.out)
    for k in range(args.seeds):
        dataset = _dataset_for(kind, data_seed + k)
        run_config = replace(config, seed=config.seed + k)
        try:
            result = train(dataset, model_seed + k, run_config)
        except TrainingDiverged as exc:
            path = _divergence_snapshot(out, exc)
            raise TrainingDiverged(f"{exc} (snapshot: {path})", exc.snapshot) from exc
        run_dir = _write_run_dir(
            out, f"run-{config.strategy}-s{k:03d}", kind, data_seed + k, result
        )
        print(f"run {k}: {run_dir}")
    return 0


def _report_for_run(run_dir: Path) -> tuple[ExperimentReport | None, dict, Dataset2D, TrainResult]:
    manifest = parse_manifest((run_dir / "manifest.txt").read_text())
    config, data_seed, model_seed, kind = config_from_manifest(
        {k: v for k, v in manifest.items() if not k.startswith("dense.")}
    )
    dataset = _dataset_for(kind, data_seed)
    model = load_model(run_dir / "model.txt")
    step_log = load_step_log(run_dir / "steps.csv")
    trace_path = run_dir / "trace.csv"
    trace = load_trace(trace_path) if trace_path.exists() else None
    result = TrainResult(model, trace, step_log, None, config, model_seed)
    if trace is None:
        # degraded report: model-level metrics only, gaps called out
        metrics = class_metrics(model, dataset)
        fields = {
            "total_accuracy": repr(metrics.total_accuracy),
            "balanced_accuracy": repr(metrics.balanced_accuracy),
            "boundary_disagreement": repr(
                boundary_disagreement(model, dataset.specs[0], dataset.specs[1])
            ),
            "trace": "absent",
            "quartile": "absent",
            "rare_set": "absent",
        }
        for label, recall in sorted(metrics.per_class_recall.items()):
            fields[f"recall.class{label}"] = repr(recall)
        return None, fields, dataset, result
    report = experiment_report(result, dataset)
    return report, report_fields(report), dataset, result


def cmd_analyze(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for dir_name in args.run_dirs:
        run_dir = Path(dir_name)
        if not (run_dir / "manifest.txt").exists():
            raise FileNotFoundError(f"{run_dir}/manifest.txt")
        report, fields, dataset, result = _report_for_run(run_dir)
        fig_dir = out / run_dir.name
        fig_dir.mkdir(parents=True, exist_ok=True)
        if report is not None:
            save_report(fig_dir / "report.txt", report)
            (fig_dir / "report_table.txt").write_text(report_table(report))
            labels, _, _ = label_examples(result.trace)
            tail_figure(dataset, labels, fig_dir / "tail.svg")
            tail_figure(dataset, labels, fig_dir / "rare.svg", rare_only=True)
            entropy_figure(dataset, result.trace.mean_entropy(), fig_dir / "entropy.svg")
        else:
            print(f"warning: {run_dir} has no traces; writing a degraded report", file=sys.stderr)
            write_record(fig_dir / "report.txt", "experiment-report", fields, {})
        scatter_figure(dataset, fig_dir / "data.svg")
        prediction_figure(result.model, dataset, fig_dir / "predictions.svg")
        rows.append({"run": run_dir.name, **{k: str(v) for k, v in fields.items()}})
        print(f"analyzed {run_dir} -> {fig_dir}")

    columns = ["run", "total_accuracy", "balanced_accuracy", "boundary_disagreement", "rare.size"]
    if len(rows) > 1:
        median_row = {"run": "median"}
        for col in columns[1:]:
            vals = [float(r[col]) for r in rows if r.get(col, "absent") != "absent"]
            median_row[col] = repr(float(np.median(vals))) if vals else "absent"
        rows.append(median_row)
    (out / "summary.txt").write_text(summary_table(rows, columns))
    return 0


def _sweep_value_config(config: TrainConfig, param: str, value: float) -> TrainConfig:
    if param == "pivot":
        return replace(config, gradtail=replace(config.gradtail, pivot=value))
    if param == "max_weight":
        if value < 1.0:
            raise ValueError(f"max_weight must be >= 1, got {value}")
        return replace(config, gradtail=replace(config.gradtail, amplitude=2.0 * (value - 1.0)))
    # inverse_frequency_w: weight on the uncommon class, common stays at 1
    return replace(config, class_weights=(1.0, float(value)))


def cmd_sweep(args: argparse.Namespace) -> int:
    entries = _load_entries(args.config)
    config, data_seed, model_seed, kind = config_from_manifest(
        {k: v for k, v in entries.items() if not k.startswith("dense.")}
    )
    if args.param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {args.param!r}")
    if config.strategy != SWEEP_PARAMS[args.param]:
        raise ValueError(
            f"parameter {args.param!r} applies to strategy {SWEEP_PARAMS[args.param]!r},"
            f" config says {config.strategy!r}"
        )
    values = [float(tok) for tok in args.values.split(",") if tok != ""]
    if not values:
        raise ValueError("empty sweep value list")
    if args.reference_mode:
        config = replace(config, reference_mode=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if kind == "dense":
        if args.param != "pivot":
            raise ValueError("dense sweeps support the pivot parameter only")
        return _dense_sweep(entries, config, data_seed, model_seed, values, args, out)

    rows, panels = [], []
    for value in values:
        value_config = _sweep_value_config(config, args.param, value)
        balanced, total, disagreement, recall_uncommon = [], [], [], []
        panel_model = None
        for k in range(args.seeds):
            dataset = _dataset_for(kind, data_seed + k)
            result = train(dataset, model_seed + k, replace(value_config, seed=config.seed + k))
            report = experiment_report(result, dataset)
            balanced.append(report.balanced_accuracy)
            total.append(report.total_accuracy)
            disagreement.append(report.boundary_disagreement)
            uncommon_label = dataset.specs[1].label
            recall_uncommon.append(report.per_class_recall[uncommon_label])
            if k == 0:
                panel_model = result.model
        rows.append({
            "value": repr(value),
            "median_balanced": repr(float(np.median(balanced))),
            "median_total": repr(float(np.median(total))),
            "median_disagreement": repr(float(np.median(disagreement))),
            "median_recall_uncommon": repr(float(np.median(recall_uncommon))),
        })
        panels.append((f"{args.param}={value:g}", panel_model, _dataset_for(kind, data_seed)))
    table = summary_table(
        rows,
        ["value", "median_balanced", "median_total", "median_disagreement",
         "median_recall_uncommon"],
    )
    (out / "sweep.txt").write_text(f"# sweep over {args.param} ({config.strategy})\n" + table)
    panel_figure(panels, out / "panel.svg")
    print(f"swept {args.param} over {values} -> {out}")
    return 0


def _dense_sweep(entries, config, data_seed, model_seed, values, args, out) -> int:
    overrides = _dense_overrides(entries, config)
    rows = []
    for value in values:
        pivot_config = dense_config(strategy="gradtail", **overrides)
        pivot_config = replace(pivot_config, gradtail=replace(pivot_config.gradtail, pivot=value))
        rare_mre, common_mre, total_mre = [], [], []
        for k in range(args.seeds):
            grid, sampler = _dense_grid_for(entries, data_seed + k)
            result = train_dense(
                grid, model_seed + k, replace(pivot_config, seed=config.seed + k),
                size_min=sampler["size_min"], size_max=sampler["size_max"],
                patch_count=sampler["patch_count"],
            )
            bands = dense_band_mre(
                dense_predictions(result.model, grid), grid.targets, grid.valid_mask,
                DENSE_BAND_EDGES,
            )
            common_mre.append(bands.bands[0].mre)
            rare_mre.append(bands.bands[1].mre)
            total_mre.append(bands.total_mre)
        rows.append({
            "pivot": repr(value),
            "median_common_mre": _median_repr(common_mre),
            "median_rare_mre": _median_repr(rare_mre),
            "median_total_mre": _median_repr(total_mre),
        })
    table = summary_table(
        rows, ["pivot", "median_common_mre", "median_rare_mre", "median_total_mre"]
    )
    (out / "sweep.txt").write_text("# dense pivot sweep (gradtail)\n" + table)
    print(f"swept pivot over {values} -> {out}")
    return 0


def cmd_dense_demo(args: argparse.Namespace) -> int:
    entries = _load_entries(args.config)
    base, data_seed, model_seed, _ = config_from_manifest(
        {k: v for k, v in entries.items() if not k.startswith("dense.")}
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    overrides = _dense_overrides(entries, base)
    rows = []
    for k in range(args.seeds):
        grid, sampler = _dense_grid_for(entries, data_seed + k)
        row = {"seed": str(data_seed + k)}
        for strategy in ("uniform", "gradtail"):
            config = dense_config(
                strategy=strategy,
                seed=base.seed + k,
                reference_mode=args.reference_mode or base.reference_mode,
                **overrides,
            )
            result = train_dense(
                grid, model_seed + k, config,
                size_min=sampler["size_min"], size_max=sampler["size_max"],
                patch_count=sampler["patch_count"],
            )
            run_dir = out / f"dense-{strategy}-s{k:03d}"
            run_dir.mkdir(parents=True, exist_ok=True)
            save_model(run_dir / "model.txt", result.model)
            save_step_log(run_dir / "steps.csv", result.step_log)
            save_patch_log(run_dir / "patches.csv", result.patch_log)
            if result.gradtail_state is not None:
                save_gradtail_state(run_dir / "state.txt", result.gradtail_state, config.gradtail)
            bands = dense_band_mre(
                dense_predictions(result.model, grid), grid.targets, grid.valid_mask,
                DENSE_BAND_EDGES,
            )
            rare = bands.bands[1].mre
            row[f"{strategy}_rare_mre"] = "absent" if rare is None else repr(rare)
            row[f"{strategy}_total_mre"] = repr(bands.total_mre)
        rows.append(row)
    columns = ["seed", "uniform_rare_mre", "gradtail_rare_mre",
               "uniform_total_mre", "gradtail_total_mre"]
    if len(rows) > 1:
        median_row = {"seed": "median"}
        for col in columns[1:]:
            median_row[col] = _median_repr(
                [float(r[col]) for r in rows if r[col] != "absent"]
            )
        rows.append(median_row)
    (out / "dense.txt").write_text(summary_table(rows, columns))
    print(f"dense demo over {args.seeds} seed(s) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradtail",
        description="Gradient-alignment example weighting: data, training, analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common_flags(p: argparse.ArgumentParser, default_out: str) -> None:
        p.add_argument("--config", help="key-value config file (same format as run manifests)")
        p.add_argument("--out", default=default_out, help="output directory")
        p.add_argument("--seeds", type=int, default=1, help="number of seeds to run")
        p.add_argument("--reference-mode", action="store_true",
                       help="serial per-example gradients for bitwise reproducibility")

    p = sub.add_parser("gen-data", help="write dataset files and their manifest")
    common_flags(p, "data")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one run directory per seed")
    common_flags(p, "runs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="reports, figures, and a cross-run summary")
    common_flags(p, "analysis")
    p.add_argument("run_dirs", nargs="+", help="run directories produced by train")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="comparative runs over one parameter")
    common_flags(p, "sweep")
    p.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS),
                   help="which knob to sweep")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dense-demo", help="patch-weighted dense regression comparison")
    common_flags(p, "dense")
    p.set_defaults(func=cmd_dense_demo)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
