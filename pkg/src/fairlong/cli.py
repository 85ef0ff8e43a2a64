"""Command-line driver: ``fairlong generate|train|evaluate|report``.

Every artifact lives under the ``--out`` directory:

    data/         cohort.csv, train.csv, val.csv, test.csv
    checkpoints/  one JSON file per trained model
    logs/         JSON-lines training logs
    reports/      setting1/, setting2/ report JSON and per-step CSV
    figures/      PNG figures written by ``report``

Exit codes: 0 success, 2 validation error, 3 missing prerequisite,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

from .autodiff import NumericError
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from .evaluation import (
    compare_models,
    emit_projection_data,
    evaluate_model,
    interventional_rollout,
    load_report,
    prepare_setting2_cohort,
)
from .metrics import S_MINUS, S_PLUS
from .seeding import derive_rng, derive_seed
from .simulator import (
    _atomic_write_text,
    generate_initial_cohort,
    load_dataset_csv,
    load_initial_cohort_csv,
    roll_out_truth,
    write_cohort_csv,
    write_dataset_csv,
)
from .training import (
    fit_ground_truth,
    split_dataset,
    train_baseline,
    train_deeplf,
    train_phase1,
    train_rcgan,
)

EXIT_OK, EXIT_INVALID, EXIT_PREREQ, EXIT_NUMERIC = 0, 2, 3, 4

PHASES = ("phase1", "rcgan", "deeplf", "baseline-plain", "baseline-dp", "baseline-eo")
EVAL_MODELS = ("phase1", "baseline-plain", "baseline-dp", "baseline-eo", "deeplf")
DISPLAY_NAMES = {
    "phase1": "mlp",
    "baseline-plain": "mlp-plain",
    "baseline-dp": "mlp-dp",
    "baseline-eo": "mlp-eo",
    "deeplf": "deeplf",
}
DEFAULT_EVAL_MODELS = ("phase1", "baseline-dp", "baseline-eo", "deeplf")


class PrerequisiteError(RuntimeError):
    """A required upstream artifact does not exist."""


@dataclass(frozen=True)
class Layout:
    root: str

    def data(self, name: str) -> str:
        return os.path.join(self.root, "data", f"{name}.csv")

    def checkpoint(self, name: str) -> str:
        return os.path.join(self.root, "checkpoints", f"{name}.json")

    def log(self, name: str) -> str:
        return os.path.join(self.root, "logs", f"{name}.jsonl")

    def reports(self, setting: int) -> str:
        return os.path.join(self.root, "reports", f"setting{setting}")

    def figures(self) -> str:
        return os.path.join(self.root, "figures")


def _require(*paths: str) -> None:
    for p in paths:
        if not os.path.exists(p):
            raise PrerequisiteError(f"missing prerequisite: {p}")


def _write_log(path: str, records: list[dict]) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    _atomic_write_text(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def _lineage(cfg: ExperimentConfig, *keys: str) -> dict:
    return {"master": cfg.seed, "stream": list(keys), "derived": derive_seed(cfg.seed, *keys)}


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _check_fingerprint(path: str, cfg: ExperimentConfig) -> None:
    if read_checkpoint(path).config_fingerprint != cfg.fingerprint():
        _warn(f"{path} was produced under a different configuration")


# --------------------------------------------------------------------------
# generate
# --------------------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig, layout: Layout) -> int:
    ds_cfg = cfg.dataset
    tcfg = cfg.train_config()
    if ds_cfg.csv:
        cohort = load_initial_cohort_csv(ds_cfg.csv)
        if cohort.y1 is None:
            raise ValueError(f"{ds_cfg.csv}: initial cohort needs a y column to fit the ground truth")
    else:
        cohort = generate_initial_cohort(
            ds_cfg.n, ds_cfg.d, ds_cfg.cluster_separation, seed=derive_seed(cfg.seed, "data", "cohort")
        )
    gt = fit_ground_truth(cohort, ds_cfg.epsilon, tcfg)
    ds = roll_out_truth(gt, cohort, None, ds_cfg.horizon, derive_rng(cfg.seed, "data", "rollout"))
    parts = split_dataset(ds, tcfg.split_ratios, seed=derive_seed(cfg.seed, "data", "split"))
    os.makedirs(os.path.join(layout.root, "data"), exist_ok=True)
    os.makedirs(os.path.join(layout.root, "checkpoints"), exist_ok=True)
    write_cohort_csv(cohort, layout.data("cohort"))
    for name, part in zip(("train", "val", "test"), parts):
        write_dataset_csv(part, layout.data(name))
    save_checkpoint(gt, layout.checkpoint("ground_truth"), cfg.fingerprint(), _lineage(cfg, "ground_truth"))
    print(f"wrote {ds.n} individuals x {ds.horizon} steps (d={ds.d}) to {os.path.join(layout.root, 'data')}")
    return EXIT_OK


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------


def _train_prereqs(phase: str, layout: Layout) -> list[str]:
    need = [layout.data("train"), layout.data("val")]
    if phase == "rcgan":
        need.append(layout.checkpoint("phase1"))
    if phase == "deeplf":
        need += [layout.checkpoint("phase1"), layout.checkpoint("rcgan_generator")]
    return need


def cmd_train(cfg: ExperimentConfig, layout: Layout, phase: str) -> int:
    _require(*_train_prereqs(phase, layout))
    tcfg = cfg.train_config()
    train = load_dataset_csv(layout.data("train"))
    val = load_dataset_csv(layout.data("val"))
    records: list[dict] = []
    fp = cfg.fingerprint()
    os.makedirs(os.path.join(layout.root, "checkpoints"), exist_ok=True)
    status = EXIT_OK

    if phase == "phase1":
        model, hist = train_phase1(train, tcfg, val=val, log_fn=records.append)
        save_checkpoint(model, layout.checkpoint("phase1"), fp, _lineage(cfg, "init", "classifier"))
    elif phase.startswith("baseline-"):
        kind = phase.split("-", 1)[1]
        weight = tcfg.penalty_weight if kind != "plain" else 0.0
        model, hist = train_baseline(train, kind, weight, tcfg, val=val, log_fn=records.append, phase=phase)
        if hist.skipped_penalty_batches:
            _warn(f"{phase}: penalty skipped on {hist.skipped_penalty_batches} batches lacking a group")
        save_checkpoint(model, layout.checkpoint(phase), fp, _lineage(cfg, "init", "classifier"))
    elif phase == "rcgan":
        _check_fingerprint(layout.checkpoint("phase1"), cfg)
        h = load_checkpoint(layout.checkpoint("phase1"), "classifier")
        gen, disc, _ = train_rcgan(train, h, tcfg, log_fn=records.append)
        save_checkpoint(gen, layout.checkpoint("rcgan_generator"), fp, _lineage(cfg, "init", "generator"))
        save_checkpoint(disc, layout.checkpoint("rcgan_discriminator"), fp, _lineage(cfg, "init", "discriminator"))
    else:  # deeplf
        for name in ("phase1", "rcgan_generator"):
            _check_fingerprint(layout.checkpoint(name), cfg)
        h = load_checkpoint(layout.checkpoint("phase1"), "classifier")
        gen = load_checkpoint(layout.checkpoint("rcgan_generator"), "generator")
        theta, hist = train_deeplf(gen, h, tcfg, train.cohort(1), obs_horizon=train.horizon, log_fn=records.append)
        save_checkpoint(
            theta, layout.checkpoint("deeplf"), fp, _lineage(cfg, "noise", "deeplf"), rounds=hist.rounds, converged=hist.converged
        )
        unconverged = sum(1 for r in records if not r.get("sinkhorn_converged", True))
        if unconverged:
            _warn(f"deeplf: Sinkhorn hit max_iter in {unconverged} of {len(records)} rounds")
    _write_log(layout.log(phase), records)
    print(f"trained {phase}; checkpoint in {os.path.join(layout.root, 'checkpoints')}")
    return status


# --------------------------------------------------------------------------
# evaluate
# --------------------------------------------------------------------------


def _resolve_models(layout: Layout, requested: list[str] | None) -> list[str]:
    if requested:
        for m in requested:
            if m not in EVAL_MODELS:
                raise ValueError(f"unknown model {m!r} (choose from {', '.join(EVAL_MODELS)})")
        _require(*(layout.checkpoint(m) for m in requested))
        return requested
    found = [m for m in DEFAULT_EVAL_MODELS if os.path.exists(layout.checkpoint(m))]
    if not found:
        raise PrerequisiteError("no trained decision models found; run `fairlong train` first")
    return found


def cmd_evaluate(cfg: ExperimentConfig, layout: Layout, setting_id: int, models: list[str] | None) -> int:
    _require(
        layout.data("test"),
        layout.checkpoint("ground_truth"),
        layout.checkpoint("rcgan_generator"),
        layout.checkpoint("phase1"),
    )
    names = _resolve_models(layout, models)
    setting = cfg.evaluation.setting(setting_id)
    gt = load_checkpoint(layout.checkpoint("ground_truth"), "ground_truth")
    gen = load_checkpoint(layout.checkpoint("rcgan_generator"), "generator")
    h_omega = load_checkpoint(layout.checkpoint("phase1"), "classifier")
    test = load_dataset_csv(layout.data("test"))
    cohort = test.cohort(1)
    eval_seed = derive_seed(cfg.seed, "eval")
    source = "initial cohort"
    if setting.start_step > 1:
        cohort = prepare_setting2_cohort(gen, h_omega, cohort, setting.start_step, seed=eval_seed)
        source = f"step {setting.start_step} of a generator rollout under mlp (phase1)"
    reference_fn = h_omega if cfg.evaluation.reference == "h_omega" else None
    out_dir = layout.reports(setting_id)
    reports = []
    for name in names:
        model = load_checkpoint(layout.checkpoint(name), "classifier")
        rep = evaluate_model(
            model,
            gen,
            gt,
            cohort,
            setting,
            cfg.sinkhorn,
            seed=eval_seed,
            model_name=DISPLAY_NAMES[name],
            reference_fn=reference_fn,
            reference=cfg.evaluation.reference,
            cohort_source=source,
        )
        reports.append(rep)
        rep.write(out_dir)
        if not all(rep.converged):
            _warn(f"{rep.model_name}: Sinkhorn hit max_iter in some repeats")
        xs = interventional_rollout(model.frozen(), gen.frozen(), cohort, setting.horizon, derive_rng(eval_seed, "projection"))
        emit_projection_data(
            {int(S_PLUS): xs[-1][cohort.s == S_PLUS], int(S_MINUS): xs[-1][cohort.s == S_MINUS]},
            os.path.join(out_dir, f"{rep.model_name}_projection.csv"),
        )
    if len(reports) >= 2:
        table = compare_models(reports)
        _atomic_write_text(os.path.join(out_dir, "comparison.csv"), table.to_csv())
        sys.stdout.write(table.to_csv())
    else:
        sys.stdout.write(reports[0].per_step_csv())
    return EXIT_OK


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------


def cmd_report(cfg: ExperimentConfig, layout: Layout, setting_id: int) -> int:
    from .plotting import plot_long_term, plot_per_step

    cfg.evaluation.setting(setting_id)
    out_dir = layout.reports(setting_id)
    _require(out_dir)
    files = sorted(f for f in os.listdir(out_dir) if f.endswith(".json"))
    if not files:
        raise PrerequisiteError(f"no reports in {out_dir}; run `fairlong evaluate` first")
    reports = [load_report(os.path.join(out_dir, f)) for f in files]
    if len(reports) < 2:
        raise PrerequisiteError(f"report needs at least two evaluated models in {out_dir}")
    table = compare_models(reports)
    fig_dir = layout.figures()
    paths = [
        plot_per_step(table, os.path.join(fig_dir, f"setting{setting_id}_per_step.png")),
        plot_long_term(table, os.path.join(fig_dir, f"setting{setting_id}_long_term.png")),
    ]
    _atomic_write_text(os.path.join(out_dir, "comparison.csv"), table.to_csv())
    sys.stdout.write(table.to_csv())
    for p in paths:
        print(f"# figure: {p}", file=sys.stderr)
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairlong", description="Long-term fair decision pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument("--seed", type=int, default=None, help="override [experiment] seed")
        p.add_argument("--out", default="run", help="artifact directory (default: run)")

    common(sub.add_parser("generate", help="simulate the dataset and fit the ground truth"))
    p = sub.add_parser("train", help="train one phase or baseline")
    common(p)
    p.add_argument("--phase", required=True, choices=PHASES)
    p = sub.add_parser("evaluate", help="evaluate decision models through the generator")
    common(p)
    p.add_argument("--setting", type=int, choices=(1, 2), default=1)
    p.add_argument("--models", default=None, help=f"comma-separated subset of {','.join(EVAL_MODELS)}")
    p = sub.add_parser("report", help="comparison table and figures for evaluated models")
    common(p)
    p.add_argument("--setting", type=int, choices=(1, 2), default=1)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        layout = Layout(args.out)
        if args.command == "generate":
            return cmd_generate(cfg, layout)
        if args.command == "train":
            return cmd_train(cfg, layout, args.phase)
        if args.command == "evaluate":
            models = [m.strip() for m in args.models.split(",") if m.strip()] if args.models else None
            return cmd_evaluate(cfg, layout, args.setting, models)
        return cmd_report(cfg, layout, args.setting)
    except PrerequisiteError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_PREREQ
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError) as err:
        print(f"invalid input: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
