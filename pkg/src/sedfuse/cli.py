"""Single command-line entry point for the pipeline.

Subcommands share the on-disk formats defined in :mod:`sedfuse.core`:

* ``simulate``   emit a complete synthetic dataset from a scenario config
* ``spl``        select high-confidence separated sources
* ``fuse``       combine model posterior dumps (average/logistic/classwise/pair)
* ``decode``     turn posteriors into an event table
* ``score``      collar F1 and/or PSDS against reference events
* ``experiment`` run the whole grid and emit one consolidated report

Every run writes ``run_manifest.json`` next to its outputs. Exit codes:
0 success, 2 usage or validation problem, 1 internal error. Outputs are
written atomically; inputs are never mutated. ``SEDFUSE_THREADS`` caps
worker processes for per-clip stages (default 1; results are identical
for any worker count).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from . import __version__
from .core import (
    ClassVocabulary,
    EventList,
    SedfuseError,
    ValidationError,
    atomic_write_text,
    parse_events,
    parse_framegrids,
    parse_manifest,
    parse_tags,
    parse_weak_labels,
    write_events,
    write_framegrids,
    write_manifest,
    write_tags,
    write_weak_labels,
)
from .decode import PostProcessConfig, decode_many
from .fusion import (
    DEFAULT_BETA_SWEEP,
    ClassF1Table,
    apply_logistic_fusion,
    classwise_weights,
    combine_pair,
    fit_alpha,
    fit_logistic_fusion,
    fuse_average,
    fuse_classwise,
    save_curve,
    sweep_beta,
    _aligned_clip_sets,
)
from .metrics import (
    PSDS1,
    PSDS2,
    CollarConfig,
    PSDSConfig,
    event_f1,
    psds_many,
    report_tables,
)
from .spl import select, selection_report, write_selection
from .synth import (
    Scenario,
    default_scenario,
    gen_truth,
    load_scenario,
    simulate_model,
    simulate_separation,
    tag_accuracy,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2


def worker_count() -> int:
    raw = os.environ.get("SEDFUSE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValidationError(f"SEDFUSE_THREADS must be an integer, got {raw!r}") from None


def _simulate_model_job(args):
    truth, skill, cfg, seed, indices = args
    return simulate_model(truth, skill, cfg, seed, indices=indices)


def simulate_model_parallel(truth, skill, cfg, seed):
    """Per-clip parallel model simulation; identical to the serial run."""
    workers = worker_count()
    if workers == 1 or cfg.n_clips < 2 * workers:
        return simulate_model(truth, skill, cfg, seed)
    chunks = []
    step = (cfg.n_clips + workers - 1) // workers
    for lo in range(0, cfg.n_clips, step):
        chunks.append(list(range(lo, min(lo + step, cfg.n_clips))))
    try:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(_simulate_model_job, [(truth, skill, cfg, seed, c) for c in chunks])
            )
    except OSError:
        return simulate_model(truth, skill, cfg, seed)
    grids = []
    for part in parts:
        grids.extend(part)
    return grids


@dataclasses.dataclass
class RunManifest:
    """What ran, with what, producing what; written next to every output."""

    subcommand: str
    arguments: dict
    inputs: list[str]
    outputs: list[str]
    seed: int | None
    tool_version: str
    wall_clock_seconds: float

    def write(self, out_dir: Path) -> None:
        atomic_write_text(
            out_dir / "run_manifest.json",
            json.dumps(dataclasses.asdict(self), indent=2) + "\n",
        )


class _Run:
    """Collects inputs/outputs during a subcommand for the manifest."""

    def __init__(self, subcommand: str, args: argparse.Namespace):
        self.subcommand = subcommand
        self.arguments = {
            k: (str(v) if isinstance(v, Path) else v)
            for k, v in vars(args).items()
            if k != "func" and v is not None
        }
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.started = time.perf_counter()

    def reads(self, path) -> str:
        path = os.path.abspath(os.fspath(path))
        self.inputs.append(path)
        return path

    def writes(self, path) -> str:
        path = os.path.abspath(os.fspath(path))
        self.outputs.append(path)
        return path

    def finish(self, out_dir: Path, seed: int | None = None) -> None:
        manifest = RunManifest(
            self.subcommand,
            self.arguments,
            self.inputs,
            self.outputs,
            seed,
            __version__,
            time.perf_counter() - self.started,
        )
        manifest.write(out_dir)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _decode_cfg_from_args(args) -> PostProcessConfig:
    if getattr(args, "decode_config", None):
        cfg = PostProcessConfig.load(args.decode_config)
    else:
        cfg = PostProcessConfig()
    if getattr(args, "thresholds", None) is not None:
        cfg = dataclasses.replace(cfg, default_threshold=args.thresholds, class_thresholds={})
    if getattr(args, "median_windows", None) is not None:
        cfg = dataclasses.replace(
            cfg, default_median_window=args.median_windows, class_median_windows={}
        )
    return cfg


def _vocab_from_grids_file(path) -> ClassVocabulary:
    """Peek the class list of the first record; order defines the run vocab."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                record = json.loads(line)
                return ClassVocabulary(tuple(record["classes"]))
    raise ValidationError(f"{path}: no grid records to derive a vocabulary from")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    run = _Run("simulate", args)
    scenario = _load_scenario_args(args, run)
    out = _out_dir(args)
    _write_dataset(scenario, out, run)
    run.finish(out, seed=scenario.config.seed)
    print(f"wrote synthetic dataset for {scenario.config.n_clips} clips to {out}")
    return EXIT_OK


def _load_scenario_args(args, run: _Run) -> Scenario:
    if args.config:
        run.reads(args.config)
        scenario = load_scenario(args.config)
    else:
        scenario = default_scenario()
    if args.seed is not None:
        cfg = dataclasses.replace(scenario.config, seed=args.seed)
        scenario = dataclasses.replace(scenario, config=cfg)
    return scenario


def _write_dataset(scenario: Scenario, out: Path, run: _Run) -> dict:
    cfg = scenario.config
    vocab = cfg.vocab
    truth, weak = gen_truth(cfg)
    model_grids = [
        simulate_model_parallel(truth, skill, cfg, scenario.model_seed(m))
        for m, skill in enumerate(scenario.model_skills)
    ]
    manifest, tags, source_truth = simulate_separation(
        truth, cfg.clip_ids(), vocab, scenario.separation,
        scenario.n_sources, scenario.separation_seed(),
    )
    write_events(truth, run.writes(out / "events.tsv"))
    write_weak_labels(weak, vocab, run.writes(out / "weak.tsv"))
    for name, grids in zip(scenario.model_names, model_grids):
        write_framegrids(grids, vocab, run.writes(out / f"grids_{name}.jsonl"))
    write_tags(tags, vocab, run.writes(out / "tags.jsonl"))
    write_manifest(manifest, run.writes(out / "sep_manifest.jsonl"))
    write_events(source_truth, run.writes(out / "source_events.tsv"))
    return {
        "truth": truth,
        "weak": weak,
        "model_grids": model_grids,
        "manifest": manifest,
        "tags": tags,
        "source_truth": source_truth,
    }


# ---------------------------------------------------------------------------
# spl
# ---------------------------------------------------------------------------


def cmd_spl(args) -> int:
    run = _Run("spl", args)
    manifest = parse_manifest(run.reads(args.manifest))
    if len(manifest) == 0:
        vocab = None
        tags = []
    else:
        vocab = _vocab_from_tags_file(args.tags)
        tags = parse_tags(run.reads(args.tags), vocab)
    out = _out_dir(args)

    results = []
    if len(manifest) > 0:
        weak = parse_weak_labels(run.reads(args.weak), vocab)
        strong_classes: dict[str, set[str]] = {}
        if args.strong:
            strong = parse_events(run.reads(args.strong), vocab)
            for ev in strong:
                strong_classes.setdefault(ev.clip_id, set()).add(ev.event_label)
        tags_by_id = {tag.source_id: tag for tag in tags}
        for mixture_id, source_ids in manifest.sources.items():
            missing = [sid for sid in source_ids if sid not in tags_by_id]
            if missing:
                raise ValidationError(
                    f"{mixture_id}: sources without tag predictions: {missing}"
                )
            mixture_weak = set(weak.labels.get(mixture_id, frozenset()))
            mixture_weak |= strong_classes.get(mixture_id, set())
            if not mixture_weak:
                raise ValidationError(f"{mixture_id}: no weak or strong labels")
            sources = [tags_by_id[sid] for sid in source_ids]
            for tag in sources:
                if tag.parent_clip_id != mixture_id:
                    raise ValidationError(
                        f"{tag.source_id}: parent {tag.parent_clip_id!r} does not "
                        f"match manifest mixture {mixture_id!r}"
                    )
            results.append(select(sources, mixture_weak, args.tau, vocab))

    write_selection(results, run.writes(out / "selection.jsonl"))
    summary = selection_report(results)
    print(json.dumps(summary.to_dict(), indent=2))
    run.finish(out)
    return EXIT_OK


def _vocab_from_tags_file(path) -> ClassVocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                record = json.loads(line)
                names = [k for k in record["probs"] if k != "other"]
                return ClassVocabulary(tuple(names))
    raise ValidationError(f"{path}: no tag records to derive a vocabulary from")


# ---------------------------------------------------------------------------
# fuse
# ---------------------------------------------------------------------------


def cmd_fuse(args) -> int:
    run = _Run("fuse", args)
    if not args.grids:
        raise ValidationError("at least one --grids input is required")
    vocab = _vocab_from_grids_file(args.grids[0])
    model_grids = [parse_framegrids(run.reads(path), vocab) for path in args.grids]
    out = _out_dir(args)
    decode_cfg = _decode_cfg_from_args(args)

    if args.mode == "pair":
        if len(model_grids) != 2:
            raise ValidationError("pair mode needs exactly 2 grid inputs")
        if args.alpha is None:
            raise ValidationError("pair mode needs --alpha (a weight or 'fit')")
        pairs = list(zip(model_grids[0], model_grids[1]))
        if args.alpha == "fit":
            if not args.truth:
                raise ValidationError("--alpha fit needs --truth to score against")
            truth = parse_events(run.reads(args.truth), vocab)
            fit = fit_alpha(pairs, truth, decode_cfg, vocab)
            save_curve(
                run.writes(out / "curves.json"),
                "alpha", fit.alpha, fit.objective, fit.curve,
            )
            alpha = fit.alpha
        else:
            try:
                alpha = float(args.alpha)
            except ValueError:
                raise ValidationError(f"cannot parse --alpha {args.alpha!r}") from None
        fused = [combine_pair(a, b, alpha) for a, b in pairs]
    elif args.mode == "average":
        fused = [fuse_average(group) for group in _aligned_clip_sets(model_grids)]
    elif args.mode == "logistic":
        if not args.truth:
            raise ValidationError("logistic mode needs --truth to fit against")
        truth = parse_events(run.reads(args.truth), vocab)
        model = fit_logistic_fusion(model_grids, truth, vocab)
        fused = [
            apply_logistic_fusion(model, group)
            for group in _aligned_clip_sets(model_grids)
        ]
        atomic_write_text(
            run.writes(out / "logistic_model.json"),
            json.dumps(model.metadata(), indent=2) + "\n",
        )
    elif args.mode == "classwise":
        if not args.f1_table:
            raise ValidationError("classwise mode needs --f1-table")
        table = ClassF1Table.load(run.reads(args.f1_table))
        if len(table.models) != len(model_grids):
            raise ValidationError(
                f"F1 table has {len(table.models)} models, got {len(model_grids)} grid inputs"
            )
        betas = _parse_betas(args.beta)
        if len(betas) == 1:
            beta = betas[0]
        else:
            if not args.truth:
                raise ValidationError("beta sweeps need --truth to score against")
            truth = parse_events(run.reads(args.truth), vocab)
            sweep = sweep_beta(model_grids, table, truth, betas, decode_cfg, vocab)
            save_curve(
                run.writes(out / "curves.json"),
                "beta", sweep.beta, sweep.objective, sweep.curve,
            )
            beta = sweep.beta
        weights = classwise_weights(table, beta)
        fused = [
            fuse_classwise(group, weights) for group in _aligned_clip_sets(model_grids)
        ]
    else:  # pragma: no cover - argparse restricts choices
        raise ValidationError(f"unknown mode {args.mode!r}")

    write_framegrids(fused, vocab, run.writes(out / "fused.jsonl"))
    run.finish(out)
    print(f"fused {len(fused)} clips with mode={args.mode} -> {out / 'fused.jsonl'}")
    return EXIT_OK


def _parse_betas(raw: str | None) -> list[float]:
    if raw is None:
        raise ValidationError("classwise mode needs --beta (a value or comma list)")
    try:
        return [float(tok) for tok in str(raw).split(",") if tok != ""]
    except ValueError:
        raise ValidationError(f"cannot parse --beta {raw!r}") from None


# ---------------------------------------------------------------------------
# decode
# ---------------------------------------------------------------------------


def cmd_decode(args) -> int:
    run = _Run("decode", args)
    vocab = _vocab_from_grids_file(args.grids)
    grids = parse_framegrids(run.reads(args.grids), vocab)
    cfg = _decode_cfg_from_args(args)
    out = _out_dir(args)
    events = decode_many(grids, cfg, vocab)
    write_events(events, run.writes(out / "events.tsv"))
    run.finish(out)
    print(f"decoded {len(events)} events from {len(grids)} clips")
    return EXIT_OK


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------


def cmd_score(args) -> int:
    run = _Run("score", args)
    want = {"f1", "psds1", "psds2"} if args.metric == "all" else {args.metric}
    need_grids = bool(want & {"psds1", "psds2"})
    if need_grids and not args.grids:
        raise ValidationError(f"--metric {args.metric} needs --grids")
    if "f1" in want and not (args.est or args.grids):
        raise ValidationError("--metric f1 needs --est or --grids")

    if args.grids:
        vocab = _vocab_from_grids_file(args.grids)
    else:
        ref_probe = parse_events(args.ref)
        est_probe = parse_events(args.est)
        names = sorted(ref_probe.label_set() | est_probe.label_set())
        vocab = ClassVocabulary(tuple(names))
    ref = parse_events(run.reads(args.ref), vocab)
    if not ref.events:
        raise ValidationError(f"{args.ref}: reference event list is empty")
    decode_cfg = _decode_cfg_from_args(args)
    out = _out_dir(args)

    f1_reports = {}
    psds1_reports = {}
    psds2_reports = {}
    name = args.system_name
    if "f1" in want:
        if args.est:
            est = parse_events(run.reads(args.est), vocab)
        else:
            grids = parse_framegrids(run.reads(args.grids), vocab)
            est = decode_many(grids, decode_cfg, vocab)
        f1_reports[name] = event_f1(ref, est, CollarConfig(), vocab)
    if need_grids:
        grids = parse_framegrids(run.reads(args.grids), vocab)
        if args.psds_config and len(want & {"psds1", "psds2"}) > 1:
            raise ValidationError(
                "--psds-config overrides a single variant; use --metric psds1 or psds2"
            )
        cfgs, keys = [], []
        if "psds1" in want:
            cfgs.append(_psds_cfg_from_args(args, PSDS1, run))
            keys.append("psds1")
        if "psds2" in want:
            cfgs.append(_psds_cfg_from_args(args, PSDS2, run))
            keys.append("psds2")
        reports = psds_many(grids, ref, decode_cfg, cfgs, vocab)
        for key, report in zip(keys, reports):
            if key == "psds1":
                psds1_reports[name] = report
            else:
                psds2_reports[name] = report

    tables = report_tables(f1_reports, psds1_reports, psds2_reports)
    payload = tables.to_dict()
    payload["psds_detail"] = {
        "psds1": {k: v.to_dict() for k, v in psds1_reports.items()},
        "psds2": {k: v.to_dict() for k, v in psds2_reports.items()},
    }
    atomic_write_text(run.writes(out / "report.json"), json.dumps(payload, indent=2) + "\n")
    atomic_write_text(run.writes(out / "report.txt"), tables.to_text())
    print(tables.to_text(), end="")
    run.finish(out)
    return EXIT_OK


def _psds_cfg_from_args(args, default: PSDSConfig, run: _Run) -> PSDSConfig:
    if args.psds_config:
        with open(run.reads(args.psds_config), "r", encoding="utf-8") as fh:
            return PSDSConfig.from_dict(json.load(fh))
    return default


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------


def cmd_experiment(args) -> int:
    run = _Run("experiment", args)
    scenario = _load_scenario_args(args, run)
    out = _out_dir(args)
    data_dir = out / "data"
    data_dir.mkdir(exist_ok=True)
    stage = "simulate"
    try:
        dataset = _write_dataset(scenario, data_dir, run)
        cfg = scenario.config
        vocab = cfg.vocab
        truth: EventList = dataset["truth"]
        weak = dataset["weak"]
        model_grids = dataset["model_grids"]

        stage = "spl"
        results = []
        tags_by_id = {t.source_id: t for t in dataset["tags"]}
        for mixture_id, source_ids in dataset["manifest"].sources.items():
            sources = [tags_by_id[sid] for sid in source_ids]
            mixture_weak = set(weak.labels.get(mixture_id, frozenset()))
            if not mixture_weak:
                continue
            results.append(select(sources, mixture_weak, scenario.tau, vocab))
        write_selection(results, run.writes(out / "selection.jsonl"))
        summary = selection_report(results)
        selected_ids = {sid for r in results for sid, _ in r.selected}
        acc_all = tag_accuracy(dataset["tags"], dataset["source_truth"], vocab)
        acc_sel = tag_accuracy(
            dataset["tags"], dataset["source_truth"], vocab, subset=selected_ids
        )

        stage = "fuse"
        decode_cfg = _decode_cfg_from_args(args)
        collar = CollarConfig()
        model_f1 = {}
        for name, grids in zip(scenario.model_names, model_grids):
            est = decode_many(grids, decode_cfg, vocab)
            model_f1[name] = event_f1(truth, est, collar, vocab)
        f1_table = ClassF1Table.from_reports(model_f1, vocab)
        f1_table.save(run.writes(out / "f1_table.json"))

        clip_groups = _aligned_clip_sets(model_grids)
        fused = {"average": [fuse_average(g) for g in clip_groups]}
        logistic_model = fit_logistic_fusion(
            model_grids, truth, vocab, scenario.model_names
        )
        fused["logistic"] = [
            apply_logistic_fusion(logistic_model, g) for g in clip_groups
        ]
        sweep = sweep_beta(
            model_grids, f1_table, truth, DEFAULT_BETA_SWEEP, decode_cfg, vocab, collar
        )
        save_curve(
            run.writes(out / "curves.json"), "beta", sweep.beta, sweep.objective, sweep.curve
        )
        weights = classwise_weights(f1_table, sweep.beta)
        fused["classwise"] = [fuse_classwise(g, weights) for g in clip_groups]

        stage = "decode+score"
        systems = {
            name: grids for name, grids in zip(scenario.model_names, model_grids)
        }
        systems.update(fused)
        f1_reports = dict(model_f1)
        psds1_reports = {}
        psds2_reports = {}
        for name, grids in systems.items():
            est = decode_many(grids, decode_cfg, vocab)
            write_events(est, run.writes(out / f"events_{name}.tsv"))
            if name not in f1_reports:
                f1_reports[name] = event_f1(truth, est, collar, vocab)
            p1, p2 = psds_many(grids, truth, decode_cfg, [PSDS1, PSDS2], vocab)
            psds1_reports[name] = p1
            psds2_reports[name] = p2

        stage = "report"
        tables = report_tables(f1_reports, psds1_reports, psds2_reports)
        report = tables.to_dict()
        report["selection"] = {
            **summary.to_dict(),
            "tag_accuracy_all": {"correct": acc_all.correct, "total": acc_all.total,
                                 "rate": acc_all.rate},
            "tag_accuracy_selected": {"correct": acc_sel.correct, "total": acc_sel.total,
                                      "rate": acc_sel.rate},
        }
        report["beta_sweep"] = {
            "best": sweep.beta,
            "objective": sweep.objective,
            "curve": [[b, s] for b, s in sweep.curve],
        }
        report["logistic"] = logistic_model.metadata()
        report["scenario"] = _scenario_dict(scenario)
        report["tool_version"] = __version__
        atomic_write_text(
            run.writes(out / "report.json"), json.dumps(report, indent=2) + "\n"
        )
        text = tables.to_text() + (
            f"\nSPL: selected {summary.selected_total}/{summary.total_sources} sources "
            f"(rate {summary.selection_rate:.3f}); "
            f"tag accuracy all={acc_all.rate:.3f} selected={acc_sel.rate:.3f}\n"
            f"beta sweep best={sweep.beta}\n"
        )
        atomic_write_text(run.writes(out / "report.txt"), text)
        print(text, end="")
    except SedfuseError as exc:
        raise SedfuseError(f"experiment stage {stage!r} failed: {exc}") from exc
    run.finish(out, seed=scenario.config.seed)
    return EXIT_OK


def _scenario_dict(scenario: Scenario) -> dict:
    cfg = scenario.config
    return {
        "seed": cfg.seed,
        "n_clips": cfg.n_clips,
        "clip_seconds": cfg.clip_seconds,
        "frames_per_clip": cfg.frames_per_clip,
        "classes": list(cfg.classes),
        "events_per_clip": list(cfg.events_per_clip),
        "duration_seconds": list(cfg.duration_seconds),
        "class_duration_seconds": {
            k: list(v) for k, v in cfg.class_duration_seconds.items()
        },
        "allow_overlap": cfg.allow_overlap,
        "models": [
            {
                "name": name,
                "miss_rate": list(skill.miss_rate),
                "false_alarm_rate": list(skill.false_alarm_rate),
                "jitter_frames": list(skill.jitter_frames),
                "sharpness": [
                    "inf" if s == float("inf") else s for s in skill.sharpness
                ],
            }
            for name, skill in zip(scenario.model_names, scenario.model_skills)
        ],
        "separation": {
            "clean": scenario.separation.clean,
            "leakage": scenario.separation.leakage,
            "residual": scenario.separation.residual,
            "tagging_error": scenario.separation.tagging_error,
        },
        "n_sources": scenario.n_sources,
        "tau": scenario.tau,
    }


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sedfuse",
        description="Selective pseudo-labeling, score fusion, decoding and scoring "
        "for sound event detection pipelines.",
    )
    parser.add_argument("--version", action="version", version=f"sedfuse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--config", help="scenario.json (defaults used when omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("spl", help="selective pseudo-labeling of separated sources")
    p.add_argument("--tags", required=True, help="tags.jsonl")
    p.add_argument("--weak", required=True, help="weak.tsv")
    p.add_argument("--manifest", required=True, help="sep_manifest.jsonl")
    p.add_argument("--strong", help="optional strong labels to widen the ground truth")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_spl)

    p = sub.add_parser("fuse", help="combine model posterior dumps")
    p.add_argument("--mode", required=True, choices=["average", "logistic", "classwise", "pair"])
    p.add_argument("--grids", action="append", required=True, help="grids.jsonl (repeatable)")
    p.add_argument("--alpha", help="pair weight in [0, 1], or 'fit' to grid-search on --truth")
    p.add_argument("--beta", help="classwise scale: one value or a comma list to sweep")
    p.add_argument("--f1-table", dest="f1_table", help="f1_table.json for classwise mode")
    p.add_argument("--truth", help="events.tsv for logistic fitting / beta sweeps")
    p.add_argument("--decode-config", dest="decode_config")
    p.add_argument("--thresholds", type=float, help="global decision threshold override")
    p.add_argument("--median-windows", dest="median_windows", type=int,
                   help="global median window override")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("decode", help="posteriors -> events.tsv")
    p.add_argument("--grids", required=True)
    p.add_argument("--decode-config", dest="decode_config")
    p.add_argument("--thresholds", type=float)
    p.add_argument("--median-windows", dest="median_windows", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("score", help="collar F1 / PSDS against reference events")
    p.add_argument("--ref", required=True, help="reference events.tsv")
    p.add_argument("--est", help="decoded events.tsv (for F1)")
    p.add_argument("--grids", help="posterior grids (for PSDS, or to decode for F1)")
    p.add_argument("--metric", default="all", choices=["f1", "psds1", "psds2", "all"])
    p.add_argument("--psds-config", dest="psds_config", help="psds_cfg.json override")
    p.add_argument("--decode-config", dest="decode_config")
    p.add_argument("--thresholds", type=float)
    p.add_argument("--median-windows", dest="median_windows", type=int)
    p.add_argument("--system-name", dest="system_name", default="system")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("experiment", help="full synthetic pipeline + report grid")
    p.add_argument("--config", help="scenario.json (defaults used when omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--decode-config", dest="decode_config")
    p.add_argument("--thresholds", type=float)
    p.add_argument("--median-windows", dest="median_windows", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SedfuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


def entrypoint() -> None:  # console script
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
