"""Command-line entry point wiring curation, filtering, training, evaluator
training, benchmarking, classification, and reporting behind one config file.

Exit codes: 0 success, 2 validation failure, 3 runtime failure,
4 completed with per-item failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from . import plots
from .adapter import AdapterDims, init_for_training
from .backbone import ToyBackbone
from .config import RunConfig, load_config, require_paths
from .dermbench.bench import BenchRow, JudgeSettings, read_bench_cases, rank_systems, run_bench
from .dermbench.classify import LabelSpace, accuracy, classify_case, read_classify_manifest
from .dermbench.report import (
    render_bench_csv,
    render_bench_markdown,
    render_classify_csv,
    render_classify_markdown,
    round_half_away,
)
from .dermeval.evalformat import DIMENSIONS
from .dermeval.filtering import (
    BalanceInfeasibleError,
    FilterSpec,
    filter_candidates,
    read_scored_corpus,
    write_audit,
)
from .dermeval.rl import EvalPolicy, make_eval_cases, make_format_cases, two_stage_train
from .pipeline.clients import HttpClient, MockClient
from .pipeline.dedup import DedupItem, dedup
from .pipeline.lexicon import DEFAULT_LEXICON, LeakLexicon
from .pipeline.runner import read_corpus, read_manifest, run_pipeline
from .teacher import read_teacher_file, write_teacher_file
from .toydata import make_toy_pairs
from .training import (
    batch_summaries,
    loss_distill,
    loss_sft_biased,
    make_train_state,
    save_checkpoint,
    schedule_weights,
    train_step,
    write_run_log,
)

OK, VALIDATION_ERROR, RUNTIME_ERROR, PARTIAL = 0, 2, 3, 4


def _fail(errors: list[str]) -> int:
    for err in errors:
        print(f"config error: {err}", file=sys.stderr)
    return VALIDATION_ERROR


def _load_config_with_overrides(args) -> tuple[RunConfig, list[str]]:
    cfg, errors = load_config(args.config)
    # precedence: flags > environment > file
    env_seed = os.environ.get("DERMKIT_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            errors.append("DERMKIT_SEED: must be an integer")
    env_run_dir = os.environ.get("DERMKIT_RUN_DIR")
    if env_run_dir:
        cfg.run_dir = env_run_dir
    if args.seed is not None:
        cfg.seed = args.seed
    if args.run_dir is not None:
        cfg.run_dir = args.run_dir
    return cfg, errors


def _build_client(cfg: RunConfig, model_id: str | None = None, seed_offset: int = 0):
    if cfg.clients.backend == "mock":
        return MockClient(seed=cfg.seed + seed_offset,
                          model_id=model_id or cfg.clients.model_id)
    endpoint = cfg.clients.endpoints.get(model_id or "", cfg.clients.endpoint)
    return HttpClient(endpoint, model_id=model_id or cfg.clients.model_id,
                      api_key_env=cfg.clients.api_key_env,
                      min_interval_s=cfg.clients.min_interval_s)


def _clock(cfg: RunConfig):
    if cfg.clients.backend == "mock" and cfg.clients.fixed_timestamp:
        stamp = cfg.clients.fixed_timestamp
        return lambda: stamp
    return None  # wall clock


def _lexicon(cfg: RunConfig) -> LeakLexicon:
    return DEFAULT_LEXICON


def _write_summary(run_dir: Path, name: str, summary: dict, files: list[Path]) -> None:
    summary_path = run_dir / f"{name}_summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    manifest_path = run_dir / "manifest.json"
    manifest = {}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
    manifest[name] = sorted(str(f.relative_to(run_dir)) for f in files) + [
        f"{name}_summary.json"
    ]
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _already_complete(run_dir: Path, name: str, force: bool) -> bool:
    if force:
        return False
    return (run_dir / f"{name}_summary.json").exists()


def _dims(cfg: RunConfig) -> AdapterDims:
    d = cfg.dims
    return AdapterDims(patch_size=d.patch_size, channels=d.channels, d_c=d.d_c,
                       d_b=d.d_b, n_blocks=d.n_blocks, d_s=d.d_s, d_t=d.d_t,
                       rank=d.rank, d_model=d.d_model)


def _backbone(cfg: RunConfig) -> ToyBackbone:
    d = cfg.dims
    return ToyBackbone(vocab_size=d.vocab_size, d_model=d.d_model,
                       d_hidden=d.d_hidden, max_len=d.max_len, seed=d.backbone_seed)


def _read_id_file(path: str) -> frozenset[str]:
    ids = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            ids.add(obj["id"] if isinstance(obj, dict) else str(obj))
        except json.JSONDecodeError:
            ids.add(line)
    return frozenset(ids)


# ---------------------------------------------------------------- commands


def cmd_curate(cfg: RunConfig, run_dir: Path) -> int:
    manifest = read_manifest(cfg.paths.manifest)
    client = _build_client(cfg)
    corpus_path = run_dir / "corpus.jsonl"
    failures_path = run_dir / "curate_failures.jsonl"
    result = run_pipeline(
        manifest, client, _lexicon(cfg), corpus_path, failures_path,
        seed=cfg.seed, temperature=cfg.clients.temperature,
        max_workers=cfg.clients.max_workers, clock=_clock(cfg),
    )
    records = read_corpus(corpus_path)
    items = [
        DedupItem(r.id, r.caption, Path(r.image_ref).read_bytes()) for r in records
    ]
    kept, drops = dedup(items)
    kept_ids = {k.id for k in kept}
    dedup_path = run_dir / "corpus.dedup.jsonl"
    with open(dedup_path, "w", encoding="utf-8") as fh:
        for record in records:
            if record.id in kept_ids:
                fh.write(record.to_json() + "\n")
    drops_path = run_dir / "dedup_drops.jsonl"
    with open(drops_path, "w", encoding="utf-8") as fh:
        for drop in drops:
            fh.write(json.dumps(asdict(drop)) + "\n")
    summary = {
        "written": len(result.written),
        "skipped": len(result.skipped),
        "failures": len(result.failures),
        "dedup_kept": len(kept),
        "dedup_dropped": len(drops),
    }
    _write_summary(run_dir, "curate", summary,
                   [corpus_path, failures_path, dedup_path, drops_path])
    print(f"curate: {summary}")
    return PARTIAL if result.failures else OK


def cmd_filter(cfg: RunConfig, run_dir: Path) -> int:
    candidates = read_scored_corpus(cfg.paths.scored_corpus)
    certified = (
        _read_id_file(cfg.paths.certified_ids) if cfg.paths.certified_ids else frozenset()
    )
    spec = FilterSpec(
        threshold=cfg.filter.threshold,
        balance_keys=tuple(cfg.filter.balance_keys),
        max_skew=cfg.filter.max_skew,
        certified_ids=certified,
    )
    audit_path = run_dir / "filter_audit.jsonl"
    try:
        result = filter_candidates(candidates, spec)
    except BalanceInfeasibleError as exc:
        write_audit(audit_path, exc.audit)
        print(f"filter: infeasible balance: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    split_path = run_dir / "train_split.jsonl"
    with open(split_path, "w", encoding="utf-8") as fh:
        for rid in result.selected_ids:
            fh.write(json.dumps({"id": rid}) + "\n")
    write_audit(audit_path, result.audit)
    summary = {
        "selected": len(result.selected_ids),
        "excluded": len(result.audit) - len(result.selected_ids),
        "passes": result.passes,
        "group_counts": result.group_counts,
    }
    _write_summary(run_dir, "filter", summary, [split_path, audit_path])
    print(f"filter: selected {summary['selected']} of {len(result.audit)}")
    return OK


def _eval_losses(pairs, params, backbone, sched):
    with torch.no_grad():
        z, t = batch_summaries(pairs, params)
        sft = float(loss_sft_biased(pairs, backbone, params))
        dist = float(loss_distill(z, t))
    return {"loss_sft": sft, "loss_distill": dist,
            "total": sched.lambda_sft * sft + sched.lambda_d * dist}


def cmd_train(cfg: RunConfig, run_dir: Path) -> int:
    torch.manual_seed(cfg.seed)
    dims = _dims(cfg)
    backbone = _backbone(cfg)
    pairs = make_toy_pairs(cfg.train.pairs, dims, backbone, seed=cfg.seed,
                           n_token_groups=cfg.train.token_groups)
    pair_ids = [f"pair-{i:04d}" for i in range(len(pairs))]

    teacher_path = run_dir / "teacher.temb"
    if cfg.paths.teacher_file:
        ids, matrix = read_teacher_file(cfg.paths.teacher_file)
        if len(ids) != len(pairs) or matrix.shape[1] != dims.d_t:
            print(
                f"train: teacher file {cfg.paths.teacher_file} has shape "
                f"{matrix.shape}, expected ({len(pairs)}, {dims.d_t})",
                file=sys.stderr,
            )
            return RUNTIME_ERROR
        for pair, row in zip(pairs, matrix):
            pair.teacher = torch.from_numpy(row.copy()).to(pair.teacher.dtype)
    else:
        write_teacher_file(
            teacher_path, pair_ids,
            np.stack([p.teacher.numpy().astype(np.float32) for p in pairs]),
        )

    n_val = int(round(cfg.train.validation_frac * len(pairs)))
    val_pairs, train_pairs = pairs[:n_val], pairs[n_val:]
    params = init_for_training(dims, seed=cfg.seed)
    state = make_train_state(
        params, backbone, t_max=cfg.schedule.t_max, bump=cfg.schedule.bump,
        base_lr=cfg.train.lr, warmup_frac=cfg.train.warmup_frac,
        weight_decay=cfg.train.weight_decay,
    )
    start_eval = _eval_losses(train_pairs, params, backbone,
                              schedule_weights(0, cfg.schedule.t_max, cfg.schedule.bump))
    best_val, best_step = float("inf"), -1
    batch_size = min(cfg.train.batch_size, len(train_pairs))
    ckpt_best = run_dir / "adapters_best.pt"
    for step in range(cfg.schedule.t_max):
        lo = (step * batch_size) % len(train_pairs)
        batch = train_pairs[lo : lo + batch_size]
        if len(batch) < batch_size:
            batch = batch + train_pairs[: batch_size - len(batch)]
        train_step(state, batch, backbone)
        if val_pairs and (step % 50 == 0 or step == cfg.schedule.t_max - 1):
            sched = schedule_weights(state.step, cfg.schedule.t_max, cfg.schedule.bump)
            val = _eval_losses(val_pairs, params, backbone, sched)
            if val["total"] < best_val:
                best_val, best_step = val["total"], state.step
                save_checkpoint(ckpt_best, state)

    final_eval = _eval_losses(train_pairs, params, backbone,
                              schedule_weights(state.step, cfg.schedule.t_max,
                                               cfg.schedule.bump))
    log_path = run_dir / "run_log.jsonl"
    write_run_log(state.history, log_path)
    ckpt_final = run_dir / "adapters_final.pt"
    save_checkpoint(ckpt_final, state)
    fig_loss = plots.plot_loss_curves([asdict(r) for r in state.history],
                                      run_dir / "loss_curves.png")
    fig_sched = plots.plot_schedule(cfg.schedule.t_max, cfg.schedule.bump,
                                    run_dir / "schedule.png")
    first = state.history[0]
    last = state.history[-1]
    summary = {
        "steps": state.step,
        "backbone_digest": state.backbone_digest,
        "first_report": {"loss_sft": first.loss_sft, "loss_distill": first.loss_distill},
        "final_report": {"loss_sft": last.loss_sft, "loss_distill": last.loss_distill},
        "train_eval_start": start_eval,
        "train_eval_final": final_eval,
        "sft_drop": 1.0 - final_eval["loss_sft"] / start_eval["loss_sft"],
        "distill_drop": 1.0 - final_eval["loss_distill"] / start_eval["loss_distill"],
        "best_val_total": best_val if best_step >= 0 else None,
        "best_val_step": best_step,
    }
    files = [log_path, ckpt_final, fig_loss, fig_sched]
    if not cfg.paths.teacher_file:
        files.append(teacher_path)
    if best_step >= 0:
        files.append(ckpt_best)
    _write_summary(run_dir, "train", summary, files)
    print(f"train: sft drop {summary['sft_drop']:.1%}, "
          f"distill drop {summary['distill_drop']:.1%} over {state.step} steps")
    return OK


def cmd_train_eval(cfg: RunConfig, run_dir: Path) -> int:
    torch.manual_seed(cfg.seed)
    ev = cfg.evaltrain
    fmt = make_format_cases(ev.format_cases, feature_dim=ev.feature_dim,
                            seed=cfg.seed + 11)
    scored = make_eval_cases(ev.scored_cases, feature_dim=ev.feature_dim,
                             n_profiles=ev.profiles, seed=cfg.seed + 3)
    policy = EvalPolicy(feature_dim=ev.feature_dim, seed=cfg.seed)
    try:
        result = two_stage_train(
            fmt, scored, policy,
            stage1_target=ev.stage1_target, stage1_max_epochs=ev.stage1_max_epochs,
            stage2_steps=ev.stage2_steps, stage2_batch=ev.stage2_batch,
            stage2_lr=ev.stage2_lr, seed=cfg.seed + 42,
        )
    except RuntimeError as exc:
        print(f"train-eval: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    traj_path = run_dir / "reward_trajectory.jsonl"
    with open(traj_path, "w", encoding="utf-8") as fh:
        for step, r in enumerate(result.reward_trajectory):
            fh.write(json.dumps({"step": step, "mean_reward": r}) + "\n")
    policy_path = run_dir / "eval_policy.pt"
    torch.save(policy.state_dict(), policy_path)
    fig = plots.plot_reward_trajectory(result.reward_trajectory,
                                       run_dir / "reward_trajectory.png")
    summary = {
        "stage1_epochs": result.stage1_epochs,
        "stage1_parse_rate": result.stage1_parse_rate,
        "final_mean_abs_error": result.final_mean_abs_error,
        "final_baseline": result.final_state.baseline,
        "reward_first_100": sum(result.reward_trajectory[:100]) / 100,
        "reward_last_100": sum(result.reward_trajectory[-100:]) / 100,
    }
    _write_summary(run_dir, "train-eval", summary, [traj_path, policy_path, fig])
    print(f"train-eval: parse {summary['stage1_parse_rate']:.3f}, "
          f"MAE {summary['final_mean_abs_error']:.3f}")
    return OK


def cmd_bench(cfg: RunConfig, run_dir: Path) -> int:
    cases = read_bench_cases(cfg.paths.bench_cases)
    judge = _build_client(cfg, seed_offset=1000)
    settings = JudgeSettings(temperature=0.0, max_tokens=cfg.clients.max_tokens)
    result = run_bench(cases, cfg.bench.models, judge, settings)
    results_path = run_dir / "bench_results.jsonl"
    with open(results_path, "w", encoding="utf-8") as fh:
        for row in result.results:
            fh.write(json.dumps(row) + "\n")
    rows_path = run_dir / "bench_rows.jsonl"
    with open(rows_path, "w", encoding="utf-8") as fh:
        for row in result.rows:
            fh.write(json.dumps({
                "model": row.model, "per_dim": row.per_dim,
                "average": row.average, "n_cases": row.n_cases,
            }) + "\n")
    audit_path = run_dir / "bench_audit.jsonl"
    with open(audit_path, "w", encoding="utf-8") as fh:
        for entry in result.audit:
            fh.write(json.dumps(entry) + "\n")
    summary = {
        "models": cfg.bench.models,
        "cases": len(cases),
        "excluded_judgments": len(result.audit),
        "prompt_hash": result.prompt_hash,
        "settings_hash": result.settings_hash,
        "averages": {r.model: round_half_away(r.average, 3) for r in result.rows},
    }
    _write_summary(run_dir, "bench", summary, [results_path, rows_path, audit_path])
    print(f"bench: {summary['averages']}")
    return PARTIAL if result.audit else OK


def cmd_classify(cfg: RunConfig, run_dir: Path) -> int:
    if not cfg.classify.labels:
        print("config error: classify.labels: must list at least one label",
              file=sys.stderr)
        return VALIDATION_ERROR
    rows = read_classify_manifest(cfg.paths.classify_manifest)
    space = LabelSpace(labels=cfg.classify.labels, aliases=cfg.classify.aliases)
    preds_path = run_dir / "classify_predictions.jsonl"
    accuracies: dict[str, dict[str, float]] = {}
    with open(preds_path, "w", encoding="utf-8") as fh:
        for m_index, model in enumerate(cfg.classify.models):
            client = _build_client(cfg, model_id=model, seed_offset=2000 + m_index)
            preds, golds = [], []
            for row in rows:
                image = Path(row["image_ref"]).read_bytes()
                pred = classify_case(image, space, client, strict=cfg.classify.strict,
                                     temperature=0.0)
                preds.append(pred)
                golds.append(row["gold_label"])
                fh.write(json.dumps({
                    "model": model, "image_ref": row["image_ref"],
                    "gold_label": row["gold_label"], "predicted": pred,
                }) + "\n")
            accuracies[model] = {cfg.classify.dataset_name: accuracy(preds, golds)}
    md_path = run_dir / "classify_report.md"
    md_path.write_text(render_classify_markdown(accuracies))
    csv_path = run_dir / "classify_report.csv"
    csv_path.write_text(render_classify_csv(accuracies))
    acc_path = run_dir / "classify_accuracies.json"
    acc_path.write_text(json.dumps(accuracies, indent=2, sort_keys=True) + "\n")
    summary = {"dataset": cfg.classify.dataset_name,
               "cases": len(rows), "accuracies": accuracies}
    _write_summary(run_dir, "classify", summary,
                   [preds_path, md_path, csv_path, acc_path])
    print(f"classify: {accuracies}")
    return OK


def _read_rows_file(path: str) -> list[BenchRow]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        per_dim = {d: float(obj["per_dim"][d]) for d in DIMENSIONS}
        average = obj.get("average", sum(per_dim.values()) / len(per_dim))
        rows.append(BenchRow(model=obj["model"], per_dim=per_dim,
                             average=average, n_cases=int(obj.get("n_cases", 0))))
    return rows


def cmd_report(cfg: RunConfig, run_dir: Path) -> int:
    rows = _read_rows_file(cfg.paths.report_rows)
    baseline = cfg.report.baseline or None
    ranked = rank_systems(rows, baseline=baseline)
    bench_summary_path = run_dir / "bench_summary.json"
    prompt_hash = settings_hash = "n/a"
    if bench_summary_path.exists():
        blob = json.loads(bench_summary_path.read_text())
        prompt_hash = blob.get("prompt_hash", "n/a")
        settings_hash = blob.get("settings_hash", "n/a")
    md = render_bench_markdown(
        rows, ranked["ranking"], prompt_hash, settings_hash,
        ranked["improvement_vs_baseline"] if baseline else None, baseline,
    )
    csv_text = render_bench_csv(rows, ranked["ranking"])
    md_path = run_dir / "report.md"
    md_path.write_text(md)
    csv_path = run_dir / "report.csv"
    csv_path.write_text(csv_text)
    fig_dims = plots.plot_bench_dimensions(rows, ranked["ranking"],
                                           run_dir / "bench_dimensions.png")
    fig_avg = plots.plot_bench_average(rows, ranked["ranking"],
                                       run_dir / "bench_average.png")
    files = [md_path, csv_path, fig_dims, fig_avg]
    if cfg.report.classify_accuracies:
        acc = json.loads(Path(cfg.report.classify_accuracies).read_text())
        cls_md = run_dir / "report_classification.md"
        cls_md.write_text(render_classify_markdown(acc))
        files.append(cls_md)
    summary = {
        "ranking": ranked["ranking"],
        "averages": {r.model: round_half_away(r.average, 3) for r in rows},
        "baseline": baseline,
        "improvement_pct": {
            m: round_half_away(100.0 * v, 1)
            for m, v in ranked["improvement_vs_baseline"].items()
        } if baseline else {},
    }
    _write_summary(run_dir, "report", summary, files)
    print(f"report: ranking {summary['ranking']}, averages {summary['averages']}")
    return OK


_COMMANDS = {
    "curate": (cmd_curate, ["manifest"]),
    "filter": (cmd_filter, ["scored_corpus"]),
    "train": (cmd_train, []),
    "train-eval": (cmd_train_eval, []),
    "bench": (cmd_bench, ["bench_cases"]),
    "classify": (cmd_classify, ["classify_manifest"]),
    "report": (cmd_report, ["report_rows"]),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dermkit",
        description="Desk-scale dermatology CoT curation, training, and benchmarking",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="path to the JSON run config")
        cmd.add_argument("--run-dir", default=None, help="override run_dir")
        cmd.add_argument("--seed", type=int, default=None, help="override seed")
        cmd.add_argument("--dry-run", action="store_true",
                         help="validate config and inputs, then exit")
        cmd.add_argument("--force", action="store_true",
                         help="re-run even if this command already completed")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    cfg, errors = _load_config_with_overrides(args)
    fn, required = _COMMANDS[args.command]
    errors.extend(require_paths(cfg, required))
    if args.command == "filter" and cfg.paths.certified_ids:
        if not Path(cfg.paths.certified_ids).exists():
            errors.append(f"paths.certified_ids: file not found: {cfg.paths.certified_ids}")
    if errors:
        return _fail(errors)
    if args.dry_run:
        print(f"{args.command}: config ok (dry run)")
        return OK
    run_dir = Path(cfg.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    name = args.command
    if _already_complete(run_dir, name, args.force):
        print(f"{name}: already complete in {run_dir} (use --force to re-run)")
        return OK
    torch.set_num_threads(1)
    try:
        return fn(cfg, run_dir)
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        print(f"{name}: runtime failure: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
