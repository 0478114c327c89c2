from .bench import (
    BenchCase,
    BenchRow,
    JudgeSettings,
    aggregate_system,
    judge_case,
    rank_systems,
    rubric_map,
    run_bench,
)
from .classify import UNMAPPED, LabelSpace, accuracy, classify_case
from .report import render_bench_csv, render_bench_markdown, round_half_away

__all__ = [
    "BenchCase",
    "BenchRow",
    "JudgeSettings",
    "aggregate_system",
    "judge_case",
    "rank_systems",
    "rubric_map",
    "run_bench",
    "UNMAPPED",
    "LabelSpace",
    "accuracy",
    "classify_case",
    "render_bench_csv",
    "render_bench_markdown",
    "round_half_away",
]
