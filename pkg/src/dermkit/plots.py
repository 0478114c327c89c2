"""Figure rendering for run artifacts: per-dimension benchmark bars, training
loss curves, the loss-weight schedule, and the stage-2 reward trajectory.
All figures go to PNG files next to the delimited outputs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dermeval.evalformat import DIMENSIONS
from .training import schedule_weights


def _save(fig, out_path: str | Path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_bench_dimensions(rows, ranking: list[str], out_path: str | Path) -> Path:
    """Grouped bars: one cluster per dimension, one bar per system."""
    by_model = {r.model: r for r in rows}
    x = np.arange(len(DIMENSIONS))
    width = 0.8 / max(1, len(ranking))
    fig, ax = plt.subplots(figsize=(10, 4.5))
    for i, model in enumerate(ranking):
        values = [by_model[model].per_dim[d] for d in DIMENSIONS]
        ax.bar(x + i * width, values, width, label=model)
    ax.set_xticks(x + width * (len(ranking) - 1) / 2)
    ax.set_xticklabels([d.replace(" ", "\n") for d in DIMENSIONS], fontsize=8)
    ax.set_ylabel("mean score (1-5)")
    ax.set_ylim(0, 5.2)
    ax.legend(fontsize=8)
    ax.set_title("Per-dimension system means")
    return _save(fig, out_path)


def plot_bench_average(rows, ranking: list[str], out_path: str | Path) -> Path:
    by_model = {r.model: r for r in rows}
    fig, ax = plt.subplots(figsize=(6, 3.5))
    averages = [by_model[m].average for m in ranking]
    ax.barh(range(len(ranking)), averages)
    ax.set_yticks(range(len(ranking)))
    ax.set_yticklabels(ranking, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("average of six dimension means")
    ax.set_xlim(0, 5)
    ax.set_title("System ranking")
    return _save(fig, out_path)


def plot_loss_curves(history: list[dict], out_path: str | Path) -> Path:
    """history: LossReport dicts with step/loss_sft/loss_distill/total."""
    steps = [h["step"] for h in history]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, [h["loss_sft"] for h in history], label="supervised CE")
    ax.plot(steps, [h["loss_distill"] for h in history], label="distillation MSE")
    ax.plot(steps, [h["total"] for h in history], label="weighted total", linestyle="--")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.set_title("Training losses")
    return _save(fig, out_path)


def plot_schedule(t_max: int, bump: bool, out_path: str | Path) -> Path:
    steps = list(range(t_max + 1))
    states = [schedule_weights(s, t_max, bump) for s in steps]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot([st.s for st in states], [st.lambda_sft for st in states], label="lambda_sft")
    ax.plot([st.s for st in states], [st.lambda_d for st in states], label="lambda_d")
    ax.set_xlabel("normalized progress s")
    ax.set_ylabel("loss weight")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    ax.set_title("Loss-weight schedule" + (" (with final bump)" if bump else ""))
    return _save(fig, out_path)


def plot_reward_trajectory(rewards: list[float], out_path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(rewards, alpha=0.35, label="per-step mean reward")
    if len(rewards) >= 50:
        kernel = np.ones(50) / 50
        smooth = np.convolve(np.asarray(rewards), kernel, mode="valid")
        ax.plot(range(49, len(rewards)), smooth, label="50-step moving average")
    ax.set_xlabel("step")
    ax.set_ylabel("reward (negative MSE)")
    ax.legend(fontsize=8)
    ax.set_title("Evaluator alignment reward")
    return _save(fig, out_path)
