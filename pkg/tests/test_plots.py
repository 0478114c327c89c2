from dermkit.dermbench.bench import BenchRow
from dermkit.dermeval.evalformat import DIMENSIONS
from dermkit.plots import (
    plot_bench_average,
    plot_bench_dimensions,
    plot_loss_curves,
    plot_reward_trajectory,
    plot_schedule,
)


def make_rows():
    return [
        BenchRow("sys-a", {d: 4.0 for d in DIMENSIONS}, 4.0, 10),
        BenchRow("sys-b", {d: 3.0 for d in DIMENSIONS}, 3.0, 10),
    ]


def test_bench_figures(tmp_path):
    rows = make_rows()
    p1 = plot_bench_dimensions(rows, ["sys-a", "sys-b"], tmp_path / "dims.png")
    p2 = plot_bench_average(rows, ["sys-a", "sys-b"], tmp_path / "avg.png")
    assert p1.stat().st_size > 0 and p2.stat().st_size > 0
    assert p1.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_loss_curves(tmp_path):
    history = [
        {"step": s, "loss_sft": 2.0 / (s + 1), "loss_distill": 1.0 / (s + 1),
         "total": 3.0 / (s + 1)}
        for s in range(20)
    ]
    path = plot_loss_curves(history, tmp_path / "loss.png")
    assert path.stat().st_size > 0


def test_schedule_figure(tmp_path):
    path = plot_schedule(200, bump=True, out_path=tmp_path / "sched.png")
    assert path.stat().st_size > 0


def test_reward_trajectory(tmp_path):
    rewards = [-2.0 + 0.01 * i for i in range(120)]
    path = plot_reward_trajectory(rewards, tmp_path / "reward.png")
    assert path.stat().st_size > 0
