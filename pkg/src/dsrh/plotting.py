"""Report figures written next to the text outputs."""

from __future__ import annotations

import os
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from dsrh.metrics import MetricsReport  # noqa: E402
from dsrh.trainer import TrainReport  # noqa: E402

_STYLE = {
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
_META = {"Software": None}


def figure_path(text_path: str | os.PathLike) -> str:
    root, _ = os.path.splitext(os.fspath(text_path))
    return root + ".png"


def plot_training(report: TrainReport, path: str | os.PathLike) -> None:
    epochs = [e.epoch for e in report.epochs]
    with plt.rc_context(_STYLE):
        fig, (ax_obj, ax_act) = plt.subplots(1, 2, figsize=(8, 3))
        ax_obj.plot(epochs, report.objectives, marker="o", ms=3)
        ax_obj.set_xlabel("epoch")
        ax_obj.set_ylabel("mean objective per step")
        ax_act.plot(epochs, [e.active for e in report.epochs], marker="o", ms=3, color="C1")
        ax_act.set_xlabel("epoch")
        ax_act.set_ylabel("active triplet fraction")
        fig.tight_layout()
        fig.savefig(path, dpi=120, metadata=_META)
        plt.close(fig)


def plot_metrics(reports: Mapping[str, MetricsReport], path: str | os.PathLike) -> None:
    """NDCG@p and ACG@p against the cutoff, one line per named report; mAP_w in the legend."""
    with plt.rc_context(_STYLE):
        fig, (ax_ndcg, ax_acg) = plt.subplots(1, 2, figsize=(8, 3))
        for k, (name, rep) in enumerate(reports.items()):
            cuts = sorted(rep.ndcg)
            label = f"{name} (mAP_w={rep.map_w:.3f})"
            ax_ndcg.plot(cuts, [rep.ndcg[p] for p in cuts], marker="o", ms=4, color=f"C{k}", label=label)
            ax_acg.plot(cuts, [rep.acg[p] for p in cuts], marker="s", ms=4, color=f"C{k}", label=label)
        ax_ndcg.set_xlabel("cutoff p")
        ax_ndcg.set_ylabel("NDCG@p")
        ax_ndcg.set_ylim(0, 1.02)
        ax_acg.set_xlabel("cutoff p")
        ax_acg.set_ylabel("ACG@p")
        ax_ndcg.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(path, dpi=120, metadata=_META)
        plt.close(fig)
