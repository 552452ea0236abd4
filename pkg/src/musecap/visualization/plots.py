"""Loss-trace and layer-weight plots written next to checkpoints."""

from collections.abc import Mapping
from pathlib import Path

import numpy as np
import pandas as pd
from matplotlib.figure import Figure

from musecap.models.projector import MusicProjector


def plot_loss_trace(trace: pd.DataFrame, path: Path | str, title: str | None = None) -> Path:
    """Plot every ``loss_*`` column and the weighted total against the step.

    Args:
        trace: Loss trace as produced by ``train_phase``
        path: PNG file to write
        title: Optional figure title

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig = Figure(figsize=(8, 4.5))
    ax = fig.add_subplot()
    for column in [c for c in trace.columns if c.startswith("loss_")]:
        if trace[column].notna().any():
            ax.plot(trace["step"], trace[column], label=column.removeprefix("loss_"), linewidth=1, alpha=0.7)
    ax.plot(trace["step"], trace["total"], label="total", color="black", linewidth=2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(loc="upper right", fontsize="small")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return path


def layer_weights(projector: MusicProjector) -> Mapping[str, np.ndarray]:
    """Effective layer weights of both pathways (shared only when there are heads)."""
    weights = {"content": projector.content_layer_weights().detach().numpy()}
    if projector.heads:
        weights["shared"] = projector.shared_layer_weights().detach().numpy()
    return weights


def plot_layer_weights(projector: MusicProjector, path: Path | str) -> Path:
    """Bar chart of the learned weight per encoder layer."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    weights = layer_weights(projector)
    fig = Figure(figsize=(8, 3.5))
    ax = fig.add_subplot()
    width = 0.8 / len(weights)
    for i, (name, w) in enumerate(weights.items()):
        ax.bar(np.arange(len(w)) + i * width, w, width=width, label=name)
    ax.set_xlabel("encoder layer")
    ax.set_ylabel("weight")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return path
