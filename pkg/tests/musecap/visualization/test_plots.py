"""Tests for training plots."""

import math

import numpy as np
import pandas as pd
import torch

from musecap.models.projector import MusicProjector, ProjectorConfig
from musecap.visualization.plots import layer_weights, plot_layer_weights, plot_loss_trace

PNG_MAGIC = b"\x89PNG"


def trace(with_caption: bool = True) -> pd.DataFrame:
    steps = np.arange(5)
    return pd.DataFrame(
        {
            "step": steps,
            "epoch": 0,
            "loss_cap": 3.0 / (steps + 1) if with_caption else math.nan,
            "loss_key": 0.7 / (steps + 1),
            "total": 3.07 / (steps + 1),
        }
    )


class TestPlotLossTrace:
    def test_writes_png(self, tmp_path):
        path = plot_loss_trace(trace(), tmp_path / "plots" / "loss.png", title="caption_pretrain")
        assert path.read_bytes().startswith(PNG_MAGIC)

    def test_all_nan_caption_column(self, tmp_path):
        """Feature-only phases have no caption loss; the plot still renders."""
        path = plot_loss_trace(trace(with_caption=False), tmp_path / "loss.png")
        assert path.read_bytes().startswith(PNG_MAGIC)


class TestLayerWeights:
    def test_weights_per_pathway(self, tiny_projector_config):
        weights = layer_weights(MusicProjector(tiny_projector_config))
        assert set(weights) == {"content", "shared"}
        np.testing.assert_allclose(weights["content"], [1 / 3] * 3)

    def test_content_only(self):
        projector = MusicProjector(ProjectorConfig(n_layers=3, embed_dim=8, lm_dim=16, content_tokens=4, variant="content_only", token_budget=4))
        assert set(layer_weights(projector)) == {"content"}

    def test_writes_png(self, tmp_path, tiny_projector_config):
        projector = MusicProjector(tiny_projector_config)
        with torch.no_grad():
            projector.content_layer_weights.raw.copy_(torch.tensor([0.0, 1.0, 2.0], dtype=torch.float64))
        path = plot_layer_weights(projector, tmp_path / "layers.png")
        assert path.read_bytes().startswith(PNG_MAGIC)
