"""Figures written next to the CSV/text outputs of the CLI."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .bench import REPORT_COLUMNS, EvalReport  # noqa: E402
from .brdf import SvbrdfMaps  # noqa: E402
from .imaging import LinearImage, linear_to_srgb  # noqa: E402

plt.rcParams.update({
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "savefig.dpi": 150,
    "svg.hashsalt": "svbrdfgan",
})


def _display(img: np.ndarray, srgb: bool) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return linear_to_srgb(img) if srgb else np.clip(img, 0.0, 1.0)


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def plot_maps(maps: SvbrdfMaps, path: str | Path, photo: LinearImage | None = None,
              rerender: LinearImage | None = None, guessed: LinearImage | None = None) -> Path:
    """Panel of the four maps, with the input, re-render and guessed diffuse when given."""
    enc = maps.encoded()
    panels = []
    if photo is not None:
        panels.append(("input", photo.to_rgb().data, True))
    panels += [("diffuse", enc["diffuse"], True), ("specular", enc["specular"], False),
               ("roughness", enc["roughness"], False), ("normal", enc["normal"], False)]
    if guessed is not None:
        panels.append(("guessed diffuse", guessed.to_rgb().data, True))
    if rerender is not None:
        panels.append(("re-render", rerender.to_rgb().data, True))
    fig, axes = plt.subplots(1, len(panels), figsize=(1.8 * len(panels), 2.0))
    for ax, (title, img, srgb) in zip(np.atleast_1d(axes), panels):
        ax.imshow(_display(img, srgb), interpolation="nearest")
        ax.set_title(title)
        ax.set_axis_off()
    fig.tight_layout()
    return _save(fig, path)


def plot_training_log(iterations: Sequence[int], d_loss, g_adv, g_diffuse, path: str | Path) -> Path:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 2.6))
    ax1.plot(iterations, d_loss, label="discriminator")
    ax1.plot(iterations, g_adv, label="generator (adversarial)")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("BCE")
    ax1.legend(frameon=False)
    ax2.plot(iterations, g_diffuse, color="C2")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("diffuse L1")
    for ax in (ax1, ax2):
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
    fig.tight_layout()
    return _save(fig, path)


def plot_report(reports: Sequence[EvalReport], path: str | Path) -> Path:
    """Grouped bars, one group per map, one bar per method."""
    fig, ax = plt.subplots(figsize=(5.0, 2.6))
    x = np.arange(len(REPORT_COLUMNS))
    width = 0.8 / max(len(reports), 1)
    for i, rep in enumerate(reports):
        vals = [np.nan if v is None else v for v in rep.values().values()]
        ax.bar(x + i * width - 0.4 + width / 2, vals, width, label=rep.label)
    ax.set_xticks(x)
    ax.set_xticklabels([c.replace("_", " ") for c in REPORT_COLUMNS])
    ax.set_ylabel("RMSE")
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    if len(reports) > 1:
        ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)
