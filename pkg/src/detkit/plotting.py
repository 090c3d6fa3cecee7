"""Figure rendering for evaluation results. Needs the ``plot`` extra (matplotlib).

Figures are built on bare ``matplotlib.figure.Figure`` objects, so no
pyplot global state or interactive backend is touched.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from detkit.metrics import ConfusionMatrix, EvalReport


def _figure(**kw):
    try:
        from matplotlib.figure import Figure
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise RuntimeError("figure output needs matplotlib: pip install 'detkit[plot]'") from exc
    return Figure(**kw)


def plot_confusion(cm: ConfusionMatrix, path: str | Path, title: str = "Normalized confusion matrix") -> Path:
    norm = cm.normalized
    k = len(cm.labels)
    fig = _figure(figsize=(1.0 + 0.8 * k, 0.8 + 0.7 * k), dpi=150)
    ax = fig.add_subplot()
    im = ax.imshow(norm, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(k), cm.labels, rotation=45, ha="right")
    ax.set_yticks(range(k), cm.labels)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("True")
    ax.set_title(title)
    for i in range(k):
        for j in range(k):
            if norm[i, j] > 0:
                ax.text(j, i, f"{norm[i, j]:.2f}", ha="center", va="center",
                        color="white" if norm[i, j] > 0.5 else "black", fontsize=8)
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path)
    return path


def plot_pr_curves(report: EvalReport, path: str | Path, title: str = "Precision-recall (IoU 0.50)") -> Path:
    fig = _figure(figsize=(6, 4.5), dpi=150)
    ax = fig.add_subplot()
    for name in report.evaluated_classes:
        _, prec, rec = report.curves[name]
        ap = report.per_class[name].ap50
        if len(rec):
            env = np.maximum.accumulate(prec[::-1])[::-1]
            ax.step(np.concatenate(([0.0], rec)), np.concatenate(([env[0]], env)), where="pre",
                    label=f"{name} {ap:.3f}")
        else:
            ax.plot([], [], label=f"{name} {ap:.3f}")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    ax.set_title(f"{title}, mAP@50 {report.aggregate.map50:.3f}")
    ax.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path)
    return path
