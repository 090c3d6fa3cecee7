"""Rendering of evaluation, confusion, loss and benchmark results.

Every renderer rounds once, through the helpers below, so JSON, CSV and
markdown built from the same result carry the same numbers.
"""

from __future__ import annotations

import csv
import io
import json
from typing import Sequence

from detkit.bench import EfficiencyRow, LatencyStats
from detkit.metrics import ConfusionMatrix, EvalReport

FORMATS = ("json", "csv", "markdown")

METRIC_DECIMALS = 3
LATENCY_DECIMALS = 1
RATIO_DECIMALS = 2
FPS_DECIMALS = 2
PERCENT_DECIMALS = 1

_INTERP_LABEL = {
    "coco101": "101-point interpolated (COCO)",
    "allpoint": "all-point (continuous)",
}


def rnd(x: float | None, decimals: int) -> float | None:
    if x is None:
        return None
    v = round(float(x), decimals)
    return 0.0 if v == 0 else v  # no "-0.0"


def fmt(x: float | None, decimals: int) -> str:
    if x is None:
        return "-"
    return f"{rnd(x, decimals):.{decimals}f}"


def md_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines)


def to_csv(rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def to_json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


# -- evaluation --------------------------------------------------------------

def eval_rows(report: EvalReport) -> list[dict]:
    d = METRIC_DECIMALS
    rows = []
    for name in report.evaluated_classes:
        m = report.per_class[name]
        rows.append({
            "class": name,
            "instances": m.instances,
            "precision": rnd(m.precision, d),
            "recall": rnd(m.recall, d),
            "map50": rnd(m.ap50, d),
            "map50_95": rnd(m.ap50_95, d),
            "confidence": rnd(m.confidence, d),
        })
    return rows


def eval_aggregate(report: EvalReport) -> dict:
    a, d = report.aggregate, METRIC_DECIMALS
    return {
        "instances": sum(report.per_class[n].instances for n in report.evaluated_classes),
        "precision": rnd(a.precision, d),
        "recall": rnd(a.recall, d),
        "map50": rnd(a.map50, d),
        "map50_95": rnd(a.map50_95, d),
    }


def render_eval(report: EvalReport, fmt_name: str, model: str = "model") -> str:
    rows = eval_rows(report)
    agg = eval_aggregate(report)
    if fmt_name == "json":
        return to_json({
            "model": model,
            "interpolation": report.interpolation,
            "operating_point": "max F1 at IoU 0.50, per class",
            "aggregate": agg,
            "classes": rows,
            "evaluated_classes": report.evaluated_classes,
            "skipped_classes": report.skipped_classes,
        })
    if fmt_name == "csv":
        out = [["class", "instances", "precision", "recall", "map50", "map50_95", "confidence"]]
        out += [[r["class"], r["instances"], r["precision"], r["recall"], r["map50"], r["map50_95"],
                 "" if r["confidence"] is None else r["confidence"]] for r in rows]
        out.append(["all", agg["instances"], agg["precision"], agg["recall"], agg["map50"], agg["map50_95"], ""])
        return to_csv(out)
    if fmt_name != "markdown":
        raise ValueError(f"unknown format {fmt_name!r}")
    d = METRIC_DECIMALS
    skipped = ", ".join(report.skipped_classes) or "none"
    parts = [
        f"# Detection evaluation: {model}",
        "",
        f"- AP interpolation: {_INTERP_LABEL[report.interpolation]}",
        "- Precision/Recall: max-F1 operating point on the IoU 0.50 curve, per class",
        f"- Classes without validation instances (excluded from means): {skipped}",
        "",
        "## Overall",
        "",
        md_table(
            ["Model", "Precision", "Recall", "mAP@50", "mAP@50-95"],
            [[model, fmt(agg["precision"], d), fmt(agg["recall"], d), fmt(agg["map50"], d), fmt(agg["map50_95"], d)]],
        ),
        "",
        "## Per class",
        "",
        md_table(
            ["Class", "Instances", "Precision", "Recall", "mAP@50", "mAP@50-95"],
            [[r["class"], str(r["instances"]), fmt(r["precision"], d), fmt(r["recall"], d),
              fmt(r["map50"], d), fmt(r["map50_95"], d)] for r in rows],
        ),
        "",
        "Operating-point confidence: "
        + ", ".join(f"{r['class']} {fmt(r['confidence'], d)}" for r in rows),
        "",
    ]
    return "\n".join(parts)


def render_curves_csv(report: EvalReport) -> str:
    out = [["class", "rank", "confidence", "precision", "recall"]]
    for name in report.evaluated_classes:
        conf, prec, rec = report.curves[name]
        for k, (c, p, r) in enumerate(zip(conf, prec, rec), start=1):
            out.append([name, k, repr(float(c)), repr(float(p)), repr(float(r))])
    return to_csv(out)


# -- confusion ---------------------------------------------------------------

def render_confusion(cm: ConfusionMatrix, fmt_name: str) -> str:
    d = METRIC_DECIMALS
    labels = list(cm.labels)
    counts = cm.counts.tolist()
    norm = [[rnd(v, d) for v in row] for row in cm.normalized.tolist()]
    if fmt_name == "json":
        return to_json({
            "labels": labels,
            "axes": "rows = true label, columns = predicted label",
            "conf_threshold": cm.conf_threshold,
            "iou_threshold": cm.iou_threshold,
            "counts": counts,
            "normalized": norm,
        })
    if fmt_name == "csv":
        out = [["view", "true\\pred", *labels]]
        out += [["counts", lab, *row] for lab, row in zip(labels, counts)]
        out += [["normalized", lab, *row] for lab, row in zip(labels, norm)]
        return to_csv(out)
    if fmt_name != "markdown":
        raise ValueError(f"unknown format {fmt_name!r}")
    header = ["true \\ pred", *labels]
    return "\n".join([
        "# Confusion matrix",
        "",
        f"- confidence >= {cm.conf_threshold:g}, IoU >= {cm.iou_threshold:g}, class-agnostic matching",
        "- rows: true label; columns: predicted label; background is the last label",
        "",
        "## Counts",
        "",
        md_table(header, [[lab, *map(str, row)] for lab, row in zip(labels, counts)]),
        "",
        "## Row-normalized",
        "",
        md_table(header, [[lab, *(fmt(v, d) for v in row)] for lab, row in zip(labels, norm)]),
        "",
    ])


# -- losses / matching -------------------------------------------------------

def render_records(records: list[dict], fmt_name: str, title: str) -> str:
    """Flat list of dicts (loss audits) in any format; floats rounded to 6 places."""
    records = [{k: rnd(v, 6) if isinstance(v, float) else v for k, v in r.items()} for r in records]
    if fmt_name == "json":
        return to_json(records)
    keys = list(records[0]) if records else []
    if fmt_name == "csv":
        return to_csv([keys] + [[r[k] for k in keys] for r in records])
    if fmt_name != "markdown":
        raise ValueError(f"unknown format {fmt_name!r}")
    rows = [[f"{r[k]:.6f}" if isinstance(r[k], float) else str(r[k]) for k in keys] for r in records]
    return f"# {title}\n\n" + md_table(keys, rows) + "\n"


# -- bench -------------------------------------------------------------------

def latency_dict(stats: LatencyStats) -> dict:
    return {
        "samples": stats.count,
        "mean_ms": rnd(stats.mean_ms, LATENCY_DECIMALS),
        "median_ms": rnd(stats.median_ms, LATENCY_DECIMALS),
        "p95_ms": rnd(stats.p95_ms, LATENCY_DECIMALS),
        "fps": rnd(stats.fps, FPS_DECIMALS),
        "timing": "end-to-end adapter wall clock (includes any pre/post-processing)",
    }


def render_latency(stats: LatencyStats, fmt_name: str, name: str = "adapter", note: str | None = None) -> str:
    row = latency_dict(stats)
    if fmt_name == "json":
        out = {"name": name, **row}
        if note:
            out["note"] = note
        return to_json(out)
    keys = ["samples", "mean_ms", "median_ms", "p95_ms", "fps"]
    if fmt_name == "csv":
        return to_csv([["name", *keys], [name, *(row[k] for k in keys)]])
    if fmt_name != "markdown":
        raise ValueError(f"unknown format {fmt_name!r}")
    body = md_table(
        ["Adapter", "Samples", "Mean (ms)", "Median (ms)", "p95 (ms)", "FPS"],
        [[name, str(row["samples"]), fmt(row["mean_ms"], LATENCY_DECIMALS), fmt(row["median_ms"], LATENCY_DECIMALS),
          fmt(row["p95_ms"], LATENCY_DECIMALS), fmt(row["fps"], FPS_DECIMALS)]],
    )
    lines = ["# Latency", "", f"- {row['timing']}"]
    if note:
        lines.append(f"- {note}")
    return "\n".join(lines + ["", body, ""])


def efficiency_dicts(rows: Sequence[EfficiencyRow]) -> list[dict]:
    return [{
        "name": r.name,
        "params_m": rnd(r.params_m, 1),
        "gflops": rnd(r.gflops, 1),
        "latency_ms": rnd(r.latency_ms, LATENCY_DECIMALS),
        "fps": rnd(r.fps, FPS_DECIMALS),
        "param_ratio": rnd(r.param_ratio, RATIO_DECIMALS),
        "gflops_ratio": rnd(r.gflops_ratio, RATIO_DECIMALS),
        "latency_increase_pct": rnd(r.latency_increase_pct, PERCENT_DECIMALS),
    } for r in rows]


def render_efficiency(rows: Sequence[EfficiencyRow], fmt_name: str) -> str:
    data = efficiency_dicts(rows)
    if fmt_name == "json":
        return to_json({"baseline": data[0]["name"], "models": data})
    keys = list(data[0])
    if fmt_name == "csv":
        return to_csv([keys] + [[r[k] for k in keys] for r in data])
    if fmt_name != "markdown":
        raise ValueError(f"unknown format {fmt_name!r}")
    table = md_table(
        ["Model", "Parameters (M)", "GFLOPs", "Inference Time (ms)", "FPS", "Params ratio", "GFLOPs ratio", "Latency increase"],
        [[r["name"], fmt(r["params_m"], 1), fmt(r["gflops"], 1), fmt(r["latency_ms"], LATENCY_DECIMALS),
          fmt(r["fps"], FPS_DECIMALS), f"{fmt(r['param_ratio'], RATIO_DECIMALS)}×",
          f"{fmt(r['gflops_ratio'], RATIO_DECIMALS)}×", f"+{fmt(r['latency_increase_pct'], PERCENT_DECIMALS)}%"
          if r["latency_increase_pct"] >= 0 else f"{fmt(r['latency_increase_pct'], PERCENT_DECIMALS)}%"]
         for r in data],
    )
    return "\n".join([
        "# Model complexity and inference speed",
        "",
        f"- ratios relative to {data[0]['name']}; FPS = 1000 / inference time",
        "",
        table,
        "",
    ])
