"""Command-line interface.

Subcommands: validate, evaluate, confusion, loss-audit, match, bench, report.

Settings resolve as built-in defaults, then ``--config`` (JSON or YAML),
then explicit flags. ``--explain`` writes the resolved settings to stderr.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import yaml

from detkit import bench, dataset, losses, matching, metrics, report
from detkit.errors import DetkitError, UsageError, ValidationError
from detkit.geometry import BBox

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4


@dataclass
class RunConfig:
    classes: str | None = None
    format: str = "markdown"
    iou: float = 0.45
    conf: float = 0.25
    interp: str = "coco101"
    loss_mode: str | None = None
    alpha: float = 0.25
    gamma: float = 2.0
    lambda_cls: float = 1.0
    lambda_bbox: float = 5.0
    lambda_giou: float = 2.0
    eps: float = losses.PROB_EPS
    workers: int = 1
    name: str = "model"
    output: str | None = None
    figures: str | None = None

    def check(self) -> None:
        if self.format not in report.FORMATS:
            raise UsageError(f"--format must be one of {report.FORMATS}")
        for key in ("iou", "conf"):
            v = getattr(self, key)
            if not 0.0 < v < 1.0:
                raise UsageError(f"--{key} must be in (0, 1), got {v}")
        if self.interp not in metrics.AP_METHODS:
            raise UsageError(f"--interp must be one of {metrics.AP_METHODS}")
        if self.loss_mode is not None and self.loss_mode not in losses.MODES:
            raise UsageError(f"--loss-mode must be one of {losses.MODES}")
        if self.workers < 1:
            raise UsageError("--workers must be >= 1")
        if not 0.0 < self.eps < 0.5:
            raise UsageError("--eps must be in (0, 0.5)")

    def weights(self) -> losses.LossWeights:
        return losses.LossWeights(self.alpha, self.gamma, self.lambda_cls, self.lambda_bbox, self.lambda_giou)


_CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    text = p.read_text(encoding="utf-8")
    data = json.loads(text) if p.suffix.lower() == ".json" else yaml.safe_load(text)
    data = data or {}
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a mapping")
    data = {k.replace("-", "_"): v for k, v in data.items()}
    unknown = sorted(set(data) - _CONFIG_KEYS)
    if unknown:
        raise UsageError(f"{path}: unknown config keys {unknown}")
    return data


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = load_config_file(args.config) if args.config else {}
    for key in _CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    cfg = RunConfig(**values)
    cfg.check()
    return cfg


def _require_path(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {path}")
    return p


def _classes(cfg: RunConfig) -> dataset.ClassList:
    if not cfg.classes:
        raise UsageError("--classes is required (data.yaml, names file, or comma list)")
    return dataset.ClassList.load(cfg.classes)


def _emit(text: str, cfg: RunConfig) -> None:
    if cfg.output:
        Path(cfg.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _figures_dir(cfg: RunConfig) -> Path | None:
    if not cfg.figures:
        return None
    d = Path(cfg.figures)
    d.mkdir(parents=True, exist_ok=True)
    return d


# -- subcommands ----------------------------------------------------------------

def cmd_validate(args, cfg: RunConfig) -> int:
    root = _require_path(args.dataset_dir, "dataset directory")
    classes = _classes(cfg)
    summary = dataset.validate_labels(root, classes, manifest=args.manifest)
    hist = dataset.class_histogram(summary.split, classes)
    zero = [name for name, n in hist.items() if n == 0]
    errors = [str(e) for e in summary.errors]
    status = "ok" if summary.ok else "invalid"
    if cfg.format == "json":
        text = report.to_json({
            "status": status,
            "images": len(summary.split.images),
            "label_files": summary.files_checked,
            "instances": hist,
            "zero_instance_classes": zero,
            "errors": errors,
        })
    elif cfg.format == "csv":
        text = report.to_csv([["class", "instances", "zero_instance"]]
                           + [[n, c, int(c == 0)] for n, c in hist.items()])
    else:
        lines = [
            f"# Validation: {root}",
            "",
            f"- status: {status}",
            f"- images: {len(summary.split.images)}, label files: {summary.files_checked}",
            f"- zero-instance classes: {', '.join(zero) or 'none'}",
            "",
            report.md_table(["Class", "Instances"], [[n, str(c)] for n, c in hist.items()]),
            "",
        ]
        if errors:
            lines += ["## Errors", ""] + [f"- {e}" for e in errors] + [""]
        text = "\n".join(lines)
    _emit(text, cfg)
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    return EXIT_OK if summary.ok else EXIT_VALIDATION


def _load_eval_inputs(args, cfg: RunConfig):
    gt_root = _require_path(args.gt_dir, "ground-truth directory")
    pred_root = _require_path(args.pred_dir, "prediction directory")
    classes = _classes(cfg)
    split = dataset.load_labels(gt_root, classes, manifest=getattr(args, "manifest", None))
    dets = dataset.load_predictions(pred_root, classes, image_ids=split.image_ids)
    return classes, split, dets


def cmd_evaluate(args, cfg: RunConfig) -> int:
    classes, split, dets = _load_eval_inputs(args, cfg)
    if not split.ground_truths:
        raise UsageError("ground truth contains no instances; nothing to evaluate")
    rep = metrics.evaluate(dets, split.ground_truths, classes.names, method=cfg.interp, workers=cfg.workers)
    _emit(report.render_eval(rep, cfg.format, model=cfg.name), cfg)
    if args.curves:
        Path(args.curves).write_text(report.render_curves_csv(rep), encoding="utf-8")
    fig_dir = _figures_dir(cfg)
    if fig_dir is not None:
        from detkit import plotting

        plotting.plot_pr_curves(rep, fig_dir / f"{cfg.name}_pr_curve.png")
    return EXIT_OK


def cmd_confusion(args, cfg: RunConfig) -> int:
    classes, split, dets = _load_eval_inputs(args, cfg)
    cm = metrics.confusion_matrix(dets, split.ground_truths, classes.names, cfg.conf, cfg.iou)
    _emit(report.render_confusion(cm, cfg.format), cfg)
    fig_dir = _figures_dir(cfg)
    if fig_dir is not None:
        from detkit import plotting

        plotting.plot_confusion(cm, fig_dir / f"{cfg.name}_confusion_matrix_normalized.png",
                                title=f"Normalized confusion matrix: {cfg.name}")
    return EXIT_OK


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from None


def _box(value, where: str) -> BBox:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise ValidationError(f"{where}: box must be [cx, cy, w, h]")
    return BBox(*value)


def read_matched_pairs(path: Path) -> list[losses.MatchedPair]:
    """``{"pairs": [{"pred_box", "gt_box", "pred_probs", "gt_class", "q"?}]}`` or a bare list."""
    data = _read_json(path)
    items = data.get("pairs") if isinstance(data, dict) else data
    if not isinstance(items, list) or not items:
        raise ValidationError(f"{path}: expected a non-empty 'pairs' list")
    out = []
    for i, it in enumerate(items):
        where = f"{path}: pair {i}"
        try:
            out.append(losses.MatchedPair(
                pred_box=_box(it["pred_box"], where),
                gt_box=_box(it["gt_box"], where),
                pred_probs=tuple(it["pred_probs"]),
                gt_class=int(it["gt_class"]),
                q=it.get("q"),
            ))
        except KeyError as exc:
            raise ValidationError(f"{where}: missing field {exc}") from None
        except ValidationError as exc:
            raise ValidationError(f"{where}: {exc}") from None
    return out


def cmd_loss_audit(args, cfg: RunConfig) -> int:
    pairs = read_matched_pairs(_require_path(args.pairs_file, "pairs file"))
    w = cfg.weights()
    modes = [cfg.loss_mode] if cfg.loss_mode else list(losses.MODES)
    records = [losses.total_loss(pairs, w, mode=m, eps=cfg.eps).as_dict() for m in modes]
    _emit(report.render_records(records, cfg.format, "Loss audit"), cfg)
    return EXIT_OK


def cmd_match(args, cfg: RunConfig) -> int:
    """Input: ``{"cost": [[...]]}`` or ``{"predictions": [...], "ground_truths": [...]}``."""
    path = _require_path(args.input_file, "match input")
    data = _read_json(path)
    if isinstance(data, list):
        data = {"cost": data}
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: expected a JSON object")
    if "cost" in data:
        cost = matching.as_cost_matrix(data["cost"])
    elif "predictions" in data and "ground_truths" in data:
        preds = [matching.QueryPrediction(p["probs"], _box(p["box"], f"{path}: prediction {i}"))
                 for i, p in enumerate(data["predictions"])]
        gts = [metrics.GroundTruth(None, int(g["class_id"]), _box(g["box"], f"{path}: ground truth {j}"))
               for j, g in enumerate(data["ground_truths"])]
        cost = matching.build_cost_matrix(preds, gts, cfg.weights(), eps=cfg.eps)
    else:
        raise ValidationError(f"{path}: needs 'cost' or 'predictions' + 'ground_truths'")
    result = matching.hungarian(cost)
    payload = {**result.as_dict(), "rows": int(cost.shape[0]), "cols": int(cost.shape[1])}
    if args.show_cost:
        payload["cost"] = cost.tolist()
    _emit(report.to_json(payload), cfg)
    return EXIT_OK


def cmd_bench(args, cfg: RunConfig) -> int:
    inputs = list(args.inputs or [])
    if args.inputs_file:
        lines = _require_path(args.inputs_file, "inputs file").read_text(encoding="utf-8").splitlines()
        inputs += [line.strip() for line in lines if line.strip()]
    if not inputs:
        raise UsageError("bench needs at least one input path")
    for p in inputs:
        _require_path(p, "input")
    adapter = bench.SubprocessAdapter(args.adapter)
    try:
        with adapter:
            stats = bench.benchmark(adapter, inputs, warmup=args.warmup, iterations=args.iters)
    except bench.BenchmarkAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.partial is not None:
            _emit(report.render_latency(exc.partial, cfg.format, name=cfg.name,
                                        note=f"ABORTED after {exc.completed} timed calls"), cfg)
        return EXIT_RUNTIME
    _emit(report.render_latency(stats, cfg.format, name=cfg.name), cfg)
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    models = bench.load_models(args.models_file)
    _emit(report.render_efficiency(bench.efficiency_report(models), cfg.format), cfg)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON/YAML file with default settings; flags override it")
    p.add_argument("--classes", help="data.yaml, one-name-per-line file, or comma-separated names")
    p.add_argument("--format", choices=report.FORMATS, default=None)
    p.add_argument("--output", "-o", help="write the rendering to this file instead of stdout")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--name", help="model/adapter name shown in reports")
    p.add_argument("--explain", action="store_true", help="print the resolved configuration to stderr")


def _weights(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda-cls", dest="lambda_cls", type=float)
    p.add_argument("--lambda-bbox", dest="lambda_bbox", type=float)
    p.add_argument("--lambda-giou", dest="lambda_giou", type=float)
    p.add_argument("--eps", type=float, help="probability clamp half-width for file inputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="detkit", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a YOLO label directory")
    _common(p)
    p.add_argument("dataset_dir")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("evaluate", help="precision/recall/mAP tables for a prediction directory")
    _common(p)
    p.add_argument("gt_dir")
    p.add_argument("pred_dir")
    p.add_argument("--manifest")
    p.add_argument("--interp", choices=metrics.AP_METHODS, default=None)
    p.add_argument("--curves", help="write IoU-0.50 PR curve points to this CSV file")
    p.add_argument("--figures", help="directory for PNG figures")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("confusion", help="confusion matrix with a background class")
    _common(p)
    p.add_argument("gt_dir")
    p.add_argument("pred_dir")
    p.add_argument("--manifest")
    p.add_argument("--iou", type=float)
    p.add_argument("--conf", type=float)
    p.add_argument("--figures", help="directory for PNG figures")
    p.set_defaults(func=cmd_confusion)

    p = sub.add_parser("loss-audit", help="total loss and per-term values for matched pairs")
    _common(p)
    _weights(p)
    p.add_argument("pairs_file")
    p.add_argument("--loss-mode", dest="loss_mode", choices=losses.MODES)
    p.set_defaults(func=cmd_loss_audit)

    p = sub.add_parser("match", help="optimal assignment for a cost matrix or prediction/target file")
    _common(p)
    _weights(p)
    p.add_argument("input_file")
    p.add_argument("--show-cost", action="store_true")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("bench", help="time an adapter process over input paths")
    _common(p)
    p.add_argument("--adapter", required=True, help="command speaking the line protocol")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--inputs-file")
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--iters", type=int, default=50)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="complexity/speed comparison table from a models file")
    _common(p)
    p.add_argument("models_file")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        cfg = resolve_config(args)
        if args.explain:
            print(json.dumps({"command": args.command, **asdict(cfg)}, indent=2), file=sys.stderr)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DetkitError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
