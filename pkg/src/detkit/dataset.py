"""YOLO-format label and prediction files.

Label line:       ``class_id cx cy w h``
Prediction line:  ``class_id confidence cx cy w h``

Fields are separated by one or more spaces (tabs tolerated); LF and CRLF
endings are both fine, blank lines are ignored. A dataset directory is laid
out as ``images/`` + ``labels/`` paired by file stem, optionally with a
``manifest.txt`` listing stems one per line. Image files are never opened.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import yaml

from detkit.errors import ParseError, ValidationError
from detkit.geometry import BOX_TOLERANCE, BBox
from detkit.metrics import Detection, GroundTruth

LABEL_SUFFIX = ".txt"
IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff", ".webp"}
MANIFEST_NAME = "manifest.txt"
SERIAL_DECIMALS = 6

_INT_RE = re.compile(r"^[+-]?\d+$")


@dataclass(frozen=True)
class ClassList:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(str(n).strip() for n in self.names)
        if not names:
            raise ValidationError("class list is empty")
        if any(not n for n in names):
            raise ValidationError("class names must be non-empty")
        dupes = sorted(n for n, c in Counter(names).items() if c > 1)
        if dupes:
            raise ValidationError(f"duplicate class names: {', '.join(dupes)}")
        object.__setattr__(self, "names", names)

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __getitem__(self, i):
        return self.names[i]

    @classmethod
    def load(cls, source: str | Path) -> "ClassList":
        """Read names from a YOLO ``data.yaml``, a one-per-line text file, or
        a comma-separated literal such as ``"Bottle,Clothes,Metal"``."""
        path = Path(source)
        if path.is_file():
            text = path.read_text(encoding="utf-8")
            if path.suffix.lower() in {".yaml", ".yml"}:
                data = yaml.safe_load(text) or {}
                names = data.get("names") if isinstance(data, dict) else data
                if isinstance(names, dict):
                    names = [names[k] for k in sorted(names, key=int)]
                if not isinstance(names, list):
                    raise ValidationError(f"{path}: no 'names' list found")
                return cls(tuple(names))
            return cls(tuple(line.strip() for line in text.splitlines() if line.strip()))
        if "," in str(source) or not path.suffix:
            return cls(tuple(s.strip() for s in str(source).split(",")))
        raise ValidationError(f"class list file not found: {source}")


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    images: tuple[tuple[str, tuple[GroundTruth, ...]], ...]

    def __post_init__(self):
        ids = [img for img, _ in self.images]
        dupes = sorted(i for i, c in Counter(ids).items() if c > 1)
        if dupes:
            raise ValidationError(f"duplicate image ids in split {self.name!r}: {dupes[:5]}")

    @property
    def image_ids(self) -> list[str]:
        return [img for img, _ in self.images]

    @property
    def ground_truths(self) -> list[GroundTruth]:
        return [g for _, gs in self.images for g in gs]


@dataclass
class ValidationSummary:
    split: DatasetSplit | None
    errors: list[ParseError] = field(default_factory=list)
    files_checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.errors


def parse_number(token: str, path=None, line: int | None = None) -> float:
    """Decimal or exponent notation; NaN and infinities are rejected."""
    try:
        value = float(token)
    except ValueError:
        raise ParseError("not a number", path, line, token) from None
    if not math.isfinite(value):
        raise ParseError("non-finite value", path, line, token)
    return value


def _parse_class(token: str, n_classes: int, path, line) -> int:
    if not _INT_RE.match(token):
        raise ParseError("class id must be an integer", path, line, token)
    cid = int(token)
    if not 0 <= cid < n_classes:
        raise ParseError(f"class id out of range [0, {n_classes - 1}]", path, line, token)
    return cid


def _parse_box(tokens: Sequence[str], path, line, tol: float) -> BBox:
    vals = [parse_number(t, path, line) for t in tokens]
    try:
        return BBox.checked(*vals, tol=tol)
    except ValidationError as exc:
        raise ParseError(str(exc), path, line, " ".join(tokens)) from None


def _lines(path: Path) -> Iterable[tuple[int, list[str]]]:
    data = path.read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        line = data[: exc.start].count(b"\n") + 1
        raise ParseError("not UTF-8 text", path, line, repr(data[exc.start : exc.end])) from None
    for n, raw in enumerate(text.split("\n"), start=1):
        raw = raw.rstrip("\r")
        if raw.strip():
            yield n, raw.split()


def parse_label_file(path: Path, image_id: str, n_classes: int, tol: float = BOX_TOLERANCE) -> list[GroundTruth]:
    out = []
    for n, fields in _lines(path):
        if len(fields) != 5:
            raise ParseError(f"expected 5 fields, got {len(fields)}", path, n, " ".join(fields))
        cid = _parse_class(fields[0], n_classes, path, n)
        out.append(GroundTruth(image_id, cid, _parse_box(fields[1:], path, n, tol)))
    return out


def parse_prediction_file(path: Path, image_id: str, n_classes: int, tol: float = BOX_TOLERANCE) -> list[Detection]:
    out = []
    for n, fields in _lines(path):
        if len(fields) != 6:
            raise ParseError(f"expected 6 fields, got {len(fields)}", path, n, " ".join(fields))
        cid = _parse_class(fields[0], n_classes, path, n)
        conf = parse_number(fields[1], path, n)
        if not 0.0 <= conf <= 1.0:
            raise ParseError("confidence outside [0, 1]", path, n, fields[1])
        out.append(Detection(image_id, cid, _parse_box(fields[2:], path, n, tol), conf))
    return out


def read_manifest(path: Path) -> list[str]:
    stems = [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    dupes = sorted(s for s, c in Counter(stems).items() if c > 1)
    if dupes:
        raise ValidationError(f"{path}: duplicate stems {dupes[:5]}")
    return stems


def _resolve_layout(root: Path) -> tuple[Path, list[str]]:
    """Label directory and image stems for a dataset root or a bare label dir."""
    root = Path(root)
    if not root.is_dir():
        raise ValidationError(f"dataset directory not found: {root}")
    label_dir = root / "labels" if (root / "labels").is_dir() else root
    manifest = root / MANIFEST_NAME
    if manifest.is_file():
        return label_dir, read_manifest(manifest)
    stems = {p.stem for p in label_dir.glob(f"*{LABEL_SUFFIX}") if p.name != MANIFEST_NAME}
    image_dir = root / "images"
    if image_dir.is_dir():
        stems |= {p.stem for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES}
    return label_dir, sorted(stems)


def load_labels(
    label_directory: str | Path,
    class_list: Sequence[str],
    name: str = "val",
    manifest: str | Path | None = None,
    tol: float = BOX_TOLERANCE,
) -> DatasetSplit:
    """Load a split; stops at the first bad line.

    ``label_directory`` may be a dataset root (with ``labels/`` and optionally
    ``images/`` and ``manifest.txt``) or the label directory itself. Images
    whose label file is missing or empty get zero ground truths.
    """
    label_dir, stems = _resolve_layout(Path(label_directory))
    if manifest is not None:
        stems = read_manifest(Path(manifest))
    n = len(class_list)
    images = []
    for stem in sorted(stems):
        path = label_dir / f"{stem}{LABEL_SUFFIX}"
        gts = parse_label_file(path, stem, n, tol) if path.is_file() else []
        images.append((stem, tuple(gts)))
    return DatasetSplit(name=name, images=tuple(images))


def validate_labels(
    label_directory: str | Path,
    class_list: Sequence[str],
    name: str = "val",
    manifest: str | Path | None = None,
    tol: float = BOX_TOLERANCE,
) -> ValidationSummary:
    """Like :func:`load_labels` but keeps going and collects every bad file."""
    label_dir, stems = _resolve_layout(Path(label_directory))
    if manifest is not None:
        stems = read_manifest(Path(manifest))
    summary = ValidationSummary(split=None)
    images = []
    for stem in sorted(stems):
        path = label_dir / f"{stem}{LABEL_SUFFIX}"
        gts: list[GroundTruth] = []
        if path.is_file():
            summary.files_checked += 1
            try:
                gts = parse_label_file(path, stem, len(class_list), tol)
            except ParseError as exc:
                summary.errors.append(exc)
        images.append((stem, tuple(gts)))
    summary.split = DatasetSplit(name=name, images=tuple(images))
    return summary


def load_predictions(
    pred_directory: str | Path,
    class_list: Sequence[str],
    image_ids: Iterable[str] | None = None,
    tol: float = BOX_TOLERANCE,
) -> list[Detection]:
    """Detections from one file per image stem.

    With ``image_ids`` given, only those stems are read and missing files mean
    the detector stayed silent. Otherwise every ``*.txt`` file is read.
    """
    pred_dir = Path(pred_directory)
    if (pred_dir / "labels").is_dir():
        pred_dir = pred_dir / "labels"
    if not pred_dir.is_dir():
        raise ValidationError(f"prediction directory not found: {pred_directory}")
    if image_ids is None:
        stems = sorted(p.stem for p in pred_dir.glob(f"*{LABEL_SUFFIX}") if p.name != MANIFEST_NAME)
    else:
        stems = sorted(image_ids)
    out: list[Detection] = []
    for stem in stems:
        path = pred_dir / f"{stem}{LABEL_SUFFIX}"
        if path.is_file():
            out.extend(parse_prediction_file(path, stem, len(class_list), tol))
    return out


def class_histogram(split: DatasetSplit, class_list: Sequence[str]) -> dict[str, int]:
    """Instance count per class name, zero-count classes included."""
    counts = Counter(g.class_id for g in split.ground_truths)
    return {name: counts.get(i, 0) for i, name in enumerate(class_list)}


def format_label_line(g: GroundTruth, decimals: int = SERIAL_DECIMALS) -> str:
    b = g.box
    return f"{g.class_id} {b.cx:.{decimals}f} {b.cy:.{decimals}f} {b.w:.{decimals}f} {b.h:.{decimals}f}"


def format_prediction_line(d: Detection, decimals: int = SERIAL_DECIMALS) -> str:
    b = d.box
    return (
        f"{d.class_id} {d.confidence:.{decimals}f} "
        f"{b.cx:.{decimals}f} {b.cy:.{decimals}f} {b.w:.{decimals}f} {b.h:.{decimals}f}"
    )


def write_labels(split: DatasetSplit, out_dir: str | Path, decimals: int = SERIAL_DECIMALS, manifest: bool = True) -> Path:
    """Write one label file per image, plus a manifest listing every stem."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for image_id, gts in split.images:
        lines = [format_label_line(g, decimals) for g in gts]
        (out / f"{image_id}{LABEL_SUFFIX}").write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    if manifest:
        (out / MANIFEST_NAME).write_text("".join(f"{i}\n" for i, _ in split.images), encoding="utf-8")
    return out


def write_predictions(dets: Iterable[Detection], out_dir: str | Path, decimals: int = SERIAL_DECIMALS) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_image: dict[str, list[Detection]] = {}
    for d in dets:
        by_image.setdefault(str(d.image_id), []).append(d)
    for image_id, ds in by_image.items():
        (out / f"{image_id}{LABEL_SUFFIX}").write_text(
            "".join(format_prediction_line(d, decimals) + "\n" for d in ds), encoding="utf-8"
        )
    return out
