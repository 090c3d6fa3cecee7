import random
import sys
from pathlib import Path

import pytest

from detkit.geometry import BBox
from detkit.metrics import Detection, GroundTruth

TESTS = Path(__file__).parent
DATA = TESTS / "data"
FIXTURES = TESTS / "fixtures"

DEBRIS_CLASSES = ("Bottle", "Clothes", "Metal", "Plastic", "Rope", "Styrofoam", "Wood")


def grid_box(rng: random.Random, steps: int = 16) -> BBox:
    """Box whose corners sit on a 1/steps grid, so every coordinate is exact."""
    x1, x2 = sorted(rng.sample(range(steps + 1), 2))
    y1, y2 = sorted(rng.sample(range(steps + 1), 2))
    return BBox((x1 + x2) / (2 * steps), (y1 + y2) / (2 * steps), (x2 - x1) / steps, (y2 - y1) / steps)


def jitter_box(rng: random.Random, b: BBox, steps: int = 16) -> BBox:
    """Shift/resize a grid box by a grid step or two, staying inside the image."""
    x1 = round((b.cx - b.w / 2) * steps)
    x2 = round((b.cx + b.w / 2) * steps)
    y1 = round((b.cy - b.h / 2) * steps)
    y2 = round((b.cy + b.h / 2) * steps)
    for _ in range(20):
        nx1, nx2, ny1, ny2 = (v + rng.randint(-2, 2) for v in (x1, x2, y1, y2))
        if 0 <= nx1 < nx2 <= steps and 0 <= ny1 < ny2 <= steps:
            return BBox((nx1 + nx2) / (2 * steps), (ny1 + ny2) / (2 * steps),
                        (nx2 - nx1) / steps, (ny2 - ny1) / steps)
    return b


def micro_dataset(rng: random.Random, max_images=4, max_objects=6, max_classes=3):
    """Random small dataset with ties, boundary IoUs and near-miss detections.

    Returns (dets, gts, n_classes) with at least one ground truth.
    """
    n_classes = rng.randint(1, max_classes)
    n_images = rng.randint(1, max_images)
    confs = [0.1, 0.3, 0.5, 0.5, 0.7, 0.9, 0.95]
    gts, dets = [], []
    for i in range(n_images):
        img = f"img{i}"
        for _ in range(rng.randint(0, max_objects)):
            gts.append(GroundTruth(img, rng.randrange(n_classes), grid_box(rng)))
        image_gts = [g for g in gts if g.image_id == img]
        for _ in range(rng.randint(0, max_objects)):
            if image_gts and rng.random() < 0.7:
                g = rng.choice(image_gts)
                cls = g.class_id if rng.random() < 0.8 else rng.randrange(n_classes)
                box = g.box if rng.random() < 0.2 else jitter_box(rng, g.box)
            else:
                cls, box = rng.randrange(n_classes), grid_box(rng)
            dets.append(Detection(img, cls, box, rng.choice(confs)))
    if not gts:
        gts.append(GroundTruth("img0", 0, grid_box(rng)))
    return dets, gts, n_classes


def as_tuples(dets, gts):
    return (
        [(d.image_id, d.class_id, d.box.as_tuple(), d.confidence) for d in dets],
        [(g.image_id, g.class_id, g.box.as_tuple()) for g in gts],
    )


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def debris_classes():
    return DEBRIS_CLASSES


@pytest.fixture
def python_exe():
    return sys.executable
