"""Shared builders for synthetic images, labels and published-table fixtures."""

import json
from pathlib import Path

import numpy as np

from credscore.core import DEFAULT_CLASSES, BBox, Detection, GroundTruthBox, Raster
from credscore.dataset_io import format_kitti_labels, format_predictions
from credscore.metrics import FlipSequence

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_image(width=64, height=64) -> Raster:
    """Deterministic, RNG-free test card: gradients plus a checkerboard block."""
    y, x = np.mgrid[0:height, 0:width]
    r = (x * 255) // max(width - 1, 1)
    g = (y * 255) // max(height - 1, 1)
    b = ((x // 8 + y // 8) % 2) * 200 + 27
    return Raster(np.stack([r, g, b], axis=-1).astype(np.uint8))


def reference_tables() -> dict:
    return json.loads((FIXTURES / "reference_tables.json").read_text())


def box(l, t, r, b) -> BBox:
    return BBox(float(l), float(t), float(r), float(b))


def gt(label, *coords) -> GroundTruthBox:
    return GroundTruthBox(label, box(*coords))


def det(label, conf, *coords) -> Detection:
    return Detection(label, box(*coords), conf)


SLOTS_PER_CLASS = 4
N_IMAGES_AP = 250  # 250 images x 4 slots = 1000 instances per class


def slot_box(class_idx: int, slot: int) -> BBox:
    k = class_idx * SLOTS_PER_CLASS + slot
    col, row = k % 8, k // 8
    return box(col * 30, row * 30, col * 30 + 20, row * 30 + 20)


def write_ap_dataset(root: Path, cell_aps: dict, classes=DEFAULT_CLASSES):
    """Write a ground-truth dir plus one prediction dir per cell with prescribed per-class APs.

    Each class has 1000 instances; the first ``round(ap * 1000)`` of them get an
    exact, correctly labelled detection and the rest none, so every-point AP is
    ``k / 1000`` by construction. Returns ``{cell_key: prediction_dir}`` and the
    ground-truth dir.
    """
    gt_dir = root / "gt"
    gt_dir.mkdir(parents=True)
    for img in range(N_IMAGES_AP):
        boxes = [GroundTruthBox(c, slot_box(ci, s)) for ci, c in enumerate(classes) for s in range(SLOTS_PER_CLASS)]
        (gt_dir / f"{img:06d}.txt").write_text(format_kitti_labels(boxes))
    pred_dirs = {}
    for key, aps in cell_aps.items():
        d = root / "pred" / key.replace("/", "_")
        d.mkdir(parents=True)
        quota = {c: round(aps[c] * 1000) for c in classes}
        for img in range(N_IMAGES_AP):
            dets = []
            for ci, c in enumerate(classes):
                for s in range(SLOTS_PER_CLASS):
                    if img * SLOTS_PER_CLASS + s < quota[c]:
                        dets.append(Detection(c, slot_box(ci, s), 0.9))
            (d / f"{img:06d}.txt").write_text(format_predictions(dets))
        pred_dirs[key] = d
    return gt_dir, pred_dirs


def random_images(rnd, max_dets=10, max_truth=5, labels=("Car", "Van")):
    images = []
    n_img = rnd.randint(1, 3)
    dets_left = rnd.randint(0, max_dets)
    truth_left = rnd.randint(1, max_truth)
    for i in range(n_img):
        nd = dets_left if i == n_img - 1 else rnd.randint(0, dets_left)
        nt = truth_left if i == n_img - 1 else rnd.randint(0, truth_left)
        dets_left -= nd
        truth_left -= nt

        def rect():
            x, y = rnd.randint(0, 10), rnd.randint(0, 10)
            return x, y, x + rnd.randint(2, 6), y + rnd.randint(2, 6)

        truth = [gt(rnd.choice(labels), *rect()) for _ in range(nt)]
        preds = [det(rnd.choice(labels), round(rnd.random(), rnd.choice([1, 2, 6])), *rect()) for _ in range(nd)]
        images.append((preds, truth))
    return images


def sequence_from_labels(image_id, tracks):
    """One ground-truth object per track; ``None`` in a track means no detection that frame."""
    truth = [gt("Car", 20 * g, 0, 20 * g + 10, 10) for g in range(len(tracks))]
    n = len(tracks[0]) if tracks else 2
    frames = []
    for j in range(n):
        frames.append([det(tr[j], 0.9, 20 * g, 0, 20 * g + 10, 10)
                       for g, tr in enumerate(tracks) if tr[j] is not None])
    return FlipSequence(image_id, frames, truth)


def random_tracks(rnd, m, n, labels=("Car", "Van", "Truck", None)):
    return [[[rnd.choice(labels) for _ in range(n)] for _ in range(rnd.randint(1, 3))] for _ in range(m)]
