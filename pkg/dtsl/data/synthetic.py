"""Synthetic ring-and-cavity segmentation corpus"""
import math
import numpy as np
from typing import Dict, List, Optional, Tuple

from config import CLASS_INTENSITIES, INTENSITY_JITTER, MAX_SAMPLE_RETRIES


Ellipse = Tuple[float, float, float, float, float]  # cy, cx, a, b, theta


class SyntheticSample:
    """One grayscale image [1,H,W] in [0,1] and its label map [H,W]"""

    def __init__(self, index: int, image: np.ndarray, label: np.ndarray, shapes: Dict):
        self.index = index
        self.image = image
        self.label = label
        self.shapes = shapes

    @property
    def size(self) -> Tuple[int, int]:
        return self.label.shape


class DatasetSplit:
    """Labeled / unlabeled / test partition of one corpus"""

    def __init__(self, labeled: List[SyntheticSample], unlabeled: List[SyntheticSample],
                 test: List[SyntheticSample]):
        self.labeled = labeled
        self.unlabeled = unlabeled
        self.test = test

    def indices(self) -> Dict[str, List[int]]:
        return {
            "labeled": [s.index for s in self.labeled],
            "unlabeled": [s.index for s in self.unlabeled],
            "test": [s.index for s in self.test],
        }

    def counts(self) -> Dict[str, int]:
        return {name: len(ids) for name, ids in self.indices().items()}


def inside_ellipse(ys: np.ndarray, xs: np.ndarray, ellipse: Ellipse) -> np.ndarray:
    cy, cx, a, b, theta = ellipse
    dy, dx = ys - cy, xs - cx
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _draw_layout(rng: np.random.Generator, height: int, width: int, num_classes: int) -> Optional[Dict]:
    side = min(height, width)
    a = max(2.0, rng.uniform(0.12, 0.22) * side)
    b = max(2.0, rng.uniform(0.12, 0.22) * side)
    reach = max(a, b) + 1.0
    cy = rng.uniform(reach, height - 1 - reach)
    cx = rng.uniform(reach, width - 1 - reach)
    theta = rng.uniform(0.0, math.pi)
    outer = (cy, cx, a, b, theta)

    layout = {"outer": outer, "inner": None, "blobs": []}

    if num_classes >= 3:
        # Shrunk copy, shifted by at most (1 - r) * min(a, b): stays inside by convexity
        r = rng.uniform(0.4, 0.6)
        shift = 0.8 * (1.0 - r) * min(a, b) * rng.uniform(0.0, 1.0)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        layout["inner"] = (cy + shift * math.sin(phi), cx + shift * math.cos(phi), r * a, r * b, theta)
        layout["inner_scale"] = r
        layout["inner_shift"] = shift

    for k in range(3, num_classes):
        placed = False
        for _ in range(30):
            rho = max(1.5, rng.uniform(0.06, 0.10) * side)
            by = rng.uniform(rho + 1.0, height - 2.0 - rho)
            bx = rng.uniform(rho + 1.0, width - 2.0 - rho)
            if math.hypot(by - cy, bx - cx) <= max(a, b) + rho + 1.0:
                continue
            if any(math.hypot(by - o[0], bx - o[1]) <= o[2] + rho + 1.0 for o in layout["blobs"]):
                continue
            squash = rng.uniform(0.7, 1.0)
            layout["blobs"].append((by, bx, rho, rho * squash, rng.uniform(0.0, math.pi)))
            placed = True
            break
        if not placed:
            return None

    return layout


def _paint(layout: Dict, height: int, width: int) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    label = np.zeros((height, width), dtype=np.int64)
    label[inside_ellipse(ys, xs, layout["outer"])] = 1
    if layout["inner"] is not None:
        label[inside_ellipse(ys, xs, layout["inner"])] = 2
    for k, blob in enumerate(layout["blobs"], start=3):
        label[inside_ellipse(ys, xs, blob)] = k
    return label


def _acceptable(label: np.ndarray, num_classes: int) -> bool:
    counts = np.bincount(label.ravel(), minlength=num_classes)
    if np.any(counts[1:] == 0):
        return False
    return counts[0] > label.size / 2


def generate_sample(seed: int, index: int, height: int, width: int, num_classes: int,
                    noise_sigma: float) -> SyntheticSample:
    rng = np.random.default_rng([seed, index])

    for _ in range(MAX_SAMPLE_RETRIES):
        layout = _draw_layout(rng, height, width, num_classes)
        if layout is None:
            continue
        label = _paint(layout, height, width)
        if _acceptable(label, num_classes):
            break
    else:
        raise RuntimeError(f"could not place all {num_classes - 1} structures in a {height}x{width} image")

    levels = np.array([CLASS_INTENSITIES[k] + rng.uniform(-INTENSITY_JITTER, INTENSITY_JITTER)
                       for k in range(num_classes)])
    image = levels[label]
    if noise_sigma > 0:
        image = image + rng.normal(0.0, noise_sigma, size=image.shape)
    image = np.clip(image, 0.0, 1.0)

    layout["levels"] = levels.tolist()
    return SyntheticSample(index, image[None], label, layout)


def generate(seed: int, count: int, height: int, width: int, num_classes: int,
             noise_sigma: float) -> List[SyntheticSample]:
    """Deterministic per (seed, index)"""
    if height <= 0 or width <= 0 or height % 4 or width % 4:
        raise ValueError(f"image size {height}x{width} must be positive and divisible by 4")
    if not 2 <= num_classes <= 6:
        raise ValueError(f"num_classes must lie in 2..6, got {num_classes}")
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be non-negative, got {noise_sigma}")
    return [generate_sample(seed, i, height, width, num_classes, noise_sigma) for i in range(count)]


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(samples: List[SyntheticSample], labeled_fraction: float, test_fraction: float,
          seed: int) -> DatasetSplit:
    """Shuffled split; |test| = round(tf * n), |labeled| = max(1, round(lf * |train|))"""
    if not 0.0 < labeled_fraction <= 1.0:
        raise ValueError(f"labeled_fraction must lie in (0, 1], got {labeled_fraction}")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")

    n = len(samples)
    n_test = round_half_up(test_fraction * n)
    n_train = n - n_test
    n_labeled = max(1, round_half_up(labeled_fraction * n_train))
    if n_test < 1 or n_train < 1 or n_labeled > n_train:
        raise ValueError(f"degenerate split of {n} samples: train={n_train}, test={n_test}, labeled={n_labeled}")

    order = np.random.default_rng([seed, 7919]).permutation(n)
    train_ids, test_ids = order[:n_train], order[n_train:]
    labeled = [samples[i] for i in train_ids[:n_labeled]]
    unlabeled = [samples[i] for i in train_ids[n_labeled:]]
    test = [samples[i] for i in test_ids]
    return DatasetSplit(labeled, unlabeled, test)


def stack_batch(samples: List[SyntheticSample]) -> Tuple[np.ndarray, np.ndarray]:
    """images [B,1,H,W], labels [B,H,W]"""
    images = np.stack([s.image for s in samples])
    labels = np.stack([s.label for s in samples])
    return images, labels
