"""Loss terms: supervised mix, pace regulator, and the MT decomposition check"""
import math
import numpy as np
from typing import Callable, Dict, Optional

from config import EPS_DICE, EPS_LOG
from dtsl import tensor as T
from dtsl.tensor import Tensor, as_array
from dtsl.systems.consensus import check_kappa, js_divergence, make_masks


class LossBreakdown:
    """Per-iteration loss values for both groups

    semi/url per group are summed over the labeled and unlabeled batch; the
    *_l / *_u pace parts keep the split needed for total_l and total_u.
    """

    def __init__(self, alpha: float, beta: float):
        self.alpha = alpha
        self.beta = beta

        self.sup0 = 0.0
        self.sup1 = 0.0
        self.semi0 = 0.0
        self.semi1 = 0.0
        self.url0 = 0.0
        self.url1 = 0.0
        self.pace_l = 0.0
        self.pace_u = 0.0
        self.cons_fraction = 0.0

    @property
    def sup(self) -> float:
        return self.sup0 + self.sup1

    @property
    def semi(self) -> float:
        return self.semi0 + self.semi1

    @property
    def url(self) -> float:
        return self.url0 + self.url1

    @property
    def pace(self) -> float:
        return self.alpha * self.semi + self.beta * self.url

    @property
    def total_l(self) -> float:
        return self.sup + self.pace_l

    @property
    def total_u(self) -> float:
        return self.pace_u

    @property
    def total(self) -> float:
        return self.total_l + self.total_u

    def add_group(self, group: int, sup: float = 0.0, semi: float = 0.0, url: float = 0.0, labeled: bool = True):
        suffix = str(group)
        setattr(self, "sup" + suffix, getattr(self, "sup" + suffix) + sup)
        setattr(self, "semi" + suffix, getattr(self, "semi" + suffix) + semi)
        setattr(self, "url" + suffix, getattr(self, "url" + suffix) + url)
        part = self.alpha * semi + self.beta * url
        if labeled:
            self.pace_l += part
        else:
            self.pace_u += part

    def is_finite(self) -> bool:
        values = [self.sup0, self.sup1, self.semi0, self.semi1, self.url0, self.url1, self.pace_l, self.pace_u]
        return all(math.isfinite(v) for v in values)

    def to_row(self, iteration: int) -> Dict[str, float]:
        return {
            "iter": iteration,
            "sup": self.sup,
            "semi": self.semi,
            "url": self.url,
            "pace": self.pace,
            "total_l": self.total_l,
            "total_u": self.total_u,
            "cons_fraction": self.cons_fraction,
        }

    def to_dict(self) -> Dict[str, float]:
        data = {k: getattr(self, k) for k in ("sup0", "sup1", "semi0", "semi1", "url0", "url1",
                                               "pace_l", "pace_u", "cons_fraction", "alpha", "beta")}
        data.update({"pace": self.pace, "total_l": self.total_l, "total_u": self.total_u})
        return data


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """[B,H,W] int labels -> [B,K,H,W] float"""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in 0..{num_classes - 1}, got range "
                         f"{labels.min()}..{labels.max()}")
    return np.moveaxis(np.eye(num_classes)[labels], -1, 1)


def _check_labels(labels: np.ndarray, shape, op: str):
    expected = (shape[0],) + tuple(shape[2:])
    if labels.shape != expected:
        raise ValueError(f"{op}: labels shape {list(labels.shape)} does not match {list(expected)}")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over pixels of -log softmax(logits)[label]"""
    logits = T.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    _check_labels(labels, logits.shape, "cross_entropy")
    num_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"cross_entropy: label out of range 0..{num_classes - 1}")
    picked = T.pick(T.log_softmax(logits, axis=1), labels, axis=1)
    return T.neg(T.mean(picked))


def dice_loss(probs: Tensor, labels) -> Tensor:
    """1 - macro mean over classes (background included) of the smoothed Dice"""
    probs = T.as_tensor(probs)
    labels = np.asarray(labels, dtype=np.int64)
    _check_labels(labels, probs.shape, "dice_loss")
    target = one_hot(labels, probs.shape[1])

    intersection = T.tsum(T.mul(probs, target), axis=(0, 2, 3))
    pred_sum = T.tsum(probs, axis=(0, 2, 3))
    target_sum = target.sum(axis=(0, 2, 3))

    numerator = T.add(T.mul(intersection, 2.0), EPS_DICE)
    denominator = T.add(T.add(pred_sum, target_sum), EPS_DICE)
    return T.sub(1.0, T.mean(T.div(numerator, denominator)))


def l_sup(logits: Tensor, y_gt) -> Tensor:
    """Half the sum of cross-entropy and Dice; first argument is the prediction"""
    ce = cross_entropy(logits, y_gt)
    dice = dice_loss(T.softmax(logits, axis=1), y_gt)
    return T.mul(T.add(ce, dice), 0.5)


def l_semi(student_probs: Tensor, pseudo) -> Tensor:
    return dice_loss(student_probs, np.asarray(pseudo, dtype=np.int64))


def kl_to_uniform(probs: Tensor, num_classes: int) -> Tensor:
    """Base-2 KL(p || Uniform(K)) per pixel, [B,H,W]"""
    logp = T.log(T.clamp_min(probs, EPS_LOG))
    log2p_plus = T.add(T.mul(logp, 1.0 / math.log(2.0)), math.log2(num_classes))
    return T.tsum(T.mul(probs, log2p_plus), axis=1)


def l_url(student_probs: Tensor, cross_teacher_probs, kappa: float, num_classes: int) -> Tensor:
    """Mean KL-to-uniform over pixels where student and cross-group teacher disagree"""
    check_kappa(kappa)
    student_probs = T.as_tensor(student_probs)
    teacher = as_array(cross_teacher_probs)
    if teacher.shape != student_probs.shape:
        raise ValueError(f"l_url: shape mismatch {list(student_probs.shape)} vs {list(teacher.shape)}")

    mask = make_masks(js_divergence(student_probs.data, teacher), kappa).diff
    count = int(mask.sum())
    if count == 0:
        return Tensor(0.0)
    masked = T.mul(kl_to_uniform(student_probs, num_classes), mask.astype(np.float64))
    return T.mul(T.tsum(masked), 1.0 / count)


def l_pace(semi0, semi1, url0, url1, alpha: float, beta: float):
    """alpha * (semi0 + semi1) + beta * (url0 + url1); accepts Tensors or floats"""
    if alpha < 0 or beta < 0:
        raise ValueError(f"pace weights must be non-negative, got alpha={alpha}, beta={beta}")
    return alpha * (semi0 + semi1) + beta * (url0 + url1)


# Per-pixel losses for the decomposition check

def per_pixel_cross_entropy(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    picked = np.take_along_axis(probs, labels[:, None], axis=1)[:, 0]
    return -np.log(np.maximum(picked, EPS_LOG))


def per_pixel_dice_surrogate(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """1 - p[label]: the per-pixel linear overlap term"""
    return 1.0 - np.take_along_axis(probs, labels[:, None], axis=1)[:, 0]


def mt_decomposition_check(probs, y_gt, y_t, lam: float,
                           loss_fn: Optional[Callable] = None):
    """Both sides of the agreement split of L(y, gt) + lam * L(y, teacher)

    Returns (lhs, rhs): lhs sums the unsplit objective over pixels; rhs uses
    (1 + lam) L(y, gt) where the teacher label equals the ground truth and the
    unsplit form elsewhere.
    """
    probs = as_array(probs)
    y_gt = np.asarray(y_gt, dtype=np.int64)
    y_t = np.asarray(y_t, dtype=np.int64)
    _check_labels(y_gt, probs.shape, "mt_decomposition_check")
    _check_labels(y_t, probs.shape, "mt_decomposition_check")
    loss_fn = loss_fn or per_pixel_cross_entropy

    to_gt = loss_fn(probs, y_gt)
    to_teacher = loss_fn(probs, y_t)
    agree = y_t == y_gt

    lhs = math.fsum((to_gt + lam * to_teacher).ravel())
    rhs = (math.fsum(((1.0 + lam) * to_gt[agree]).ravel())
           + math.fsum((to_gt[~agree] + lam * to_teacher[~agree]).ravel()))
    return lhs, rhs
