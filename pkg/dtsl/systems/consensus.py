"""JS divergence, consistency masks and the consensus label generator"""
import numpy as np
from enum import Enum
from typing import Dict, Tuple

from config import EPS_LOG, STRATEGIES
from dtsl.tensor import as_array


class ClgStrategy(Enum):
    DEFAULT = "default"
    STRATEGY1 = "strategy1"
    STRATEGY2 = "strategy2"
    STRATEGY3 = "strategy3"

    @classmethod
    def parse(cls, value) -> "ClgStrategy":
        if isinstance(value, cls):
            return value
        for strategy in cls:
            if strategy.value == str(value).lower() or strategy.name == str(value).upper():
                return strategy
        raise ValueError(f"Unknown CLG strategy: {value}")


class ConsistencyMask:
    """Exclusive split of the pixels into consistent / inconsistent parts"""

    def __init__(self, cons: np.ndarray, kappa: float):
        self.cons = cons
        self.diff = np.logical_not(cons)
        self.kappa = kappa

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.cons.shape

    def fraction(self) -> float:
        return consistency_fraction(self)


def probmap(values, name: str = "probs") -> np.ndarray:
    """Detached array with classes on axis 1, checked to be a distribution there"""
    p = as_array(values)
    if p.ndim < 2:
        raise ValueError(f"{name}: expected a class axis, got shape {list(p.shape)}")
    if np.any(p < 0.0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError(f"{name}: not a distribution along the class axis")
    return p


def _check_same(p: np.ndarray, q: np.ndarray, op: str):
    if p.shape != q.shape:
        raise ValueError(f"{op}: shape mismatch {list(p.shape)} vs {list(q.shape)}")


def check_kappa(kappa: float) -> float:
    if not 0.0 <= kappa <= 1.0:
        raise ValueError(f"kappa must lie in [0, 1], got {kappa}")
    return float(kappa)


def kl_pixelwise(p, q) -> np.ndarray:
    """Base-2 KL(p||q) per pixel; 0*log(0) = 0, q clamped at EPS_LOG"""
    p, q = as_array(p), as_array(q)
    _check_same(p, q, "kl_pixelwise")
    q = np.maximum(q, EPS_LOG)
    safe_p = np.where(p > 0.0, p, 1.0)
    terms = np.where(p > 0.0, p * np.log2(safe_p / q), 0.0)
    return terms.sum(axis=1)


def js_divergence(o1, o2) -> np.ndarray:
    """Base-2 JS divergence per pixel, in [0, 1]"""
    o1, o2 = probmap(o1, "o1"), probmap(o2, "o2")
    _check_same(o1, o2, "js_divergence")
    m = (o1 + o2) / 2.0
    js = 0.5 * kl_pixelwise(o1, m) + 0.5 * kl_pixelwise(o2, m)
    return np.maximum(js, 0.0)


def make_masks(js, kappa: float) -> ConsistencyMask:
    kappa = check_kappa(kappa)
    return ConsistencyMask(as_array(js) < kappa, kappa)


def consistency_fraction(mask: ConsistencyMask) -> float:
    return float(np.mean(mask.cons)) if mask.cons.size else 0.0


def argmax_labels(probs) -> np.ndarray:
    """Hard labels; the lowest class index wins ties"""
    return np.argmax(as_array(probs), axis=1).astype(np.int64)


def plain_consensus(o1, o2) -> np.ndarray:
    o1, o2 = probmap(o1, "o1"), probmap(o2, "o2")
    _check_same(o1, o2, "plain_consensus")
    return argmax_labels((o1 + o2) / 2.0)


def clg(o1, o2, kappa: float) -> np.ndarray:
    """Argmax of the mean where JS < kappa, background elsewhere"""
    o1, o2 = probmap(o1, "o1"), probmap(o2, "o2")
    _check_same(o1, o2, "clg")
    mask = make_masks(js_divergence(o1, o2), kappa)
    labels = argmax_labels((o1 + o2) / 2.0)
    labels[mask.diff] = 0
    return labels


def triple_consensus(o1, o2, o3, kappa: float) -> np.ndarray:
    """Consistent only where all three pairwise JS values are below kappa"""
    o1, o2, o3 = probmap(o1, "o1"), probmap(o2, "o2"), probmap(o3, "o3")
    _check_same(o1, o2, "triple_consensus")
    _check_same(o1, o3, "triple_consensus")
    kappa = check_kappa(kappa)
    cons = ((js_divergence(o1, o2) < kappa)
            & (js_divergence(o1, o3) < kappa)
            & (js_divergence(o2, o3) < kappa))
    labels = argmax_labels((o1 + o2 + o3) / 3.0)
    labels[~cons] = 0
    return labels


def strategy_sources(strategy, target_group: int) -> Tuple[str, ...]:
    """Output names feeding the pseudo-labels of one student"""
    strategy = ClgStrategy.parse(strategy)
    if target_group not in (0, 1):
        raise ValueError(f"target_group must be 0 or 1, got {target_group}")
    sources = STRATEGIES[strategy.value]
    if target_group == 0:
        return sources
    swap = {"0": "1", "1": "0"}
    return tuple(name[:-1] + swap[name[-1]] for name in sources)


def clg_strategy(strategy, outputs: Dict[str, np.ndarray], target_group: int, kappa: float,
                 bypass_mask: bool = False) -> np.ndarray:
    """Pseudo-labels for student `target_group` from the four model outputs

    outputs holds detached ProbMaps under student0, student1, teacher0, teacher1.
    bypass_mask keeps the pairing but takes the argmax of the mean everywhere.
    """
    sources = strategy_sources(strategy, target_group)
    missing = [name for name in sources if name not in outputs]
    if missing:
        raise ValueError(f"clg_strategy: missing outputs {missing}")
    maps = [as_array(outputs[name]) for name in sources]

    if len(maps) == 3:
        if bypass_mask:
            return argmax_labels((maps[0] + maps[1] + maps[2]) / 3.0)
        return triple_consensus(maps[0], maps[1], maps[2], kappa)
    if bypass_mask:
        return plain_consensus(maps[0], maps[1])
    return clg(maps[0], maps[1], kappa)


def strategy_mask(strategy, outputs: Dict[str, np.ndarray], target_group: int, kappa: float) -> ConsistencyMask:
    """Consistency mask behind the pseudo-labels of one student"""
    sources = strategy_sources(strategy, target_group)
    maps = [as_array(outputs[name]) for name in sources]
    cons = np.ones(maps[0].shape[:1] + maps[0].shape[2:], dtype=bool)
    for i in range(len(maps)):
        for j in range(i + 1, len(maps)):
            cons &= js_divergence(maps[i], maps[j]) < check_kappa(kappa)
    return ConsistencyMask(cons, kappa)
