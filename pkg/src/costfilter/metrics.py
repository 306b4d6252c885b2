"""Stereo evaluation metrics: endpoint error and bad-pixel ratios over all or
externally masked (e.g. non-occluded) pixels.

A pixel is "bad" at threshold tau when its absolute error exceeds tau pixels
or (rule "or", the default) is at least 5% of the true disparity; rule "and"
requires both conditions, matching the official KITTI convention.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .disparity import DisparityMap
from .errors import ConfigError, DataError

RULES = ("or", "and")


@dataclass
class MetricReport:
    epe: float
    bad1: float
    bad3: float
    evaluated_pixels: int
    rule: str

    def as_dict(self):
        return {"epe": self.epe, "bad1": self.bad1, "bad3": self.bad3,
                "pixels": self.evaluated_pixels, "rule": self.rule}


def _eval_mask(pred: DisparityMap, gt: DisparityMap, mask):
    if pred.values.shape != gt.values.shape:
        raise ConfigError(f"prediction {pred.values.shape} and ground truth "
                          f"{gt.values.shape} shapes differ")
    sel = gt.valid
    if mask is not None:
        mask = np.asarray(mask).astype(bool)
        if mask.shape != gt.values.shape:
            raise ConfigError(f"mask shape {mask.shape} does not match {gt.values.shape}")
        sel = sel & mask
    if not sel.any():
        raise DataError("no pixels to evaluate (empty gt-valid ∧ mask set)")
    return sel


def epe(pred: DisparityMap, gt: DisparityMap, mask=None) -> float:
    """Mean absolute disparity error over gt-valid (and masked) pixels."""
    sel = _eval_mask(pred, gt, mask)
    return float(np.abs(pred.values[sel] - gt.values[sel]).mean())


def bad_ratio(pred: DisparityMap, gt: DisparityMap, mask=None, tau: float = 3.0,
              pct: float = 0.05, rule: str = "or") -> float:
    """Fraction of evaluated pixels whose error violates the tau/percentage test."""
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    if rule not in RULES:
        raise ConfigError(f"rule must be one of {RULES}, got {rule!r}")
    sel = _eval_mask(pred, gt, mask)
    err = np.abs(pred.values[sel] - gt.values[sel])
    rel = pct * np.abs(gt.values[sel])
    if rule == "or":
        bad = (err > tau) | (err >= rel)
    else:
        bad = (err > tau) & (err >= rel)
    return float(bad.mean())


def evaluate(pred: DisparityMap, gt: DisparityMap, mask=None,
             rule: str = "or") -> MetricReport:
    sel = _eval_mask(pred, gt, mask)
    return MetricReport(
        epe=epe(pred, gt, mask),
        bad1=bad_ratio(pred, gt, mask, tau=1.0, rule=rule),
        bad3=bad_ratio(pred, gt, mask, tau=3.0, rule=rule),
        evaluated_pixels=int(sel.sum()),
        rule=rule,
    )
