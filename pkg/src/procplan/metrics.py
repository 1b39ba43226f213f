"""Plan metrics and seed-level bootstrap confidence intervals."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

MASK_EPS = 1e-9


def _as_pairs(preds, gts):
    preds = [tuple(p) for p in preds]
    gts = [tuple(g) for g in gts]
    if len(preds) != len(gts):
        raise ValueError("preds and gts differ in length")
    if not preds:
        raise ValueError("no instances")
    for p, g in zip(preds, gts):
        if len(p) != len(g):
            raise ValueError("plan lengths differ")
    return preds, gts


def success_rate(preds, gts) -> float:
    preds, gts = _as_pairs(preds, gts)
    return 100.0 * sum(p == g for p, g in zip(preds, gts)) / len(preds)


def mean_accuracy(preds, gts) -> float:
    preds, gts = _as_pairs(preds, gts)
    acc = [np.mean([a == b for a, b in zip(p, g)]) for p, g in zip(preds, gts)]
    return 100.0 * float(np.mean(acc))


def miou_set(preds, gts) -> float:
    """IoU of the sets of distinct actions, averaged over instances."""
    preds, gts = _as_pairs(preds, gts)
    vals = []
    for p, g in zip(preds, gts):
        sp, sg = set(p), set(g)
        vals.append(len(sp & sg) / len(sp | sg))
    return 100.0 * float(np.mean(vals))


def miou_mask(preds, gts) -> float:
    """Element-wise IoU over one-hot step masks.

    A matching step contributes 1 to both intersection and union; a
    mismatching step lights two different entries, so it adds 2 to the union.
    """
    preds, gts = _as_pairs(preds, gts)
    vals = []
    for p, g in zip(preds, gts):
        match = sum(a == b for a, b in zip(p, g))
        union = match + 2 * (len(p) - match)
        vals.append(match / (union + MASK_EPS))
    return 100.0 * float(np.mean(vals))


@dataclass
class EvalReport:
    sr: float
    macc: float
    miou_set: float
    miou_mask: float
    n_instances: int
    horizon: int
    mode: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_plans(preds, gts, mode: str = "") -> EvalReport:
    preds, gts = _as_pairs(preds, gts)
    return EvalReport(
        sr=success_rate(preds, gts),
        macc=mean_accuracy(preds, gts),
        miou_set=miou_set(preds, gts),
        miou_mask=miou_mask(preds, gts),
        n_instances=len(preds),
        horizon=len(gts[0]),
        mode=mode,
    )


# -- bootstrap ----------------------------------------------------------------


@dataclass
class BootstrapReport:
    mean: float
    ci_low: float
    ci_high: float
    k: int
    scores: list = field(default_factory=list)
    alpha: float = 0.10

    @property
    def width(self) -> float:
        return self.ci_high - self.ci_low

    def to_dict(self) -> dict:
        d = asdict(self)
        d["width"] = self.width
        return d

    def __str__(self):
        return f"{self.mean:.2f} ± {self.width:.2f}"


@dataclass
class BootstrapComparison:
    delta_obs: float
    ci_low: float
    ci_high: float
    significant: bool
    k: int
    alpha: float = 0.10

    @property
    def width(self) -> float:
        return self.ci_high - self.ci_low

    def to_dict(self) -> dict:
        d = asdict(self)
        d["width"] = self.width
        return d

    def __str__(self):
        mark = "*" if self.significant else ""
        return f"{self.delta_obs:+.2f} ± {self.width:.2f}{mark}"


def _percentiles(values, alpha):
    lo, hi = np.percentile(values, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return float(lo), float(hi)


def bootstrap_single(scores: Sequence[float], k: int = 100, alpha: float = 0.10, seed: int = 0) -> BootstrapReport:
    """Percentile CI of the mean from ``k`` resamples with replacement."""
    x = np.asarray(scores, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need at least two scores")
    if k < 1:
        raise ValueError("k must be positive")
    rng = np.random.default_rng(seed)
    means = x[rng.integers(0, x.size, size=(k, x.size))].mean(axis=1)
    lo, hi = _percentiles(means, alpha)
    return BootstrapReport(float(x.mean()), lo, hi, k, x.tolist(), alpha)


def bootstrap_compare(scores_a, scores_b, k: int = 1000, alpha: float = 0.10, seed: int = 0) -> BootstrapComparison:
    """CI of mean(a) - mean(b), resampling each set independently."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("need at least two scores per model")
    rng = np.random.default_rng(seed)
    ma = a[rng.integers(0, a.size, size=(k, a.size))].mean(axis=1)
    mb = b[rng.integers(0, b.size, size=(k, b.size))].mean(axis=1)
    lo, hi = _percentiles(ma - mb, alpha)
    return BootstrapComparison(float(a.mean() - b.mean()), lo, hi, bool(lo * hi > 0), k, alpha)


def bootstrap_paired(scores_a, scores_b, k: int = 1000, alpha: float = 0.10, seed: int = 0) -> BootstrapComparison:
    """CI of the mean per-seed difference a - b, resampling seeds jointly."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired scores need equal-length 1-d arrays")
    if a.size < 2:
        raise ValueError("need at least two paired scores")
    d = a - b
    rng = np.random.default_rng(seed)
    means = d[rng.integers(0, d.size, size=(k, d.size))].mean(axis=1)
    lo, hi = _percentiles(means, alpha)
    return BootstrapComparison(float(d.mean()), lo, hi, bool(lo * hi > 0), k, alpha)


# -- report emission ------------------------------------------------------------


def format_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Aligned-column text table."""
    cells = [[str(h) for h in header]] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def dump_json(obj, path, config: dict | None = None) -> None:
    payload = {"config": config or {}, "result": obj}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=_jsonable)


def _jsonable(o):
    if hasattr(o, "to_dict"):
        return o.to_dict()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")
