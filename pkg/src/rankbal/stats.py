"""Sample comparison and path diagnostics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Per-replication statistics: ``values`` has shape ``(R, d)``."""

    values: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] == 0:
            raise ValueError("a SampleSet needs at least one vector of fixed dimension")
        object.__setattr__(self, "values", v)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def scalars(self) -> np.ndarray:
        if self.dim != 1:
            raise ValueError(f"expected scalar samples, got dimension {self.dim}")
        return self.values[:, 0]


def _scalars(s) -> np.ndarray:
    if isinstance(s, SampleSet):
        return s.scalars()
    arr = np.asarray(s, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError("expected scalar samples")
    if arr.size == 0:
        raise ValueError("empty sample")
    return arr


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance ``sup_x |F_a(x) - F_b(x)|``.

    The supremum is attained at a sample point, so evaluating both ECDFs at
    the pooled sorted sample is exact.
    """
    a = np.sort(_scalars(a))
    b = np.sort(_scalars(b))
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_critical_value(m1: int, m2: int, alpha: float = 0.05) -> float:
    """Asymptotic two-sample critical value ``c(alpha) sqrt(1/m1 + 1/m2)``
    with ``c(alpha) = sqrt(-ln(alpha/2) / 2)``."""
    c = math.sqrt(-0.5 * math.log(alpha / 2.0))
    return c * math.sqrt(1.0 / m1 + 1.0 / m2)


def ranked_marginals(vectors, label: str = "") -> list[SampleSet]:
    """Sort each vector ascending and collect one sample per rank."""
    v = np.asarray(vectors, dtype=float)
    if v.ndim == 1:
        v = v[None, :]
    if v.shape[0] == 0:
        raise ValueError("no vectors given")
    ranked = np.sort(v, axis=1)
    return [
        SampleSet(ranked[:, r], label=f"{label}rank{r + 1}", meta={"rank": r + 1})
        for r in range(ranked.shape[1])
    ]


def idle_fraction(paths, T: float) -> float:
    """Fraction of replications in which some server has ``L_hat(T) > 0``.

    Items are scaled paths (evaluated at the last grid time not after ``T``)
    or terminal ``L_hat`` vectors.
    """
    flags = []
    for p in paths:
        if hasattr(p, "L") and hasattr(p, "grid"):
            k = np.searchsorted(p.grid, T, side="right") - 1
            if k < 0:
                raise ValueError("T precedes the path's grid")
            L = p.L[k]
        else:
            L = np.asarray(p, dtype=float)
        flags.append(bool(np.max(L) > 0))
    if not flags:
        raise ValueError("no paths given")
    return float(np.mean(flags))


def modulus_of_continuity(path, delta: float, T: float | None = None) -> float:
    """``sup ||f(u) - f(s)||`` over grid pairs with ``|u - s| <= delta``.

    ``path`` is a ``(t, values)`` pair or an object with ``grid`` and ``X``.
    """
    if hasattr(path, "grid"):
        t, f = path.grid, path.X
    else:
        t, f = path
    t = np.asarray(t, dtype=float)
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if T is not None:
        keep = t <= T
        t, f = t[keep], f[keep]
    reach = delta * (1.0 + 1e-12)
    best = 0.0
    for lag in range(1, t.size):
        close = (t[lag:] - t[:-lag]) <= reach
        if not np.any(close):
            break
        diff = np.linalg.norm(f[lag:][close] - f[:-lag][close], axis=1)
        best = max(best, float(diff.max()))
    return best


def mean_with_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def report_entry(statistic: str, value, threshold, passed: bool, sizes=None, seeds=None, **extra) -> dict:
    entry = {
        "statistic": statistic,
        "value": value,
        "threshold": threshold,
        "pass": bool(passed),
        "sizes": sizes,
        "seeds": seeds,
    }
    entry.update(extra)
    return entry


def dumps_report(entries: list[dict], **header) -> str:
    """JSON report; the overall flag ignores entries marked ``gating=False``."""
    doc = dict(header)
    doc["entries"] = entries
    doc["pass"] = all(e["pass"] for e in entries if e.get("gating", True))
    return json.dumps(_plain(doc), indent=2, sort_keys=True) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
