"""Separation scoring, score tables and correlation statistics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

SI_SDR_CAP = 60.0


class StatsError(ValueError):
    pass


def si_sdr(estimate, reference) -> float:
    """Scale-invariant SDR in dB over all channels, capped at +60 dB.

    Accepts AudioBuffers or arrays of equal shape.
    """
    e = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64).ravel()
    r = np.asarray(getattr(reference, "samples", reference), dtype=np.float64).ravel()
    if e.shape != r.shape:
        raise StatsError(f"length mismatch: {e.shape} vs {r.shape}")
    rr = float(r @ r)
    if rr == 0.0:
        raise StatsError("reference is silent")
    target = (e @ r) / rr * r
    resid = e - target
    num, den = float(target @ target), float(resid @ resid)
    if den <= num * 10.0 ** (-SI_SDR_CAP / 10.0):
        return SI_SDR_CAP
    if num == 0.0:
        return -SI_SDR_CAP
    return 10.0 * math.log10(num / den)


# ------------------------------------------------------- Student t distribution

def _betacf(a, b, x, max_iter=500, eps=1e-16):
    """Continued fraction for the regularized incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_tailed_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    y = t * t / (df + t * t)
    # for small |t|, 1 - x cancels; use the complement form on y instead
    if y < 0.5:
        return 1.0 - betainc(0.5, 0.5 * df, y)
    return betainc(0.5 * df, 0.5, x)


# ----------------------------------------------------------------- correlation

@dataclass(frozen=True)
class CorrelationResult:
    r: float
    p: float
    n: int
    method: str
    label: str = ""


def correlation_p(r: float, n: int) -> float:
    """Two-tailed p from t = r*sqrt(n-2)/sqrt(1-r^2), Student t with n-2 dof."""
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt(n - 2) / math.sqrt(1.0 - r * r)
    return t_two_tailed_p(t, n - 2)


def _pearson_r(x, y):
    # exact test: a constant input's float mean can differ from its value
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise StatsError("zero variance input")
    xc = x - x.mean()
    yc = y - y.mean()
    sx, sy = math.sqrt(xc @ xc), math.sqrt(yc @ yc)
    if sx == 0.0 or sy == 0.0:
        raise StatsError("zero variance input")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


def _check(xs, ys):
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise StatsError("inputs must be 1-D and equal length")
    if len(x) < 3:
        raise StatsError("need at least 3 samples")
    return x, y


def pearson(xs, ys, label="") -> CorrelationResult:
    x, y = _check(xs, ys)
    r = _pearson_r(x, y)
    return CorrelationResult(r, correlation_p(r, len(x)), len(x), "pearson", label)


def average_ranks(values) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(len(v))
    sv = v[order]
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(xs, ys, label="") -> CorrelationResult:
    x, y = _check(xs, ys)
    r = _pearson_r(average_ranks(x), average_ranks(y))
    return CorrelationResult(r, correlation_p(r, len(x)), len(x), "spearman", label)


METHODS = {"pearson": pearson, "spearman": spearman}


# ----------------------------------------------------------------- score tables

@dataclass
class ScoreTable:
    """Rows are items, columns are systems under test."""

    items: list
    systems: list
    values: np.ndarray

    def __post_init__(self):
        self.items = [str(i) for i in self.items]
        self.systems = [str(s) for s in self.systems]
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.items), len(self.systems)):
            raise StatsError(f"table shape {self.values.shape} does not match labels")

    def column(self, system):
        return self.values[:, self.systems.index(system)]

    def row(self, item):
        return self.values[self.items.index(item)]

    @classmethod
    def read_csv(cls, path) -> "ScoreTable":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        systems = rows[0][1:]
        items, values = [], []
        for r in rows[1:]:
            if len(r) != len(systems) + 1 or any(c.strip() == "" for c in r[1:]):
                raise StatsError(f"{path}: missing cells in row {r[0]!r}")
            items.append(r[0])
            values.append([float(c) for c in r[1:]])
        return cls(items, systems, np.array(values).reshape(len(items), len(systems)))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["item"] + self.systems)
            for item, row in zip(self.items, self.values):
                w.writerow([item] + [repr(float(v)) for v in row])


def _aligned(a_labels, b_labels, what):
    missing_a = [l for l in b_labels if l not in a_labels]
    missing_b = [l for l in a_labels if l not in b_labels]
    if missing_a or missing_b:
        raise StatsError(f"{what} label mismatch; missing from a: {missing_a}, missing from b: {missing_b}")
    return list(a_labels)


def correlate_tables(a: ScoreTable, b: ScoreTable, axis: str = "systems", method: str = "pearson",
                     average: bool = False) -> list[CorrelationResult]:
    """Correlate two tables.

    ``axis="systems"``: one result per shared system column, correlating over
    items. ``axis="items"``: one result per shared item row, over systems.
    With ``average=True`` the other axis is averaged first and a single
    result is returned (e.g. per-system means across items).
    """
    fn = METHODS[method]
    if axis == "systems":
        keys = _aligned(a.systems, b.systems, "system")
        over = _aligned(a.items, b.items, "item")
        ia = [a.items.index(i) for i in over]
        ib = [b.items.index(i) for i in over]
        if average:
            xa = np.array([a.column(k)[ia].mean() for k in keys])
            xb = np.array([b.column(k)[ib].mean() for k in keys])
            return [fn(xa, xb, label="mean over items")]
        return [fn(a.column(k)[ia], b.column(k)[ib], label=k) for k in keys]
    if axis == "items":
        keys = _aligned(a.items, b.items, "item")
        over = _aligned(a.systems, b.systems, "system")
        ja = [a.systems.index(s) for s in over]
        jb = [b.systems.index(s) for s in over]
        if average:
            xa = np.array([a.row(k)[ja].mean() for k in keys])
            xb = np.array([b.row(k)[jb].mean() for k in keys])
            return [fn(xa, xb, label="mean over systems")]
        return [fn(a.row(k)[ja], b.row(k)[jb], label=k) for k in keys]
    raise ValueError(f"axis must be 'systems' or 'items', got {axis!r}")


def write_correlation_csv(results, path) -> None:
    if not results:
        raise StatsError("nothing to report")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair", "method", "r", "p", "n"])
        for res in results:
            w.writerow([res.label, res.method, f"{res.r:.6f}", f"{res.p:.6g}", res.n])
