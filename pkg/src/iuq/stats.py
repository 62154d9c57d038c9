"""Multi-seed aggregation and paired two-tailed t-tests."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

_EPS = 1e-15
_TINY = 1e-300
_MAX_ITER = 500


class DegenerateTestError(ValueError):
    """The test statistic is undefined; ``mean_delta`` is still available."""

    def __init__(self, message: str, mean_delta: float | None = None, n: int = 0):
        self.mean_delta = mean_delta
        self.n = n
        super().__init__(message)


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    if df <= 0:
        raise ValueError("df must be positive")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    tail = 0.5 * student_t_two_tailed_p(t, df)
    return 1.0 - tail if t > 0 else tail


def student_t_two_tailed_p(t: float, df: float) -> float:
    if df <= 0:
        raise ValueError("df must be positive")
    if math.isinf(t):
        return 0.0
    t2 = t * t
    if t2 < df:
        # df / (df + t^2) rounds toward 1 for small |t|; use the complementary argument
        return 1.0 - betainc(0.5, 0.5 * df, t2 / (df + t2))
    return betainc(0.5 * df, 0.5, df / (df + t2))


@dataclass(frozen=True)
class SeedGroup:
    metric_name: str
    condition_a: str
    condition_b: str
    pairs: tuple[tuple[int, float, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "pairs", tuple((int(s), float(a), float(b)) for s, a, b in self.pairs))
        seeds = [s for s, _, _ in self.pairs]
        if len(set(seeds)) != len(seeds):
            raise ValueError("seeds in a SeedGroup must be unique")


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float
    mean_delta: float
    n: int


def paired_t_test(group: SeedGroup) -> TTestResult:
    """Two-tailed paired t-test on ``a - b`` across seeds."""
    d = [a - b for _, a, b in group.pairs]
    n = len(d)
    if n == 0:
        raise DegenerateTestError("no pairs", None, 0)
    mean = sum(d) / n
    if n < 2:
        raise DegenerateTestError("paired t-test needs at least 2 seeds", mean, n)
    var = sum((x - mean) ** 2 for x in d) / (n - 1)
    if var == 0.0:
        raise DegenerateTestError("all paired differences are identical", mean, n)
    t = mean / math.sqrt(var / n)
    df = n - 1
    return TTestResult(t=t, df=df, p=student_t_two_tailed_p(t, df), mean_delta=mean, n=n)


def aggregate(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation; the std is 0 for a single value."""
    values = [float(v) for v in values]
    if not values:
        raise ValueError("cannot aggregate an empty list")
    n = len(values)
    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0
    return mean, math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1))


def format_table(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    cells = [list(map(str, headers))] + [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def table_csv(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(headers)
    for r in rows:
        w.writerow([_fmt(c) for c in r])
    return buf.getvalue()


def write_table(path_stem: str | Path, headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    path_stem = Path(path_stem)
    path_stem.parent.mkdir(parents=True, exist_ok=True)
    text = format_table(headers, rows)
    path_stem.with_suffix(".csv").write_text(table_csv(headers, rows))
    path_stem.with_suffix(".txt").write_text(text)
    return text


def _fmt(c: object) -> str:
    if c is None:
        return "---"
    if isinstance(c, float):
        if math.isnan(c):
            return "nan"
        return f"{c:.4g}" if abs(c) < 1e-3 and c != 0 else f"{c:.4f}"
    return str(c)
