"""All-pairs mean comparison via Tukey HSD and compact letter display.

The studentized-range distribution has no closed form, so its CDF is
computed here by Gauss-Legendre double integration: the outer integral
runs over the pooled-scale density (a scaled chi), the inner over the
location of the largest group mean.  Unequal group sizes are handled by
the Tukey-Kramer standard error.  Letters come from the insert-and-absorb
construction: start with one column holding every method, split any column
containing a significantly different pair, drop columns that became
subsets, then letter the columns in order of decreasing group mean.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ComputeError, ConfigError, DataError, DegenerateGroupsError

_GAUSS_NODES = 160
_Z_SPAN = 9.0


@lru_cache(maxsize=8)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)

_erf = np.vectorize(math.erf, otypes=[np.float64])


@dataclass
class GroupSample:
    label: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size < 2:
            raise DataError(
                f"group {self.label!r} needs at least 2 observations")
        if not np.all(np.isfinite(self.values)):
            raise DataError(f"non-finite observation in group {self.label!r}")


@dataclass
class PairComparison:
    a: str
    b: str
    mean_diff: float
    q_stat: float
    p_value: float
    significant: bool


@dataclass
class TukeyResult:
    labels: list[str]
    means: dict[str, float]
    sizes: dict[str, int]
    msw: float
    df: int
    alpha: float
    pairs: list[PairComparison]

    def pair(self, a: str, b: str) -> PairComparison:
        for p in self.pairs:
            if {p.a, p.b} == {a, b}:
                return p
        raise KeyError(f"no comparison for ({a}, {b})")

    def to_json(self) -> str:
        return json.dumps({
            "alpha": self.alpha,
            "df": self.df,
            "msw": self.msw,
            "groups": [{"label": l, "mean": self.means[l], "n": self.sizes[l]}
                       for l in self.labels],
            "pairs": [{"a": p.a, "b": p.b, "mean_diff": p.mean_diff,
                       "q": p.q_stat, "p": p.p_value,
                       "significant": p.significant} for p in self.pairs],
        }, separators=(",", ":"))


@dataclass
class CldLabels:
    letters: dict[str, str]

    def to_markdown(self, title: str = "Sharpe") -> str:
        lines = [f"| Method | {title} |", "| --- | --- |"]
        for method, letter in self.letters.items():
            lines.append(f"| {method} | {letter} |")
        return "\n".join(lines) + "\n"


def _phi(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + _erf(z / math.sqrt(2.0)))


def _range_cdf_unit_scale(q: float, k: int, z_nodes, z_weights) -> np.ndarray:
    """P(range of k iid standard normals <= q*s) for each scale s folded
    into q; vectorized over the q values passed in as an array."""
    q = np.asarray(q, dtype=np.float64)
    z = z_nodes[:, None]
    inner = np.exp(-0.5 * z**2) / math.sqrt(2.0 * math.pi) \
        * np.maximum(_phi(z) - _phi(z - q[None, :]), 0.0) ** (k - 1)
    return k * (z_weights @ inner)


def studentized_range_cdf(q: float, k: int, df: int) -> float:
    """F(q; k, df) by Gauss-Legendre quadrature; roughly 1e-6 accurate for
    the k and df this toolkit meets."""
    if k < 2:
        raise ConfigError(f"need at least 2 groups, got k={k}")
    if df < 1:
        raise ConfigError(f"degrees of freedom must be >= 1, got {df}")
    if q <= 0.0:
        return 0.0
    z_x, z_w = _leggauss(_GAUSS_NODES)
    z_nodes = _Z_SPAN * z_x
    z_weights = _Z_SPAN * z_w
    # outer integral over the pooled scale s ~ sqrt(chi2_df / df)
    half = 12.0 / math.sqrt(2.0 * df)
    lo, hi = max(0.0, 1.0 - half), 1.0 + half
    s_x, s_w = _leggauss(_GAUSS_NODES)
    s_nodes = 0.5 * (hi - lo) * s_x + 0.5 * (hi + lo)
    s_weights = 0.5 * (hi - lo) * s_w
    log_norm = (1.0 - 0.5 * df) * math.log(2.0) - math.lgamma(0.5 * df) \
        + df * 0.5 * math.log(df)
    with np.errstate(divide="ignore"):
        log_dens = np.where(
            s_nodes > 0.0,
            log_norm + (df - 1.0) * np.log(np.maximum(s_nodes, 1e-300))
            - 0.5 * df * s_nodes**2,
            -np.inf)
    density = np.exp(log_dens)
    inner = _range_cdf_unit_scale(q * s_nodes, k, z_nodes, z_weights)
    return float(np.clip((s_weights * density * inner).sum(), 0.0, 1.0))


def tukey_hsd(groups: list[GroupSample], alpha: float = 0.05) -> TukeyResult:
    """Pairwise q statistics and studentized-range p-values over >= 2
    groups; the within-group mean square pools all groups with N-k df."""
    if len(groups) < 2:
        raise DataError("Tukey HSD needs at least 2 groups")
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    labels = [g.label for g in groups]
    if len(set(labels)) != len(labels):
        raise DataError("duplicate group labels")
    k = len(groups)
    n_total = sum(g.values.size for g in groups)
    df = n_total - k
    ssw = sum(((g.values - g.values.mean())**2).sum() for g in groups)
    msw = ssw / df
    if msw <= 0.0:
        raise DegenerateGroupsError("degenerate groups: zero pooled variance")
    means = {g.label: float(g.values.mean()) for g in groups}
    sizes = {g.label: int(g.values.size) for g in groups}
    pairs = []
    for i in range(k):
        for j in range(i + 1, k):
            a, b = groups[i], groups[j]
            diff = means[a.label] - means[b.label]
            se = math.sqrt(msw / 2.0 * (1.0 / sizes[a.label]
                                        + 1.0 / sizes[b.label]))
            q = abs(diff) / se
            p = 1.0 - studentized_range_cdf(q, k, df)
            pairs.append(PairComparison(a.label, b.label, float(diff),
                                        float(q), float(p), p < alpha))
    return TukeyResult(labels, means, sizes, float(msw), df, alpha, pairs)


def compact_letter_display(res: TukeyResult) -> CldLabels:
    """Insert-and-absorb letters: methods sharing any letter are not
    significantly different; significantly different methods never share.
    Non-transitive significance patterns simply yield multi-letter labels.
    """
    methods = sorted(res.labels, key=lambda l: -res.means[l])
    columns: list[set[str]] = [set(methods)]
    for pair in res.pairs:
        if not pair.significant:
            continue
        next_columns: list[set[str]] = []
        for col in columns:
            if pair.a in col and pair.b in col:
                next_columns.append(col - {pair.a})
                next_columns.append(col - {pair.b})
            else:
                next_columns.append(col)
        # absorb: drop empty columns, proper subsets, and duplicates
        columns = []
        for col in next_columns:
            if not col or any(col < other for other in next_columns):
                continue
            if col not in columns:
                columns.append(col)
    columns.sort(key=lambda col: min(methods.index(m) for m in col))
    letters = {m: "" for m in methods}
    for i, col in enumerate(columns):
        if i >= 26:
            raise ComputeError("more than 26 letter columns")
        for m in methods:
            if m in col:
                letters[m] += chr(ord("a") + i)
    return CldLabels(letters)
