"""Differentiable distribution loss.

Both loss terms compare a generated sample set against fixed target samples through
piecewise-linear interpolants of their empirical CDFs:

* ``L_cdf``: sum over value queries ``q_k`` of ``|F_out(q_k) - F_real(q_k)|``
* ``L_quantile``: sum over probability queries ``p_k`` of ``|F_out^-1(p_k) - F_real^-1(p_k)|``

Sorting contributes a fixed permutation, so every query's gradient lands on at most the two
sorted samples that bracket it.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import rng

logger = logging.getLogger("darkproxy.loss")


@dataclass(frozen=True, eq=False)
class SortedSamples:
    values: np.ndarray
    permutation: np.ndarray

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "SortedSamples":
        x = np.asarray(samples, dtype=np.float64).ravel()
        if x.size == 0:
            raise ValueError("cannot sort an empty sample set")
        perm = np.argsort(x, kind="stable")
        return cls(values=x[perm], permutation=perm)

    @property
    def n(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.n

    def unsort(self, sorted_values: np.ndarray) -> np.ndarray:
        """Scatter values given in sorted order back to original sample order"""
        out = np.empty_like(sorted_values)
        out[self.permutation] = sorted_values
        return out


@dataclass(frozen=True, eq=False)
class QuerySet:
    cdf_queries: np.ndarray
    quantile_queries: np.ndarray

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.cdf_queries)):
            raise ValueError("cdf queries must be finite")
        p = self.quantile_queries
        if np.any(p <= 0) or np.any(p >= 1):
            raise ValueError("quantile queries must lie strictly inside (0, 1)")

    @property
    def count(self) -> int:
        return int(self.cdf_queries.size)


@dataclass
class LossResult:
    total: float
    cdf: float
    quantile: float
    grad: np.ndarray


def _ecdf_terms(v: np.ndarray, q: np.ndarray):
    n = v.size
    j = np.searchsorted(v, q, side="right")
    inside = (j > 0) & (j < n)
    jc = np.clip(j, 1, max(n - 1, 1))
    upper = v[np.minimum(jc, n - 1)]
    lower = v[jc - 1]
    d = np.where(inside, upper - lower, 1.0)
    p = np.where(inside, (jc + 1 - (upper - q) / d) / n, np.where(j >= n, 1.0, 0.0))
    d2 = n * d * d
    dp_upper = np.where(inside, -(q - lower) / d2, 0.0)
    dp_lower = np.where(inside, -(upper - q) / d2, 0.0)
    return p, jc, dp_upper, dp_lower


def _quantile_terms(v: np.ndarray, p: np.ndarray):
    n = v.size
    x = p * n
    i = np.clip(np.floor(x).astype(np.int64), 1, n)
    frac = np.clip(x - i, 0.0, 1.0)
    upper_idx = np.minimum(i, n - 1)
    lower = v[i - 1]
    value = lower + frac * (v[upper_idx] - lower)
    return value, i - 1, upper_idx, 1.0 - frac, frac


def _scalar_or_array(value: np.ndarray, like) -> np.ndarray | float:
    return float(value) if np.ndim(like) == 0 else value


def ecdf_query(s: SortedSamples, q: np.ndarray | float) -> np.ndarray | float:
    """Interpolated empirical CDF: 0 below the minimum, 1 at or above the maximum"""
    p, *_ = _ecdf_terms(s.values, np.asarray(q, dtype=np.float64).ravel())
    return _scalar_or_array(p.reshape(np.shape(q)), q)


def quantile_query(s: SortedSamples, p: np.ndarray | float) -> np.ndarray | float:
    """Piecewise-linear inverse of :func:`ecdf_query`, exact at ``i/n``"""
    pa = np.asarray(p, dtype=np.float64).ravel()
    if np.any(pa <= 0) or np.any(pa > 1) or not np.all(np.isfinite(pa)):
        raise ValueError("quantile probabilities must lie in (0, 1]")
    value, *_ = _quantile_terms(s.values, pa)
    return _scalar_or_array(value.reshape(np.shape(p)), p)


def sample_queries(
    count: int,
    seed: int,
    perturb_std: float = 0.05,
    clip: float = 6.0,
    scale: float = 1.0,
    eps: float | None = None,
) -> QuerySet:
    """Sample ``count`` CDF-value and quantile-probability queries.

    Both start from the uniform grid ``u_k = k / (count + 1)`` mapped into standard-normal space,
    get Gaussian jitter of ``perturb_std`` and are clipped at ``clip`` standard deviations.  Value
    queries are scaled by ``scale`` (the target sample std); probability queries are mapped back
    through the normal CDF and kept inside ``[eps, 1 - eps]``.

    """
    if count < 2:
        raise ValueError(f"at least 2 queries are required, got {count}")
    if not clip > 0:
        raise ValueError(f"clip must be positive, got {clip}")
    if not scale > 0:
        raise ValueError(f"query scale must be positive, got {scale}")
    if perturb_std < 0:
        raise ValueError(f"perturb_std must be non-negative, got {perturb_std}")
    if eps is None:
        eps = 0.5 / (count + 1)
    if not 0 < eps < 0.5:
        raise ValueError(f"eps must lie in (0, 0.5), got {eps}")
    u = np.arange(1, count + 1, dtype=np.float64) / (count + 1)
    z = special.ndtri(u)
    gen = rng.stream(seed, "queries")
    z_cdf = z + perturb_std * gen.standard_normal(count)
    z_quantile = z + perturb_std * gen.standard_normal(count)
    cdf_queries = scale * np.clip(z_cdf, -clip, clip)
    if perturb_std > 0:
        p = special.ndtr(np.clip(z_quantile, -clip, clip))
    else:
        p = u
    quantile_queries = np.clip(p, eps, 1.0 - eps)
    return QuerySet(cdf_queries=cdf_queries, quantile_queries=quantile_queries)


def ddl_loss(
    out: np.ndarray,
    real: SortedSamples,
    qs: QuerySet,
    cdf_weight: float = 1.0,
    quantile_weight: float = 1.0,
) -> LossResult:
    """Loss ``cdf_weight * L_cdf + quantile_weight * L_quantile`` and its gradient w.r.t. ``out``

    The gradient has the shape of ``out``.  Terms at exact kinks of ``|.|`` contribute zero.

    """
    out = np.asarray(out, dtype=np.float64)
    s = SortedSamples.from_samples(out)
    n = s.n
    g = np.zeros(n, dtype=np.float64)

    p_out, j, dp_up, dp_lo = _ecdf_terms(s.values, qs.cdf_queries)
    p_real, *_ = _ecdf_terms(real.values, qs.cdf_queries)
    diff = p_out - p_real
    l_cdf = float(np.sum(np.abs(diff)))
    if cdf_weight:
        sign = cdf_weight * np.sign(diff)
        up = np.minimum(j, n - 1)
        g += np.bincount(up, weights=sign * dp_up, minlength=n)
        g += np.bincount(j - 1, weights=sign * dp_lo, minlength=n)

    q_out, lo_idx, up_idx, w_lo, w_up = _quantile_terms(s.values, qs.quantile_queries)
    q_real, *_ = _quantile_terms(real.values, qs.quantile_queries)
    diff_q = q_out - q_real
    l_quantile = float(np.sum(np.abs(diff_q)))
    if quantile_weight:
        sign = quantile_weight * np.sign(diff_q)
        g += np.bincount(lo_idx, weights=sign * w_lo, minlength=n)
        g += np.bincount(up_idx, weights=sign * w_up, minlength=n)

    total = cdf_weight * l_cdf + quantile_weight * l_quantile
    grad = s.unsort(g).reshape(out.shape)
    return LossResult(total=float(total), cdf=l_cdf, quantile=l_quantile, grad=grad)


def query_scale(target: SortedSamples) -> float:
    """Standard deviation of the target, the scale value queries are drawn at"""
    sd = float(np.std(target.values))
    return sd if sd > 0 else 1.0
