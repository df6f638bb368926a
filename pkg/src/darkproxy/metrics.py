"""Distribution-fidelity metrics: binned KL divergence, Q-Q and probability-plot R^2."""

import csv
import logging
import math
import os
from dataclasses import dataclass
from dataclasses import field

import numpy as np
from scipy import stats

from . import rng
from .distributions import fit_baseline

logger = logging.getLogger("darkproxy.metrics")

MAX_BINS = 100_000


@dataclass
class DistributionReport:
    kld: float
    qq_r2: float | None
    probplot_r2: float | None
    n_a: int
    n_b: int
    bin_centers: np.ndarray = field(repr=False)
    histogram_a: np.ndarray = field(repr=False)
    histogram_b: np.ndarray = field(repr=False)
    qq_u: np.ndarray = field(repr=False)
    qq_a: np.ndarray = field(repr=False)
    qq_b: np.ndarray = field(repr=False)

    def summary(self) -> dict[str, float | int | None]:
        return {
            "kld": self.kld,
            "qq_r2": self.qq_r2,
            "probplot_r2": self.probplot_r2,
            "n_a": self.n_a,
            "n_b": self.n_b,
        }


def _flat(samples: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError(f"{name}: no samples")
    return x


def default_bin_width(reference: np.ndarray, *others: np.ndarray) -> float:
    """0.1 standard deviations of the reference samples.

    The width grows when needed so that the range of ``reference`` and ``others`` together is
    covered by at most ``MAX_BINS`` bins.

    """
    s = float(np.std(reference))
    width = 0.1 * s if s > 0 else 1.0
    lo = min(float(np.min(x)) for x in (reference, *others))
    hi = max(float(np.max(x)) for x in (reference, *others))
    return max(width, (hi - lo) / (MAX_BINS - 1))


def histograms(
    a: np.ndarray, b: np.ndarray, bin_width: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Smoothed probability histograms of ``a`` and ``b`` over shared bins.

    Every bin receives an additive ``1/(10 n)`` before normalisation, so both histograms are
    strictly positive and sum to 1.

    """
    if not bin_width > 0:
        raise ValueError(f"bin width must be positive, got {bin_width}")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    nbins = int(math.floor((hi - lo) / bin_width)) + 1
    if nbins > MAX_BINS:
        raise ValueError(
            f"bin width {bin_width:g} needs {nbins} bins to cover [{lo:g}, {hi:g}]; "
            f"at most {MAX_BINS} are allowed"
        )
    edges = lo + bin_width * np.arange(nbins + 1)
    ha = np.histogram(a, bins=edges)[0].astype(np.float64)
    hb = np.histogram(b, bins=edges)[0].astype(np.float64)
    ha = ha / a.size + 1.0 / (10 * a.size)
    hb = hb / b.size + 1.0 / (10 * b.size)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, ha / ha.sum(), hb / hb.sum()


def kld(samples_a: np.ndarray, samples_b: np.ndarray, bin_width: float | None = None) -> float:
    """Discrete KL(hist_a || hist_b); ``bin_width`` defaults to 0.1 std of ``samples_b``"""
    a = _flat(samples_a, "samples_a")
    b = _flat(samples_b, "samples_b")
    if bin_width is None:
        bin_width = default_bin_width(b, a)
    _, pa, pb = histograms(a, b, bin_width)
    return _kl(pa, pb)


def _kl(pa: np.ndarray, pb: np.ndarray) -> float:
    return max(0.0, float(np.sum(pa * np.log(pa / pb))))


def quantile_grid(n_quantiles: int) -> np.ndarray:
    return np.arange(1, n_quantiles + 1, dtype=np.float64) / (n_quantiles + 1)


def _r2(x: np.ndarray, y: np.ndarray) -> float | None:
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    r = np.corrcoef(x, y)[0, 1]
    if not np.isfinite(r):
        return None
    return float(min(r * r, 1.0))


def qq_r2(samples_a: np.ndarray, samples_b: np.ndarray, n_quantiles: int = 1000) -> float | None:
    """R^2 of the least-squares line through paired quantiles; ``None`` when degenerate"""
    if n_quantiles < 10:
        raise ValueError(f"n_quantiles must be >= 10, got {n_quantiles}")
    u = quantile_grid(n_quantiles)
    qa = np.quantile(_flat(samples_a, "samples_a"), u)
    qb = np.quantile(_flat(samples_b, "samples_b"), u)
    return _r2(qa, qb)


def gaussian_probplot_r2(samples: np.ndarray) -> float | None:
    """R^2 of ordered samples against standard-normal order statistic medians"""
    x = _flat(samples, "samples")
    if x.size < 30:
        raise ValueError(f"a probability plot needs at least 30 samples, got {x.size}")
    if np.ptp(x) == 0:
        return None
    (_, _), (_, _, r) = stats.probplot(x, dist="norm", fit=True)
    if not np.isfinite(r):
        return None
    return float(min(r * r, 1.0))


def compare(
    samples_a: np.ndarray,
    samples_b: np.ndarray,
    bin_width: float | None = None,
    n_quantiles: int = 1000,
) -> DistributionReport:
    """Compare ``samples_a`` (e.g. synthetic) against reference ``samples_b``"""
    a = _flat(samples_a, "samples_a")
    b = _flat(samples_b, "samples_b")
    if bin_width is None:
        bin_width = default_bin_width(b, a)
    centers, pa, pb = histograms(a, b, bin_width)
    u = quantile_grid(n_quantiles)
    qa = np.quantile(a, u)
    qb = np.quantile(b, u)
    probplot = gaussian_probplot_r2(a) if a.size >= 30 else None
    report = DistributionReport(
        kld=_kl(pa, pb),
        qq_r2=_r2(qa, qb),
        probplot_r2=probplot,
        n_a=int(a.size),
        n_b=int(b.size),
        bin_centers=centers,
        histogram_a=pa,
        histogram_b=pb,
        qq_u=u,
        qq_a=qa,
        qq_b=qb,
    )
    logger.debug(f"kld={report.kld:.5f} qq_r2={report.qq_r2} n_a={a.size} n_b={b.size}")
    return report


def _fmt(value: float | int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def emit_report(report: DistributionReport, path: str) -> list[str]:
    """Write ``hist.csv``, ``qq.csv`` and ``summary.csv`` into directory ``path``"""
    os.makedirs(path, exist_ok=True)
    written = []
    hist = os.path.join(path, "hist.csv")
    with open(hist, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_center", "density_a", "density_b"])
        for row in zip(report.bin_centers, report.histogram_a, report.histogram_b):
            writer.writerow([_fmt(v) for v in row])
    written.append(hist)
    qq = os.path.join(path, "qq.csv")
    with open(qq, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "quantile_a", "quantile_b"])
        for row in zip(report.qq_u, report.qq_a, report.qq_b):
            writer.writerow([_fmt(v) for v in row])
    written.append(qq)
    summary = os.path.join(path, "summary.csv")
    with open(summary, "w", newline="") as fh:
        writer = csv.writer(fh)
        record = report.summary()
        writer.writerow(list(record))
        writer.writerow([_fmt(v) for v in record.values()])
    written.append(summary)
    return written


def read_summary(path: str) -> dict[str, float | int | None]:
    with open(os.path.join(path, "summary.csv"), newline="") as fh:
        row = next(csv.DictReader(fh))
    out: dict[str, float | int | None] = {}
    for key, value in row.items():
        if value == "":
            out[key] = None
        elif key in ("n_a", "n_b"):
            out[key] = int(value)
        else:
            out[key] = float(value)
    return out


def baseline_reports(
    target: np.ndarray,
    families: tuple[str, ...] = ("gaussian", "tukey_lambda"),
    seed: int = 0,
    n_quantiles: int = 1000,
    bin_width: float | None = None,
) -> dict[str, DistributionReport]:
    """Fit each baseline family to ``target`` and compare draws from the fit against it"""
    x = _flat(target, "target")
    reports: dict[str, DistributionReport] = {}
    for family in families:
        dist = fit_baseline(x, family)
        draws = dist.sample(rng.stream(seed, "baseline", family), x.size)
        reports[family] = compare(draws, x, bin_width=bin_width, n_quantiles=n_quantiles)
        logger.debug(f"{family} baseline: {dist!r}, qq_r2={reports[family].qq_r2}")
    return reports
