"""Physics-guided noise decoupling.

Dark frames are split into a frame-wise part (per-pixel dark shading, linear in ISO, plus a
spatially constant black level error), a band-wise part (zero-mean Gaussian row and column
offsets) and the pixel-wise remainder, which is then high-bit reconstructed into continuous
samples.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from dataclasses import field
from typing import Mapping
from typing import Sequence

import numpy as np
import yaml

from . import rng
from .frames import FrameSet
from .frames import RawFrame
from .frames import ShapeError
from .frames import read_array
from .frames import write_array
from .metrics import gaussian_probplot_r2
from .schemas import pools_schema
from .util import table_interp
from .util import worker_count

logger = logging.getLogger("darkproxy.decouple")

STAGES = ("raw", "frame", "band", "pixel")


class RankError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FrameNoiseModel:
    fpn_k: np.ndarray
    fpn_b: np.ndarray
    ble: dict[int, float]
    fit_residual_rms: float = 0.0
    param_error_std: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.fpn_k.shape != self.fpn_b.shape or self.fpn_k.ndim != 2:
            raise ShapeError(f"FPN maps disagree in shape: {self.fpn_k.shape}, {self.fpn_b.shape}")
        if not self.ble:
            raise ValueError("frame noise model has no calibrated ISO")

    @property
    def shape(self) -> tuple[int, int]:
        return self.fpn_k.shape  # type: ignore[return-value]

    @property
    def isos(self) -> list[int]:
        return sorted(self.ble)

    def black_level_error(self, iso: int) -> float:
        """BLE at ``iso``; uncalibrated ISOs interpolate linearly, clamped at the ends"""
        return table_interp(self.ble, iso)

    def dark_shading(self, iso: int) -> np.ndarray:
        return self.fpn_k * float(iso) + self.fpn_b + self.black_level_error(iso)


@dataclass(frozen=True)
class BandNoiseEntry:
    iso: int
    sigma_row: float
    sigma_col: float
    r2_row: float | None
    r2_col: float | None
    sigma_row_err: float = 0.0
    sigma_col_err: float = 0.0


@dataclass
class BandNoiseModel:
    sigma_row: dict[int, float] = field(default_factory=dict)
    sigma_col: dict[int, float] = field(default_factory=dict)
    r2_row: dict[int, float | None] = field(default_factory=dict)
    r2_col: dict[int, float | None] = field(default_factory=dict)
    param_error_std: dict = field(default_factory=lambda: {"sigma_row": {}, "sigma_col": {}})

    @classmethod
    def from_entries(cls, entries: Sequence[BandNoiseEntry]) -> "BandNoiseModel":
        self = cls()
        for e in entries:
            self.add(e)
        return self

    def add(self, entry: BandNoiseEntry) -> None:
        if entry.sigma_row < 0 or entry.sigma_col < 0:
            raise ValueError("band sigmas must be non-negative")
        self.sigma_row[entry.iso] = entry.sigma_row
        self.sigma_col[entry.iso] = entry.sigma_col
        self.r2_row[entry.iso] = entry.r2_row
        self.r2_col[entry.iso] = entry.r2_col
        self.param_error_std["sigma_row"][entry.iso] = entry.sigma_row_err
        self.param_error_std["sigma_col"][entry.iso] = entry.sigma_col_err

    @property
    def isos(self) -> list[int]:
        return sorted(self.sigma_row)

    def sigmas(self, iso: int) -> tuple[float, float]:
        return table_interp(self.sigma_row, iso), table_interp(self.sigma_col, iso)


@dataclass(frozen=True, eq=False)
class PixelNoiseSamples:
    iso: int
    samples: np.ndarray
    quant_step: float = 0.0

    def __post_init__(self) -> None:
        s = np.asarray(self.samples, dtype=np.float64).ravel()
        if s.size == 0:
            raise ValueError(f"pixel noise pool for ISO {self.iso} is empty")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def std(self) -> float:
        return float(self.samples.std())

    def duplicate_fraction(self) -> float:
        return 1.0 - np.unique(self.samples).size / self.samples.size


def _sorted_sets(dark_sets: Sequence[FrameSet]) -> list[FrameSet]:
    sets = sorted(dark_sets, key=lambda s: s.iso)
    isos = [s.iso for s in sets]
    if len(set(isos)) != len(isos):
        raise ValueError(f"duplicate ISO among dark frame sets: {isos}")
    if len(sets) < 2:
        raise RankError(
            f"frame-wise calibration regresses over ISO and needs at least 2 ISOs, got {isos}"
        )
    shape = sets[0].shape
    for s in sets:
        if s.shape != shape:
            raise ShapeError(f"dark frames at ISO {s.iso} have shape {s.shape}, expected {shape}")
        if len(s) < 2:
            raise ValueError(f"ISO {s.iso}: at least 2 dark frames are required, got {len(s)}")
    return sets


def calibrate_frame_noise(dark_sets: Sequence[FrameSet]) -> FrameNoiseModel:
    """Fit ``mean_iso(x, y) - black = fpn_k(x, y) * iso + fpn_b(x, y) + BLE(iso)``.

    The per-pixel lines are ordinary least squares over the per-ISO temporal means; BLE is the
    spatial mean of what the lines leave behind at each ISO.

    Because the lines are fitted to the same means, the BLE error at one ISO also carries the
    frame-to-frame scatter of every other ISO; ``param_error_std["ble"]`` accounts for that.

    """
    sets = _sorted_sets(dark_sets)
    isos = np.array([s.iso for s in sets], dtype=np.float64)
    means = np.stack([s.stack().mean(axis=0) - s.black_level for s in sets])
    xbar = isos.mean()
    sxx = float(np.sum((isos - xbar) ** 2))
    c = (isos - xbar) / sxx
    fpn_k = np.tensordot(c, means, axes=1)
    fpn_b = means.mean(axis=0) - fpn_k * xbar

    residual = means - (fpn_k[None] * isos[:, None, None] + fpn_b[None])
    ble = {s.iso: float(residual[j].mean()) for j, s in enumerate(sets)}
    detrended = residual - np.array([ble[s.iso] for s in sets])[:, None, None]
    rms = float(np.sqrt(np.mean(detrended**2)))

    # variance of each per-ISO temporal mean, pooled over pixels
    v = np.array([s.stack().var(axis=0, ddof=1).mean() / len(s) for s in sets])
    a = 1.0 / len(sets) - xbar * c
    err_k = float(np.sqrt(np.sum(c**2 * v)))
    err_b = float(np.sqrt(np.sum(a**2 * v)))
    # BLE(iso_j) = sum_i M[j, i] * spatial_mean_i with M = I - H, H the hat matrix of [iso, 1]
    x = np.column_stack([isos, np.ones_like(isos)])
    m = np.eye(len(sets)) - x @ np.linalg.solve(x.T @ x, x.T)
    w = np.array([s.stack().mean(axis=(1, 2)).var(ddof=1) / len(s) for s in sets])
    err_ble = {s.iso: float(np.sqrt(np.sum(m[j] ** 2 * w))) for j, s in enumerate(sets)}

    for s in sets:
        logger.debug(f"ISO {s.iso}: BLE={ble[s.iso]:+.4f} DN (+/- {err_ble[s.iso]:.4f})")
    return FrameNoiseModel(
        fpn_k=fpn_k,
        fpn_b=fpn_b,
        ble=ble,
        fit_residual_rms=rms,
        param_error_std={"fpn_k": err_k, "fpn_b": err_b, "ble": err_ble},
    )


def remove_frame_noise(
    frame: RawFrame | np.ndarray, model: FrameNoiseModel, iso: int | None = None
) -> np.ndarray:
    """Residual ``frame - black_level - dark_shading(iso)`` as a float64 field.

    A bare array is taken to be already black-level subtracted and needs ``iso``.

    """
    if isinstance(frame, RawFrame):
        data = frame.as_float() - frame.black_level
        iso = frame.iso if iso is None else iso
    else:
        if iso is None:
            raise ValueError("iso is required when removing frame noise from a bare array")
        data = np.asarray(frame, dtype=np.float64)
    if data.shape != model.shape:
        raise ShapeError(f"frame shape {data.shape} does not match the FPN maps {model.shape}")
    return data - model.dark_shading(iso)


def remove_band_noise(frame: RawFrame | np.ndarray) -> np.ndarray:
    """Subtract row and column means, adding the grand mean back once"""
    x = frame.as_float() if isinstance(frame, RawFrame) else np.asarray(frame, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D field, got shape {x.shape}")
    row = x.mean(axis=1, keepdims=True)
    col = x.mean(axis=0, keepdims=True)
    return x - row - col + x.mean()


def calibrate_band_noise(residuals: Sequence[np.ndarray] | np.ndarray, iso: int) -> BandNoiseEntry:
    """Estimate the row and column Gaussians from frame-noise-free residuals of one ISO.

    With two or more frames each pixel is first centered on its temporal mean, which removes
    whatever dark shading the frame-wise model missed; all variances are rescaled by
    ``n / (n - 1)`` for that.  The variance of row means leaks ``sigma_pixel**2 / width`` of
    pixel-wise noise, which is subtracted (floored at zero).

    """
    r = np.asarray(residuals, dtype=np.float64)
    if r.ndim == 2:
        r = r[None]
    n, h, w = r.shape
    if h < 2:
        raise ValueError("single-row frames: cannot estimate row noise")
    if w < 2:
        raise ValueError("single-column frames: cannot estimate column noise")
    scale = 1.0
    if n >= 2:
        r = r - r.mean(axis=0, keepdims=True)
        scale = n / (n - 1)

    pix = np.array([remove_band_noise(f) for f in r])
    var_pix = scale * float(np.mean(pix**2)) / ((1.0 - 1.0 / w) * (1.0 - 1.0 / h))

    row_means = r.mean(axis=2)
    col_means = r.mean(axis=1)
    var_row_means = scale * float(row_means.var(axis=1, ddof=1).mean())
    var_col_means = scale * float(col_means.var(axis=1, ddof=1).mean())
    var_row = max(var_row_means - var_pix / w, 0.0)
    var_col = max(var_col_means - var_pix / h, 0.0)

    dof_row = max(n - 1, 1) * (h - 1)
    dof_col = max(n - 1, 1) * (w - 1)
    row_err = _sigma_error(var_row, var_row_means, dof_row)
    col_err = _sigma_error(var_col, var_col_means, dof_col)

    centered_rows = (row_means - row_means.mean(axis=1, keepdims=True)).ravel()
    centered_cols = (col_means - col_means.mean(axis=1, keepdims=True)).ravel()
    entry = BandNoiseEntry(
        iso=int(iso),
        sigma_row=math.sqrt(var_row),
        sigma_col=math.sqrt(var_col),
        r2_row=_probplot(centered_rows) if var_row > 0 else None,
        r2_col=_probplot(centered_cols) if var_col > 0 else None,
        sigma_row_err=row_err,
        sigma_col_err=col_err,
    )
    logger.debug(
        f"ISO {iso}: sigma_row={entry.sigma_row:.4f} (R2={entry.r2_row}), "
        f"sigma_col={entry.sigma_col:.4f} (R2={entry.r2_col})"
    )
    return entry


def _sigma_error(var: float, var_means: float, dof: int) -> float:
    se_var = var_means * math.sqrt(2.0 / dof)
    if var > se_var:
        return se_var / (2.0 * math.sqrt(var))
    return math.sqrt(se_var)


def _probplot(x: np.ndarray) -> float | None:
    if x.size < 30:
        return None
    return gaussian_probplot_r2(x)


def high_bit_reconstruct(
    samples: np.ndarray,
    quant_step: float,
    seed: int,
    iso: int = 0,
    dither: bool = True,
    min_occupancy: int = 100,
) -> PixelNoiseSamples:
    """Replace each sample's sub-LSB position by a draw from a smoothed prior.

    The prior is the histogram of ``samples`` over cells of width ``quant_step`` centered on the
    lattice, interpolated linearly between cell centers.  A sample ``x`` is redrawn from that
    prior restricted to ``[x - q/2, x + q/2]``; when the cell holding ``x`` has fewer than
    ``min_occupancy`` members the draw is uniform on the same interval.  The pool is then shifted
    back to its original mean and every sample is kept within one ``quant_step`` of its input.

    """
    if not quant_step > 0:
        raise ValueError(f"quant_step must be positive, got {quant_step}")
    x = np.asarray(samples, dtype=np.float64).ravel()
    if not dither:
        return PixelNoiseSamples(iso=iso, samples=x.copy(), quant_step=quant_step)
    q = float(quant_step)
    cell = np.floor(x / q + 0.5).astype(np.int64)
    lo_cell = int(cell.min()) - 1
    counts = np.bincount(cell - lo_cell, minlength=int(cell.max()) - lo_cell + 2)
    knots = (lo_cell + np.arange(counts.size)) * q
    density = counts / (x.size * q)

    def prior(t: np.ndarray) -> np.ndarray:
        return np.interp(t, knots, density, left=0.0, right=0.0)

    gen = rng.stream(seed, iso, "highbit")
    u_piece = gen.random(x.size)
    u_mass = gen.random(x.size)

    lo = x - 0.5 * q
    hi = x + 0.5 * q
    mid = cell * q
    f_lo, f_mid, f_hi = prior(lo), prior(mid), prior(hi)
    len1 = mid - lo
    len2 = hi - mid
    m1 = 0.5 * (f_lo + f_mid) * len1
    m2 = 0.5 * (f_mid + f_hi) * len2
    total = m1 + m2

    first = u_piece * total < m1
    f0 = np.where(first, f_lo, f_mid)
    f1 = np.where(first, f_mid, f_hi)
    start = np.where(first, lo, mid)
    length = np.where(first, len1, len2)
    mass = np.where(first, m1, m2)
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(length > 0, (f1 - f0) / length, 0.0)
        t = u_mass * mass
        disc = np.sqrt(np.maximum(f0 * f0 + 2.0 * slope * t, 0.0))
        denom = f0 + disc
        offset = np.where(denom > 0, 2.0 * t / denom, 0.0)
    offset = np.clip(offset, 0.0, length)
    smoothed = start + offset

    uniform = lo + u_mass * q
    sparse = (counts[cell - lo_cell] < min_occupancy) | ~(total > 0)
    out = np.where(sparse, uniform, smoothed)

    out -= out.mean() - x.mean()
    out = np.clip(out, x - q, x + q)
    logger.debug(
        f"ISO {iso}: reconstructed {x.size} samples, {int(sparse.sum())} by uniform dither"
    )
    return PixelNoiseSamples(iso=iso, samples=out, quant_step=q)


def restore_pixel_variance(banded: np.ndarray) -> np.ndarray:
    """Center each pixel on its temporal mean and rescale to the pixel-wise variance.

    The frame-wise lines are fitted to the same frames, so part of every pixel's temporal mean
    survives frame noise removal; centering takes it out.  Centering over ``n`` frames keeps
    ``1 - 1/n`` of the pixel-wise variance and removing row and column means keeps
    ``(1 - 1/h) * (1 - 1/w)``; both are divided out.  A single frame is not centered.

    """
    x = np.asarray(banded, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    n, h, w = x.shape
    keep = (1.0 - 1.0 / h) * (1.0 - 1.0 / w)
    if n > 1:
        x = x - x.mean(axis=0)
        keep *= 1.0 - 1.0 / n
    return x / math.sqrt(keep)


def _decouple_one(
    dark_set: FrameSet,
    frame_model: FrameNoiseModel,
    seed: int,
    quant_step: float,
    min_occupancy: int,
    dither: bool,
) -> tuple[PixelNoiseSamples, dict[str, float]]:
    raw = dark_set.stack() - dark_set.black_level
    framed = np.stack([remove_frame_noise(f, frame_model, dark_set.iso) for f in raw])
    banded = np.stack([remove_band_noise(f) for f in framed])
    pool = high_bit_reconstruct(
        restore_pixel_variance(banded).ravel(),
        quant_step,
        seed,
        iso=dark_set.iso,
        dither=dither,
        min_occupancy=min_occupancy,
    )
    trace = {
        "raw": float(raw.std()),
        "frame": float(framed.std()),
        "band": float(banded.std()),
        "pixel": pool.std,
    }
    logger.debug(f"ISO {dark_set.iso}: std by stage {trace}")
    return pool, trace


def decouple(
    dark_sets: Sequence[FrameSet],
    frame_model: FrameNoiseModel,
    band_model: BandNoiseModel | None,
    seed: int,
    quant_step: float = 1.0,
    min_occupancy: int = 100,
    dither: bool = True,
    threads: int = 1,
    trace: bool = False,
) -> dict[int, PixelNoiseSamples] | tuple[dict[int, PixelNoiseSamples], dict[int, dict]]:
    """Strip frame-wise and band-wise noise and pool the pixel-wise remainder per ISO.

    ``band_model`` is not needed to remove band noise (row and column means are measured per
    frame) but, when given, must cover every ISO being decoupled.  Before pooling, each pixel is
    centered on its temporal mean (see ``restore_pixel_variance``).  With ``trace=True`` the
    standard deviation after each stage is returned as well; ``"band"`` is measured before the
    centering and ``"pixel"`` on the finished pool.

    """
    for s in dark_sets:
        if s.shape != frame_model.shape:
            raise ShapeError(f"ISO {s.iso}: frame shape {s.shape} != model {frame_model.shape}")
        if band_model is not None and s.iso not in band_model.sigma_row:
            raise ValueError(f"ISO {s.iso} is not covered by the band noise model")

    def job(s: FrameSet):
        return _decouple_one(s, frame_model, seed, quant_step, min_occupancy, dither)

    with ThreadPoolExecutor(max_workers=worker_count(threads)) as ex:
        results = list(ex.map(job, dark_sets))
    pools = {s.iso: r[0] for s, r in zip(dark_sets, results)}
    if trace:
        return pools, {s.iso: r[1] for s, r in zip(dark_sets, results)}
    return pools


def calibrate_system_gain(
    flat_sets: dict[int, Sequence[tuple[float, FrameSet]]],
) -> dict[int, float]:
    """Photon-transfer estimate of K per ISO.

    For every irradiance level the temporal variance is taken from frame pairs
    (``var(f1 - f2) / 2``, which cancels fixed pattern) and plotted against the mean signal; K is
    the least-squares slope.

    """
    gains: dict[int, float] = {}
    for iso, levels in sorted(flat_sets.items()):
        if len(levels) < 2:
            raise RankError(f"ISO {iso}: photon transfer needs at least 2 irradiance levels")
        means, variances = [], []
        for _, frame_set in levels:
            if len(frame_set) < 2:
                raise ValueError(f"ISO {iso}: each irradiance level needs at least 2 frames")
            stack = frame_set.stack() - frame_set.black_level
            pair_vars = [
                float(np.var(stack[i] - stack[i + 1]) / 2.0) for i in range(0, len(stack) - 1, 2)
            ]
            means.append(float(stack.mean()))
            variances.append(float(np.mean(pair_vars)))
        mean_arr = np.asarray(means)
        if np.ptp(mean_arr) == 0:
            raise RankError(f"ISO {iso}: irradiance levels do not differ in mean signal")
        slope, intercept = np.polyfit(mean_arr, np.asarray(variances), 1)
        if not slope > 0:
            raise ValueError(f"ISO {iso}: photon transfer slope is not positive ({slope})")
        logger.debug(f"ISO {iso}: K={slope:.5f} DN/e-, read variance {intercept:.4f} DN^2")
        gains[iso] = float(slope)
    return gains


def save_pools(pools: Mapping[int, PixelNoiseSamples], directory: str) -> str:
    """Write one f64 container per ISO plus ``pools.yaml``"""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for iso in sorted(pools):
        pool = pools[iso]
        name = f"iso_{iso}.pnnf"
        write_array(pool.samples, os.path.join(directory, name), dtype="<f8")
        entries.append(
            {"iso": int(iso), "path": name, "count": len(pool), "quant_step": float(pool.quant_step)}
        )
    path = os.path.join(directory, "pools.yaml")
    with open(path, "w") as fh:
        yaml.safe_dump({"pools": entries}, fh, default_flow_style=False, sort_keys=True)
    return path


def load_pools(directory: str) -> dict[int, PixelNoiseSamples]:
    with open(os.path.join(directory, "pools.yaml")) as fh:
        record = pools_schema.validate(yaml.safe_load(fh))
    pools: dict[int, PixelNoiseSamples] = {}
    for entry in record["pools"]:
        samples = read_array(os.path.join(directory, entry["path"])).ravel()
        if samples.size != entry["count"]:
            raise ValueError(
                f"{directory}: pool for ISO {entry['iso']} holds {samples.size} samples, "
                f"manifest says {entry['count']}"
            )
        pools[entry["iso"]] = PixelNoiseSamples(
            iso=entry["iso"], samples=samples, quant_step=entry["quant_step"]
        )
    return pools
