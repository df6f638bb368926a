"""Noise synthesis from a calibration profile and a trained proxy.

A synthesized raw frame is ``quantize(black + K * Poisson(I) + N_indep)`` with
``N_indep = dark shading + row + column + proxy pixel noise``.  The profile's parameters can be
perturbed within their recorded calibration errors for every synthesized frame.
"""

import logging
import os
from dataclasses import dataclass
from dataclasses import replace
from typing import Any
from typing import Iterable

import numpy as np
import yaml

from . import proxy
from . import rng
from .decouple import BandNoiseModel
from .decouple import FrameNoiseModel
from .frames import RawFrame
from .frames import ShapeError
from .frames import read_array
from .frames import write_array
from .schemas import profile_schema
from .sensor import quantize
from .util import loglog_interp

logger = logging.getLogger("darkproxy.synth")

COMPONENTS = ("shot", "frame", "row", "col", "pixel")


@dataclass(frozen=True, eq=False)
class CalibrationProfile:
    frame: FrameNoiseModel
    band: BandNoiseModel
    gain: dict[int, float]
    bit_depth: int
    black_level: float
    white_level: float

    def __post_init__(self) -> None:
        isos = set(self.frame.isos)
        if set(self.band.isos) != isos or set(self.gain) != isos:
            raise ValueError(
                "calibration profile sub-models cover different ISOs: "
                f"frame {sorted(isos)}, band {self.band.isos}, gain {sorted(self.gain)}"
            )

    @property
    def isos(self) -> list[int]:
        return self.frame.isos

    @property
    def shape(self) -> tuple[int, int]:
        return self.frame.shape

    @property
    def error_std(self) -> dict[str, Any]:
        return {**self.frame.param_error_std, **self.band.param_error_std}

    def system_gain(self, iso: int) -> float:
        """K at ``iso``; uncalibrated ISOs interpolate in log-log space"""
        return loglog_interp(self.gain, iso)

    def dark_shading(self, iso: int) -> np.ndarray:
        return self.frame.dark_shading(iso)


def perturb_profile(profile: CalibrationProfile, seed: int) -> CalibrationProfile:
    """Draw one perturbed copy of ``profile`` within its recorded error magnitudes.

    FPN maps are perturbed per pixel; BLE and band sigmas once per ISO.  Sigmas are floored at
    zero.  A profile with all-zero errors comes back unchanged.

    """
    err = profile.error_std
    fm = profile.frame
    shape = fm.shape
    fpn_k = fm.fpn_k + rng.stream(seed, "perturb", "fpn_k").normal(0.0, err.get("fpn_k", 0.0), shape)
    fpn_b = fm.fpn_b + rng.stream(seed, "perturb", "fpn_b").normal(0.0, err.get("fpn_b", 0.0), shape)
    ble_err = err.get("ble", {})
    ble = {}
    for iso in sorted(fm.ble):
        delta = rng.stream(seed, "perturb", "ble", iso).normal(0.0, ble_err.get(iso, 0.0))
        ble[iso] = fm.ble[iso] + float(delta)
    frame = replace(fm, fpn_k=fpn_k, fpn_b=fpn_b, ble=ble)

    bm = profile.band
    band = BandNoiseModel(
        r2_row=dict(bm.r2_row),
        r2_col=dict(bm.r2_col),
        param_error_std={k: dict(v) for k, v in bm.param_error_std.items()},
    )
    for name in ("sigma_row", "sigma_col"):
        table = getattr(bm, name)
        errs = bm.param_error_std.get(name, {})
        out = getattr(band, name)
        for iso in sorted(table):
            delta = rng.stream(seed, "perturb", name, iso).normal(0.0, errs.get(iso, 0.0))
            out[iso] = max(table[iso] + float(delta), 0.0)
    return replace(profile, frame=frame, band=band)


def synth_shot(
    clean: np.ndarray, iso: int, profile: CalibrationProfile, seed: int
) -> np.ndarray:
    """``K(iso) * Poisson(clean)`` for an irradiance field in electrons"""
    lam = np.asarray(clean, dtype=np.float64)
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("irradiance must be finite and non-negative")
    return profile.system_gain(iso) * rng.stream(seed, iso, "shot").poisson(lam)


def synth_signal_independent(
    model: proxy.ProxyModel,
    profile: CalibrationProfile,
    iso: int,
    shape: tuple[int, int],
    seed: int,
    perturb: bool = True,
    components: Iterable[str] | None = None,
) -> np.ndarray:
    """Dark shading + row + column + proxy pixel noise, each from its own stream of ``seed``"""
    enabled = set(COMPONENTS if components is None else components)
    if unknown := enabled - set(COMPONENTS):
        raise ValueError(f"unknown noise components: {', '.join(sorted(unknown))}")
    shape = tuple(shape)  # type: ignore[assignment]
    if "frame" in enabled and shape != profile.shape:
        raise ShapeError(f"requested shape {shape} does not match the FPN maps {profile.shape}")
    p = perturb_profile(profile, rng.derive_seed(seed, "perturb")) if perturb else profile
    h, w = shape
    field = np.zeros((h, w), dtype=np.float64)
    if "frame" in enabled:
        field += p.dark_shading(iso)
    sigma_row, sigma_col = p.band.sigmas(iso)
    if "row" in enabled:
        field += rng.stream(seed, iso, "row").normal(0.0, sigma_row, size=(h, 1))
    if "col" in enabled:
        field += rng.stream(seed, iso, "col").normal(0.0, sigma_col, size=(1, w))
    if "pixel" in enabled:
        field += proxy.sample(model, (h, w), iso, rng.derive_seed(seed, "pixel"), interpolate=True)
    return field


def synth_dark_frame(
    model: proxy.ProxyModel,
    profile: CalibrationProfile,
    iso: int,
    seed: int,
    perturb: bool = True,
    components: Iterable[str] | None = None,
) -> RawFrame:
    field = synth_signal_independent(
        model, profile, iso, profile.shape, seed, perturb=perturb, components=components
    )
    return _frame(profile, quantize(profile.black_level + field, profile.bit_depth), iso)


def synth_pair(
    clean: RawFrame,
    ratio: float,
    iso: int,
    model: proxy.ProxyModel,
    profile: CalibrationProfile,
    seed: int,
    perturb: bool = True,
    components: Iterable[str] | None = None,
) -> tuple[RawFrame, RawFrame]:
    """Synthesize a low-light noisy frame from a clean frame ``ratio`` times brighter.

    The clean frame is converted to electrons with the calibrated gain at ``iso``.  Without the
    ``"shot"`` component the signal is the noiseless expectation ``K * I / ratio``.

    """
    if not ratio > 0:
        raise ValueError(f"exposure ratio must be positive, got {ratio}")
    enabled = set(COMPONENTS if components is None else components)
    k = profile.system_gain(iso)
    electrons = np.clip((clean.as_float() - clean.black_level) / k, 0.0, None) / ratio
    if "shot" in enabled:
        signal = synth_shot(electrons, iso, profile, seed)
    else:
        signal = k * electrons
    indep = synth_signal_independent(
        model, profile, iso, clean.shape, seed, perturb=perturb, components=enabled - {"shot"}
    )
    noisy = quantize(profile.black_level + signal + indep, profile.bit_depth)
    return _frame(profile, noisy, iso), clean


def dark_shading_correction(noisy: RawFrame, profile: CalibrationProfile) -> RawFrame:
    """Subtract the calibrated dark shading at the frame's ISO; the black level is kept"""
    if noisy.shape != profile.shape:
        raise ShapeError(f"frame shape {noisy.shape} does not match the FPN maps {profile.shape}")
    return noisy.with_data(noisy.as_float() - profile.dark_shading(noisy.iso))


def _frame(profile: CalibrationProfile, data: np.ndarray, iso: int) -> RawFrame:
    return RawFrame(
        data=data,
        iso=iso,
        black_level=profile.black_level,
        white_level=profile.white_level,
        bit_depth=profile.bit_depth,
    )


def save_profile(profile: CalibrationProfile, directory: str) -> str:
    os.makedirs(directory, exist_ok=True)
    fm, bm = profile.frame, profile.band
    write_array(fm.fpn_k, os.path.join(directory, "fpn_k.pnnf"), dtype="<f8")
    write_array(fm.fpn_b, os.path.join(directory, "fpn_b.pnnf"), dtype="<f8")
    h, w = profile.shape
    err = fm.param_error_std
    record = {
        "isos": profile.isos,
        "height": h,
        "width": w,
        "bit_depth": profile.bit_depth,
        "black_level": float(profile.black_level),
        "white_level": float(profile.white_level),
        "gain": {int(k): float(v) for k, v in profile.gain.items()},
        "frame": {
            "fpn_k": "fpn_k.pnnf",
            "fpn_b": "fpn_b.pnnf",
            "ble": {int(k): float(v) for k, v in fm.ble.items()},
            "fit_residual_rms": float(fm.fit_residual_rms),
            "error_std": {
                "fpn_k": float(err.get("fpn_k", 0.0)),
                "fpn_b": float(err.get("fpn_b", 0.0)),
                "ble": {int(k): float(v) for k, v in err.get("ble", {}).items()},
            },
        },
        "band": {
            "sigma_row": {int(k): float(v) for k, v in bm.sigma_row.items()},
            "sigma_col": {int(k): float(v) for k, v in bm.sigma_col.items()},
            "r2_row": {int(k): _opt(v) for k, v in bm.r2_row.items()},
            "r2_col": {int(k): _opt(v) for k, v in bm.r2_col.items()},
            "error_std": {
                name: {int(k): float(v) for k, v in bm.param_error_std.get(name, {}).items()}
                for name in ("sigma_row", "sigma_col")
            },
        },
    }
    path = os.path.join(directory, "profile.yaml")
    with open(path, "w") as fh:
        yaml.safe_dump(record, fh, default_flow_style=False, sort_keys=True)
    return path


def _opt(value: float | None) -> float | None:
    return None if value is None else float(value)


def load_profile(directory: str) -> CalibrationProfile:
    with open(os.path.join(directory, "profile.yaml")) as fh:
        record = profile_schema.validate(yaml.safe_load(fh))
    fr, br = record["frame"], record["band"]
    fpn_k = read_array(os.path.join(directory, fr["fpn_k"]))
    fpn_b = read_array(os.path.join(directory, fr["fpn_b"]))
    if fpn_k.shape != (record["height"], record["width"]):
        raise ShapeError(f"{directory}: FPN maps have shape {fpn_k.shape}")
    frame = FrameNoiseModel(
        fpn_k=fpn_k,
        fpn_b=fpn_b,
        ble=dict(fr["ble"]),
        fit_residual_rms=fr["fit_residual_rms"],
        param_error_std={
            "fpn_k": fr["error_std"]["fpn_k"],
            "fpn_b": fr["error_std"]["fpn_b"],
            "ble": dict(fr["error_std"]["ble"]),
        },
    )
    band = BandNoiseModel(
        sigma_row=dict(br["sigma_row"]),
        sigma_col=dict(br["sigma_col"]),
        r2_row=dict(br["r2_row"]),
        r2_col=dict(br["r2_col"]),
        param_error_std={k: dict(v) for k, v in br["error_std"].items()},
    )
    return CalibrationProfile(
        frame=frame,
        band=band,
        gain=dict(record["gain"]),
        bit_depth=record["bit_depth"],
        black_level=record["black_level"],
        white_level=record["white_level"],
    )
