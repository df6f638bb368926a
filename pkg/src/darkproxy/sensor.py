"""Ground-truth virtual sensor.

A :class:`GroundTruthSensor` knows every parameter of the signal-independent noise model
(dark shading maps, black level error, row/column band sigmas and the exact pixel-wise
distribution per ISO) and renders dark and flat frames from them.  It is the oracle the
calibration, training and synthesis stages are checked against.
"""

import logging
import os
from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Iterable

import numpy as np
import yaml

from . import rng
from .distributions import PixelDistribution
from .distributions import get_distribution
from .distributions import read_noise_mixture
from .frames import RawFrame
from .frames import read_array
from .frames import write_array
from .schemas import sensor_record_schema
from .schemas import sensor_schema

logger = logging.getLogger("darkproxy.sensor")

COMPONENTS = ("frame", "row", "col", "pixel")


class UnknownISOError(ValueError):
    pass


def default_sensor_spec() -> dict[str, Any]:
    """Parameters of the default 128x128, 14-bit virtual sensor"""
    isos = [800, 1600, 3200, 6400]
    gain_slope = 1.0 / 1000.0
    spec: dict[str, Any] = {
        "height": 128,
        "width": 128,
        "bit_depth": 14,
        "black_level": 512.0,
        "gain_slope": gain_slope,
        "isos": isos,
        "fpn_k_std": 5e-4,
        "fpn_b_std": 2.0,
        "fpn_b_col_std": 0.5,
        "ble": {800: 0.2, 1600: -0.3, 3200: 0.5, 6400: -0.8},
        "read_noise": {"pre": 1.5, "post": 1.0, "tail_weight": 0.05, "tail_scale": 5.0},
        "sigma_row": {},
        "sigma_col": {},
    }
    for iso in isos:
        main = np.hypot(gain_slope * iso * 1.5, 1.0)
        spec["sigma_row"][iso] = round(0.2 * main, 6)
        spec["sigma_col"][iso] = round(0.12 * main, 6)
    return spec


@dataclass(frozen=True, eq=False)
class GroundTruthSensor:
    height: int
    width: int
    bit_depth: int
    black_level: float
    white_level: float
    gain_per_iso: dict[int, float]
    fpn_k_true: np.ndarray
    fpn_b_true: np.ndarray
    ble_true: dict[int, float]
    sigma_row_true: dict[int, float]
    sigma_col_true: dict[int, float]
    pixel_dist_true: dict[int, PixelDistribution]
    seed: int = 0
    spec: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("fpn_k_true", "fpn_b_true"):
            a = np.array(getattr(self, name), dtype=np.float64, copy=True)
            if a.shape != (self.height, self.width):
                raise ValueError(f"{name} has shape {a.shape}, expected {self.shape}")
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        for name in ("sigma_row_true", "sigma_col_true"):
            if any(s < 0 for s in getattr(self, name).values()):
                raise ValueError(f"{name}: sigmas must be non-negative")
        for iso, dist in self.pixel_dist_true.items():
            if not np.isfinite(dist.variance):
                raise ValueError(f"pixel distribution at ISO {iso} has infinite variance")

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def isos(self) -> list[int]:
        return sorted(self.gain_per_iso)

    @property
    def max_code(self) -> int:
        return 2**self.bit_depth - 1

    def check_iso(self, iso: int) -> int:
        if iso not in self.gain_per_iso:
            raise UnknownISOError(f"ISO {iso} is not one of the sensor ISOs {self.isos}")
        return int(iso)

    def gain(self, iso: int) -> float:
        return self.gain_per_iso[self.check_iso(iso)]

    def dark_shading(self, iso: int) -> np.ndarray:
        """fpn_k * iso + fpn_b + BLE(iso), in DN above the black level"""
        iso = self.check_iso(iso)
        return self.fpn_k_true * float(iso) + self.fpn_b_true + self.ble_true[iso]

    def pixel_std(self, iso: int) -> float:
        return self.pixel_dist_true[self.check_iso(iso)].std

    def total_std(self, iso: int) -> float:
        """Temporal standard deviation of one pixel (all temporal components)"""
        iso = self.check_iso(iso)
        return float(
            np.sqrt(
                self.pixel_dist_true[iso].variance
                + self.sigma_row_true[iso] ** 2
                + self.sigma_col_true[iso] ** 2
            )
        )

    def frame(self, data: np.ndarray, iso: int) -> RawFrame:
        return RawFrame(
            data=data,
            iso=iso,
            black_level=self.black_level,
            white_level=self.white_level,
            bit_depth=self.bit_depth,
        )


def build_sensor(spec: dict[str, Any] | None, seed: int) -> GroundTruthSensor:
    """Build a ground-truth sensor from a parameter record.

    FPN maps are drawn from the ``"fpn_k"``, ``"fpn_b"`` and ``"fpn_b_col"`` streams of
    ``seed``.  The BLE table is stored in canonical form: its least-squares line over the
    sensor ISOs is moved into the FPN maps, so that ``ble_true`` holds only the part of the
    black level error that no per-pixel line over ISO can represent.  The dark shading at every
    ISO is unchanged by this.

    """
    spec = sensor_schema.validate(dict(spec or default_sensor_spec()))
    isos = sorted(set(spec["isos"]))
    if len(isos) < 2:
        raise ValueError(f"a sensor needs at least 2 ISOs, got {isos}")
    height, width = spec["height"], spec["width"]
    bit_depth = spec["bit_depth"]
    black_level = float(spec["black_level"])
    white_level = float(spec.get("white_level", 2**bit_depth - 1))

    gain = {iso: spec["gain_slope"] * iso for iso in isos}

    fpn_k = rng.stream(seed, "fpn_k").normal(0.0, spec["fpn_k_std"], size=(height, width))
    fpn_b = rng.stream(seed, "fpn_b").normal(0.0, spec["fpn_b_std"], size=(height, width))
    if spec["fpn_b_col_std"] > 0:
        cols = rng.stream(seed, "fpn_b_col").normal(0.0, spec["fpn_b_col_std"], size=(1, width))
        fpn_b = fpn_b + cols

    ble_table = {iso: float(spec["ble"].get(iso, 0.0)) for iso in isos}
    x = np.asarray(isos, dtype=float)
    y = np.asarray([ble_table[iso] for iso in isos])
    slope, intercept = np.polyfit(x, y, 1)
    fpn_k = fpn_k + slope
    fpn_b = fpn_b + intercept
    ble = {iso: float(ble_table[iso] - (slope * iso + intercept)) for iso in isos}

    rn = spec["read_noise"]
    pixel: dict[int, PixelDistribution] = {}
    for iso in isos:
        if iso in spec["pixel"]:
            pixel[iso] = get_distribution(spec["pixel"][iso])
        else:
            pixel[iso] = read_noise_mixture(
                gain[iso], rn["pre"], rn["post"], rn["tail_weight"], rn["tail_scale"]
            )

    sensor = GroundTruthSensor(
        height=height,
        width=width,
        bit_depth=bit_depth,
        black_level=black_level,
        white_level=white_level,
        gain_per_iso=gain,
        fpn_k_true=fpn_k,
        fpn_b_true=fpn_b,
        ble_true=ble,
        sigma_row_true={iso: float(spec["sigma_row"].get(iso, 0.0)) for iso in isos},
        sigma_col_true={iso: float(spec["sigma_col"].get(iso, 0.0)) for iso in isos},
        pixel_dist_true=pixel,
        seed=seed,
        spec=spec,
    )
    logger.debug(f"built {height}x{width} sensor at ISOs {isos} from seed {seed}")
    return sensor


def quantize(values: np.ndarray, bit_depth: int) -> np.ndarray:
    """Round half to even, then clip to the ADC range"""
    return np.clip(np.rint(values), 0, 2**bit_depth - 1)


def render_dark_field(
    sensor: GroundTruthSensor,
    iso: int,
    seed: int,
    components: Iterable[str] | None = None,
) -> np.ndarray:
    """Pre-quantization signal-independent noise field (DN above the black level).

    Each component draws from its own stream of ``seed`` so a field rendered with a subset of
    ``components`` is exactly the corresponding part of the full field.

    """
    iso = sensor.check_iso(iso)
    enabled = set(COMPONENTS if components is None else components)
    if unknown := enabled - set(COMPONENTS):
        raise ValueError(f"unknown noise components: {', '.join(sorted(unknown))}")
    h, w = sensor.shape
    field = np.zeros((h, w), dtype=np.float64)
    if "frame" in enabled:
        field += sensor.dark_shading(iso)
    if "row" in enabled:
        field += rng.stream(seed, iso, "row").normal(0.0, sensor.sigma_row_true[iso], size=(h, 1))
    if "col" in enabled:
        field += rng.stream(seed, iso, "col").normal(0.0, sensor.sigma_col_true[iso], size=(1, w))
    if "pixel" in enabled:
        field += sensor.pixel_dist_true[iso].sample(rng.stream(seed, iso, "pixel"), (h, w))
    return field


def capture_dark_frame(
    sensor: GroundTruthSensor,
    iso: int,
    seed: int,
    components: Iterable[str] | None = None,
) -> RawFrame:
    field = render_dark_field(sensor, iso, seed, components=components)
    data = quantize(sensor.black_level + field, sensor.bit_depth)
    return sensor.frame(data, iso)


def capture_flat_frame(
    sensor: GroundTruthSensor,
    iso: int,
    irradiance: float | np.ndarray,
    seed: int,
    components: Iterable[str] | None = None,
) -> RawFrame:
    """Capture under uniform (or per-pixel) irradiance in electrons per pixel.

    The dark components use the same streams as :func:`capture_dark_frame`, so irradiance 0
    reproduces the dark frame of the same seed exactly.

    """
    lam = np.broadcast_to(np.asarray(irradiance, dtype=np.float64), sensor.shape)
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("irradiance must be finite and non-negative")
    field = render_dark_field(sensor, iso, seed, components=components)
    electrons = rng.stream(seed, iso, "shot").poisson(lam)
    signal = sensor.gain(iso) * electrons
    data = quantize(sensor.black_level + signal + field, sensor.bit_depth)
    return sensor.frame(data, iso)


def true_pixel_cdf(sensor: GroundTruthSensor, iso: int, q: np.ndarray | float) -> np.ndarray:
    return sensor.pixel_dist_true[sensor.check_iso(iso)].cdf(q)


def sample_true_pixel(sensor: GroundTruthSensor, iso: int, count: int, seed: int) -> np.ndarray:
    """Draw i.i.d. samples of the true pixel-wise noise"""
    dist = sensor.pixel_dist_true[sensor.check_iso(iso)]
    return dist.sample(rng.stream(seed, iso, "truth"), count)


def save_sensor(sensor: GroundTruthSensor, directory: str) -> str:
    os.makedirs(directory, exist_ok=True)
    write_array(sensor.fpn_k_true, os.path.join(directory, "fpn_k.pnnf"), dtype="<f8")
    write_array(sensor.fpn_b_true, os.path.join(directory, "fpn_b.pnnf"), dtype="<f8")
    record = {
        "format": "darkproxy-sensor",
        "seed": int(sensor.seed),
        "height": sensor.height,
        "width": sensor.width,
        "bit_depth": sensor.bit_depth,
        "black_level": float(sensor.black_level),
        "white_level": float(sensor.white_level),
        "isos": sensor.isos,
        "gain": {int(k): float(v) for k, v in sensor.gain_per_iso.items()},
        "ble": {int(k): float(v) for k, v in sensor.ble_true.items()},
        "sigma_row": {int(k): float(v) for k, v in sensor.sigma_row_true.items()},
        "sigma_col": {int(k): float(v) for k, v in sensor.sigma_col_true.items()},
        "pixel": {int(k): d.to_record() for k, d in sensor.pixel_dist_true.items()},
        "fpn_k": "fpn_k.pnnf",
        "fpn_b": "fpn_b.pnnf",
        "spec": _plain_spec(sensor.spec),
    }
    path = os.path.join(directory, "sensor.yaml")
    with open(path, "w") as fh:
        yaml.safe_dump(record, fh, default_flow_style=False, sort_keys=True)
    return path


def load_sensor(directory: str) -> GroundTruthSensor:
    with open(os.path.join(directory, "sensor.yaml")) as fh:
        record = sensor_record_schema.validate(yaml.safe_load(fh))
    fpn_k = read_array(os.path.join(directory, record["fpn_k"]))
    fpn_b = read_array(os.path.join(directory, record["fpn_b"]))
    return GroundTruthSensor(
        height=record["height"],
        width=record["width"],
        bit_depth=record["bit_depth"],
        black_level=record["black_level"],
        white_level=record["white_level"],
        gain_per_iso=dict(record["gain"]),
        fpn_k_true=fpn_k,
        fpn_b_true=fpn_b,
        ble_true=dict(record["ble"]),
        sigma_row_true=dict(record["sigma_row"]),
        sigma_col_true=dict(record["sigma_col"]),
        pixel_dist_true={iso: get_distribution(r) for iso, r in record["pixel"].items()},
        seed=record["seed"],
        spec=record.get("spec") or {},
    )


def _plain_spec(spec: dict[str, Any]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in spec.items():
        if isinstance(value, dict):
            out[key] = _plain_spec(value)
        elif isinstance(value, (list, tuple)):
            out[key] = [v.item() if isinstance(v, np.generic) else v for v in value]
        elif isinstance(value, np.generic):
            out[key] = value.item()
        else:
            out[key] = value
    return out
