import copy
from typing import Any

from schema import And
from schema import Optional as BaseOptional
from schema import Or
from schema import Schema as BaseSchema
from schema import Use


class Optional(BaseOptional):
    def __init__(self, *args, default_factory=None, **kwargs):
        if default_factory is not None and kwargs.get("default"):
            raise TypeError("Mutually exclusive arguments: 'default' and 'default_factory'")
        super().__init__(*args, **kwargs)
        self.default_factory = default_factory


class Schema(BaseSchema):
    def validate(self, data: Any, *args: Any, **kwargs: Any) -> Any:
        # Apply default_factory for dict schemas before normal validation
        if isinstance(self._schema, dict) and isinstance(data, dict):
            data = dict(data)  # shallow copy so we don't mutate caller's dict
            for key, _subschema in self._schema.items():
                if isinstance(key, Optional) and (factory := getattr(key, "default_factory", None)):
                    raw_key = key.schema
                    if raw_key not in data:
                        data[raw_key] = copy.deepcopy(factory())
        return super().validate(data, *args, **kwargs)


number = Use(float)
positive: And = And(Use(float), lambda x: x > 0, error="expected a positive number")
nonnegative: And = And(Use(float), lambda x: x >= 0, error="expected a non-negative number")
positive_int: And = And(Use(int), lambda x: x > 0, error="expected a positive integer")
iso_key = And(Use(int), lambda x: x > 0, error="ISO keys must be positive integers")
iso_table = {Optional(iso_key): number}
iso_table_nonneg = {Optional(iso_key): nonnegative}


def read_noise_defaults() -> dict[str, Any]:
    return {"pre": 1.5, "post": 1.0, "tail_weight": 0.05, "tail_scale": 5.0}


distribution_schema = Schema({"type": str, Optional("params", default_factory=dict): dict})


frame_sidecar_schema = Schema(
    {
        "iso": positive_int,
        "black_level": number,
        "white_level": number,
        "bit_depth": And(Use(int), lambda x: 1 <= x <= 24, error="bit_depth must be in [1, 24]"),
        Optional("container"): str,
    }
)


sensor_schema = Schema(
    {
        "height": And(Use(int), lambda x: x >= 16, error="sensor height must be >= 16"),
        "width": And(Use(int), lambda x: x >= 16, error="sensor width must be >= 16"),
        Optional("bit_depth", default=14): And(Use(int), lambda x: 1 <= x <= 24),
        Optional("black_level", default=512.0): nonnegative,
        Optional("white_level"): number,
        "gain_slope": positive,
        "isos": [positive_int],
        Optional("fpn_k_std", default=0.0): nonnegative,
        Optional("fpn_b_std", default=0.0): nonnegative,
        Optional("fpn_b_col_std", default=0.0): nonnegative,
        Optional("ble", default_factory=dict): iso_table,
        Optional("sigma_row", default_factory=dict): iso_table_nonneg,
        Optional("sigma_col", default_factory=dict): iso_table_nonneg,
        Optional("read_noise", default_factory=read_noise_defaults): {
            Optional("pre", default=1.5): nonnegative,
            Optional("post", default=1.0): nonnegative,
            Optional("tail_weight", default=0.05): And(Use(float), lambda x: 0 <= x < 1),
            Optional("tail_scale", default=5.0): positive,
        },
        Optional("pixel", default_factory=dict): {Optional(iso_key): distribution_schema},
    }
)


sensor_record_schema = Schema(
    {
        "format": "darkproxy-sensor",
        "seed": And(Use(int), lambda x: x >= 0),
        "height": positive_int,
        "width": positive_int,
        "bit_depth": positive_int,
        "black_level": number,
        "white_level": number,
        "isos": [positive_int],
        "gain": iso_table,
        "ble": iso_table,
        "sigma_row": iso_table_nonneg,
        "sigma_col": iso_table_nonneg,
        "pixel": {Optional(iso_key): distribution_schema},
        "fpn_k": str,
        "fpn_b": str,
        Optional("spec"): dict,
    }
)


frame_set_manifest_schema = Schema(
    {
        Optional("kind", default="dark"): Or("dark", "flat"),
        "sets": [
            {
                "iso": positive_int,
                Optional("irradiance", default=0.0): nonnegative,
                "frames": [str],
            }
        ],
    }
)


profile_schema = Schema(
    {
        "isos": [positive_int],
        "height": positive_int,
        "width": positive_int,
        "bit_depth": positive_int,
        "black_level": number,
        "white_level": number,
        "gain": iso_table,
        "frame": {
            "fpn_k": str,
            "fpn_b": str,
            "ble": iso_table,
            "fit_residual_rms": nonnegative,
            "error_std": {
                "fpn_k": nonnegative,
                "fpn_b": nonnegative,
                "ble": iso_table_nonneg,
            },
        },
        "band": {
            "sigma_row": iso_table_nonneg,
            "sigma_col": iso_table_nonneg,
            "r2_row": {Optional(iso_key): Or(None, number)},
            "r2_col": {Optional(iso_key): Or(None, number)},
            "error_std": {
                "sigma_row": iso_table_nonneg,
                "sigma_col": iso_table_nonneg,
            },
        },
    }
)


pools_schema = Schema(
    {
        "pools": [
            {
                "iso": positive_int,
                "path": str,
                "count": positive_int,
                Optional("quant_step", default=0.0): nonnegative,
            }
        ]
    }
)


model_manifest_schema = Schema(
    {
        "format": "darkproxy-proxy",
        "width": positive_int,
        "blocks": positive_int,
        "seed": And(Use(int), lambda x: x >= 0),
        "isos": [positive_int],
        "gain": iso_table,
        Optional("steps_trained", default=0): And(Use(int), lambda x: x >= 0),
        "tensors": {str: {"path": str, "shape": [And(Use(int), lambda x: x >= 0)]}},
    }
)


def train_defaults() -> dict[str, Any]:
    return {
        "steps_per_iso": 1000,
        "patch": 1024,
        "queries_per_step": 10**6,
        "lr_base": 1e-2,
        "lr_min": 1e-5,
        "betas": [0.9, 0.999],
        "epsilon": 1e-8,
        "perturb_std": 0.05,
        "clip": 6.0,
        "cdf_weight": 1.0,
        "quantile_weight": 1.0,
        "log_every": 50,
    }


train_schema = Schema(
    {
        Optional("steps_per_iso", default=1000): positive_int,
        Optional("patch", default=1024): positive_int,
        Optional("queries_per_step", default=10**6): And(Use(int), lambda x: x >= 2),
        Optional("lr_base", default=1e-2): positive,
        Optional("lr_min", default=1e-5): positive,
        Optional("betas", default_factory=lambda: [0.9, 0.999]): And(
            [number], lambda x: len(x) == 2 and all(0 <= b < 1 for b in x)
        ),
        Optional("epsilon", default=1e-8): positive,
        Optional("perturb_std", default=0.05): nonnegative,
        Optional("clip", default=6.0): positive,
        Optional("cdf_weight", default=1.0): nonnegative,
        Optional("quantile_weight", default=1.0): nonnegative,
        Optional("log_every", default=50): positive_int,
    }
)


def simulate_defaults() -> dict[str, Any]:
    return {"darks_per_iso": 5, "flat_levels": [200.0, 800.0, 3200.0], "flats_per_level": 2}


config_schema = Schema(
    {
        Optional("debug", default=False): bool,
        Optional("threads", default=1): positive_int,
        Optional("simulate", default_factory=simulate_defaults): Schema(
            {
                Optional("sensor"): dict,
                Optional("darks_per_iso", default=5): And(Use(int), lambda x: x >= 2),
                Optional("flat_levels", default_factory=lambda: [200.0, 800.0, 3200.0]): [
                    nonnegative
                ],
                Optional("flats_per_level", default=2): And(Use(int), lambda x: x >= 2),
                Optional("truth_samples", default=200_000): positive_int,
            }
        ),
        Optional("calibrate", default_factory=dict): Schema(
            {
                Optional("gain", default_factory=dict): {Optional(iso_key): positive},
                Optional("gain_slope"): positive,
            }
        ),
        Optional("decouple", default_factory=dict): Schema(
            {Optional("min_occupancy", default=100): positive_int}
        ),
        Optional("train", default_factory=train_defaults): train_schema,
        Optional("synth", default_factory=dict): Schema(
            {
                Optional("samples", default=0): And(Use(int), lambda x: x >= 0),
                Optional("perturb", default=True): bool,
            }
        ),
        Optional("eval", default_factory=dict): Schema(
            {
                Optional("bin_width"): positive,
                Optional("n_quantiles", default=1000): And(Use(int), lambda x: x >= 10),
            }
        ),
        Optional("gradcheck", default_factory=dict): Schema(
            {
                Optional("size", default=32): And(Use(int), lambda x: 1 <= x <= 64),
                Optional("queries", default=256): And(Use(int), lambda x: x >= 2),
                Optional("eps"): positive,
                Optional("tolerance", default=1e-4): nonnegative,
                Optional("atol", default=1e-7): nonnegative,
            }
        ),
    }
)
