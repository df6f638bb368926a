import abc
import logging
import math
from typing import Any
from typing import Type

import numpy as np
from scipy import special
from scipy import stats

from .hookspec import hookimpl
from .schemas import distribution_schema

logger = logging.getLogger("darkproxy.distributions")


class PixelDistribution(abc.ABC):
    """A parametric family for pixel-wise noise with an evaluable exact CDF"""

    type: str

    def __init__(self, **params: Any) -> None:
        self.params = self.validate(dict(params))

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}({self.params!r})"

    @classmethod
    def matches(cls, arg: str) -> bool:
        return cls.type == arg

    @abc.abstractmethod
    def validate(self, params: dict[str, Any]) -> dict[str, Any]: ...

    @abc.abstractmethod
    def cdf(self, q: np.ndarray | float) -> np.ndarray: ...

    @abc.abstractmethod
    def sample(self, rng: np.random.Generator, size: int | tuple[int, ...]) -> np.ndarray: ...

    @property
    @abc.abstractmethod
    def mean(self) -> float: ...

    @property
    @abc.abstractmethod
    def variance(self) -> float: ...

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    @classmethod
    def fit(cls, samples: np.ndarray) -> "PixelDistribution":
        raise NotImplementedError(f"{cls.type}: fitting is not supported")

    def to_record(self) -> dict[str, Any]:
        return {"type": self.type, "params": _plain(self.params)}


class Gaussian(PixelDistribution):
    type = "gaussian"

    def validate(self, params: dict[str, Any]) -> dict[str, Any]:
        mu = float(params.get("mu", 0.0))
        sigma = float(params.get("sigma", 1.0))
        if sigma < 0:
            raise ValueError(f"gaussian: sigma must be >= 0, got {sigma}")
        return {"mu": mu, "sigma": sigma}

    def cdf(self, q: np.ndarray | float) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        mu, sigma = self.params["mu"], self.params["sigma"]
        if sigma == 0:
            return (q >= mu).astype(float)
        return special.ndtr((q - mu) / sigma)

    def sample(self, rng: np.random.Generator, size: int | tuple[int, ...]) -> np.ndarray:
        return rng.normal(self.params["mu"], self.params["sigma"], size=size)

    @property
    def mean(self) -> float:
        return self.params["mu"]

    @property
    def variance(self) -> float:
        return self.params["sigma"] ** 2

    @classmethod
    def fit(cls, samples: np.ndarray) -> "Gaussian":
        x = np.asarray(samples, dtype=float).ravel()
        return cls(mu=float(x.mean()), sigma=float(x.std()))


class GaussianMixture(PixelDistribution):
    type = "gaussian_mixture"

    def validate(self, params: dict[str, Any]) -> dict[str, Any]:
        components = params.get("components")
        if not components:
            raise ValueError("gaussian_mixture: at least one component is required")
        weights = np.array([float(c["weight"]) for c in components])
        if np.any(weights < 0) or weights.sum() <= 0:
            raise ValueError("gaussian_mixture: weights must be non-negative and not all zero")
        weights = weights / weights.sum()
        out = []
        for c, w in zip(components, weights):
            sigma = float(c.get("sigma", 1.0))
            if sigma < 0:
                raise ValueError(f"gaussian_mixture: sigma must be >= 0, got {sigma}")
            out.append({"weight": float(w), "mu": float(c.get("mu", 0.0)), "sigma": sigma})
        return {"components": out}

    @property
    def _arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        comps = self.params["components"]
        w = np.array([c["weight"] for c in comps])
        mu = np.array([c["mu"] for c in comps])
        sigma = np.array([c["sigma"] for c in comps])
        return w, mu, sigma

    def cdf(self, q: np.ndarray | float) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        w, mu, sigma = self._arrays
        out = np.zeros_like(q)
        for wi, mi, si in zip(w, mu, sigma):
            if si == 0:
                out = out + wi * (q >= mi)
            else:
                out = out + wi * special.ndtr((q - mi) / si)
        return out

    def sample(self, rng: np.random.Generator, size: int | tuple[int, ...]) -> np.ndarray:
        w, mu, sigma = self._arrays
        comp = rng.choice(len(w), size=size, p=w)
        z = rng.standard_normal(size=size)
        return mu[comp] + sigma[comp] * z

    @property
    def mean(self) -> float:
        w, mu, _ = self._arrays
        return float(np.dot(w, mu))

    @property
    def variance(self) -> float:
        w, mu, sigma = self._arrays
        m = np.dot(w, mu)
        return float(np.dot(w, sigma**2 + mu**2) - m**2)


class TukeyLambda(PixelDistribution):
    """Tukey-lambda family, the classic long-tailed read-noise model"""

    type = "tukey_lambda"

    def validate(self, params: dict[str, Any]) -> dict[str, Any]:
        lam = float(params.get("lam", 0.14))
        loc = float(params.get("loc", 0.0))
        scale = float(params.get("scale", 1.0))
        if lam <= -0.5:
            raise ValueError(f"tukey_lambda: lam must exceed -0.5 for finite variance, got {lam}")
        if scale <= 0:
            raise ValueError(f"tukey_lambda: scale must be positive, got {scale}")
        return {"lam": lam, "loc": loc, "scale": scale}

    @property
    def frozen(self):
        p = self.params
        return stats.tukeylambda(p["lam"], loc=p["loc"], scale=p["scale"])

    def cdf(self, q: np.ndarray | float) -> np.ndarray:
        return np.asarray(self.frozen.cdf(np.asarray(q, dtype=float)))

    def sample(self, rng: np.random.Generator, size: int | tuple[int, ...]) -> np.ndarray:
        return np.asarray(self.frozen.rvs(size=size, random_state=rng))

    @property
    def mean(self) -> float:
        return self.params["loc"]

    @property
    def variance(self) -> float:
        return float(self.frozen.var())

    @classmethod
    def fit(cls, samples: np.ndarray, max_points: int = 20_000) -> "TukeyLambda":
        x = np.sort(np.asarray(samples, dtype=float).ravel())
        if x.size > max_points:
            # evenly spaced order statistics keep the tails in the fit
            x = x[np.linspace(0, x.size - 1, max_points).astype(int)]
        lam = float(stats.ppcc_max(x, brack=(-0.4, 0.5), dist="tukeylambda"))
        lam = max(lam, -0.45)
        (_, _), (scale, loc, r) = stats.probplot(x, sparams=(lam,), dist="tukeylambda", fit=True)
        logger.debug(f"tukey_lambda fit: lam={lam:.4f} loc={loc:.4g} scale={scale:.4g} r={r:.5f}")
        return cls(lam=lam, loc=float(loc), scale=float(abs(scale)) or 1.0)


def read_noise_mixture(
    gain: float,
    sigma_pre: float,
    sigma_post: float,
    tail_weight: float = 0.05,
    tail_scale: float = 5.0,
) -> GaussianMixture:
    """Long-tailed pixel noise around the read noise ``gain * X_pre + X_post``.

    The main component is that Gaussian, ``sqrt((gain * sigma_pre)**2 + sigma_post**2)`` DN
    wide.  A ``tail_weight`` share of the samples comes from a component ``tail_scale`` times as
    wide, in DN after gain, so the tail ratio does not depend on ISO.

    """
    if tail_scale <= 0:
        raise ValueError(f"tail_scale must be positive, got {tail_scale}")
    main = math.hypot(gain * sigma_pre, sigma_post)
    components = [
        {"weight": 1.0 - tail_weight, "mu": 0.0, "sigma": main},
        {"weight": tail_weight, "mu": 0.0, "sigma": tail_scale * main},
    ]
    return GaussianMixture(components=components)


def get_distribution(record: dict[str, Any] | PixelDistribution) -> PixelDistribution:
    """Instantiate a distribution from ``{"type": ..., "params": {...}}``"""
    from .pluginmanager import get_pluginmanager

    if isinstance(record, PixelDistribution):
        return record
    record = distribution_schema.validate(record)
    for family in get_pluginmanager().distribution_families():
        if family.matches(record["type"]):
            return family(**record["params"])
    raise ValueError(f"{record['type']}: distribution family not registered with darkproxy")


def fit_baseline(samples: np.ndarray, family: str = "gaussian") -> PixelDistribution:
    from .pluginmanager import get_pluginmanager

    for f in get_pluginmanager().distribution_families():
        if f.matches(family):
            return f.fit(samples)
    raise ValueError(f"{family}: distribution family not registered with darkproxy")


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@hookimpl
def darkproxy_pixel_distributions() -> list[Type[PixelDistribution]]:
    return [Gaussian, GaussianMixture, TukeyLambda]
