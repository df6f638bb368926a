"""Per-pixel, ISO-aware dual-branch proxy of pixel-wise noise.

``noise = g(iso) * f_dep(n1) + f_indep(n2)``, where ``n1`` and ``n2`` are independent
standard-normal fields, ``g`` is a learnable per-ISO gain table and each branch is a stack of
pointwise layers::

    lift     1 -> W channels, swish
    block    h + W2 @ swish(W1 @ h + b1) + b2        (repeated ``blocks`` times)
    output   W -> 1

Forward and backward passes are written out by hand over flattened pixel arrays and processed
in fixed-size chunks, so memory stays bounded for megapixel batches.
"""

import logging
import os
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from typing import Any

import numpy as np
import yaml
from scipy import special

from . import rng
from .frames import read_array
from .frames import write_array
from .schemas import model_manifest_schema
from .sensor import UnknownISOError
from .util import loglog_interp

logger = logging.getLogger("darkproxy.proxy")

BRANCHES = ("dep", "indep")
CHUNK = 1 << 16
PROBE_SIZE = 4096
INIT_STD = 0.2

Params = dict[str, np.ndarray]


def swish(x: np.ndarray) -> np.ndarray:
    return x * special.expit(x)


def swish_grad(x: np.ndarray) -> np.ndarray:
    s = special.expit(x)
    return s * (1.0 + x * (1.0 - s))


def gain_key(iso: int) -> str:
    return f"gain.{int(iso)}"


@dataclass(eq=False)
class ProxyModel:
    params: Params
    isos: list[int]
    width: int = 16
    blocks: int = 2
    seed: int = 0
    steps_trained: int = 0
    lineage: dict[str, Any] = field(default_factory=dict)

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    @property
    def gains(self) -> dict[int, float]:
        return {iso: float(self.params[gain_key(iso)][0]) for iso in self.isos}

    def gain(self, iso: int, interpolate: bool = False) -> float:
        key = gain_key(iso)
        if key in self.params:
            return float(self.params[key][0])
        if not interpolate:
            raise UnknownISOError(f"ISO {iso} has no gain entry; calibrated ISOs are {self.isos}")
        return loglog_interp(self.gains, iso)

    def with_params(self, params: Params, **kwargs: Any) -> "ProxyModel":
        return replace(self, params=params, **kwargs)

    def copy(self) -> "ProxyModel":
        return replace(self, params={k: v.copy() for k, v in self.params.items()})


def branch_shapes(width: int, blocks: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {"lift.weight": (width, 1), "lift.bias": (width,)}
    for i in range(blocks):
        shapes[f"block{i}.fc1.weight"] = (width, width)
        shapes[f"block{i}.fc1.bias"] = (width,)
        shapes[f"block{i}.fc2.weight"] = (width, width)
        shapes[f"block{i}.fc2.bias"] = (width,)
    shapes["out.weight"] = (1, width)
    shapes["out.bias"] = (1,)
    return shapes


def init_model(
    isos: list[int],
    calibrated_gain: dict[int, float],
    seed: int,
    width: int = 16,
    blocks: int = 2,
) -> ProxyModel:
    """Initialize a proxy whose gain table equals the calibrated system gain.

    Weights are drawn from N(0, 0.2) per tensor stream; biases and the second linear layer of
    every residual block start at zero, so each branch starts as ``out(swish(lift(x)))``.  The
    dependent branch's output layer is then rescaled on a fixed probe of standard-normal inputs
    to emit zero-mean, unit-variance noise, which makes ``g(iso)`` the initial noise scale.

    """
    isos = sorted({int(i) for i in isos})
    if not isos:
        raise ValueError("a proxy model needs at least one ISO")
    for iso in isos:
        if iso not in calibrated_gain:
            raise ValueError(f"no calibrated gain for ISO {iso}")
        if not calibrated_gain[iso] > 0:
            raise ValueError(f"ISO {iso}: gain must be positive, got {calibrated_gain[iso]}")

    params: Params = {}
    for branch in BRANCHES:
        for name, shape in branch_shapes(width, blocks).items():
            key = f"{branch}.{name}"
            if name.endswith("bias") or ".fc2." in name:
                params[key] = np.zeros(shape)
            else:
                params[key] = rng.stream(seed, "init", key).normal(0.0, INIT_STD, size=shape)
    for iso in isos:
        params[gain_key(iso)] = np.array([float(calibrated_gain[iso])])

    probe = rng.stream(seed, "probe").standard_normal(PROBE_SIZE)
    for branch in BRANCHES:
        y = branch_forward(params, branch, probe, blocks)
        mean, sd = float(y.mean()), float(y.std())
        if branch == "dep" and sd > 0:
            params[f"{branch}.out.weight"] = params[f"{branch}.out.weight"] / sd
            params[f"{branch}.out.bias"] = (params[f"{branch}.out.bias"] - mean) / sd
        else:
            params[f"{branch}.out.bias"] = params[f"{branch}.out.bias"] - mean

    model = ProxyModel(params=params, isos=isos, width=width, blocks=blocks, seed=seed)
    logger.debug(f"initialized proxy with {model.parameter_count} parameters at ISOs {isos}")
    return model


def _branch_chunk(params: Params, branch: str, x: np.ndarray, blocks: int, keep: bool):
    p = params
    z0 = x[:, None] * p[f"{branch}.lift.weight"][:, 0][None, :] + p[f"{branch}.lift.bias"]
    h = swish(z0)
    cache: list[Any] = [z0]
    for i in range(blocks):
        pre = f"{branch}.block{i}"
        z1 = h @ p[f"{pre}.fc1.weight"].T + p[f"{pre}.fc1.bias"]
        a1 = swish(z1)
        if keep:
            cache.append((h, z1, a1))
        h = h + a1 @ p[f"{pre}.fc2.weight"].T + p[f"{pre}.fc2.bias"]
    y = h @ p[f"{branch}.out.weight"][0] + p[f"{branch}.out.bias"][0]
    if keep:
        cache.append(h)
    return y, cache


def branch_forward(params: Params, branch: str, x: np.ndarray, blocks: int) -> np.ndarray:
    """Apply one branch to a flat array of inputs"""
    x = np.asarray(x, dtype=np.float64).ravel()
    out = np.empty_like(x)
    for start in range(0, x.size, CHUNK):
        sl = slice(start, start + CHUNK)
        out[sl], _ = _branch_chunk(params, branch, x[sl], blocks, keep=False)
    return out


def _branch_backward_chunk(
    params: Params, branch: str, x: np.ndarray, g: np.ndarray, blocks: int, grads: Params
) -> None:
    p = params
    _, cache = _branch_chunk(params, branch, x, blocks, keep=True)
    z0 = cache[0]
    h_last = cache[-1]
    grads[f"{branch}.out.weight"] += (g @ h_last)[None, :]
    grads[f"{branch}.out.bias"] += g.sum()
    gh = g[:, None] * p[f"{branch}.out.weight"][0][None, :]
    for i in reversed(range(blocks)):
        pre = f"{branch}.block{i}"
        h, z1, a1 = cache[1 + i]
        grads[f"{pre}.fc2.weight"] += gh.T @ a1
        grads[f"{pre}.fc2.bias"] += gh.sum(axis=0)
        gz1 = (gh @ p[f"{pre}.fc2.weight"]) * swish_grad(z1)
        grads[f"{pre}.fc1.weight"] += gz1.T @ h
        grads[f"{pre}.fc1.bias"] += gz1.sum(axis=0)
        gh = gh + gz1 @ p[f"{pre}.fc1.weight"]
    gz0 = gh * swish_grad(z0)
    grads[f"{branch}.lift.weight"] += (gz0.T @ x)[:, None]
    grads[f"{branch}.lift.bias"] += gz0.sum(axis=0)


def branch_backward(
    params: Params, branch: str, x: np.ndarray, grad_out: np.ndarray, blocks: int
) -> Params:
    """Parameter gradients of ``sum(grad_out * branch(x))``"""
    x = np.asarray(x, dtype=np.float64).ravel()
    g = np.asarray(grad_out, dtype=np.float64).ravel()
    prefix = f"{branch}."
    grads = {k: np.zeros_like(v) for k, v in params.items() if k.startswith(prefix)}
    for start in range(0, x.size, CHUNK):
        sl = slice(start, start + CHUNK)
        _branch_backward_chunk(params, branch, x[sl], g[sl], blocks, grads)
    return grads


def forward(
    model: ProxyModel,
    n1: np.ndarray,
    n2: np.ndarray,
    iso: int,
    interpolate: bool = False,
) -> np.ndarray:
    """``g(iso) * f_dep(n1) + f_indep(n2)`` evaluated pixelwise"""
    n1 = np.asarray(n1, dtype=np.float64)
    n2 = np.asarray(n2, dtype=np.float64)
    if n1.shape != n2.shape:
        raise ValueError(f"input fields differ in shape: {n1.shape} != {n2.shape}")
    g = model.gain(iso, interpolate=interpolate)
    dep = branch_forward(model.params, "dep", n1, model.blocks)
    indep = branch_forward(model.params, "indep", n2, model.blocks)
    return (g * dep + indep).reshape(n1.shape)


def backward(
    model: ProxyModel,
    n1: np.ndarray,
    n2: np.ndarray,
    iso: int,
    grad_out: np.ndarray,
) -> Params:
    """Gradients of ``sum(grad_out * forward(model, n1, n2, iso))`` for every parameter the
    output depends on: both branches and the gain entry of ``iso``"""
    g = model.gain(iso)
    go = np.asarray(grad_out, dtype=np.float64).ravel()
    grads = branch_backward(model.params, "dep", n1, g * go, model.blocks)
    grads.update(branch_backward(model.params, "indep", n2, go, model.blocks))
    dep = branch_forward(model.params, "dep", n1, model.blocks)
    grads[gain_key(iso)] = np.array([float(np.dot(go, dep))])
    return grads


def input_fields(
    shape: int | tuple[int, ...], iso: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    n1 = rng.stream(seed, iso, "n1").standard_normal(shape)
    n2 = rng.stream(seed, iso, "n2").standard_normal(shape)
    return n1, n2


def sample(
    model: ProxyModel,
    shape: int | tuple[int, ...],
    iso: int,
    seed: int,
    interpolate: bool = False,
) -> np.ndarray:
    n1, n2 = input_fields(shape, iso, seed)
    return forward(model, n1, n2, iso, interpolate=interpolate)


def save_model(model: ProxyModel, directory: str) -> str:
    os.makedirs(directory, exist_ok=True)
    tensors: dict[str, dict[str, Any]] = {}
    for name, value in sorted(model.params.items()):
        filename = f"{name}.pnnf"
        write_array(value, os.path.join(directory, filename), dtype="<f8")
        tensors[name] = {"path": filename, "shape": list(value.shape)}
    record = {
        "format": "darkproxy-proxy",
        "width": model.width,
        "blocks": model.blocks,
        "seed": int(model.seed),
        "isos": list(model.isos),
        "gain": model.gains,
        "steps_trained": int(model.steps_trained),
        "tensors": tensors,
    }
    if model.lineage:
        record["lineage"] = model.lineage
    path = os.path.join(directory, "model.yaml")
    with open(path, "w") as fh:
        yaml.safe_dump(record, fh, default_flow_style=False, sort_keys=True)
    return path


def load_model(directory: str) -> ProxyModel:
    with open(os.path.join(directory, "model.yaml")) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{directory}/model.yaml: expected mapping at top level")
    lineage = raw.pop("lineage", None) or {}
    record = model_manifest_schema.validate(raw)
    params: Params = {}
    for name, entry in record["tensors"].items():
        array = read_array(os.path.join(directory, entry["path"]))
        shape = tuple(entry["shape"])
        if array.size != int(np.prod(shape)):
            raise ValueError(f"tensor {name}: stored {array.size} values, expected shape {shape}")
        params[name] = array.reshape(shape)
    shapes = branch_shapes(record["width"], record["blocks"])
    expected = {f"{b}.{n}" for b in BRANCHES for n in shapes}
    expected |= {gain_key(iso) for iso in record["isos"]}
    if missing := expected - set(params):
        raise ValueError(f"checkpoint is missing tensors: {', '.join(sorted(missing))}")
    return ProxyModel(
        params=params,
        isos=sorted(record["isos"]),
        width=record["width"],
        blocks=record["blocks"],
        seed=record["seed"],
        steps_trained=record["steps_trained"],
        lineage=lineage,
    )
