import csv
import logging
import math
from dataclasses import dataclass
from dataclasses import field
from dataclasses import fields
from typing import Any
from typing import Mapping

import numpy as np

from . import rng
from .decouple import PixelNoiseSamples
from .loss import LossResult
from .loss import QuerySet
from .loss import SortedSamples
from .loss import ddl_loss
from .loss import ecdf_query
from .loss import quantile_query
from .loss import query_scale
from .loss import sample_queries
from .proxy import Params
from .proxy import ProxyModel
from .proxy import backward
from .proxy import forward
from .proxy import input_fields
from .schemas import train_schema

logger = logging.getLogger("darkproxy.train")

LOG_COLUMNS = ("step", "iso", "L_cdf", "L_quantile", "lr")


class NonFiniteGradientError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps_per_iso: int = 1000
    patch: int = 1024
    queries_per_step: int = 10**6
    lr_base: float = 1e-2
    lr_min: float = 1e-5
    betas: tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    perturb_std: float = 0.05
    clip: float = 6.0
    cdf_weight: float = 1.0
    quantile_weight: float = 1.0
    log_every: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.lr_min < self.lr_base:
            raise ValueError(f"lr_min ({self.lr_min}) must be below lr_base ({self.lr_base})")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))

    @classmethod
    def from_config(cls, section: Mapping[str, Any] | None = None, seed: int = 0) -> "TrainConfig":
        data = train_schema.validate(dict(section or {}))
        names = {f.name for f in fields(cls)}
        return cls(seed=seed, **{k: v for k, v in data.items() if k in names})

    @property
    def batch_size(self) -> int:
        return self.patch * self.patch


@dataclass
class OptimizerState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    step: int = 0


def lr_schedule(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Cosine anneal from ``lr_base`` at step 0 to ``lr_min`` at the last step"""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    if total_steps == 1:
        return cfg.lr_base
    t = step / (total_steps - 1)
    return cfg.lr_min + 0.5 * (cfg.lr_base - cfg.lr_min) * (1.0 + math.cos(math.pi * t))


def adam_step(
    params: Params,
    grads: Params,
    state: OptimizerState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    epsilon: float = 1e-8,
) -> tuple[Params, OptimizerState]:
    """Bias-corrected Adam update of the parameters present in ``grads``.

    Returns new parameter and state objects; the inputs are left untouched.

    """
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(
            f"non-finite gradient at step {state.step + 1} for {', '.join(sorted(bad))}"
        )
    b1, b2 = betas
    t = state.step + 1
    new_params = dict(params)
    m = dict(state.m)
    v = dict(state.v)
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter {params[name].shape}")
        m[name] = b1 * m.get(name, np.zeros_like(g)) + (1.0 - b1) * g
        v[name] = b2 * v.get(name, np.zeros_like(g)) + (1.0 - b2) * g * g
        m_hat = m[name] / (1.0 - b1**t)
        v_hat = v[name] / (1.0 - b2**t)
        new_params[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + epsilon)
    return new_params, OptimizerState(m=m, v=v, step=t)


def draw_batch(pool: PixelNoiseSamples, size: int, seed: int, *labels: Any) -> SortedSamples:
    """A patch of ``size`` target samples drawn with replacement from the ISO pool"""
    idx = rng.stream(seed, "batch", *labels).integers(0, len(pool), size)
    return SortedSamples.from_samples(pool.samples[idx])


def step_queries(target: SortedSamples, cfg: TrainConfig, seed: int) -> QuerySet:
    return sample_queries(
        cfg.queries_per_step,
        seed,
        perturb_std=cfg.perturb_std,
        clip=cfg.clip,
        scale=query_scale(target),
        eps=0.5 / target.n,
    )


def loss_and_grads(
    model: ProxyModel,
    target: SortedSamples,
    queries: QuerySet,
    n1: np.ndarray,
    n2: np.ndarray,
    iso: int,
    cdf_weight: float = 1.0,
    quantile_weight: float = 1.0,
) -> tuple[LossResult, Params]:
    out = forward(model, n1, n2, iso)
    result = ddl_loss(out, target, queries, cdf_weight=cdf_weight, quantile_weight=quantile_weight)
    return result, backward(model, n1, n2, iso, result.grad)


def train(
    model: ProxyModel,
    pools: Mapping[int, PixelNoiseSamples],
    cfg: TrainConfig,
) -> tuple[ProxyModel, list[dict[str, Any]]]:
    """Fit the proxy to the decoupled pixel-noise pools, one ISO after another.

    Both branches are shared by all ISOs; each ISO pass runs its own cosine schedule and only
    touches its own gain entry.  One Adam state is carried through all passes.

    """
    for iso in model.isos:
        if iso not in pools:
            raise ValueError(f"no pixel noise pool for ISO {iso}")
    params = {k: v.copy() for k, v in model.params.items()}
    state = OptimizerState()
    log: list[dict[str, Any]] = []
    step = 0
    for iso in sorted(model.isos):
        pool = pools[iso]
        first = last = None
        for k in range(cfg.steps_per_iso):
            current = model.with_params(params)
            target = draw_batch(pool, cfg.batch_size, cfg.seed, iso, k)
            qs = step_queries(target, cfg, rng.derive_seed(cfg.seed, "queries", iso, k))
            n1, n2 = input_fields(cfg.batch_size, iso, rng.derive_seed(cfg.seed, "inputs", k))
            result, grads = loss_and_grads(
                current, target, qs, n1, n2, iso, cfg.cdf_weight, cfg.quantile_weight
            )
            lr = lr_schedule(k, cfg.steps_per_iso, cfg)
            params, state = adam_step(params, grads, state, lr, cfg.betas, cfg.epsilon)
            row = {
                "step": step,
                "iso": iso,
                "L_cdf": result.cdf,
                "L_quantile": result.quantile,
                "lr": lr,
            }
            log.append(row)
            first = first or row
            last = row
            if k % cfg.log_every == 0:
                logger.debug(
                    f"step {step} ISO {iso}: L_cdf={result.cdf:.5g} "
                    f"L_quantile={result.quantile:.5g} lr={lr:.3g}"
                )
            step += 1
        if first is not None and last is not None:
            logger.info(
                f"ISO {iso}: {cfg.steps_per_iso} steps, L_cdf {first['L_cdf']:.5g} -> "
                f"{last['L_cdf']:.5g}, L_quantile {first['L_quantile']:.5g} -> "
                f"{last['L_quantile']:.5g}, gain {float(params[f'gain.{iso}'][0]):.5g}"
            )
    trained = model.with_params(params, steps_trained=model.steps_trained + step)
    return trained, log


def heldout_loss(
    model: ProxyModel,
    pool: PixelNoiseSamples,
    iso: int,
    cfg: TrainConfig,
    seed: int,
) -> LossResult:
    """Loss on a batch, queries and inputs that training never draws (fixed by ``seed``)"""
    target = draw_batch(pool, cfg.batch_size, seed, "heldout", iso)
    qs = step_queries(target, cfg, rng.derive_seed(seed, "heldout-queries", iso))
    n1, n2 = input_fields(cfg.batch_size, iso, rng.derive_seed(seed, "heldout-inputs"))
    out = forward(model, n1, n2, iso)
    return ddl_loss(out, target, qs, cfg.cdf_weight, cfg.quantile_weight)


def write_train_log(log: list[dict[str, Any]], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for row in log:
            writer.writerow(
                [int(row["step"]), int(row["iso"])]
                + [repr(float(row[c])) for c in ("L_cdf", "L_quantile", "lr")]
            )


@dataclass
class GradCheckResult:
    max_rel_error: float
    max_abs_error: float
    worst: str
    checked: int
    skipped: int
    failures: int = 0

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.failures == 0


def _kink_signature(out: np.ndarray, target: SortedSamples, queries: QuerySet):
    """Everything that selects a smooth piece of the loss: sort order, query brackets, signs"""
    s = SortedSamples.from_samples(out)
    j = np.searchsorted(s.values, queries.cdf_queries, side="right")
    result = ddl_loss(out, target, queries)
    d_cdf = np.sign(ecdf_query(s, queries.cdf_queries) - ecdf_query(target, queries.cdf_queries))
    d_q = np.sign(
        quantile_query(s, queries.quantile_queries)
        - quantile_query(target, queries.quantile_queries)
    )
    return s.permutation, j, d_cdf, d_q, result


def _same_piece(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a[:4], b[:4]))


def _central_difference(
    model: ProxyModel,
    name: str,
    idx: tuple[int, ...],
    h: float,
    fields: tuple[np.ndarray, np.ndarray, int],
    target: SortedSamples,
    queries: QuerySet,
    base,
) -> float | None:
    """``(L(p + h) - L(p - h)) / 2h``, or ``None`` when either side leaves the smooth piece"""
    n1, n2, iso = fields
    value = model.params[name]
    totals = []
    for step in (h, -h):
        moved = value.copy()
        moved[idx] += step
        out = forward(model.with_params({**model.params, name: moved}), n1, n2, iso)
        sig = _kink_signature(out, target, queries)
        if not _same_piece(base, sig):
            return None
        totals.append(sig[4].total)
    return (totals[0] - totals[1]) / (2.0 * h)


def grad_check(
    model: ProxyModel,
    batch: np.ndarray | SortedSamples,
    queries: QuerySet,
    eps: float | None = None,
    iso: int | None = None,
    size: int = 32,
    seed: int = 0,
    rtol: float = 1e-4,
    atol: float = 1e-7,
) -> GradCheckResult:
    """Compare reverse-mode parameter gradients with central differences.

    Every scalar parameter is moved by ``+-eps`` and ``+-eps/2``; the two difference quotients
    are combined by Richardson extrapolation.  A parameter is skipped when any move changes the
    sort order of the output, the bracketing samples of a CDF query or the sign of any loss term,
    since the loss is not differentiable across those boundaries.

    A parameter fails when ``|a - n| > atol + rtol * max(|a|, |n|)``.  ``max_rel_error`` is the
    plain ``|a - n| / max(|a|, |n|)`` over every checked parameter, so it is informative only;
    use ``passed`` to decide.

    """
    target = batch if isinstance(batch, SortedSamples) else SortedSamples.from_samples(batch)
    if not 1 <= size <= 64:
        raise ValueError(f"gradient checks run on fields of at most 64x64, got {size}")
    sigma = query_scale(target)
    if eps is None:
        eps = 1e-6 * sigma
    if not 1e-6 * sigma * (1 - 1e-9) <= eps <= 1e-3 * sigma * (1 + 1e-9):
        raise ValueError(f"eps must lie in [1e-6, 1e-3] x target std ({sigma:.4g}), got {eps}")
    if rtol < 0 or atol < 0:
        raise ValueError(f"tolerances must be non-negative, got rtol={rtol}, atol={atol}")
    iso = model.isos[0] if iso is None else iso
    n1, n2 = input_fields((size, size), iso, seed)
    _, grads = loss_and_grads(model, target, queries, n1, n2, iso)
    base = _kink_signature(forward(model, n1, n2, iso), target, queries)

    worst, worst_ratio = "", -1.0
    max_rel = max_abs = 0.0
    checked = skipped = failures = 0
    for name in sorted(grads):
        for idx in np.ndindex(model.params[name].shape):
            args = (model, name, idx)
            coarse = _central_difference(*args, eps, (n1, n2, iso), target, queries, base)
            fine = _central_difference(*args, eps / 2, (n1, n2, iso), target, queries, base)
            if coarse is None or fine is None:
                skipped += 1
                continue
            numeric = (4.0 * fine - coarse) / 3.0
            analytic = float(grads[name][idx])
            diff = abs(analytic - numeric)
            scale = max(abs(analytic), abs(numeric))
            checked += 1
            max_abs = max(max_abs, diff)
            if scale > 0:
                max_rel = max(max_rel, diff / scale)
            bound = atol + rtol * scale
            failures += int(diff > bound)
            ratio = diff / bound if bound > 0 else (math.inf if diff > 0 else 0.0)
            if ratio > worst_ratio:
                worst, worst_ratio = f"{name}{list(idx)}", ratio
    logger.info(
        f"gradient check: max relative error {max_rel:.3g}, max absolute error {max_abs:.3g}, "
        f"worst {worst or 'n/a'}, {failures} of {checked} checked outside tolerance, "
        f"{skipped} skipped"
    )
    return GradCheckResult(
        max_rel_error=max_rel,
        max_abs_error=max_abs,
        worst=worst,
        checked=checked,
        skipped=skipped,
        failures=failures,
    )
