import numpy as np
import pytest
from scipy import special

from darkproxy.loss import QuerySet
from darkproxy.loss import SortedSamples
from darkproxy.loss import ddl_loss
from darkproxy.loss import ecdf_query
from darkproxy.loss import quantile_query
from darkproxy.loss import query_scale
from darkproxy.loss import sample_queries


def brute_force_ecdf(values, q):
    v = sorted(values)
    n = len(v)
    count = sum(1 for x in v if x <= q)
    if count == 0:
        return 0.0
    if count == n:
        return 1.0
    lower, upper = v[count - 1], v[count]
    return (count + (q - lower) / (upper - lower)) / n


def test_ecdf_matches_brute_force():
    gen = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        n = int(gen.integers(1, 40))
        values = gen.normal(0.0, 1.0, n)
        if n > 3:
            # ties
            values[: n // 4] = values[0]
        s = SortedSamples.from_samples(values)
        queries = np.concatenate([gen.normal(0.0, 1.5, 45), values[:5]])
        got = ecdf_query(s, queries)
        for q, p in zip(queries, got):
            worst = max(worst, abs(p - brute_force_ecdf(values, q)))
    assert worst <= 1e-12


def test_ecdf_edges():
    s = SortedSamples.from_samples(np.array([3.0, 1.0, 2.0, 4.0]))
    assert ecdf_query(s, 0.5) == 0.0
    assert ecdf_query(s, 1.0) == pytest.approx(0.25)
    assert ecdf_query(s, 1.5) == pytest.approx(0.375)
    assert ecdf_query(s, 4.0) == 1.0
    assert ecdf_query(s, 100.0) == 1.0
    assert isinstance(ecdf_query(s, 2.0), float)
    assert ecdf_query(s, np.array([[1.0, 2.0]])).shape == (1, 2)


def test_quantile_inverts_ecdf():
    values = np.random.default_rng(1).normal(size=500)
    s = SortedSamples.from_samples(values)
    q = np.linspace(s.values[0], s.values[-1], 301)
    assert np.allclose(quantile_query(s, ecdf_query(s, q)), q, atol=1e-9)
    i = np.arange(1, s.n + 1)
    assert np.allclose(quantile_query(s, i / s.n), s.values, rtol=0, atol=1e-12)
    assert quantile_query(s, 1e-9) == s.values[0]
    for p in (0.0, -0.1, 1.5, np.nan):
        with pytest.raises(ValueError):
            quantile_query(s, p)


def test_sorted_samples():
    x = np.array([2.0, -1.0, 5.0])
    s = SortedSamples.from_samples(x)
    assert list(s.values) == [-1.0, 2.0, 5.0]
    assert np.array_equal(s.unsort(s.values), x)
    assert len(s) == 3
    with pytest.raises(ValueError):
        SortedSamples.from_samples(np.array([]))


def test_sample_queries_grid_without_perturbation():
    qs = sample_queries(9, seed=0, perturb_std=0.0, scale=2.0)
    u = np.arange(1, 10) / 10.0
    assert np.allclose(qs.cdf_queries, 2.0 * special.ndtri(u))
    assert np.allclose(qs.quantile_queries, u)
    assert qs.count == 9


def test_sample_queries_perturbed():
    a = sample_queries(1000, seed=4)
    b = sample_queries(1000, seed=4)
    c = sample_queries(1000, seed=5)
    assert np.array_equal(a.cdf_queries, b.cdf_queries)
    assert not np.array_equal(a.cdf_queries, c.cdf_queries)
    assert np.all(np.abs(a.cdf_queries) <= 6.0)
    assert np.all((a.quantile_queries > 0) & (a.quantile_queries < 1))
    assert np.all(np.abs(sample_queries(100, 1, perturb_std=5.0, clip=2.0).cdf_queries) <= 2.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"count": 1},
        {"count": 10, "clip": 0.0},
        {"count": 10, "scale": -1.0},
        {"count": 10, "perturb_std": -0.1},
        {"count": 10, "eps": 0.5},
    ],
)
def test_sample_queries_rejects(kwargs):
    with pytest.raises(ValueError):
        sample_queries(seed=0, **kwargs)


def test_query_set_rejects():
    with pytest.raises(ValueError):
        QuerySet(cdf_queries=np.array([np.inf]), quantile_queries=np.array([0.5]))
    with pytest.raises(ValueError):
        QuerySet(cdf_queries=np.array([0.0]), quantile_queries=np.array([1.0]))


def test_loss_is_zero_for_identical_sets():
    x = np.random.default_rng(2).normal(size=1000)
    target = SortedSamples.from_samples(x)
    qs = sample_queries(200, seed=1)
    result = ddl_loss(x[::-1].copy(), target, qs)
    assert result.total == 0.0
    assert result.grad.shape == x.shape
    assert np.all(result.grad == 0.0)


def test_loss_weights():
    gen = np.random.default_rng(3)
    target = SortedSamples.from_samples(gen.normal(size=500))
    out = gen.normal(0.5, 1.2, 400)
    qs = sample_queries(100, seed=2)
    full = ddl_loss(out, target, qs)
    cdf_only = ddl_loss(out, target, qs, quantile_weight=0.0)
    assert full.total == pytest.approx(full.cdf + full.quantile)
    assert cdf_only.total == pytest.approx(full.cdf)
    assert full.cdf > 0 and full.quantile > 0


def _piece(out, target, qs):
    s = SortedSamples.from_samples(out)
    j = np.searchsorted(s.values, qs.cdf_queries, side="right")
    d1 = np.sign(ecdf_query(s, qs.cdf_queries) - ecdf_query(target, qs.cdf_queries))
    d2 = np.sign(
        quantile_query(s, qs.quantile_queries) - quantile_query(target, qs.quantile_queries)
    )
    return s.permutation, j, d1, d2


def test_loss_gradient_matches_finite_differences():
    gen = np.random.default_rng(9)
    target = SortedSamples.from_samples(gen.normal(size=64))
    out = gen.normal(0.3, 1.3, (6, 5))
    qs = sample_queries(40, seed=3)
    result = ddl_loss(out, target, qs)
    assert result.grad.shape == out.shape
    eps = 1e-7
    base = _piece(out, target, qs)
    checked = 0
    for idx in np.ndindex(out.shape):
        plus, minus = out.copy(), out.copy()
        plus[idx] += eps
        minus[idx] -= eps
        same = all(
            all(np.array_equal(a, b) for a, b in zip(base, _piece(x, target, qs)))
            for x in (plus, minus)
        )
        if not same:
            continue
        numeric = (ddl_loss(plus, target, qs).total - ddl_loss(minus, target, qs).total) / (2 * eps)
        assert result.grad[idx] == pytest.approx(numeric, rel=1e-5, abs=1e-6)
        checked += 1
    assert checked >= out.size // 2


def test_query_scale():
    assert query_scale(SortedSamples.from_samples(np.array([1.0, 1.0]))) == 1.0
    assert query_scale(SortedSamples.from_samples(np.array([-2.0, 2.0]))) == 2.0
