import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from precise import _kernels_py, kernels

from . import oracles

IMPLS = kernels.implementations()


def test_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")
    assert "python" in IMPLS


@pytest.mark.parametrize("impl", list(IMPLS.values()), ids=list(IMPLS))
def test_distances_match_loop_oracle(impl, rng):
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    out = kernels.pairwise_distances(a, b, impl=impl)
    np.testing.assert_allclose(out, oracles.distance_matrix(a.tolist(), b.tolist()), rtol=0, atol=1e-12)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backends_agree(dtype, rng):
    a, b = rng.normal(size=(6, 4)).astype(dtype), rng.normal(size=(3, 4)).astype(dtype)
    tol = 1e-5 if dtype == np.float32 else 1e-12
    outs = [kernels.pairwise_distances(a, b, impl=i) for i in IMPLS.values()]
    for o in outs:
        assert o.dtype == dtype
        np.testing.assert_allclose(o, outs[0], rtol=tol)
    g = rng.normal(size=outs[0].shape).astype(dtype)
    grads = [kernels.pairwise_distances_backward(a, b, outs[0], g, impl=i) for i in IMPLS.values()]
    for ga, gb in grads:
        np.testing.assert_allclose(ga, grads[0][0], rtol=tol, atol=tol)
        np.testing.assert_allclose(gb, grads[0][1], rtol=tol, atol=tol)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.integers(-3, 3).map(float)),
       arrays(np.bool_, (4, 5)), st.sampled_from([0, 1]))
def test_masked_min_backends_agree_with_ties(x, mask, axis):
    # integer-valued inputs produce many ties; lowest index must win everywhere
    if not mask.any(axis=axis).all():
        for impl in IMPLS.values():
            with pytest.raises(ValueError):
                kernels.masked_min(x, mask, axis, impl=impl)
        return
    results = [kernels.masked_min(x, mask, axis, impl=i) for i in IMPLS.values()]
    for vals, idx in results:
        np.testing.assert_array_equal(vals, results[0][0])
        np.testing.assert_array_equal(idx, results[0][1])
    vals, idx = results[0]
    lanes = x if axis == 1 else x.T
    lmask = mask if axis == 1 else mask.T
    for lane, m, v, i in zip(lanes, lmask, vals, idx):
        admissible = [j for j in range(len(lane)) if m[j]]
        best = min(lane[j] for j in admissible)
        assert v == best and i == min(j for j in admissible if lane[j] == best)


def test_fallback_rejects_mismatch():
    with pytest.raises(ValueError):
        _kernels_py.pairwise_distances(np.ones((2, 3)), np.ones((2, 2)), 1e-12)
