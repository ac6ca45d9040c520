"""Backend selection and cross-backend agreement for the layer-chain kernels."""

import numpy as np
import pytest

from duelq import _kernels
from duelq._kernels import _pykernels


def _random_chain(rng, dims, acts):
    ws = [np.ascontiguousarray(rng.normal(size=(o, i)))
          for i, o in zip(dims, dims[1:])]
    bs = [rng.normal(size=o) for o in dims[1:]]
    return ws, bs, list(acts)


def _grad_buffers(ws):
    return ([np.zeros_like(w) for w in ws],
            [np.zeros(w.shape[0]) for w in ws])


@pytest.fixture
def chain():
    rng = np.random.default_rng(42)
    ws, bs, acts = _random_chain(rng, [7, 6, 5, 3], [1, 1, 0])
    x = rng.normal(size=(4, 7))
    gout = rng.normal(size=(4, 3))
    return ws, bs, acts, x, gout


def backends():
    mods = [_pykernels]
    if "cython" in _kernels.available():
        from duelq._kernels import _ckernels
        mods.append(_ckernels)
    return mods


@pytest.mark.parametrize("impl", backends(), ids=lambda m: m.NAME)
def test_forward_matches_manual_chain(impl, chain):
    ws, bs, acts, x, _ = chain
    outs = impl.chain_forward(ws, bs, acts, x)
    a = x
    for w, b, act, out in zip(ws, bs, acts, outs):
        expect = a @ w.T + b
        if act:
            expect = np.maximum(expect, 0.0)
        np.testing.assert_allclose(out, expect, rtol=1e-13, atol=1e-15)
        a = expect
    assert len(outs) == len(ws)


@pytest.mark.parametrize("impl", backends(), ids=lambda m: m.NAME)
def test_backward_matches_finite_differences(impl, chain):
    ws, bs, acts, x, gout = chain

    def loss(ws_, bs_):
        outs = _pykernels.chain_forward(ws_, bs_, acts, x)
        return float((gout * outs[-1]).sum())

    outs = impl.chain_forward(ws, bs, acts, x)
    dws, dbs = _grad_buffers(ws)
    gin = impl.chain_backward(ws, acts, x, outs, gout, dws, dbs)

    h = 1e-6
    for k in range(len(ws)):
        flat = ws[k].ravel()
        for i in range(0, flat.size, 7):  # spot-check a subset
            orig = flat[i]
            flat[i] = orig + h
            lp = loss(ws, bs)
            flat[i] = orig - h
            lm = loss(ws, bs)
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            assert abs(dws[k].ravel()[i] - fd) < 1e-6 * max(1.0, abs(fd))

    # input gradient via perturbation of one entry
    xi = x.copy()
    xi[2, 3] += h
    lp = float((gout * _pykernels.chain_forward(ws, bs, acts, xi)[-1]).sum())
    xi[2, 3] -= 2 * h
    lm = float((gout * _pykernels.chain_forward(ws, bs, acts, xi)[-1]).sum())
    fd = (lp - lm) / (2 * h)
    assert abs(gin[2, 3] - fd) < 1e-6 * max(1.0, abs(fd))


@pytest.mark.skipif("cython" not in _kernels.available(),
                    reason="compiled backend not built")
def test_backends_agree():
    from duelq._kernels import _ckernels
    rng = np.random.default_rng(7)
    ws, bs, acts = _random_chain(rng, [9, 8, 4], [1, 0])
    for n in (1, 5):
        x = rng.normal(size=(n, 9))
        gout = rng.normal(size=(n, 4))
        outs_c = _ckernels.chain_forward(ws, bs, acts, x)
        outs_p = _pykernels.chain_forward(ws, bs, acts, x)
        for oc, op in zip(outs_c, outs_p):
            np.testing.assert_allclose(oc, op, rtol=1e-13, atol=1e-15)
        dwc, dbc = _grad_buffers(ws)
        dwp, dbp = _grad_buffers(ws)
        gin_c = _ckernels.chain_backward(ws, acts, x, outs_c, gout, dwc, dbc)
        gin_p = _pykernels.chain_backward(ws, acts, x, outs_p, gout, dwp, dbp)
        np.testing.assert_allclose(gin_c, gin_p, rtol=1e-12, atol=1e-14)
        for a, b in zip(dwc + dbc, dwp + dbp):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_backend_switching_restores():
    before = _kernels.current()
    try:
        _kernels.use("python")
        assert _kernels.current() == "python"
        with pytest.raises(ValueError):
            _kernels.use("fortran")
    finally:
        _kernels.use(before)
    assert _kernels.current() == before
