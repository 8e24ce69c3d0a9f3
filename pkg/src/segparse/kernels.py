"""Hot inner-loop kernels: numba-jitted with a pure-numpy fallback.

The backend is picked once at import from the ``SEGPARSE_BACKEND`` env var
(``auto`` | ``numba`` | ``numpy``; ``auto`` takes numba when importable) and
can be switched at runtime with :func:`use_backend`, which is what the
benchmark and the cross-backend equivalence tests rely on.  Both backends
implement the same formulas; within one backend results are bit-stable.

Kernels here are the per-timestep LSTM gate fusion (the matmuls around them
stay in BLAS) and the fused Adam update.  On CPUs where numpy ships SIMD
exp/tanh and numba has no SVML, the vectorized fallback actually wins the
transcendental-bound gate forward while numba wins the backward fusion;
``benchmarks/bench_kernels.py`` measures both on the machine at hand.
"""
from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

_ENV_VAR = "SEGPARSE_BACKEND"


# -- pure-numpy implementations ---------------------------------------------


def _sigmoid_np(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _lstm_gates_forward_np(z, c_prev, mask):
    """One masked LSTM cell step for a whole batch.

    z: (B, 4H) pre-activations (input, forget, cell, output blocks),
    c_prev: (B, H), mask: (B,) 0/1.  Returns activated gates, the new cell
    state, its tanh, and the hidden state.  Masked rows keep zero state so
    padding never leaks into real positions.
    """
    H = c_prev.shape[1]
    gates = np.empty_like(z)
    gates[:, :H] = _sigmoid_np(z[:, :H])
    gates[:, H:2 * H] = _sigmoid_np(z[:, H:2 * H])
    gates[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
    gates[:, 3 * H:] = _sigmoid_np(z[:, 3 * H:])
    c = (gates[:, H:2 * H] * c_prev + gates[:, :H] * gates[:, 2 * H:3 * H]) * mask[:, None]
    tc = np.tanh(c)
    h = gates[:, 3 * H:] * tc
    return gates, c, tc, h


def _lstm_gates_backward_np(gates, c_prev, c, tc, mask, dh, dc):
    """Adjoint of :func:`_lstm_gates_forward_np`; returns (dz, dc_prev)."""
    H = c_prev.shape[1]
    i, f, g, o = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:3 * H], gates[:, 3 * H:]
    do = dh * tc
    dct = dc + dh * o * (1.0 - tc * tc)
    dcm = dct * mask[:, None]
    dz = np.empty_like(gates)
    dz[:, :H] = dcm * g * i * (1.0 - i)
    dz[:, H:2 * H] = dcm * c_prev * f * (1.0 - f)
    dz[:, 2 * H:3 * H] = dcm * i * (1.0 - g * g)
    dz[:, 3 * H:] = do * o * (1.0 - o)
    dc_prev = dcm * f
    return dz, dc_prev


def _adam_update_np(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# -- numba loop twins --------------------------------------------------------


def _lstm_gates_forward_loops(z, c_prev, mask):
    # arithmetic stays in the array dtype: literals would promote to float64
    B, H4 = z.shape
    H = H4 // 4
    one = np.ones(1, z.dtype)[0]
    gates = np.empty_like(z)
    c = np.empty_like(c_prev)
    tc = np.empty_like(c_prev)
    h = np.empty_like(c_prev)
    for b in range(B):
        mb = mask[b]
        for k in range(H):
            gi = one / (one + np.exp(-z[b, k]))
            gf = one / (one + np.exp(-z[b, H + k]))
            gg = np.tanh(z[b, 2 * H + k])
            go = one / (one + np.exp(-z[b, 3 * H + k]))
            cc = (gf * c_prev[b, k] + gi * gg) * mb
            t = np.tanh(cc)
            gates[b, k] = gi
            gates[b, H + k] = gf
            gates[b, 2 * H + k] = gg
            gates[b, 3 * H + k] = go
            c[b, k] = cc
            tc[b, k] = t
            h[b, k] = go * t
    return gates, c, tc, h


def _lstm_gates_backward_loops(gates, c_prev, c, tc, mask, dh, dc):
    B, H = c_prev.shape
    one = np.ones(1, gates.dtype)[0]
    dz = np.empty_like(gates)
    dc_prev = np.empty_like(c_prev)
    for b in range(B):
        mb = mask[b]
        for k in range(H):
            gi = gates[b, k]
            gf = gates[b, H + k]
            gg = gates[b, 2 * H + k]
            go = gates[b, 3 * H + k]
            t = tc[b, k]
            do = dh[b, k] * t
            dct = dc[b, k] + dh[b, k] * go * (one - t * t)
            dcm = dct * mb
            dz[b, k] = dcm * gg * gi * (one - gi)
            dz[b, H + k] = dcm * c_prev[b, k] * gf * (one - gf)
            dz[b, 2 * H + k] = dcm * gi * (one - gg * gg)
            dz[b, 3 * H + k] = do * go * (one - go)
            dc_prev[b, k] = dcm * gf
    return dz, dc_prev


def _adam_update_loops(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    one = np.ones(1, p.dtype)[0]
    lr = lr * one
    beta1 = beta1 * one
    beta2 = beta2 * one
    eps = eps * one
    bc1 = bc1 * one
    bc2 = bc2 * one
    flat_p = p.reshape(-1)
    flat_g = g.reshape(-1)
    flat_m = m.reshape(-1)
    flat_v = v.reshape(-1)
    for k in range(flat_p.shape[0]):
        gk = flat_g[k]
        mk = beta1 * flat_m[k] + (one - beta1) * gk
        vk = beta2 * flat_v[k] + (one - beta2) * gk * gk
        flat_m[k] = mk
        flat_v[k] = vk
        flat_p[k] -= lr * (mk / bc1) / (np.sqrt(vk / bc2) + eps)


_NUMPY_IMPL = {
    "lstm_gates_forward": _lstm_gates_forward_np,
    "lstm_gates_backward": _lstm_gates_backward_np,
    "adam_update": _adam_update_np,
}

_numba_impl = None


def _build_numba_impl():
    global _numba_impl
    if _numba_impl is None:
        from numba import njit

        _numba_impl = {
            "lstm_gates_forward": njit(cache=True)(_lstm_gates_forward_loops),
            "lstm_gates_backward": njit(cache=True)(_lstm_gates_backward_loops),
            "adam_update": njit(cache=True)(_adam_update_loops),
        }
    return _numba_impl


_active_name = None
_active = dict(_NUMPY_IMPL)


def use_backend(name: str) -> str:
    """Select 'numba', 'numpy', or 'auto'; returns the backend actually active."""
    global _active_name, _active
    if name == "auto":
        try:
            import numba  # noqa: F401
            name = "numba"
        except ImportError:
            name = "numpy"
    if name == "numba":
        _active = _build_numba_impl()
    elif name == "numpy":
        _active = dict(_NUMPY_IMPL)
    else:
        raise ConfigError(f"unknown backend {name!r}; expected auto, numba or numpy")
    _active_name = name
    return name


def active_backend() -> str:
    return _active_name


def lstm_gates_forward(z, c_prev, mask):
    return _active["lstm_gates_forward"](z, c_prev, mask)


def lstm_gates_backward(gates, c_prev, c, tc, mask, dh, dc):
    return _active["lstm_gates_backward"](gates, c_prev, c, tc, mask, dh, dc)


def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    _active["adam_update"](p, g, m, v, lr, beta1, beta2, eps, bc1, bc2)


use_backend(os.environ.get(_ENV_VAR, "auto"))
