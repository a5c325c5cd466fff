"""Dense, recurrent and transformer layers.

Each ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache and returns ``(dx, grads)`` where
``grads`` is keyed by the same local parameter names the layer reads.
Inputs are single sequences of shape ``(T, D)``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .functional import (layer_norm_backward, layer_norm_forward, positional_encoding,
                         sigmoid, softmax, softmax_backward)
from .params import glorot_uniform


def _check_input(x, d_in, name):
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    if x.ndim != 2 or x.shape[1] != d_in:
        raise ValueError(f"{name}: expected input of shape (T, {d_in}), got {x.shape}")
    if x.shape[0] < 1:
        raise ValueError(f"{name}: sequence must have T >= 1")
    return x


# -- dense ---------------------------------------------------------------

def init_dense(rng, d_in, d_out):
    return {"W": glorot_uniform(rng, d_out, d_in), "b": np.zeros(d_out)}


def dense_forward(x, params):
    """``ReLU(x W^T + b)`` row-wise."""
    W, b = params["W"], params["b"]
    x = _check_input(x, W.shape[1], "dense")
    pre = x @ W.T + b
    return np.maximum(pre, 0.0), (x, pre)


def dense_backward(dy, cache, params):
    x, pre = cache
    dpre = dy * (pre > 0)
    return dpre @ params["W"], {"W": dpre.T @ x, "b": dpre.sum(axis=0)}


# -- GRU -----------------------------------------------------------------

def init_gru(rng, d_in, hidden):
    W = np.concatenate([glorot_uniform(rng, hidden, d_in) for _ in range(3)])
    U = np.concatenate([glorot_uniform(rng, hidden, hidden) for _ in range(3)])
    return {"W": W, "U": U, "b": np.zeros(3 * hidden)}


def gru_forward(x, params, direction="forward"):
    """Single-direction GRU with zero initial state.

    Gates are stacked ``[z, r, n]``::

        z = sig(W_z x + U_z h + b_z)
        r = sig(W_r x + U_r h + b_r)
        n = tanh(W_n x + U_n (r * h) + b_n)
        h' = (1 - z) * h + z * n

    ``direction="backward"`` runs over the reversed sequence and returns the
    outputs in original time order.
    """
    W, U, b = params["W"], params["U"], params["b"]
    H = U.shape[1]
    x = _check_input(x, W.shape[1], "gru")
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    xs = x[::-1] if direction == "backward" else x
    T = xs.shape[0]
    xw = xs @ W.T + b
    dt = xw.dtype
    Uzr, Un = U[:2 * H], U[2 * H:]
    hs = np.zeros((T + 1, H), dtype=dt)
    zs = np.empty((T, H), dtype=dt)
    rs = np.empty((T, H), dtype=dt)
    ns = np.empty((T, H), dtype=dt)
    for t in range(T):
        h = hs[t]
        zr = expit(xw[t, :2 * H] + Uzr @ h)
        z, r = zr[:H], zr[H:]
        n = np.tanh(xw[t, 2 * H:] + Un @ (r * h))
        hs[t + 1] = h + z * (n - h)
        zs[t], rs[t], ns[t] = z, r, n
    out = hs[1:]
    if direction == "backward":
        out = out[::-1]
    return out.copy(), (xs, hs, zs, rs, ns, direction)


def gru_backward(dout, cache, params):
    xs, hs, zs, rs, ns, direction = cache
    W, U = params["W"], params["U"]
    H = U.shape[1]
    Uzr, Un = U[:2 * H], U[2 * H:]
    dout = dout[::-1] if direction == "backward" else dout
    T = xs.shape[0]
    dxw = np.empty((T, 3 * H))
    dh_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        h, z, r, n = hs[t], zs[t], rs[t], ns[t]
        dh = dout[t] + dh_next
        dan = dh * z * (1.0 - n * n)
        dxw[t, :H] = dh * (n - h) * z * (1.0 - z)
        dxw[t, 2 * H:] = dan
        drh = Un.T @ dan
        dxw[t, H:2 * H] = drh * h * r * (1.0 - r)
        dh_next = dh * (1.0 - z) + drh * r + Uzr.T @ dxw[t, :2 * H]
    h_prev = hs[:-1]
    dU = np.concatenate([dxw[:, :2 * H].T @ h_prev, dxw[:, 2 * H:].T @ (rs * h_prev)])
    dx = dxw @ W
    if direction == "backward":
        dx = dx[::-1]
    return dx, {"W": dxw.T @ xs, "U": dU, "b": dxw.sum(axis=0)}


# -- LSTM ----------------------------------------------------------------

def init_lstm(rng, d_in, hidden):
    W = np.concatenate([glorot_uniform(rng, hidden, d_in) for _ in range(4)])
    U = np.concatenate([glorot_uniform(rng, hidden, hidden) for _ in range(4)])
    return {"W": W, "U": U, "b": np.zeros(4 * hidden)}


def lstm_forward(x, params, direction="forward"):
    """Single-direction LSTM, gates stacked ``[i, f, o, g]``, zero initial h and c."""
    W, U, b = params["W"], params["U"], params["b"]
    H = U.shape[1]
    x = _check_input(x, W.shape[1], "lstm")
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    xs = x[::-1] if direction == "backward" else x
    T = xs.shape[0]
    xw = xs @ W.T + b
    dt = xw.dtype
    hs = np.zeros((T + 1, H), dtype=dt)
    cs = np.zeros((T + 1, H), dtype=dt)
    gates = np.empty((T, 4 * H), dtype=dt)
    tcs = np.empty((T, H), dtype=dt)
    for t in range(T):
        a = xw[t] + U @ hs[t]
        g = np.empty(4 * H, dtype=dt)
        g[:3 * H] = expit(a[:3 * H])
        g[3 * H:] = np.tanh(a[3 * H:])
        c = g[H:2 * H] * cs[t] + g[:H] * g[3 * H:]
        tc = np.tanh(c)
        cs[t + 1] = c
        hs[t + 1] = g[2 * H:3 * H] * tc
        gates[t] = g
        tcs[t] = tc
    out = hs[1:]
    if direction == "backward":
        out = out[::-1]
    return out.copy(), (xs, hs, cs, gates, tcs, direction)


def lstm_backward(dout, cache, params):
    xs, hs, cs, gates, tcs, direction = cache
    W, U = params["W"], params["U"]
    H = U.shape[1]
    dout = dout[::-1] if direction == "backward" else dout
    T = xs.shape[0]
    da = np.empty((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        g = gates[t]
        i, f, o, gg = g[:H], g[H:2 * H], g[2 * H:3 * H], g[3 * H:]
        tc = tcs[t]
        dh = dout[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da[t, :H] = dc * gg * i * (1.0 - i)
        da[t, H:2 * H] = dc * cs[t] * f * (1.0 - f)
        da[t, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        da[t, 3 * H:] = dc * i * (1.0 - gg * gg)
        dc_next = dc * f
        dh_next = U.T @ da[t]
    dx = da @ W
    if direction == "backward":
        dx = dx[::-1]
    return dx, {"W": da.T @ xs, "U": da.T @ hs[:-1], "b": da.sum(axis=0)}


# -- bidirectional wrapper -------------------------------------------------

_CELLS = {"gru": (gru_forward, gru_backward), "lstm": (lstm_forward, lstm_backward)}


def bidirectional_forward(x, fwd_params, bwd_params, cell="gru"):
    """``[forward_t || backward_t]`` concatenation of two independent directions."""
    if cell not in _CELLS:
        raise ValueError(f"unknown cell {cell!r}")
    if fwd_params["U"].shape != bwd_params["U"].shape:
        raise ValueError("forward and backward directions must share the hidden size")
    run, _ = _CELLS[cell]
    hf, cf = run(x, fwd_params, "forward")
    hb, cb = run(x, bwd_params, "backward")
    return np.concatenate([hf, hb], axis=1), (cf, cb, hf.shape[1], cell)


def bidirectional_backward(dout, cache, fwd_params, bwd_params):
    cf, cb, H, cell = cache
    _, back = _CELLS[cell]
    dxf, gf = back(dout[:, :H], cf, fwd_params)
    dxb, gb = back(dout[:, H:], cb, bwd_params)
    return dxf + dxb, gf, gb


# -- batched bidirectional ---------------------------------------------
#
# Several sequences are right-padded and both directions stacked on a
# leading axis of size 2, so each time step is one batched matmul. Padded
# steps receive zero upstream gradient, hence contribute exactly zero to
# every parameter gradient; no masking is needed.

def _pad_directions(seqs, width):
    """``(T_max, 2, B, width)`` time-major stack: forward order, then reversed."""
    T = max(x.shape[0] for x in seqs)
    out = np.zeros((T, 2, len(seqs), width))
    for i, x in enumerate(seqs):
        out[:x.shape[0], 0, i] = x
        out[:x.shape[0], 1, i] = x[::-1]
    return out


def _stack(fwd_params, bwd_params, name):
    return np.stack([fwd_params[name], bwd_params[name]])


def _gru_steps(xw, U, H):
    T = xw.shape[0]
    UzrT = U[:, :2 * H].transpose(0, 2, 1)
    UnT = U[:, 2 * H:].transpose(0, 2, 1)
    shape = xw.shape[1:3] + (H,)
    hs = np.zeros((T + 1,) + shape)
    gates = np.empty((T,) + shape[:2] + (3 * H,))
    for t in range(T):
        h = hs[t]
        zr = expit(xw[t, ..., :2 * H] + h @ UzrT)
        r = zr[..., H:]
        n = np.tanh(xw[t, ..., 2 * H:] + (r * h) @ UnT)
        hs[t + 1] = h + zr[..., :H] * (n - h)
        gates[t, ..., :2 * H] = zr
        gates[t, ..., 2 * H:] = n
    return hs, gates


def _gru_steps_backward(dout, hs, gates, U, H):
    T = dout.shape[0]
    Uzr, Un = U[:, :2 * H], U[:, 2 * H:]
    dxw = np.empty(gates.shape)
    dh_next = np.zeros(hs.shape[1:])
    for t in range(T - 1, -1, -1):
        h, g = hs[t], gates[t]
        z, r, n = g[..., :H], g[..., H:2 * H], g[..., 2 * H:]
        dh = dout[t] + dh_next
        dan = dh * z * (1.0 - n * n)
        dxw[t, ..., :H] = dh * (n - h) * z * (1.0 - z)
        dxw[t, ..., 2 * H:] = dan
        drh = dan @ Un
        dxw[t, ..., H:2 * H] = drh * h * r * (1.0 - r)
        dh_next = dh * (1.0 - z) + drh * r + dxw[t, ..., :2 * H] @ Uzr
    h_prev = hs[:-1]
    dU = np.concatenate([_contract(dxw[..., :2 * H], h_prev),
                         _contract(dxw[..., 2 * H:], gates[..., H:2 * H] * h_prev)], axis=1)
    return dxw, dU


def _lstm_steps(xw, U, H):
    T = xw.shape[0]
    UT = U.transpose(0, 2, 1)
    shape = xw.shape[1:3] + (H,)
    hs = np.zeros((T + 1,) + shape)
    cs = np.zeros((T + 1,) + shape)
    gates = np.empty(xw.shape)
    for t in range(T):
        a = xw[t] + hs[t] @ UT
        g = gates[t]
        g[..., :3 * H] = expit(a[..., :3 * H])
        g[..., 3 * H:] = np.tanh(a[..., 3 * H:])
        cs[t + 1] = g[..., H:2 * H] * cs[t] + g[..., :H] * g[..., 3 * H:]
        hs[t + 1] = g[..., 2 * H:3 * H] * np.tanh(cs[t + 1])
    return hs, (cs, gates)


def _lstm_steps_backward(dout, hs, state, U, H):
    cs, gates = state
    T = dout.shape[0]
    da = np.empty(gates.shape)
    dh_next = np.zeros(hs.shape[1:])
    dc_next = np.zeros(hs.shape[1:])
    for t in range(T - 1, -1, -1):
        g = gates[t]
        i, f, o, gg = g[..., :H], g[..., H:2 * H], g[..., 2 * H:3 * H], g[..., 3 * H:]
        tc = np.tanh(cs[t + 1])
        dh = dout[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        d = da[t]
        d[..., :H] = dc * gg * i * (1.0 - i)
        d[..., H:2 * H] = dc * cs[t] * f * (1.0 - f)
        d[..., 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        d[..., 3 * H:] = dc * i * (1.0 - gg * gg)
        dc_next = dc * f
        dh_next = d @ U
    return da, _contract(da, hs[:-1])


def _contract(a, b):
    """Sum over time and batch: ``(T, 2, B, m), (T, 2, B, n) -> (2, m, n)``."""
    a2 = a.transpose(1, 0, 2, 3).reshape(2, -1, a.shape[-1])
    b2 = b.transpose(1, 0, 2, 3).reshape(2, -1, b.shape[-1])
    return a2.transpose(0, 2, 1) @ b2


_BATCH_CELLS = {"gru": (_gru_steps, _gru_steps_backward),
                "lstm": (_lstm_steps, _lstm_steps_backward)}


def bidirectional_forward_batch(xs, fwd_params, bwd_params, cell="gru"):
    """:func:`bidirectional_forward` over a list of sequences in one padded pass.

    Returns the list of ``(T_i, 2H)`` outputs and a cache for
    :func:`bidirectional_backward_batch`. Results agree with the
    per-sequence path up to floating-point summation order.
    """
    if cell not in _BATCH_CELLS:
        raise ValueError(f"unknown cell {cell!r}")
    W, b, U = (_stack(fwd_params, bwd_params, k) for k in ("W", "b", "U"))
    H = U.shape[2]
    xs = [_check_input(x, W.shape[2], cell) for x in xs]
    X = _pad_directions(xs, W.shape[2])
    xw = X @ W.transpose(0, 2, 1) + b[:, None, :]
    run, _ = _BATCH_CELLS[cell]
    hs, state = run(xw, U, H)
    outs = []
    for i, x in enumerate(xs):
        T = x.shape[0]
        outs.append(np.concatenate([hs[1:T + 1, 0, i], hs[T:0:-1, 1, i]], axis=1))
    lengths = [x.shape[0] for x in xs]
    return outs, (X, hs, state, lengths, H, cell)


def bidirectional_backward_batch(douts, cache, fwd_params, bwd_params):
    X, hs, state, lengths, H, cell = cache
    W, U = _stack(fwd_params, bwd_params, "W"), _stack(fwd_params, bwd_params, "U")
    dpad = np.zeros((hs.shape[0] - 1,) + hs.shape[1:])
    for i, (d, T) in enumerate(zip(douts, lengths)):
        dpad[:T, 0, i] = d[:, :H]
        dpad[:T, 1, i] = d[::-1, H:]
    _, back = _BATCH_CELLS[cell]
    dxw, dU = back(dpad, hs, state, U, H)
    dX = dxw @ W
    dxs = [dX[:T, 0, i] + dX[T - 1::-1, 1, i] for i, T in enumerate(lengths)]
    dW = _contract(dxw, X)
    db = dxw.sum(axis=(0, 2))
    grads = [{"W": dW[k], "U": dU[k], "b": db[k]} for k in range(2)]
    return dxs, grads[0], grads[1]


# -- transformer -----------------------------------------------------------

@dataclass(frozen=True)
class TransformerConfig:
    d_model: int = 64
    n_heads: int = 4
    head_dim: int = 16
    ff_dim: int = 256
    n_layers: int = 2
    positional: bool = True

    def __post_init__(self):
        if self.d_model != self.n_heads * self.head_dim:
            raise ValueError("d_model must equal n_heads * head_dim")


def init_transformer(rng, d_in, cfg=TransformerConfig()):
    d, f = cfg.d_model, cfg.ff_dim
    p = {"in.W": glorot_uniform(rng, d, d_in), "in.b": np.zeros(d)}
    for layer in range(cfg.n_layers):
        pre = f"L{layer}."
        p[pre + "ln1.g"] = np.ones(d)
        p[pre + "ln1.b"] = np.zeros(d)
        p[pre + "Wqkv"] = np.concatenate([glorot_uniform(rng, d, d) for _ in range(3)])
        # no key bias: softmax over keys is invariant to it
        p[pre + "bq"] = np.zeros(d)
        p[pre + "bv"] = np.zeros(d)
        p[pre + "Wo"] = glorot_uniform(rng, d, d)
        p[pre + "bo"] = np.zeros(d)
        p[pre + "ln2.g"] = np.ones(d)
        p[pre + "ln2.b"] = np.zeros(d)
        p[pre + "W1"] = glorot_uniform(rng, f, d)
        p[pre + "b1"] = np.zeros(f)
        p[pre + "W2"] = glorot_uniform(rng, d, f)
        p[pre + "b2"] = np.zeros(d)
    return p


def attention_forward(x, Wqkv, bq, bv, Wo, bo, n_heads):
    T, d = x.shape
    hd = d // n_heads
    qkv = x @ Wqkv.T
    qkv[:, :d] += bq
    qkv[:, 2 * d:] += bv
    q, k, v = (qkv[:, i * d:(i + 1) * d].reshape(T, n_heads, hd).transpose(1, 0, 2)
               for i in range(3))
    attn = softmax(q @ k.transpose(0, 2, 1) / np.sqrt(hd), axis=-1)
    heads = attn @ v
    o = heads.transpose(1, 0, 2).reshape(T, d)
    return o @ Wo.T + bo, (x, q, k, v, attn, o)


def attention_backward(dy, cache, Wqkv, Wo):
    x, q, k, v, attn, o = cache
    n_heads, T, hd = q.shape
    d = n_heads * hd
    dWo = dy.T @ o
    dbo = dy.sum(axis=0)
    dheads = (dy @ Wo).reshape(T, n_heads, hd).transpose(1, 0, 2)
    dattn = dheads @ v.transpose(0, 2, 1)
    dv = attn.transpose(0, 2, 1) @ dheads
    ds = softmax_backward(dattn, attn) / np.sqrt(hd)
    dq = ds @ k
    dk = ds.transpose(0, 2, 1) @ q
    dqkv = np.concatenate([g.transpose(1, 0, 2).reshape(T, d) for g in (dq, dk, dv)], axis=1)
    return dqkv @ Wqkv, dqkv.T @ x, dq_sum(dqkv, d), dWo, dbo


def dq_sum(dqkv, d):
    col = dqkv.sum(axis=0)
    return col[:d], col[2 * d:]


def transformer_forward(x, params, cfg=TransformerConfig()):
    """Input projection, optional sinusoidal positions, then pre-norm blocks.

    Each block is ``x + MHA(LN(x))`` followed by ``x + FF(LN(x))`` with a
    ReLU feed-forward. The cache keeps per-layer attention matrices under
    ``cache["attn"]`` for inspection.
    """
    W_in = params["in.W"]
    x = _check_input(x, W_in.shape[1], "transformer")
    T = x.shape[0]
    z = x @ W_in.T + params["in.b"]
    if cfg.positional:
        z = z + positional_encoding(T, cfg.d_model)
    layers = []
    for layer in range(cfg.n_layers):
        pre = f"L{layer}."
        a_in, ln1 = layer_norm_forward(z, params[pre + "ln1.g"], params[pre + "ln1.b"])
        a, att = attention_forward(a_in, params[pre + "Wqkv"], params[pre + "bq"],
                                   params[pre + "bv"], params[pre + "Wo"], params[pre + "bo"],
                                   cfg.n_heads)
        z = z + a
        f_in, ln2 = layer_norm_forward(z, params[pre + "ln2.g"], params[pre + "ln2.b"])
        hid = f_in @ params[pre + "W1"].T + params[pre + "b1"]
        act = np.maximum(hid, 0.0)
        z = z + act @ params[pre + "W2"].T + params[pre + "b2"]
        layers.append((ln1, att, ln2, f_in, hid, act))
    return z, {"x": x, "layers": layers, "attn": [l[1][4] for l in layers], "cfg": cfg}


def transformer_backward(dz, cache, params):
    cfg = cache["cfg"]
    grads = {}
    for layer in range(cfg.n_layers - 1, -1, -1):
        pre = f"L{layer}."
        ln1, att, ln2, f_in, hid, act = cache["layers"][layer]
        grads[pre + "W2"] = dz.T @ act
        grads[pre + "b2"] = dz.sum(axis=0)
        dhid = (dz @ params[pre + "W2"]) * (hid > 0)
        grads[pre + "W1"] = dhid.T @ f_in
        grads[pre + "b1"] = dhid.sum(axis=0)
        dfin = dhid @ params[pre + "W1"]
        dres, grads[pre + "ln2.g"], grads[pre + "ln2.b"] = layer_norm_backward(dfin, ln2)
        dz = dz + dres
        da_in, grads[pre + "Wqkv"], (grads[pre + "bq"], grads[pre + "bv"]), \
            grads[pre + "Wo"], grads[pre + "bo"] = attention_backward(
                dz, att, params[pre + "Wqkv"], params[pre + "Wo"])
        dres, grads[pre + "ln1.g"], grads[pre + "ln1.b"] = layer_norm_backward(da_in, ln1)
        dz = dz + dres
    grads["in.W"] = dz.T @ cache["x"]
    grads["in.b"] = dz.sum(axis=0)
    return dz @ params["in.W"], grads
