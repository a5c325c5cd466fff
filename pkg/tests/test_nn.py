import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cadnet.exceptions import NumericalError
from cadnet.nn import (ParamSet, SequenceEncoderConfig, TransformerConfig,
                       bidirectional_backward, bidirectional_backward_batch,
                       bidirectional_forward, bidirectional_forward_batch, dense_backward,
                       dense_forward, encoder_backward, encoder_backward_many, encoder_forward,
                       encoder_forward_many, finite_diff_check, gru_backward, gru_forward,
                       init_dense, init_encoder, init_gru, init_lstm, init_transformer,
                       layer_norm_forward, lstm_backward, lstm_forward, softmax,
                       transformer_backward, transformer_forward)
from cadnet.nn.functional import positional_encoding, sigmoid

LD = np.longdouble


def _perturbed(params, rng, scale=0.1):
    return {k: v + rng.normal(0, scale, v.shape) for k, v in params.items()}


def layer_check(forward, backward, params, x, rng):
    """Relative FD error of ``sum(forward(x) * R)`` w.r.t. params and input.

    The analytic gradient comes from ``backward``; the oracle differences
    are taken in extended precision.
    """
    names = list(params)
    shapes = [params[k].shape for k in names]
    sizes = [int(np.prod(s)) for s in shapes]
    y0, _ = forward(x, params)
    R = rng.normal(size=y0.shape)

    def unpack(w):
        out, pos = {}, 0
        for k, shape, n in zip(names, shapes, sizes):
            out[k] = w[pos:pos + n].reshape(shape)
            pos += n
        return out, w[pos:].reshape(x.shape)

    def f(w):
        p, xv = unpack(w)
        y, cache = forward(xv, p)
        loss = np.sum(y * R)
        if w.dtype != np.float64:
            return loss, None
        dx, g = backward(R, cache, p)
        return float(loss), np.concatenate([np.ravel(g[k]) for k in names] + [dx.ravel()])

    w0 = np.concatenate([np.ravel(params[k]) for k in names] + [x.ravel()])
    return finite_diff_check(f, w0, oracle_dtype=LD)


# -- finite-difference checker --------------------------------------------------

def test_checker_on_quadratic(rng):
    w = rng.normal(size=10)
    err = finite_diff_check(lambda v: (0.5 * np.sum(v * v), v.copy()), w)
    assert err < 1e-10


def test_checker_on_constant(rng):
    err = finite_diff_check(lambda v: (3.0, np.zeros_like(v)), rng.normal(size=5))
    assert err < 1e-6


def test_checker_detects_corruption(rng):
    def f(v):
        g = v.copy()
        g[2] += 1.0
        return 0.5 * np.sum(v * v), g

    assert finite_diff_check(f, rng.normal(size=6)) > 0.1


def test_checker_detects_small_corruption(rng):
    # an error of 1e-4 of the largest entry still fails the 1e-6 bound
    w = rng.normal(size=6)

    def f(v):
        g = v.copy()
        g[4] += 1e-4 * np.max(np.abs(w))
        return 0.5 * np.sum(v * v), g

    assert finite_diff_check(f, w) > 1e-6


def test_checker_rejects_nonfinite():
    with pytest.raises(NumericalError):
        finite_diff_check(lambda v: (np.inf, v), np.zeros(2))
    with pytest.raises(NumericalError), np.errstate(invalid="ignore"):
        finite_diff_check(lambda v: (np.sum(np.log(v)), 1 / v), np.array([1e-7, 1.0]))


def test_checker_leaves_point_untouched(rng):
    w = rng.normal(size=4)
    before = w.copy()
    finite_diff_check(lambda v: (np.sum(v**3), 3 * v**2), w)
    assert np.array_equal(w, before)


# -- dense ---------------------------------------------------------------------

def test_dense_zero_params(rng):
    p = {"W": np.zeros((128, 6)), "b": np.zeros(128)}
    y, _ = dense_forward(rng.normal(size=(4, 6)), p)
    assert y.shape == (4, 128) and np.all(y == 0)


def test_dense_identity(rng):
    x = np.abs(rng.normal(size=(3, 128)))
    y, _ = dense_forward(x, {"W": np.eye(128), "b": np.zeros(128)})
    assert np.array_equal(y, x)


def test_dense_shape_mismatch(rng):
    with pytest.raises(ValueError):
        dense_forward(np.zeros((3, 5)), init_dense(rng, 6, 4))


@pytest.mark.parametrize("seed", range(20))
def test_dense_gradient(seed):
    rng = np.random.default_rng(seed)
    p = _perturbed(init_dense(rng, 5, 7), rng)
    assert layer_check(dense_forward, dense_backward, p, rng.normal(size=(4, 5)), rng) < 1e-6


# -- GRU / LSTM ------------------------------------------------------------------

def test_gru_zero_params_and_input():
    p = {"W": np.zeros((192, 8)), "U": np.zeros((192, 64)), "b": np.zeros(192)}
    h, (_, _, zs, _, ns, _) = gru_forward(np.zeros((5, 8)), p)
    assert np.all(h == 0)
    assert np.all(zs == 0.5) and np.all(ns == 0)


def test_gru_single_step(rng):
    p = _perturbed(init_gru(rng, 4, 3), rng, 0.5)
    x = rng.normal(size=(1, 4))
    W, U, b = p["W"], p["U"], p["b"]
    a = W @ x[0] + b
    z, r = sigmoid(a[:3]), sigmoid(a[3:6])
    n = np.tanh(a[6:])
    h, _ = gru_forward(x, p)
    assert np.allclose(h[0], z * n, atol=1e-15)
    hb, _ = gru_forward(x, p, direction="backward")
    assert np.array_equal(h, hb)


def test_gru_bad_direction(rng):
    with pytest.raises(ValueError):
        gru_forward(np.zeros((2, 4)), init_gru(rng, 4, 3), direction="sideways")
    with pytest.raises(ValueError):
        gru_forward(np.zeros((0, 4)), init_gru(rng, 4, 3))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 20.0))
def test_gru_state_bound(seed, scale):
    rng = np.random.default_rng(seed)
    p = _perturbed(init_gru(rng, 3, 4), rng, scale)
    h, _ = gru_forward(rng.normal(0, scale, size=(12, 3)), p)
    assert np.max(np.abs(h)) <= 1.0


def test_lstm_zero_params_and_input():
    p = {"W": np.zeros((256, 8)), "U": np.zeros((256, 64)), "b": np.zeros(256)}
    h, _ = lstm_forward(np.zeros((5, 8)), p)
    assert h.shape == (5, 64) and np.all(h == 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 20.0))
def test_lstm_output_bound(seed, scale):
    rng = np.random.default_rng(seed)
    p = _perturbed(init_lstm(rng, 3, 4), rng, scale)
    h, _ = lstm_forward(rng.normal(0, scale, size=(12, 3)), p)
    assert np.max(np.abs(h)) <= 1.0


@pytest.mark.parametrize("cell", ["gru", "lstm"])
@pytest.mark.parametrize("direction", ["forward", "backward"])
@pytest.mark.parametrize("seed", range(10))
def test_recurrent_gradient(cell, direction, seed):
    rng = np.random.default_rng(seed)
    init, fwd, bwd = ((init_gru, gru_forward, gru_backward) if cell == "gru"
                      else (init_lstm, lstm_forward, lstm_backward))
    p = _perturbed(init(rng, 3, 4), rng)
    x = rng.normal(size=(int(rng.integers(1, 7)), 3))
    err = layer_check(lambda xv, pp: fwd(xv, pp, direction), bwd, p, x, rng)
    assert err < 1e-6


# -- bidirectional -------------------------------------------------------------------

@pytest.mark.parametrize("cell", ["gru", "lstm"])
def test_bidirectional_palindrome_symmetry(cell, rng):
    init = init_gru if cell == "gru" else init_lstm
    p = _perturbed(init(rng, 3, 4), rng, 0.5)
    half = rng.normal(size=(3, 3))
    x = np.concatenate([half, half[::-1]])
    y, _ = bidirectional_forward(x, p, p, cell)
    H = 4
    swapped = np.concatenate([y[::-1, H:], y[::-1, :H]], axis=1)
    assert np.allclose(y, swapped, atol=1e-15)


def test_bidirectional_single_step(rng):
    f, b = init_gru(rng, 3, 4), init_gru(rng, 3, 4)
    x = rng.normal(size=(1, 3))
    y, _ = bidirectional_forward(x, f, b)
    assert np.array_equal(y, np.concatenate([gru_forward(x, f)[0], gru_forward(x, b)[0]], 1))


def test_bidirectional_hidden_mismatch(rng):
    with pytest.raises(ValueError):
        bidirectional_forward(np.zeros((2, 3)), init_gru(rng, 3, 4), init_gru(rng, 3, 5))


@pytest.mark.parametrize("cell", ["gru", "lstm"])
@pytest.mark.parametrize("seed", range(20))
def test_bidirectional_gradient(cell, seed):
    rng = np.random.default_rng(seed)
    init = init_gru if cell == "gru" else init_lstm
    f, b = _perturbed(init(rng, 3, 4), rng), _perturbed(init(rng, 3, 4), rng)
    p = {**{"f." + k: v for k, v in f.items()}, **{"b." + k: v for k, v in b.items()}}

    def split(pp):
        return ({k[2:]: v for k, v in pp.items() if k.startswith("f.")},
                {k[2:]: v for k, v in pp.items() if k.startswith("b.")})

    def fwd(x, pp):
        return bidirectional_forward(x, *split(pp), cell=cell)

    def bwd(dy, cache, pp):
        dx, gf, gb = bidirectional_backward(dy, cache, *split(pp))
        return dx, {**{"f." + k: v for k, v in gf.items()}, **{"b." + k: v for k, v in gb.items()}}

    assert layer_check(fwd, bwd, p, rng.normal(size=(5, 3)), rng) < 1e-6


@pytest.mark.parametrize("cell", ["gru", "lstm"])
def test_batched_matches_per_sequence(cell, rng):
    init = init_gru if cell == "gru" else init_lstm
    f, b = _perturbed(init(rng, 5, 6), rng, 0.3), _perturbed(init(rng, 5, 6), rng, 0.3)
    xs = [rng.normal(size=(T, 5)) for T in (4, 1, 9, 2)]
    ds = [rng.normal(size=(x.shape[0], 12)) for x in xs]
    outs, cache = bidirectional_forward_batch(xs, f, b, cell)
    dxs, gf, gb = bidirectional_backward_batch(ds, cache, f, b)
    sum_f = {k: np.zeros_like(v) for k, v in f.items()}
    sum_b = {k: np.zeros_like(v) for k, v in b.items()}
    for x, d, o, dx in zip(xs, ds, outs, dxs):
        o1, c1 = bidirectional_forward(x, f, b, cell)
        dx1, g1, g2 = bidirectional_backward(d, c1, f, b)
        assert np.allclose(o, o1, rtol=0, atol=1e-13)
        assert np.allclose(dx, dx1, rtol=0, atol=1e-13)
        for k in f:
            sum_f[k] += g1[k]
            sum_b[k] += g2[k]
    for k in f:
        assert np.allclose(gf[k], sum_f[k], rtol=0, atol=1e-12)
        assert np.allclose(gb[k], sum_b[k], rtol=0, atol=1e-12)


# -- transformer ---------------------------------------------------------------------

def _tcfg(**kw):
    return TransformerConfig(**{"d_model": 8, "n_heads": 2, "head_dim": 4, "ff_dim": 16,
                                "n_layers": 2, **kw})


def test_transformer_config_validation():
    with pytest.raises(ValueError):
        TransformerConfig(d_model=60)
    cfg = TransformerConfig()
    assert (cfg.n_layers, cfg.n_heads, cfg.head_dim, cfg.ff_dim) == (2, 4, 16, 256)


def test_attention_rows_sum_to_one(rng):
    cfg = TransformerConfig()
    p = init_transformer(rng, 10, cfg)
    y, cache = transformer_forward(rng.normal(size=(7, 10)), p, cfg)
    assert y.shape == (7, 64)
    assert len(cache["attn"]) == 2
    for attn in cache["attn"]:
        assert attn.shape == (4, 7, 7)
        assert np.max(np.abs(attn.sum(axis=-1) - 1.0)) < 1e-12


def test_transformer_single_step_identity_mixing(rng):
    cfg = _tcfg()
    p = _perturbed(init_transformer(rng, 5, cfg), rng)
    _, cache = transformer_forward(rng.normal(size=(1, 5)), p, cfg)
    for attn in cache["attn"]:
        assert np.all(attn == 1.0)


def test_transformer_positional_toggle(rng):
    p = init_transformer(rng, 5, _tcfg())
    x = np.tile(rng.normal(size=(1, 5)), (3, 1))
    with_pos, _ = transformer_forward(x, p, _tcfg())
    no_pos, _ = transformer_forward(x, p, _tcfg(positional=False))
    assert np.allclose(no_pos, no_pos[0])
    assert not np.allclose(with_pos[0], with_pos[1])


def test_positional_encoding_values():
    pe = positional_encoding(3, 4)
    assert np.allclose(pe[0], [0, 1, 0, 1])
    assert pe[2, 0] == pytest.approx(np.sin(2.0))
    assert pe[2, 3] == pytest.approx(np.cos(2.0 / 100.0))


@pytest.mark.parametrize("seed", range(20))
def test_transformer_gradient(seed):
    rng = np.random.default_rng(seed)
    cfg = _tcfg()
    p = _perturbed(init_transformer(rng, 3, cfg), rng)
    x = rng.normal(size=(int(rng.integers(1, 6)), 3))
    err = layer_check(lambda xv, pp: transformer_forward(xv, pp, cfg), transformer_backward,
                      p, x, rng)
    assert err < 1e-6


# -- functional ----------------------------------------------------------------------

def test_softmax_rows(rng):
    x = rng.normal(0, 30, size=(50, 9))
    assert np.max(np.abs(softmax(x).sum(axis=-1) - 1)) < 1e-12


def test_layer_norm_moments(rng):
    x = rng.normal(3, 5, size=(20, 16))
    y, _ = layer_norm_forward(x, np.ones(16), np.zeros(16))
    assert np.max(np.abs(y.mean(axis=-1))) < 1e-12
    assert np.max(np.abs(y.var(axis=-1) - 1)) < 1e-9


def test_sigmoid_stable():
    s = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert s[1] == 0.5 and s[0] >= 0 and s[2] == 1.0
    assert sigmoid(np.array([1, 2])).dtype == np.float64
    assert sigmoid(np.ones(2, dtype=LD)).dtype == LD


# -- ParamSet / encoders ---------------------------------------------------------------

def test_paramset_behaviour():
    ps = ParamSet({"a": np.zeros((2, 3)), "b.c": np.ones(4)})
    with pytest.raises(KeyError):
        ps.add("a", np.zeros(1))
    with pytest.raises(ValueError):
        ps["a"] = np.zeros((3, 2))
    with pytest.raises(KeyError):
        ps["zzz"] = np.zeros(1)
    with pytest.raises(ValueError):
        ps.add("bad", [np.nan])
    v = ps.view("b")
    v["c"][0] = 7.0
    assert ps["b.c"][0] == 7.0
    flat = ps.flat()
    assert flat.size == ps.n_params == 10
    other = ps.copy()
    other.set_flat(flat + 1)
    assert ps["a"][0, 0] == 0 and other["a"][0, 0] == 1
    assert ParamSet.from_json(ps.to_json()).equals(ps)


@pytest.mark.parametrize("variant", ["average", "dnn", "gru", "lstm", "transformer"])
def test_init_determinism_and_shapes(variant):
    cfg = SequenceEncoderConfig(variant, 64)
    a = init_encoder(cfg, np.random.default_rng(4))
    b = init_encoder(cfg, np.random.default_rng(4))
    assert a.equals(b) and np.array_equal(a.flat(), b.flat())
    y, _ = encoder_forward(np.random.default_rng(0).normal(size=(5, 64)), a, cfg)
    assert y.shape == (5, {"average": 64, "dnn": 128, "gru": 128, "lstm": 128,
                           "transformer": 64}[variant])
    assert cfg.output_dim == y.shape[1]
    if variant == "average":
        assert a.n_params == 0


def test_encoder_config_validation():
    with pytest.raises(ValueError):
        SequenceEncoderConfig("cnn")
    cfg = SequenceEncoderConfig("transformer", 12)
    assert SequenceEncoderConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("variant", ["average", "dnn", "gru", "lstm", "transformer"])
def test_encoder_many_matches_single(variant, rng):
    cfg = SequenceEncoderConfig(variant, 6, dnn_units=5, rnn_hidden=4, transformer=_tcfg())
    p = init_encoder(cfg, rng)
    p.set_flat(p.flat() + rng.normal(0, 0.1, p.n_params))
    xs = [rng.normal(size=(T, 6)) for T in (3, 5, 1)]
    ds = [rng.normal(size=(x.shape[0], cfg.output_dim)) for x in xs]
    hs, cache = encoder_forward_many(xs, p, cfg)
    dxs, grads = encoder_backward_many(ds, cache, p, cfg)
    total = {}
    for x, d, h, dx in zip(xs, ds, hs, dxs):
        h1, c1 = encoder_forward(x, p, cfg)
        dx1, g1 = encoder_backward(d, c1, p, cfg)
        assert np.allclose(h, h1, rtol=0, atol=1e-13)
        assert np.allclose(dx, dx1, rtol=0, atol=1e-13)
        for k, v in g1.items():
            total[k] = total.get(k, 0) + v
    assert set(total) == set(grads)
    for k in total:
        assert np.allclose(grads[k], total[k], rtol=0, atol=1e-12)
