import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cake import diffmath as dm
from cake.corpus import UNK
from cake.diffmath import Array, ShapeError, Tape
from cake.encoders import bigru_encode, bridge, embed, gru_cell, gru_sequence, init_bigru, init_encoder_params
from cake.params import ParamStore


def sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def scalar_gru(x, h, W, U, b):
    """Loop-only GRU step with gates ordered (update, reset, candidate)."""
    H = len(h)
    z, r, n = [0.0] * H, [0.0] * H, [0.0] * H
    for k in range(H):
        az = b[k] + sum(x[i] * W[i][k] for i in range(len(x))) + sum(h[j] * U[j][k] for j in range(H))
        ar = b[H + k] + sum(x[i] * W[i][H + k] for i in range(len(x))) + sum(h[j] * U[j][H + k] for j in range(H))
        z[k], r[k] = sig(az), sig(ar)
    for k in range(H):
        an = b[2 * H + k] + sum(x[i] * W[i][2 * H + k] for i in range(len(x)))
        an += sum(r[j] * h[j] * U[j][2 * H + k] for j in range(H))
        n[k] = math.tanh(an)
    return [(1 - z[k]) * h[k] + z[k] * n[k] for k in range(H)]


def rand(rng, *shape, scale=0.5):
    return Array(rng.uniform(-scale, scale, shape), dtype=np.float64)


def test_embed_unk_and_extended_rows():
    table = Array(np.arange(20, dtype=np.float64).reshape(5, 4))
    np.testing.assert_array_equal(embed(table, [UNK]).data, table.data[[1]])
    np.testing.assert_array_equal(embed(table, [5 + 3], ext_size=4).data, table.data[[UNK]])
    assert embed(table, [0, 2, 3, 4, 2]).shape == (5, 4)


def test_embed_rejects_out_of_range():
    table = Array(np.zeros((5, 4)))
    with pytest.raises(ValueError):
        embed(table, [9], ext_size=2)


def test_gru_cell_zero_weights_halves_state():
    H, E = 3, 2
    zeros = lambda *s: Array(np.zeros(s), dtype=np.float64)
    h = Array([0.4, -0.6, 0.2], dtype=np.float64)
    out = gru_cell(zeros(E), h, zeros(E, 3 * H), zeros(H, 3 * H), zeros(3 * H))
    np.testing.assert_allclose(out.data, 0.5 * h.data)
    out0 = gru_cell(zeros(E), zeros(H), zeros(E, 3 * H), zeros(H, 3 * H), zeros(3 * H))
    np.testing.assert_array_equal(out0.data, 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_gru_cell_matches_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    E, H = 3, 2
    x, h, W, U, b = rand(rng, E), rand(rng, H), rand(rng, E, 3 * H), rand(rng, H, 3 * H), rand(rng, 3 * H)
    want = scalar_gru(x.data.tolist(), h.data.tolist(), W.data.tolist(), U.data.tolist(), b.data.tolist())
    np.testing.assert_allclose(gru_cell(x, h, W, U, b).data, want, atol=1e-12)


def test_gru_cell_shape_error():
    with pytest.raises(ShapeError):
        gru_cell(Array(np.zeros(3)), Array(np.zeros(2)), Array(np.zeros((4, 6))), Array(np.zeros((2, 6))),
                 Array(np.zeros(6)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gru_output_bounded_and_in_hull(seed):
    rng = np.random.default_rng(seed)
    E, H = 3, 4
    W, U, b = rand(rng, E, 3 * H, scale=3), rand(rng, H, 3 * H, scale=3), rand(rng, 3 * H, scale=3)
    h = rand(rng, H, scale=0.99)
    for _ in range(4):
        x = rand(rng, E, scale=5)
        nxt = gru_cell(x, h, W, U, b).data
        assert np.all(np.abs(nxt) < 1)
        h = Array(nxt)


def test_fused_scan_matches_composite_cell():
    rng = np.random.default_rng(3)
    N, L, E, H = 2, 5, 3, 4
    x, W, U, b = rand(rng, N, L, E), rand(rng, E, 3 * H), rand(rng, H, 3 * H), rand(rng, 3 * H)
    fused = gru_sequence(x, W, U, b).data
    h = Array(np.zeros((N, H)))
    for t in range(L):
        h = gru_cell(x[:, t], h, W, U, b)
        np.testing.assert_allclose(fused[:, t], h.data, atol=1e-12)


def test_fused_scan_gradient_matches_composite():
    rng = np.random.default_rng(4)
    N, L, E, H = 2, 3, 2, 3
    x, W, U, b = rand(rng, N, L, E), rand(rng, E, 3 * H), rand(rng, H, 3 * H), rand(rng, 3 * H)
    for p in (W, U, b):
        p.requires_grad = True

    def grads(fused):
        with Tape() as tape:
            if fused:
                out = gru_sequence(x, W, U, b)
            else:
                h, hs = Array(np.zeros((N, H))), []
                for t in range(L):
                    h = gru_cell(x[:, t], h, W, U, b)
                    hs.append(h)
                out = dm.stack(hs, axis=1)
            loss = dm.sum(out * out)
        return tape.backward(loss, [W, U, b])

    for a, c in zip(grads(True), grads(False)):
        np.testing.assert_allclose(a, c, atol=1e-12)


def bigru_store(E, H, seed=0):
    store = ParamStore(seed, np.float64)
    init_bigru(store, "enc", E, H)
    return store


def test_bigru_shapes_and_length_one():
    store = bigru_store(3, 2)
    x = rand(np.random.default_rng(0), 1, 3)
    out = bigru_encode(x, store, "enc").data
    assert out.shape == (1, 4)
    fw = gru_cell(x[0], Array(np.zeros(2)), store["enc.fw.W"], store["enc.fw.U"], store["enc.fw.b"]).data
    bw = gru_cell(x[0], Array(np.zeros(2)), store["enc.bw.W"], store["enc.bw.U"], store["enc.bw.b"]).data
    np.testing.assert_allclose(out[0], np.concatenate([fw, bw]), atol=1e-12)
    assert bigru_encode(rand(np.random.default_rng(1), 7, 3), store, "enc").shape == (7, 4)


def test_bigru_rejects_empty():
    with pytest.raises(ShapeError):
        bigru_encode(Array(np.zeros((0, 3))), bigru_store(3, 2), "enc")


def test_reversal_swaps_halves():
    rng = np.random.default_rng(5)
    store = bigru_store(3, 2)
    # tie both directions so that reversal is an exact symmetry
    for k in ("W", "U", "b"):
        store[f"enc.bw.{k}"].data = store[f"enc.fw.{k}"].data.copy()
    x = rand(rng, 6, 3)
    out = bigru_encode(x, store, "enc").data
    rev = bigru_encode(Array(x.data[::-1].copy()), store, "enc").data
    np.testing.assert_allclose(rev[::-1, :2], out[:, 2:], atol=1e-12)
    np.testing.assert_allclose(rev[::-1, 2:], out[:, :2], atol=1e-12)


def test_masked_batch_equals_unpadded():
    rng = np.random.default_rng(6)
    store = bigru_store(3, 2)
    x = rand(rng, 4, 3)
    alone = bigru_encode(x, store, "enc").data
    padded = np.concatenate([x.data, rng.normal(size=(3, 3))])[None]
    mask = np.array([[True] * 4 + [False] * 3])
    batched = bigru_encode(Array(padded), store, "enc", mask).data[0, :4]
    np.testing.assert_allclose(batched, alone, atol=1e-12)


def test_bridge_zero_map_and_shape():
    store = ParamStore(0, np.float64)
    init_encoder_params(store, 10, 4, 3)
    hc = rand(np.random.default_rng(0), 2, 5, 6)
    assert bridge(hc, store).shape == (2, 6)
    store["bridge.W"].data[:] = 0
    np.testing.assert_array_equal(bridge(hc, store).data, 0.0)


def test_gradient_reaches_context_encoder_through_bridge():
    store = ParamStore(1, np.float64)
    init_encoder_params(store, 10, 4, 3)
    emb = Array(np.random.default_rng(2).normal(size=(1, 4, 4)))
    target = Array(np.random.default_rng(3).normal(size=(1, 6)))
    params = [store["enc_ctx.fw.W"], store["enc_ctx.bw.U"]]

    def loss(ps):
        h0 = bridge(bigru_encode(emb, store, "enc_ctx"), store)
        return dm.sum((h0 - target) * (h0 - target))

    for p in params:
        p.requires_grad = True
    with Tape() as tape:
        value = loss(params)
    grads = tape.backward(value, params)
    assert all(np.abs(g).max() > 0 for g in grads)
    assert dm.grad_check(loss, params) <= 1e-4
