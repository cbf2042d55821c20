import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dspe import kernels
from dspe.arith import POSIT
from dspe.errors import ConfigError
from dspe.model import ModelSpec, demanded_multiplies, init_model, reference_forward

rng = np.random.default_rng(0)


def dense_attention(Q, K, V, d_k):
    s = Q @ K.T / np.sqrt(d_k)
    e = np.exp(s)
    return (e / e.sum(axis=1, keepdims=True)) @ V


def test_single_key():
    out, p = kernels.attention(np.ones((1, 4)), np.ones((1, 4)), np.arange(4.0)[None], 4)
    assert p.tolist() == [[1.0]]
    assert out.tolist() == [[0.0, 1.0, 2.0, 3.0]]


def test_identical_keys_average_values():
    K = np.tile(rng.standard_normal(4), (5, 1))
    V = rng.standard_normal((5, 3))
    out, _ = kernels.attention(rng.standard_normal((2, 4)), K, V, 4)
    assert np.allclose(out, V.mean(axis=0))


@given(st.integers(1, 6), st.integers(1, 6))
def test_attention_matches_dense(n, m):
    Q, K, V = rng.standard_normal((n, 8)), rng.standard_normal((m, 8)), rng.standard_normal((m, 5))
    out, p = kernels.attention(Q, K, V, 8)
    assert np.allclose(out, dense_attention(Q, K, V, 8))
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_attention_rejects_zero_dk():
    with pytest.raises(ConfigError):
        kernels.attention(np.ones((1, 2)), np.ones((1, 2)), np.ones((1, 2)), 0)


def test_mla_one_head_identity_is_attention():
    Q, K, V = (rng.standard_normal((3, 4)) for _ in range(3))
    out = kernels.mla(Q, K, V, 1, 4, np.eye(4))
    assert np.allclose(out, kernels.attention(Q, K, V, 4)[0])


def test_mla_head_permutation_invariance():
    Q, K, V = (rng.standard_normal((3, 8)) for _ in range(3))
    W = rng.standard_normal((8, 5))
    perm = [4, 5, 6, 7, 0, 1, 2, 3]
    a = kernels.mla(Q, K, V, 2, 4, W)
    b = kernels.mla(Q[:, perm], K[:, perm], V[:, perm], 2, 4, W[perm])
    assert np.allclose(a, b)


def test_mla_matches_dense():
    Q, K, V = (rng.standard_normal((2, 8)) for _ in range(3))
    W = rng.standard_normal((8, 3))
    heads = [dense_attention(Q[:, s], K[:, s], V[:, s], 4) for s in (slice(0, 4), slice(4, 8))]
    assert np.allclose(kernels.mla(Q, K, V, 2, 4, W), np.concatenate(heads, axis=1) @ W)


def test_mla_needs_a_head():
    with pytest.raises(ConfigError):
        kernels.mla(np.ones((1, 2)), np.ones((1, 2)), np.ones((1, 2)), 0, 2, np.eye(2))


def make_experts(E, d, f):
    return [(rng.standard_normal((d, f)), rng.standard_normal((f, d))) for _ in range(E)]


def test_top1_gate_is_that_expert():
    experts = make_experts(3, 4, 6)
    x = rng.standard_normal(4)
    Wg = np.zeros((4, 3))
    Wg[:, 2] = x  # expert 2 has the largest logit
    out, g, ids = kernels.moe(x, Wg, experts, 1)
    assert ids == [2] and g.tolist() == [0.0, 0.0, 1.0]
    assert np.allclose(out, kernels.expert_ffn(x, *experts[2])[0])


def test_unselected_experts_are_not_evaluated():
    experts = make_experts(4, 4, 6)
    x = rng.standard_normal(4)
    Wg = rng.standard_normal((4, 4))
    picked, _ = kernels.top_k_gate(x @ Wg, 2)
    poisoned = [e if i in picked else (None, None) for i, e in enumerate(experts)]
    out, _, ids = kernels.moe(x, Wg, poisoned, 2)
    assert ids == picked


def test_moe_matches_dense_masked_sum():
    experts = make_experts(4, 4, 6)
    x = rng.standard_normal(4)
    Wg = rng.standard_normal((4, 4))
    out, g, _ = kernels.moe(x, Wg, experts, 2)
    dense = sum(g[i] * np.maximum(x @ W1, 0) @ W2 for i, (W1, W2) in enumerate(experts))
    assert np.allclose(out, dense)
    assert (g > 0).sum() == 2 and (g >= 0).all() and g.sum() == pytest.approx(1.0)


def test_empty_selection_combines_to_zero():
    assert kernels.combine(np.array([]), np.zeros((0, 5))).tolist() == [0.0] * 5


def test_gate_ties_prefer_lower_id():
    picked, w = kernels.top_k_gate(np.array([1.0, 3.0, 3.0, 3.0]), 2)
    assert picked == [1, 2]
    assert w.tolist() == [0.5, 0.5]
    with pytest.raises(ConfigError):
        kernels.top_k_gate(np.zeros(3), 4)


# ---- model -------------------------------------------------------------------------


SMALL = ModelSpec(d_model=16, heads=2, d_k=4, experts=3, top_k=2, d_ff=8, seed=1)


def test_closed_form_multiplies():
    # per token: qkv 16*24, o 8*16, gate 16*3, experts 2*(2*16*8), combine 2*16
    per_token = 384 + 128 + 48 + 512 + 32
    assert demanded_multiplies(SMALL, 5) == 5 * per_token + 2 * 8 * 15


def test_model_init_is_seeded():
    a, b = init_model(SMALL), init_model(SMALL)
    for x, y in zip(a.layers[0].matrices().values(), b.layers[0].matrices().values()):
        assert np.array_equal(x, y)


def test_spec_validation():
    with pytest.raises(ConfigError):
        ModelSpec(top_k=5, experts=4).validate()
    with pytest.raises(ConfigError):
        ModelSpec(heads=0).validate()


@pytest.mark.parametrize("numeric", ["float64", "posit8"])
def test_reference_forward_invariants(numeric):
    model = init_model(SMALL)
    x = rng.standard_normal((6, 16))
    tr = reference_forward(model, x, numeric)
    assert tr.kv_lengths == [[1, 2, 3, 4, 5, 6]]
    g = tr.gates[0]
    assert ((g > 0).sum(axis=1) <= SMALL.top_k).all() and (g >= 0).all()
    for row in tr.softmax_rows:
        assert abs(row.sum() - 1.0) < (1e-6 if numeric == "float64" else 0.2)


def test_reference_forward_is_causal():
    model = init_model(SMALL)
    x = rng.standard_normal((6, 16))
    y = x.copy()
    y[4:] += 1.0
    a = reference_forward(model, x).outputs
    b = reference_forward(model, y).outputs
    assert np.array_equal(a[:4], b[:4])


def test_reference_forward_shape_checked():
    with pytest.raises(ConfigError):
        reference_forward(init_model(SMALL), np.zeros((3, 5)))


def test_multi_layer_reference():
    spec = ModelSpec(d_model=16, heads=2, d_k=4, experts=3, top_k=1, d_ff=8, n_layers=2)
    tr = reference_forward(init_model(spec), rng.standard_normal((4, 16)), "posit8")
    assert len(tr.gates) == 2 and tr.outputs.shape == (4, 16)
    assert np.array_equal(POSIT.quantize(tr.outputs), tr.outputs)
