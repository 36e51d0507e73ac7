import numpy as np
import pytest

from codebridge.errors import DomainError
from codebridge.nn import (
    Adam,
    MlpHead,
    SgdMomentum,
    TransformerConfig,
    TransformerLM,
    finite_difference_check,
    gelu,
    gelu_grad,
    layernorm_backward,
    layernorm_forward,
    params_hash,
    softmax,
)


def test_softmax_rows_normalized():
    rng = np.random.default_rng(0)
    x = rng.normal(scale=5.0, size=(4, 7, 11))
    s = softmax(x)
    assert np.all(np.abs(s.sum(axis=-1) - 1.0) < 1e-9)


def test_gelu_grad_matches_finite_difference():
    x = np.linspace(-4, 4, 101)
    eps = 1e-6
    fd = (gelu(x + eps) - gelu(x - eps)) / (2 * eps)
    assert np.max(np.abs(fd - gelu_grad(x))) < 1e-9


def test_layernorm_backward_matches_finite_difference():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 5))
    g = rng.normal(size=5)
    b = rng.normal(size=5)
    dout = rng.normal(size=(3, 5))
    y, cache = layernorm_forward(x, g, b)
    dx, dg, db = layernorm_backward(dout, cache)
    eps = 1e-6
    fd_dx = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp.flat[i] += eps
        yp, _ = layernorm_forward(xp, g, b)
        xm = x.copy()
        xm.flat[i] -= eps
        ym, _ = layernorm_forward(xm, g, b)
        fd_dx.flat[i] = ((yp - ym) * dout).sum() / (2 * eps)
    assert np.max(np.abs(fd_dx - dx)) < 1e-8


def test_mlp_head_structure():
    head = MlpHead(16, 8, hidden_width=32, seed=0)
    assert len(head.params) == 8  # 4 affine layers
    z = head(np.zeros((3, 16)))
    assert z.shape == (3, 8)


def test_transformer_gradcheck_small():
    cfg = TransformerConfig(vocab_size=13, context=12, d_model=16, n_heads=2,
                            n_layers=1, latent_dim=4)
    m = TransformerLM(cfg, seed=0)
    rng = np.random.default_rng(1)
    toks = rng.integers(0, 13, size=(2, 8))
    lats = rng.normal(size=(2, 8, 4))
    _, grads = m.loss_and_grads(toks, lats)
    err = finite_difference_check(lambda: m.nll(toks, lats), m.params, grads,
                                  epsilon=1e-4, n_coords=50, seed=2)
    assert err < 1e-3


def test_hidden_states_agree_with_forward():
    cfg = TransformerConfig(vocab_size=11, context=10, d_model=16, n_heads=2,
                            n_layers=2)
    m = TransformerLM(cfg, seed=3)
    toks = np.random.default_rng(0).integers(0, 11, size=(2, 9))
    logits, _ = m.forward(toks)
    hidden = m.hidden_states(toks)
    assert np.array_equal(hidden @ m.params["head.w"], logits)


def test_params_hash_detects_any_change():
    m = TransformerLM(TransformerConfig(vocab_size=7, context=8, d_model=8,
                                        n_heads=2, n_layers=1), seed=0)
    h0 = params_hash(m.params)
    assert params_hash(m.params) == h0
    m.params["head.w"][0, 0] += 1e-15
    assert params_hash(m.params) != h0


def test_context_overflow_rejected():
    m = TransformerLM(TransformerConfig(vocab_size=7, context=4, d_model=8,
                                        n_heads=2, n_layers=1), seed=0)
    with pytest.raises(DomainError):
        m.forward(np.zeros((1, 5), dtype=np.int64))


def test_sgd_momentum_update_rule():
    opt = SgdMomentum(lr=0.1, momentum=0.9)
    p = {"w": np.array([1.0])}
    g = {"w": np.array([2.0])}
    opt.step(p, g)
    assert p["w"][0] == pytest.approx(1.0 - 0.1 * 2.0)
    opt.step(p, g)
    # velocity = 0.9*2 + 2 = 3.8
    assert p["w"][0] == pytest.approx(0.8 - 0.1 * 3.8)


def test_sgd_validation():
    with pytest.raises(DomainError):
        SgdMomentum(lr=0.0)
    with pytest.raises(DomainError):
        SgdMomentum(lr=0.1, momentum=1.0)


def test_adam_moves_against_gradient():
    opt = Adam(lr=0.01)
    p = {"w": np.array([1.0, -1.0])}
    for _ in range(5):
        opt.step(p, {"w": np.array([1.0, -1.0])})
    assert p["w"][0] < 1.0 and p["w"][1] > -1.0


def test_head_dim_must_divide():
    with pytest.raises(DomainError):
        TransformerConfig(vocab_size=7, context=8, d_model=10, n_heads=4)
