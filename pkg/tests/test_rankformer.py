import numpy as np
import pytest

from helpers import GRAD_TOL, ORACLE_TOL, assert_grad_close, central_diff
from oracles import oracle_refine
from ordino.errors import NonFiniteError, ShapeError
from ordino.rankformer import (
    RankFormerParams,
    gelu,
    gelu_grad,
    init_rankformer,
    refine,
    refine_vjp,
    refine_with_cache,
)


def small_params(d=8, heads=2, alpha=0.3, seed=0, random_w2=True):
    p = init_rankformer(d, heads=heads, d_ff=2 * d, alpha=alpha, seed=seed)
    if random_w2:
        rng = np.random.default_rng(seed + 100)
        p.w2 = rng.normal(0.0, 0.2, size=p.w2.shape)
        p.b2 = rng.normal(0.0, 0.2, size=p.b2.shape)
    return p


def test_gelu_values_and_grad():
    x = np.array([-3.0, -1.0, 0.0, 1.0, 3.0])
    y = gelu(x)
    assert y[2] == 0.0
    assert y[3] == pytest.approx(0.8413447460685429, abs=1e-12)
    g = central_diff(lambda: float(gelu(x).sum()), x)
    assert_grad_close(gelu_grad(x), g, GRAD_TOL, "gelu")


def test_output_shape_matches_input():
    rng = np.random.default_rng(1)
    p = small_params()
    r = rng.normal(size=(5, 3, 8))
    out = refine(r, p)
    assert out.shape == r.shape
    assert np.isfinite(out).all()


def test_alpha_zero_is_bit_exact_identity():
    rng = np.random.default_rng(2)
    p = small_params(alpha=0.0)
    r = rng.normal(size=(4, 2, 8))
    out, cache = refine_with_cache(r, p)
    assert np.array_equal(out, r)
    assert out is not r  # a copy, not an alias
    d_out = rng.normal(size=out.shape)
    d_x, grads = refine_vjp(cache, d_out, p)
    assert np.array_equal(d_x, d_out)
    assert all(np.abs(g).max() == 0.0 for g in grads.values())


def test_zero_ffn_output_projection_scales_input_exactly():
    rng = np.random.default_rng(3)
    p = init_rankformer(8, heads=2, alpha=0.25, seed=4)  # w2 = b2 = 0 at init
    r = rng.normal(size=(6, 2, 8))
    out = refine(r, p)
    assert np.allclose(out, 0.75 * r, atol=1e-15)


def test_permutation_equivariant_along_templates():
    rng = np.random.default_rng(4)
    p = small_params()
    r = rng.normal(size=(7, 3, 8))
    perm = rng.permutation(7)
    out_perm = refine(r[perm], p)
    out = refine(r, p)
    assert np.allclose(out_perm, out[perm], atol=1e-12)


def test_token_slots_do_not_mix():
    # attention runs per token position: changing slot 1 leaves slot 0 output
    # untouched
    rng = np.random.default_rng(5)
    p = small_params()
    r = rng.normal(size=(5, 3, 8))
    r2 = r.copy()
    r2[:, 1, :] += rng.normal(size=(5, 8))
    out, out2 = refine(r, p), refine(r2, p)
    assert np.array_equal(out[:, 0, :], out2[:, 0, :])
    assert np.array_equal(out[:, 2, :], out2[:, 2, :])
    assert not np.allclose(out[:, 1, :], out2[:, 1, :])


def test_matches_scalar_oracle():
    rng = np.random.default_rng(6)
    for trial in range(8):
        d = int(rng.choice([4, 8]))
        heads = int(rng.choice([1, 2]))
        p = small_params(d=d, heads=heads, alpha=0.4, seed=trial)
        m = int(rng.integers(2, 5))
        n = int(rng.integers(1, 4))
        r = rng.normal(size=(m, n, d))
        got = refine(r, p)
        want = oracle_refine(r, p.arrays(), p.alpha, p.heads, p.ln_eps)
        assert np.abs(got - want).max() <= ORACLE_TOL


def test_hand_size_two_case():
    # M=2, n=1, d=2, H=1: small enough that the oracle loops are trivially
    # auditable, and softmax over two templates has a closed form
    p = RankFormerParams(
        alpha=0.5,
        heads=1,
        ln_scale=np.array([1.0, 2.0]),
        ln_shift=np.array([0.1, -0.1]),
        wq=np.array([[0.3, -0.2], [0.1, 0.4]]),
        bq=np.array([0.05, 0.0]),
        wk=np.array([[0.2, 0.1], [-0.3, 0.2]]),
        bk=np.array([0.0, -0.05]),
        wv=np.array([[0.5, 0.0], [0.0, 0.5]]),
        bv=np.array([0.1, 0.1]),
        wo=np.array([[1.0, 0.2], [-0.2, 1.0]]),
        bo=np.array([0.0, 0.0]),
        w1=np.array([[0.4, -0.1, 0.2, 0.0], [0.0, 0.3, -0.2, 0.1]]),
        b1=np.zeros(4),
        w2=np.array([[0.2, 0.0], [0.0, 0.2], [0.1, -0.1], [-0.1, 0.1]]),
        b2=np.array([0.01, -0.01]),
    )
    r = np.array([[[0.6, -0.4]], [[-0.2, 0.8]]])
    got = refine(r, p)
    want = oracle_refine(r, p.arrays(), 0.5, 1, p.ln_eps)
    assert np.abs(got - want).max() <= ORACLE_TOL
    assert got.shape == (2, 1, 2)


def test_input_gradient_finite_difference():
    rng = np.random.default_rng(7)
    p = small_params(d=8, heads=2, alpha=0.35, seed=9)
    r = rng.normal(size=(3, 2, 8))
    d_out = rng.normal(size=r.shape)
    _, cache = refine_with_cache(r, p)
    d_x, _ = refine_vjp(cache, d_out, p)

    def value():
        return float((refine(r, p) * d_out).sum())

    numeric = central_diff(value, r)
    assert_grad_close(d_x, numeric, GRAD_TOL, "refine/d_input")


def test_parameter_gradients_finite_difference():
    rng = np.random.default_rng(8)
    p = small_params(d=8, heads=2, alpha=0.35, seed=10)
    r = rng.normal(size=(3, 2, 8))
    d_out = rng.normal(size=r.shape)
    _, cache = refine_with_cache(r, p)
    _, grads = refine_vjp(cache, d_out, p)
    assert set(grads) == set(p.arrays())

    def value():
        return float((refine(r, p) * d_out).sum())

    for name, arr in p.arrays().items():
        numeric = central_diff(value, arr)
        assert_grad_close(grads[name], numeric, GRAD_TOL, f"refine/d_{name}")


def test_init_properties():
    p = init_rankformer(16, heads=8, seed=3)
    assert p.d_embed == 16
    assert p.w1.shape == (16, 64)  # d_ff defaults to 4 * d_embed
    assert np.abs(p.w2).max() == 0.0
    assert np.abs(p.b2).max() == 0.0
    q = init_rankformer(16, heads=8, seed=3)
    assert np.array_equal(p.wq, q.wq)
    r = init_rankformer(16, heads=8, seed=4)
    assert not np.array_equal(p.wq, r.wq)


def test_validation_errors():
    with pytest.raises(ShapeError):
        init_rankformer(10, heads=4)  # 10 % 4 != 0
    with pytest.raises(ShapeError):
        init_rankformer(8, heads=2, alpha=1.5)
    p = small_params()
    with pytest.raises(ShapeError):
        refine(np.zeros((3, 8)), p)
    with pytest.raises(ShapeError):
        refine(np.zeros((3, 2, 7)), p)
    with pytest.raises(NonFiniteError):
        refine(np.full((2, 1, 8), np.nan), p)
    bad = small_params()
    bad.wq = bad.wq.copy()
    bad.wq[0, 0] = np.inf
    with pytest.raises(NonFiniteError):
        RankFormerParams(**{**{k: v for k, v in bad.arrays().items()}, "alpha": 0.1, "heads": 2})
