import numpy as np
import pytest

import oracles
from helpers import (
    EXACT_TOL,
    GRAD_TOL,
    ORACLE_TOL,
    assert_grad_close,
    central_diff,
    random_batch,
    unit_rows,
)
from ordino.encoders import EncodedBatch
from ordino.errors import ConfigError, LossError
from ordino.losses import (
    LossConfig,
    asym_contrastive_i2t,
    asym_contrastive_i2t_grad,
    asym_contrastive_t2i,
    asym_contrastive_t2i_grad,
    ce_softmax_grad,
    cop_loss,
    cop_loss_grad,
    cpce_diversity,
    cpce_diversity_grad,
    cpce_tightness,
    cpce_tightness_grad,
    cross_entropy,
    label_distance_weights,
    pce_reference,
    scop_loss,
    scop_loss_grad,
    softmax_probs,
    stage_loss,
    stage_loss_grad,
)

TAU = 0.07


# ---------------------------------------------------------------- oracles


def test_t2i_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(40):
        b = int(rng.integers(1, 9))
        m = int(rng.integers(2, 8))
        batch = random_batch(rng, b, m, 6)
        got = asym_contrastive_t2i(batch, TAU)
        want = oracles.oracle_t2i(batch.v, batch.r, batch.labels, TAU)
        assert abs(got - want) <= ORACLE_TOL


def test_i2t_matches_oracle_both_denominators():
    rng = np.random.default_rng(1)
    for _ in range(40):
        b = int(rng.integers(1, 9))
        m = int(rng.integers(2, 8))
        batch = random_batch(rng, b, m, 6)
        got_all = asym_contrastive_i2t(batch, TAU, denominator="all")
        want_all = oracles.oracle_i2t_all(batch.v, batch.r, batch.labels, TAU)
        assert abs(got_all - want_all) <= ORACLE_TOL
        got_batch = asym_contrastive_i2t(batch, TAU, denominator="batch")
        want_batch = oracles.oracle_i2t_batch(batch.v, batch.r, batch.labels, TAU)
        assert abs(got_batch - want_batch) <= ORACLE_TOL


def test_cop_matches_oracle():
    rng = np.random.default_rng(2)
    for form in ("linear", "absolute", "squared"):
        for _ in range(25):
            b = int(rng.integers(1, 9))
            m = int(rng.integers(2, 8))
            batch = random_batch(rng, b, m, 6)
            gamma = float(rng.uniform(0.2, 2.0))
            cfg = LossConfig(gamma=gamma, weight_form=form)
            got = cop_loss(batch, cfg)
            want = oracles.oracle_cop(batch.v, batch.r, batch.labels, gamma, form)
            assert abs(got - want) <= ORACLE_TOL


def test_tightness_and_diversity_match_oracles():
    rng = np.random.default_rng(3)
    for _ in range(30):
        b = int(rng.integers(2, 9))
        m = int(rng.integers(2, 8))
        batch = random_batch(rng, b, m, 6)
        got_t = cpce_tightness(batch)
        want_t = oracles.oracle_tightness(batch.v, batch.r, batch.labels)
        assert abs(got_t - want_t) <= ORACLE_TOL
        d_feat = int(rng.integers(4, 17))
        got_d = cpce_diversity(batch, d_feat=d_feat)
        want_d = oracles.oracle_diversity(batch.v, batch.r, batch.labels, d_feat, 1e-6)
        assert abs(got_d - want_d) <= ORACLE_TOL


def test_pce_reference_matches_oracle_with_explicit_p():
    rng = np.random.default_rng(4)
    for _ in range(25):
        m = int(rng.integers(2, 6))
        n = int(rng.integers(m, 12))
        z = unit_rows(rng, n, 5)
        labels = rng.integers(0, m, size=n)
        labels[:m] = np.arange(m)  # every class inhabited
        lam = float(rng.uniform(0.5, 2.0))
        p = rng.uniform(0.1, 1.0, size=(n, m))
        p /= p.sum(axis=1, keepdims=True)
        tight, div, total = oracles.oracle_pce(z, labels, p, lam)
        terms = pce_reference(z, labels, lam, p=p, n_classes=m)
        assert abs(terms.tightness - tight) <= ORACLE_TOL
        assert abs(terms.diversity - div) <= ORACLE_TOL
        assert abs(terms.total - total) <= ORACLE_TOL


def test_pce_reference_default_assignments():
    # tightness never depends on the soft assignments, so the default-p
    # path must agree with the oracle on that term and stay finite overall
    rng = np.random.default_rng(5)
    z = unit_rows(rng, 9, 5)
    labels = np.array([0, 1, 2, 0, 1, 2, 0, 1, 2])
    terms = pce_reference(z, labels, 1.3)
    p_any = np.full((9, 3), 1.0 / 3.0)
    tight, _, _ = oracles.oracle_pce(z, labels, p_any, 1.3)
    assert abs(terms.tightness - tight) <= ORACLE_TOL
    assert np.isfinite(terms.total)
    with pytest.raises(LossError):
        pce_reference(z, labels, 1.3, n_classes=5)  # class 3 empty
    with pytest.raises(LossError):
        pce_reference(z[:1], labels[:1])
    with pytest.raises(LossError):
        pce_reference(z, labels, lam=0.0)


def test_ce_matches_oracle():
    # tau mild enough that no true-class probability hits the log floor,
    # where the clamped implementation deliberately departs from the
    # unclamped reference
    tau = 0.5
    rng = np.random.default_rng(6)
    for _ in range(30):
        b = int(rng.integers(1, 9))
        m = int(rng.integers(2, 8))
        batch = random_batch(rng, b, m, 6)
        p = softmax_probs(batch.v, batch.r, tau)
        got = cross_entropy(p, batch.labels)
        want = oracles.oracle_ce_softmax(batch.v, batch.r, batch.labels, tau)
        assert abs(got - want) <= ORACLE_TOL
        val, _, _ = ce_softmax_grad(batch, tau)
        assert abs(val - want) <= ORACLE_TOL


def test_ce_floors_vanishing_probabilities():
    p = np.array([[1.0 - 1e-12, 1e-12]])
    labels = np.array([1])
    got = cross_entropy(p, labels, eps=1e-6)
    assert got == pytest.approx(-np.log(1e-6))


def test_label_distance_weights_match_oracle():
    for m in (2, 3, 5, 11):
        for form in ("linear", "absolute", "squared"):
            got = label_distance_weights(m, form)
            want = oracles.oracle_label_distance_weights(m, form)
            assert np.abs(got - want).max() <= ORACLE_TOL
            assert np.allclose(got, got.T)
            assert np.all(np.diag(got) == 0.0)


def test_label_distance_weights_validation():
    with pytest.raises(LossError):
        label_distance_weights(1, "linear")
    with pytest.raises(ConfigError):
        label_distance_weights(4, "cubic")


# ---------------------------------------------------------- finite diffs


def fd_check(value_fn, grad, x, what):
    num = central_diff(value_fn, x)
    assert_grad_close(grad, num, GRAD_TOL, what)


def test_t2i_gradient():
    rng = np.random.default_rng(10)
    for i in range(22):
        b = int(rng.integers(1, 8))
        m = int(rng.integers(2, 7))
        batch = random_batch(rng, b, m, 5)
        _, dv, dr = asym_contrastive_t2i_grad(batch, TAU)
        fd_check(lambda: asym_contrastive_t2i(batch, TAU), dv, batch.v, f"t2i/dv[{i}]")
        fd_check(lambda: asym_contrastive_t2i(batch, TAU), dr, batch.r, f"t2i/dr[{i}]")


def test_i2t_gradient_all_and_batch():
    rng = np.random.default_rng(11)
    for i in range(22):
        b = int(rng.integers(1, 8))
        m = int(rng.integers(2, 7))
        batch = random_batch(rng, b, m, 5)
        for denom in ("all", "batch"):
            _, dv, dr = asym_contrastive_i2t_grad(batch, TAU, denominator=denom)
            fd_check(
                lambda: asym_contrastive_i2t(batch, TAU, denominator=denom),
                dv,
                batch.v,
                f"i2t-{denom}/dv[{i}]",
            )
            fd_check(
                lambda: asym_contrastive_i2t(batch, TAU, denominator=denom),
                dr,
                batch.r,
                f"i2t-{denom}/dr[{i}]",
            )


def test_cop_gradients_including_gamma():
    rng = np.random.default_rng(12)
    for i in range(22):
        b = int(rng.integers(1, 8))
        m = int(rng.integers(2, 7))
        batch = random_batch(rng, b, m, 5)
        gamma = float(rng.uniform(0.3, 1.8))
        cfg = LossConfig(gamma=gamma)
        _, dv, dr, dgamma = cop_loss_grad(batch, cfg)
        fd_check(lambda: cop_loss(batch, cfg), dv, batch.v, f"cop/dv[{i}]")
        fd_check(lambda: cop_loss(batch, cfg), dr, batch.r, f"cop/dr[{i}]")
        eps = 1e-6
        up = cop_loss(batch, LossConfig(gamma=gamma + eps))
        dn = cop_loss(batch, LossConfig(gamma=gamma - eps))
        assert_grad_close(
            np.array([dgamma]), np.array([(up - dn) / (2 * eps)]), GRAD_TOL, f"cop/dgamma[{i}]"
        )


def test_tightness_and_diversity_gradients():
    rng = np.random.default_rng(13)
    for i in range(22):
        b = int(rng.integers(2, 8))
        m = int(rng.integers(2, 7))
        batch = random_batch(rng, b, m, 5)
        _, dv, dr = cpce_tightness_grad(batch)
        fd_check(lambda: cpce_tightness(batch), dv, batch.v, f"tight/dv[{i}]")
        fd_check(lambda: cpce_tightness(batch), dr, batch.r, f"tight/dr[{i}]")
        _, dv2, dr2 = cpce_diversity_grad(batch, d_feat=8)
        fd_check(lambda: cpce_diversity(batch, d_feat=8), dv2, batch.v, f"div/dv[{i}]")
        fd_check(lambda: cpce_diversity(batch, d_feat=8), dr2, batch.r, f"div/dr[{i}]")


def test_ce_softmax_gradient():
    rng = np.random.default_rng(14)
    for i in range(22):
        b = int(rng.integers(1, 8))
        m = int(rng.integers(2, 7))
        batch = random_batch(rng, b, m, 5)
        _, dv, dr = ce_softmax_grad(batch, TAU)

        def value():
            return cross_entropy(softmax_probs(batch.v, batch.r, TAU), batch.labels)

        fd_check(value, dv, batch.v, f"ce/dv[{i}]")
        fd_check(value, dr, batch.r, f"ce/dr[{i}]")


def test_stage_loss_gradients():
    rng = np.random.default_rng(15)
    cfg = LossConfig()
    for i in range(12):
        b = int(rng.integers(2, 7))
        m = int(rng.integers(2, 6))
        batch = random_batch(rng, b, m, 5)
        total1, br1, dv1, dr1 = stage_loss_grad(1, batch, cfg)
        assert set(br1) == {"t2i", "i2t", "cop", "total"}
        assert total1 == pytest.approx(br1["total"])
        fd_check(lambda: stage_loss(1, batch, cfg)[0], dv1, batch.v, f"stage1/dv[{i}]")
        fd_check(lambda: stage_loss(1, batch, cfg)[0], dr1, batch.r, f"stage1/dr[{i}]")

        total2, br2, dv2, dr2 = stage_loss_grad(2, batch, cfg)
        assert set(br2) == {"ce", "scop", "total"}
        assert total2 == pytest.approx(br2["total"])
        fd_check(lambda: stage_loss(2, batch, cfg)[0], dv2, batch.v, f"stage2/dv[{i}]")
        # the stage-2 ordering regularizer treats rank texts as constants,
        # so the analytic dr must match the classification term alone
        c_ce = cfg.stage2_weights[0]

        def ce_only():
            return c_ce * cross_entropy(
                softmax_probs(batch.v, batch.r, cfg.tau), batch.labels, cfg.eps_log
            )

        fd_check(ce_only, dr2, batch.r, f"stage2/dr-ce[{i}]")


# --------------------------------------------------------------- identities


def test_scop_is_cop_at_gamma_zero():
    rng = np.random.default_rng(20)
    cfg = LossConfig(gamma=0.0)
    for _ in range(15):
        b = int(rng.integers(1, 8))
        m = int(rng.integers(2, 7))
        batch = random_batch(rng, b, m, 5)
        assert abs(scop_loss(batch, cfg) - cop_loss(batch, cfg)) <= EXACT_TOL
        vs, dvs = scop_loss_grad(batch, cfg)
        vc, dvc, _, _ = cop_loss_grad(batch, cfg)
        assert abs(vs - vc) <= EXACT_TOL
        assert np.abs(dvs - dvc).max() <= EXACT_TOL


def test_scop_grad_returns_image_side_only():
    rng = np.random.default_rng(21)
    batch = random_batch(rng, 4, 5, 6)
    out = scop_loss_grad(batch, LossConfig())
    assert len(out) == 2


def test_scop_ignores_config_gamma():
    rng = np.random.default_rng(28)
    batch = random_batch(rng, 5, 4, 6)
    a = scop_loss(batch, LossConfig(gamma=0.0))
    b = scop_loss(batch, LossConfig(gamma=1.7))
    assert a == b


def test_t2i_reduces_to_standard_contrastive_on_distinct_labels():
    # one image per class: the grouped text-anchored loss collapses to
    # plain softmax contrast over the class columns
    rng = np.random.default_rng(22)
    for _ in range(15):
        m = int(rng.integers(2, 8))
        batch = random_batch(rng, m, m, 6, distinct_labels=True)
        got = asym_contrastive_t2i(batch, TAU)
        s = batch.v @ batch.r.T
        ref = 0.0
        for i in range(m):
            col = s[:, batch.labels[i]] / TAU
            col = col - col.max()
            ref -= float(col[i] - np.log(np.exp(col).sum())) / m
        assert abs(got - ref) <= 1e-12 * max(1.0, abs(ref))


def test_t2i_single_image_is_zero():
    rng = np.random.default_rng(23)
    batch = random_batch(rng, 1, 5, 6)
    assert asym_contrastive_t2i(batch, TAU) == 0.0
    val, dv, dr = asym_contrastive_t2i_grad(batch, TAU)
    assert val == 0.0
    assert np.abs(dv).max() == 0.0
    assert np.abs(dr).max() == 0.0


def test_cop_single_image_keeps_attraction_term():
    rng = np.random.default_rng(24)
    batch = random_batch(rng, 1, 5, 6)
    t = batch.r[batch.labels[0]]
    cfg = LossConfig(gamma=1.0)
    val = cop_loss(batch, cfg)
    assert val == pytest.approx(-float(batch.v[0] @ t), abs=1e-12)
    _, _, _, dgamma = cop_loss_grad(batch, cfg)
    assert dgamma == 0.0


def test_diversity_requires_two_images():
    rng = np.random.default_rng(25)
    batch = random_batch(rng, 1, 4, 6)
    with pytest.raises(LossError):
        cpce_diversity(batch)


def test_empty_batch_rejected():
    batch = EncodedBatch(v=np.zeros((0, 4)), r=np.eye(4), labels=np.zeros(0, dtype=int))
    with pytest.raises(LossError):
        asym_contrastive_t2i(batch, TAU)
    with pytest.raises(LossError):
        asym_contrastive_i2t(batch, TAU)
    with pytest.raises(LossError):
        cop_loss(batch, LossConfig())


# ------------------------------------------------------------------- config


def test_loss_config_validation():
    with pytest.raises(ConfigError):
        LossConfig(tau=0.0)
    with pytest.raises(ConfigError):
        LossConfig(lam=-1.0)
    with pytest.raises(ConfigError):
        LossConfig(gamma=-0.5)
    with pytest.raises(ConfigError):
        LossConfig(weight_form="other")
    with pytest.raises(ConfigError):
        LossConfig(i2t_denominator="rows")
    with pytest.raises(ConfigError):
        LossConfig(stage1_weights=(1.0, 1.0))
    with pytest.raises(ConfigError):
        LossConfig(stage2_weights=(1.0, -1.0))
    with pytest.raises(ConfigError):
        LossConfig.from_dict({"tau": 0.07, "bogus": 1})
    cfg = LossConfig.from_dict({"tau": 0.05, "stage1_weights": [0.1, 0.1, 3.0]})
    assert cfg.tau == 0.05
    assert cfg.to_dict()["stage1_weights"] == [0.1, 0.1, 3.0]
    assert LossConfig.from_dict(cfg.to_dict()) == cfg


def test_stage_loss_zero_weights_vanish():
    rng = np.random.default_rng(26)
    batch = random_batch(rng, 4, 5, 6)
    cfg = LossConfig(stage1_weights=(0.0, 0.0, 0.0), stage2_weights=(0.0, 0.0))
    total1, _ = stage_loss(1, batch, cfg)
    total2, _ = stage_loss(2, batch, cfg)
    assert total1 == 0.0
    assert total2 == 0.0


def test_stage_loss_rejects_unknown_stage():
    rng = np.random.default_rng(27)
    batch = random_batch(rng, 3, 4, 5)
    with pytest.raises(ConfigError):
        stage_loss(3, batch, LossConfig())
