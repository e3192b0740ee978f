import math

import numpy as np
import pytest

from xcon.engine.losses import (Batch, coarse_loss, cosine_lr, mixed_batch_loss,
                                sup_contrastive_loss, unsup_contrastive_loss)


def unit_rows(rng, shape):
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def fd_grad(f, x, eps=1e-6):
    """Central finite differences of scalar f with respect to array x (in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        g.reshape(-1)[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return (np.abs(analytic - numeric) / denom).max()


# ------------------------------------------------------------- unit values

def test_unsup_identical_embeddings_ln3():
    z = np.array([[1.0, 0.0], [1.0, 0.0]])
    loss, _, _ = unsup_contrastive_loss(z, z.copy(), tau=1.0)
    assert loss == pytest.approx(math.log(3.0), abs=1e-9)


def test_unsup_orthogonal_pairs():
    # hand value: every anchor sees positive sim 1 and two sim-0 negatives,
    # so each term is log((e + 2) / e)
    z = np.array([[1.0, 0.0], [0.0, 1.0]])
    loss, _, _ = unsup_contrastive_loss(z, z.copy(), tau=1.0)
    expected = math.log((math.e + 2.0) / math.e)
    assert loss == pytest.approx(expected, abs=1e-9)
    assert loss == pytest.approx(0.5514, abs=1e-4)


def test_unsup_needs_two_rows():
    z = np.array([[1.0, 0.0]])
    with pytest.raises(ValueError, match="no negatives"):
        unsup_contrastive_loss(z, z.copy(), tau=1.0)


def test_sup_lone_positive_pair_zero():
    z = np.array([[0.6, 0.8], [0.6, 0.8]])
    loss, _ = sup_contrastive_loss(z, np.array([3, 3]), tau=1.0)
    assert loss == pytest.approx(0.0, abs=1e-9)


def test_sup_two_classes_orthogonal():
    # per anchor: positive sim 1, two negatives sim 0 -> log(1 + 2/e)
    z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    labels = np.array([0, 0, 1, 1])
    loss, _ = sup_contrastive_loss(z, labels, tau=1.0)
    assert loss == pytest.approx(math.log(1.0 + 2.0 / math.e), abs=1e-9)
    assert loss == pytest.approx(0.5514, abs=1e-4)


def test_sup_no_positive_pairs():
    z = np.eye(3)
    with pytest.raises(ValueError, match="no positive pairs"):
        sup_contrastive_loss(z, np.array([0, 1, 2]), tau=1.0)


def test_sup_skips_anchor_without_positive():
    rng = np.random.default_rng(0)
    z = unit_rows(rng, (5, 4))
    labels = np.array([0, 0, 1, 1, 2])  # the class-2 anchor has no partner
    with_loner, _ = sup_contrastive_loss(z, labels, tau=0.5)
    assert np.isfinite(with_loner)


# ------------------------------------------------------- gradient oracles

def test_unsup_gradient_matches_fd():
    rng = np.random.default_rng(1)
    z = unit_rows(rng, (4, 8))
    z_hat = unit_rows(rng, (4, 8))
    loss, dz, dzh = unsup_contrastive_loss(z, z_hat, tau=0.3)
    fdz = fd_grad(lambda: unsup_contrastive_loss(z, z_hat, tau=0.3)[0], z)
    fdzh = fd_grad(lambda: unsup_contrastive_loss(z, z_hat, tau=0.3)[0], z_hat)
    assert rel_err(dz, fdz) < 1e-4
    assert rel_err(dzh, fdzh) < 1e-4


def test_sup_gradient_matches_fd():
    rng = np.random.default_rng(2)
    z = unit_rows(rng, (6, 5))
    labels = np.array([0, 0, 1, 1, 1, 2])
    _, dz = sup_contrastive_loss(z, labels, tau=0.4)
    fdz = fd_grad(lambda: sup_contrastive_loss(z, labels, tau=0.4)[0], z)
    assert rel_err(dz, fdz) < 1e-4


def test_mixed_batch_gradient_matches_fd():
    rng = np.random.default_rng(3)
    b = 6
    z = unit_rows(rng, (b, 4))
    z_hat = unit_rows(rng, (b, 4))
    labels = np.array([0, 0, 1, -1, -1, 1])
    mask = labels >= 0
    batch = Batch(z=z, z_hat=z_hat, labels=labels, labeled_mask=mask)
    _, dz, dzh = mixed_batch_loss(batch, tau=0.2, lam=0.35)

    def f():
        return mixed_batch_loss(Batch(z=z, z_hat=z_hat, labels=labels,
                                      labeled_mask=mask), tau=0.2, lam=0.35)[0]

    assert rel_err(dz, fd_grad(f, z)) < 1e-4
    assert rel_err(dzh, fd_grad(f, z_hat)) < 1e-4


# ------------------------------------------------------------- invariances

def test_loss_invariant_under_batch_permutation():
    rng = np.random.default_rng(4)
    z = unit_rows(rng, (7, 6))
    z_hat = unit_rows(rng, (7, 6))
    labels = np.array([0, 1, 0, 2, 1, 2, 0])
    base_u, _, _ = unsup_contrastive_loss(z, z_hat, tau=0.5)
    base_s, _ = sup_contrastive_loss(z, labels, tau=0.5)
    for _ in range(5):
        p = rng.permutation(7)
        lu, _, _ = unsup_contrastive_loss(z[p], z_hat[p], tau=0.5)
        ls, _ = sup_contrastive_loss(z[p], labels[p], tau=0.5)
        assert lu == pytest.approx(base_u, rel=1e-12)
        assert ls == pytest.approx(base_s, rel=1e-12)


def test_unsup_invariant_under_rotation():
    rng = np.random.default_rng(5)
    z = unit_rows(rng, (5, 6))
    z_hat = unit_rows(rng, (5, 6))
    q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    base, _, _ = unsup_contrastive_loss(z, z_hat, tau=0.7)
    rotated, _, _ = unsup_contrastive_loss(z @ q, z_hat @ q, tau=0.7)
    assert rotated == pytest.approx(base, rel=1e-10)


def test_small_tau_dominated_by_hardest_negative():
    # positive sim 0.5, one negative sim ~0.995: shrinking tau inflates the loss
    z = np.array([[1.0, 0.0], [0.995, math.sqrt(1 - 0.995 ** 2)]])
    z_hat = np.array([[0.5, math.sqrt(0.75)], [0.3, math.sqrt(0.91)]])
    loss_1, _, _ = unsup_contrastive_loss(z, z_hat, tau=1.0)
    loss_01, _, _ = unsup_contrastive_loss(z, z_hat, tau=0.1)
    assert loss_01 > loss_1


# ------------------------------------------------------------- coarse loss

def make_batches(rng, bu=4, bl=4, p=6, n_classes=2):
    bu_batch = Batch(z=unit_rows(rng, (bu, p)), z_hat=unit_rows(rng, (bu, p)),
                     labels=np.full(bu, -1), labeled_mask=np.zeros(bu, dtype=bool))
    labels = np.arange(bl) % n_classes
    bl_batch = Batch(z=unit_rows(rng, (bl, p)), z_hat=unit_rows(rng, (bl, p)),
                     labels=labels, labeled_mask=np.ones(bl, dtype=bool))
    return bu_batch, bl_batch


def test_coarse_lambda_endpoints():
    rng = np.random.default_rng(6)
    bu, bl = make_batches(rng)
    z = np.vstack([bu.z, bl.z])
    z_hat = np.vstack([bu.z_hat, bl.z_hat])
    unsup, _, _ = unsup_contrastive_loss(z, z_hat, tau=0.5)
    sup, _ = sup_contrastive_loss(bl.z, bl.labels, tau=0.5)
    l0, _ = coarse_loss(bu, bl, tau=0.5, lam=0.0)
    l1, _ = coarse_loss(bu, bl, tau=0.5, lam=1.0)
    assert l0 == pytest.approx(unsup, rel=1e-12)
    assert l1 == pytest.approx(sup, rel=1e-12)


def test_coarse_lambda_mix():
    rng = np.random.default_rng(7)
    bu, bl = make_batches(rng)
    z = np.vstack([bu.z, bl.z])
    z_hat = np.vstack([bu.z_hat, bl.z_hat])
    unsup, _, _ = unsup_contrastive_loss(z, z_hat, tau=0.5)
    sup, _ = sup_contrastive_loss(bl.z, bl.labels, tau=0.5)
    mixed, _ = coarse_loss(bu, bl, tau=0.5, lam=0.35)
    assert mixed == pytest.approx(0.65 * unsup + 0.35 * sup, rel=1e-12)


def test_coarse_no_positives_supervised_term_zero():
    rng = np.random.default_rng(8)
    bu, bl = make_batches(rng, bl=3, n_classes=3)  # every labeled row unique class
    z = np.vstack([bu.z, bl.z])
    z_hat = np.vstack([bu.z_hat, bl.z_hat])
    unsup, _, _ = unsup_contrastive_loss(z, z_hat, tau=0.5)
    mixed, _ = coarse_loss(bu, bl, tau=0.5, lam=0.35)
    assert mixed == pytest.approx(0.65 * unsup, rel=1e-12)


# -------------------------------------------------------------- cosine lr

def test_cosine_lr_endpoints_and_midpoint():
    assert cosine_lr(0, 100, 0.1) == pytest.approx(0.1)
    assert cosine_lr(100, 100, 0.1) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(50, 100, 0.1) == pytest.approx(0.05)


def test_cosine_lr_step_out_of_range():
    with pytest.raises(ValueError, match="outside"):
        cosine_lr(101, 100, 0.1)
