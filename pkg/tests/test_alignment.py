import math

import numpy as np
import pytest
from scipy.special import logsumexp
from sklearn.base import clone

from noisyalign import numerics as nx
from noisyalign.alignment import (
    AdamW,
    AlignmentModel,
    ConfidenceWeightedAligner,
    ParamGroup,
    ProjectionHead,
    TrainingBatch,
    _batch_bounds,
    contrastive_loss,
    cosine_lr,
    directional_losses,
    train_step,
)
from noisyalign.confidence import Narrative
from noisyalign.exceptions import ContractError, DimensionError, TrainingDivergenceError
from noisyalign.numerics import Tensor
from noisyalign.tokens import tokenize


def unit_rows(rng, b, d):
    z = rng.normal(size=(b, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def reference_loss(zv, zt, c, tau):
    s = zv @ zt.T / tau
    diag = np.diag(s)
    v2t = logsumexp(s, axis=1) - diag
    t2v = logsumexp(s, axis=0) - diag
    return float(np.sum(c * (v2t + t2v)) / (2 * len(c)))


def test_weighted_loss_matches_reference(rng):
    for _ in range(20):
        b = rng.integers(1, 9)
        zv, zt = unit_rows(rng, b, 6), unit_rows(rng, b, 6)
        c = rng.uniform(0.01, 1.0, size=b)
        tau = rng.uniform(0.01, 1.0)
        assert contrastive_loss(zv, zt, c, tau).item() == pytest.approx(reference_loss(zv, zt, c, tau), abs=1e-11)


def test_directional_terms_are_nonnegative(rng):
    zv, zt = unit_rows(rng, 5, 4), unit_rows(rng, 5, 4)
    v2t, t2v = directional_losses(zv, zt, np.ones(5), 0.07)
    assert np.all(v2t.numpy() >= 0) and np.all(t2v.numpy() >= 0)


def test_loss_gradients(rng):
    zv = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    zt = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    log_tau = Tensor(math.log(0.2), requires_grad=True)
    c = rng.uniform(0.1, 1, size=4)
    err = nx.grad_check(lambda: contrastive_loss(nx.l2_normalize(zv), nx.l2_normalize(zt), c, nx.exp(log_tau)),
                        [zv, zt, log_tau])
    assert err < 1e-6


def test_loss_contracts(rng):
    zv = unit_rows(rng, 3, 4)
    with pytest.raises(ContractError):
        contrastive_loss(zv * 2, zv, np.ones(3), 0.1)
    with pytest.raises(ContractError):
        contrastive_loss(zv, zv, np.array([1.0, 0.0, 1.0]), 0.1)
    with pytest.raises(ContractError):
        contrastive_loss(zv, zv, np.ones(3), 2.0)
    with pytest.raises(DimensionError):
        contrastive_loss(zv, zv[:2], np.ones(3), 0.1)


def test_projection_head_shapes():
    head = ProjectionHead(8, 5, seed=0)
    assert head(np.zeros((3, 8))).shape == (3, 5)
    with pytest.raises(DimensionError):
        head(np.zeros((3, 7)))


def test_cosine_schedule():
    assert cosine_lr(1.0, 0, 10) == 1.0
    assert cosine_lr(1.0, 5, 10) == pytest.approx(0.5)
    assert cosine_lr(1.0, 10, 10) == pytest.approx(0.0, abs=1e-15)


def test_adamw_matches_reference_update():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    q = Tensor(np.array([0.5]), requires_grad=True)
    opt = AdamW([ParamGroup([p]), ParamGroup([q], 10.0, decay=False)], 0.1, 0, weight_decay=0.5)
    grads = [np.array([0.3, -0.1]), np.array([2.0])]
    ref_p, ref_q = p.data.copy(), q.data.copy()
    m = [np.zeros(2), np.zeros(1)]
    v = [np.zeros(2), np.zeros(1)]
    for t in (1, 2):
        p.grad, q.grad = grads[0] * t, grads[1] * t
        opt.step()
        for i, (lr, decay) in enumerate([(0.1, True), (1.0, False)]):
            g = grads[i] * t
            m[i] = 0.9 * m[i] + 0.1 * g
            v[i] = 0.999 * v[i] + 0.001 * g * g
            update = lr * (m[i] / (1 - 0.9**t)) / (np.sqrt(v[i] / (1 - 0.999**t)) + 1e-8)
            if i == 0:
                ref_p = ref_p * (1 - lr * 0.5) - update
            else:
                ref_q = ref_q - update
    np.testing.assert_allclose(p.data, ref_p, rtol=1e-14)
    np.testing.assert_allclose(q.data, ref_q, rtol=1e-14)


def small_model(**kw):
    args = dict(patch_dim=2, n_patches=2, d_v=8, d_t=8, proj_dim=8, depth=1, vocab_size=64, rank=2, alpha=4.0)
    return AlignmentModel.build(**{**args, **kw})


def test_parameter_groups():
    model = small_model()
    opt = AdamW.for_model(model, 1e-3, 10)
    lora, tau, heads, biases = opt.groups
    assert len(lora.params) == 5 * 2 and lora.decay and lora.lr_multiplier == 1
    assert tau.params == [model.log_tau] and not tau.decay
    assert heads.lr_multiplier == 10 and heads.decay and len(heads.params) == 6
    assert not biases.decay and len(biases.params) == 4
    ids = [id(p) for g in opt.groups for p in g.params]
    assert sorted(ids) == sorted(id(t) for _, t in model.trainable_parameters())


def test_initial_temperature():
    assert small_model().tau == pytest.approx(0.07)


def _batch(rng, b=4):
    words = ["alpha", "beta", "gamma", "delta", "omega"]
    return TrainingBatch(rng.normal(size=(b, 3, 4)),
                         [Narrative(tokenize(f"{words[i % 5]} phase", 64), 1.0) for i in range(b)])


def test_train_step_updates_and_clamps(rng):
    model = small_model()
    opt = AdamW.for_model(model, 1e-2, 5)
    before = model.state_dict()
    loss = train_step(_batch(rng), model, opt)
    assert math.isfinite(loss)
    after = model.state_dict()
    assert any(not np.array_equal(before[k], after[k]) for k in before)
    frozen = [n for n, _ in model.vision.frozen_parameters()]
    for name in frozen:
        np.testing.assert_array_equal(before[f"vision.{name}"], after[f"vision.{name}"])
    model.log_tau.data = np.array(5.0)
    model.clamp_temperature()
    assert model.tau == pytest.approx(1.0)


def test_train_step_divergence_leaves_state(rng):
    model = small_model()
    opt = AdamW.for_model(model, 1e-2, 5)
    batch = _batch(rng)
    batch.frames[0, 0, 0] = np.nan
    before = model.state_dict()
    with pytest.raises(TrainingDivergenceError):
        train_step(batch, model, opt)
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, before[k])
    assert opt.step_count == 0


def test_train_step_needs_two_pairs(rng):
    model = small_model()
    with pytest.raises(ContractError):
        train_step(_batch(rng, 1), model, AdamW.for_model(model, 1e-3, 1))


def test_batch_bounds():
    assert _batch_bounds(10, 4) == [(0, 4), (4, 8), (8, 10)]
    assert _batch_bounds(9, 4) == [(0, 4), (4, 9)]
    assert _batch_bounds(3, 16) == [(0, 3)]


def test_state_dict_round_trip(tmp_path):
    a, b = small_model(seed=0), small_model(seed=1)
    nx.save_checkpoint(tmp_path / "m.limt", a.state_dict())
    b.load_state_dict(nx.load_checkpoint(tmp_path / "m.limt"))
    for k, v in a.state_dict().items():
        np.testing.assert_array_equal(b.state_dict()[k], v)


def _toy_data(rng, n=12):
    labels = np.arange(n) % 3
    protos = rng.normal(size=(3, 8))
    X = protos[labels][:, None, :] + 0.1 * rng.normal(size=(n, 2, 8))
    y = [["red cut", "blue clip", "green wash"][k] for k in labels]
    return X, y


def test_aligner_is_sklearn_compatible(rng):
    est = ConfidenceWeightedAligner(n_patches=2, d_v=8, d_t=8, proj_dim=8, depth=1, lora_rank=2, lora_alpha=4.0,
                                    epochs=2, batch_size=4, random_state=3)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    X, y = _toy_data(rng)
    est.fit(X, y, sample_weight=np.full(len(y), 0.5))
    assert len(est.history_) == 2 * 3 and len(est.epoch_losses_) == 2
    z = est.transform(X)
    np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-12)
    assert est.pooled_features(X).shape == (12, 8)
    np.testing.assert_allclose(est.pooled_features(X), est.pooled_features(X, merged=False), atol=1e-10)
    twin.fit(X, y, sample_weight=np.full(len(y), 0.5))
    np.testing.assert_array_equal(twin.transform(X), z)


def test_aligner_ignores_weights_when_disabled(rng):
    X, y = _toy_data(rng)
    kw = dict(n_patches=2, d_v=8, d_t=8, proj_dim=8, depth=1, lora_rank=2, lora_alpha=4.0, epochs=1, batch_size=4)
    a = ConfidenceWeightedAligner(use_confidence=False, **kw).fit(X, y, sample_weight=rng.uniform(0.1, 1, 12))
    b = ConfidenceWeightedAligner(use_confidence=True, **kw).fit(X, y)
    assert [r["loss"] for r in a.history_] == [r["loss"] for r in b.history_]


def test_aligner_input_validation(rng):
    est = ConfidenceWeightedAligner(n_patches=3)
    with pytest.raises(DimensionError):
        est.fit(np.zeros((4, 2, 8)), ["a"] * 4)
    with pytest.raises(DimensionError):
        est.fit(np.zeros((4, 8)), ["a"] * 4)
    with pytest.raises(ContractError):
        ConfidenceWeightedAligner(n_patches=2).fit(np.zeros((1, 2, 8)), ["a"])
