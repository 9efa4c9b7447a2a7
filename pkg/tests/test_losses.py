import numpy as np
import pytest

from pdsep.backbone import Tensor, backward, ops, precision64
from pdsep.backbone.tensor import ShapeError
from pdsep.losses import (
    LossConfig,
    critic_loss_a,
    critic_loss_b,
    generator_loss,
    gradient_penalty,
    wasserstein_critic_loss,
)
from pdsep.nets import ArchDescriptor, BoundCritic, BoundGenerator, init_critic, init_generator

SMALL = ArchDescriptor(rank=1, length=32, channels=(4, 8), dropout=(0.5,), critic_channels=(4, 8))


def identity(x):
    return x


def const(value):
    return lambda x, tangent=None: Tensor(np.float32(value))


def mean_critic(x, tangent=None):
    return ops.mean(x)


class LinearCritic:
    """score = sum(w * x); its input gradient is w everywhere."""

    def __init__(self, w):
        self.params = {"w": Tensor(w, requires_grad=True)}

    def __call__(self, x, tangent=None):
        score = ops.sum(ops.mul(x, self.params["w"]))
        if tangent is None:
            return score
        return score, ops.sum(ops.mul(Tensor(tangent), self.params["w"]))


def full(value, n=16):
    return Tensor(np.full((1, 1, n), value))


def test_identity_generators_zero_critics():
    loss, parts = generator_loss(full(0.3), full(-0.2), identity, identity, const(0), const(0), LossConfig())
    assert float(loss.data) == 0.0
    assert parts["recon_u"] == parts["recon_v"] == 0.0


def test_hand_substitution_example():
    # ga scales by 0.9, gb is the identity: mean-L1 errors 0.1 on u = 1 and 0.2 on v = 2
    ga = lambda x: ops.scale(x, 0.9)  # noqa: E731
    loss, parts = generator_loss(full(1.0), full(2.0), ga, identity, const(0.4), const(0.3), LossConfig())
    assert parts["recon_u"] == pytest.approx(0.1, abs=1e-6)
    assert parts["recon_v"] == pytest.approx(0.2, abs=1e-6)
    assert float(loss.data) == pytest.approx(299.3, abs=1e-4)


def test_default_lambdas():
    cfg = LossConfig()
    assert cfg.lambda_u == cfg.lambda_v == 1000.0
    assert cfg.mode == "clip" and cfg.clip == 0.05 and cfg.lambda_gp == 10.0


def test_perfect_reconstruction_reduces_to_critic_terms():
    rng = np.random.default_rng(0)
    da, db = BoundCritic(init_critic(SMALL, 1), SMALL), BoundCritic(init_critic(SMALL, 2), SMALL)
    for _ in range(20):
        u = Tensor(rng.uniform(-1, 1, (1, 1, 32)))
        v = Tensor(rng.uniform(-1, 1, (1, 1, 32)))
        loss, _ = generator_loss(u, v, identity, identity, da, db, LossConfig())
        expected = -float(db(v).data) - float(da(u).data)
        assert float(loss.data) == pytest.approx(expected, abs=1e-6)


def test_lambda_scaling_touches_only_reconstruction():
    rng = np.random.default_rng(1)
    u, v = Tensor(rng.uniform(-1, 1, (1, 1, 32))), Tensor(rng.uniform(-1, 1, (1, 1, 32)))
    ga = BoundGenerator(init_generator(SMALL, 3), SMALL, noise=False)
    gb = BoundGenerator(init_generator(SMALL, 4), SMALL, noise=False)
    da, db = BoundCritic(init_critic(SMALL, 5), SMALL), BoundCritic(init_critic(SMALL, 6), SMALL)
    base, parts = generator_loss(u, v, ga, gb, da, db, LossConfig(100, 100))
    scaled, parts3 = generator_loss(u, v, ga, gb, da, db, LossConfig(300, 300))
    adversarial = -parts["score_a"] - parts["score_b"]
    assert parts3["score_a"] == parts["score_a"] and parts3["score_b"] == parts["score_b"]
    assert float(scaled.data) - adversarial == pytest.approx(3 * (float(base.data) - adversarial), rel=1e-5)


def test_critic_loss_examples():
    cfg = LossConfig()
    loss_a = critic_loss_a(full(0.0), full(0.8), lambda x: full(0.3), mean_critic, cfg)
    assert float(loss_a.data) == pytest.approx(-0.5)
    loss_b = critic_loss_b(full(0.5), full(0.0), lambda x: full(-0.2), mean_critic, cfg)
    assert float(loss_b.data) == pytest.approx(-0.7)
    same = critic_loss_a(full(0.0), full(0.4), lambda x: full(0.4), mean_critic, cfg)
    assert float(same.data) == 0.0


def test_critic_losses_antisymmetric():
    rng = np.random.default_rng(2)
    critic = BoundCritic(init_critic(SMALL, 7), SMALL)
    for _ in range(10):
        a, b = Tensor(rng.uniform(-1, 1, (1, 1, 32))), Tensor(rng.uniform(-1, 1, (1, 1, 32)))
        assert float(wasserstein_critic_loss(critic, a, b).data) == -float(wasserstein_critic_loss(critic, b, a).data)


def test_critic_loss_b_mirrors_a():
    # swapping the roles of the domains turns loss B into loss A
    rng = np.random.default_rng(3)
    u, v = Tensor(rng.uniform(-1, 1, (1, 1, 32))), Tensor(rng.uniform(-1, 1, (1, 1, 32)))
    gen = BoundGenerator(init_generator(SMALL, 8), SMALL, noise=False)
    critic = BoundCritic(init_critic(SMALL, 9), SMALL)
    cfg = LossConfig()
    assert float(critic_loss_b(u, v, gen, critic, cfg).data) == float(critic_loss_a(v, u, gen, critic, cfg).data)


def test_penalty_zero_for_unit_lipschitz_linear_critic():
    rng = np.random.default_rng(4)
    w = rng.standard_normal((1, 1, 16))
    w /= np.linalg.norm(w)
    with precision64():
        critic = LinearCritic(w)
        pen = gradient_penalty(critic, full(0.5), full(-0.5), 10.0, np.random.default_rng(0))
    assert float(pen.data) == pytest.approx(0.0, abs=1e-12)


def test_penalty_value_for_scaled_linear_critic():
    w = np.zeros((1, 1, 16))
    w[0, 0, 0] = 3.0
    with precision64():
        pen = gradient_penalty(LinearCritic(w), full(0.5), full(-0.5), 10.0, np.random.default_rng(0))
    assert float(pen.data) == pytest.approx(10.0 * (3.0 - 1.0) ** 2)


def test_penalty_parameter_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    with precision64():
        params = init_critic(SMALL, 11)
        for p in params.values():
            p.data[:] = rng.standard_normal(p.shape) * 0.3
        critic = BoundCritic(params, SMALL)
        real, fake = Tensor(rng.uniform(-1, 1, (1, 1, 32))), Tensor(rng.uniform(-1, 1, (1, 1, 32)))

        def value():
            return float(gradient_penalty(critic, real, fake, 10.0, np.random.default_rng(9)).data)

        backward(gradient_penalty(critic, real, fake, 10.0, np.random.default_rng(9)))
        h = 1e-6
        for name in ("conv0.w", "conv1.w", "final.w"):
            p = params[name]
            analytic = p.grad
            flat = p.data.reshape(-1)
            for idx in rng.choice(flat.size, 5, replace=False):
                orig = flat[idx]
                flat[idx] = orig + h
                up = value()
                flat[idx] = orig - h
                down = value()
                flat[idx] = orig
                assert analytic.reshape(-1)[idx] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-7)


def test_gp_mode_adds_penalty():
    rng = np.random.default_rng(6)
    u, v = Tensor(rng.uniform(-1, 1, (1, 1, 32))), Tensor(rng.uniform(-1, 1, (1, 1, 32)))
    gen = BoundGenerator(init_generator(SMALL, 1), SMALL, noise=False)
    critic = BoundCritic(init_critic(SMALL, 2), SMALL)
    plain = float(critic_loss_a(u, v, gen, critic, LossConfig()).data)
    gp = float(critic_loss_a(u, v, gen, critic, LossConfig(mode="gp"), np.random.default_rng(0)).data)
    # tiny initial weights give a near-zero input gradient, so the penalty is close to lambda_gp
    assert gp - plain == pytest.approx(10.0, rel=1e-2)


def test_generator_loss_gradients_finite_for_all_parameters():
    rng = np.random.default_rng(7)
    u, v = Tensor(rng.uniform(-1, 1, (1, 1, 32))), Tensor(rng.uniform(-1, 1, (1, 1, 32)))
    gparams = [init_generator(SMALL, 1), init_generator(SMALL, 2)]
    cparams = [init_critic(SMALL, 3), init_critic(SMALL, 4)]
    ga, gb = (BoundGenerator(p, SMALL, rng) for p in gparams)
    da, db = (BoundCritic(p, SMALL) for p in cparams)
    loss, _ = generator_loss(u, v, ga, gb, da, db, LossConfig())
    backward(loss)
    for params in gparams + cparams:
        for t in params.values():
            assert t.grad is not None and np.all(np.isfinite(t.grad))
    for loss in (critic_loss_a(u, v, ga, da, LossConfig()), critic_loss_b(u, v, gb, db, LossConfig())):
        backward(loss)
    for params in cparams:
        for t in params.values():
            assert np.all(np.isfinite(t.grad))


def test_config_validation():
    with pytest.warns(UserWarning, match="lambda_u"):
        LossConfig(lambda_u=50)
    with pytest.raises(ValueError):
        LossConfig(lambda_v=0)
    with pytest.raises(ValueError):
        LossConfig(mode="hinge")
    with pytest.raises(ValueError):
        LossConfig(clip=0)


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        generator_loss(full(0, 16), full(0, 8), identity, identity, const(0), const(0), LossConfig())
    with pytest.raises(ShapeError):
        critic_loss_a(full(0, 16), full(0, 8), identity, mean_critic, LossConfig())
