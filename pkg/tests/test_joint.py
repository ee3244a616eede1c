import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recipe_embed import joint
from recipe_embed.errors import (
    ConfigError,
    DegenerateInputError,
    DimensionError,
    EmptyInputError,
    LabelError,
    SamplingError,
    TrainingDivergence,
)
from recipe_embed.joint import (
    JointData,
    JointModel,
    TrainConfig,
    combine_losses,
    cosine_margin_loss,
    embed_image,
    embed_recipe,
    model_for,
    sample_pairs,
    semantic_reg_loss,
    total_loss,
    train,
)
from recipe_embed.nn import Param
from recipe_embed.nn.gradcheck import check_gradients
from recipe_embed.nn.tensor import Tensor, linear, softmax_cross_entropy


def tiny_data(n=10, seed=0, d_w=3, d_s=3, d_img=4, k=3, n_val=2):
    rng = np.random.default_rng(seed)
    owners, feats = [], []
    for i in range(n):
        for _ in range(rng.integers(1, 3)):
            owners.append(i)
            feats.append(rng.normal(size=d_img))
    return JointData(
        recipe_ids=[f"r{i:02d}" for i in range(n)],
        ingredients=[rng.normal(size=(rng.integers(1, 4), d_w)) for _ in range(n)],
        instructions=[rng.normal(size=(rng.integers(1, 4), d_s)) for _ in range(n)],
        categories=rng.integers(0, k, n),
        partitions=["training"] * (n - n_val) + ["validation"] * n_val,
        image_ids=[f"im{j}" for j in range(len(owners))],
        image_features=np.array(feats),
        image_owner=np.array(owners),
    )


def small_config(**kw):
    base = dict(d_emb=4, hidden_ingr=3, hidden_instr=3, batch_size=4, max_epochs=(2, 2, 2), patience=5)
    base.update(kw)
    return TrainConfig(**base)


def _pair_with_cos(c):
    return np.array([[1.0, 0.0]]), np.array([[c, math.sqrt(1 - c * c)]])


class TestCosineMargin:
    def test_identical_positive(self):
        v = np.array([[0.3, -1.2, 2.0]])
        assert cosine_margin_loss(v, v, [1]).data[0] == pytest.approx(0.0, abs=1e-15)

    def test_negative_above_margin(self):
        r, v = _pair_with_cos(0.3)
        assert cosine_margin_loss(r, v, [-1], margin=0.1).data[0] == pytest.approx(0.2, abs=1e-15)

    def test_negative_below_margin(self):
        r, v = _pair_with_cos(0.05)
        assert cosine_margin_loss(r, v, [-1], margin=0.1).data[0] == 0.0

    def test_zero_norm(self):
        with pytest.raises(DegenerateInputError):
            cosine_margin_loss(np.zeros((1, 2)), np.ones((1, 2)), [1])

    def test_bad_label(self):
        with pytest.raises(ConfigError):
            cosine_margin_loss(np.ones((1, 2)), np.ones((1, 2)), [0])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 100), st.floats(0.01, 100))
    def test_scale_invariance(self, seed, a, b):
        rng = np.random.default_rng(seed)
        r, v = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        y = rng.choice([-1, 1], 5)
        np.testing.assert_allclose(cosine_margin_loss(a * r, b * v, y).data, cosine_margin_loss(r, v, y).data,
                                   atol=1e-12)


class TestSemanticReg:
    def test_uniform_logits(self):
        W = Param(np.zeros((1048, 8)))
        phi = np.random.default_rng(0).normal(size=(1, 8))
        loss = semantic_reg_loss(phi, phi, [0], [1047], W)
        assert loss.data[0] == pytest.approx(2 * math.log(1048), rel=1e-12)

    def test_label_out_of_range(self):
        W = Param(np.zeros((3, 2)))
        with pytest.raises(LabelError):
            semantic_reg_loss(np.ones((1, 2)), np.ones((1, 2)), [3], [0], W)

    def test_perfect_classifier(self):
        W = Param(1e3 * np.eye(3))
        phi = np.eye(3)
        assert semantic_reg_loss(phi, phi, [0, 1, 2], [0, 1, 2], W).data.max() < 1e-12

    def test_shared_gradient_is_sum_of_branches(self):
        rng = np.random.default_rng(1)
        W = Param(rng.normal(size=(4, 3)))
        phi_r, phi_v = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        c_r, c_v = rng.integers(0, 4, 5), rng.integers(0, 4, 5)
        semantic_reg_loss(phi_r, phi_v, c_r, c_v, W).sum().backward()
        both = W.grad.copy()
        branch = []
        for phi, c in ((phi_r, c_r), (phi_v, c_v)):
            W.grad = None
            softmax_cross_entropy(linear(Tensor(phi), W), c, reduction="none").sum().backward()
            branch.append(W.grad.copy())
        np.testing.assert_allclose(both, branch[0] + branch[1], atol=1e-12)

    def test_masking_halves_symmetric_gradient(self):
        rng = np.random.default_rng(2)
        W = Param(rng.normal(size=(4, 3)))
        phi = rng.normal(size=(3, 3))
        c = np.array([0, 3, 1])
        semantic_reg_loss(phi, phi, c, c, W).sum().backward()
        both = W.grad.copy()
        W.grad = None
        softmax_cross_entropy(linear(Tensor(phi), W), c, reduction="none").sum().backward()
        np.testing.assert_allclose(W.grad, both / 2, atol=1e-12)


class TestTotalLoss:
    def test_arithmetic(self):
        out = combine_losses(Tensor(np.array([0.2])), Tensor(np.array([1.5])), 0.02)
        assert float(out.data) == pytest.approx(0.23, abs=1e-15)

    def test_lambda_zero_is_cosine_loss(self):
        data = tiny_data()
        cfg = small_config(reg_weight=0.0)
        model = model_for(data, cfg)
        batch = sample_pairs(data, 6, 0.5, rng=3)
        phi_r = joint.embed_recipes(model, *data.recipe_batch(batch.recipe_rows))
        phi_v = joint.embed_images(model, data.image_features[batch.image_rows])
        expected = float(cosine_margin_loss(phi_r, phi_v, batch.y).mean().data)
        assert float(total_loss(batch, model, cfg, data).data) == expected
        assert float(combine_losses(cosine_margin_loss(phi_r, phi_v, batch.y), None, 0).data) == expected

    def test_end_to_end_gradients(self):
        data = tiny_data(seed=4)
        cfg = small_config(reg_weight=0.5)
        model = model_for(data, cfg)
        batch = sample_pairs(data, 2, 0.5, rng=5)
        batch.y = np.array([1, -1])
        err = check_gradients(lambda: total_loss(batch, model, cfg, data), list(model.params().values()))
        assert err < 1e-4


class TestEmbed:
    def setup_method(self):
        self.model = JointModel(3, 2, 5, 4, d_emb=6, hidden_ingr=3, hidden_instr=2, seed=1)
        self.rng = np.random.default_rng(0)

    def test_length(self):
        for n_i, n_s in ((1, 1), (4, 2), (7, 9)):
            out = embed_recipe(self.model, self.rng.normal(size=(n_i, 3)), self.rng.normal(size=(n_s, 2)))
            assert out.shape == (6,)

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            embed_recipe(self.model, np.zeros((0, 3)), np.ones((1, 2)))

    def test_gradients_through_both_encoders(self):
        g, s = self.rng.normal(size=(3, 3)), self.rng.normal(size=(2, 2))
        target = self.rng.normal(size=6)
        params = list(self.model.recipe_params().values())
        err = check_gradients(lambda: (embed_recipe(self.model, g, s) * Tensor(target)).sum(), params)
        assert err < 1e-4

    def test_zero_feature_gives_bias(self):
        self.model.b_v.data[:] = self.rng.normal(size=6)
        assert np.array_equal(embed_image(self.model, np.zeros(5)).data, self.model.b_v.data)

    def test_linearity(self):
        f = self.rng.normal(size=5)
        e = lambda x: embed_image(self.model, x).data
        np.testing.assert_allclose(e(2 * f) - e(f), e(f) - e(np.zeros(5)), atol=1e-12)

    def test_dimension(self):
        with pytest.raises(DimensionError):
            embed_image(self.model, np.ones(4))

    def test_checkpoint_bit_exact(self, tmp_path):
        f = self.rng.normal(size=5)
        g, s = self.rng.normal(size=(2, 3)), self.rng.normal(size=(3, 2))
        self.model.save(tmp_path / "m.json")
        loaded, _ = JointModel.load(tmp_path / "m.json")
        assert np.array_equal(embed_image(loaded, f).data, embed_image(self.model, f).data)
        assert np.array_equal(embed_recipe(loaded, g, s).data, embed_recipe(self.model, g, s).data)


class TestSamplePairs:
    def test_all_positive(self):
        data = tiny_data()
        b = sample_pairs(data, 200, 1.0, rng=0)
        assert np.all(b.y == 1)
        assert np.all(data.image_owner[b.image_rows] == b.recipe_rows)
        assert np.array_equal(b.c_r, b.c_v)

    def test_positive_fraction(self):
        b = sample_pairs(tiny_data(), 10_000, 0.2, rng=1)
        assert abs(np.mean(b.y == 1) - 0.2) <= 0.02

    def test_negatives_use_other_recipes(self):
        data = tiny_data(n=3)
        b = sample_pairs(data, 5000, 0.2, rng=2)
        neg = b.y == -1
        assert np.all(data.image_owner[b.image_rows[neg]] != b.recipe_rows[neg])
        # every other recipe is used
        for i in range(3):
            owners = set(data.image_owner[b.image_rows[neg & (b.recipe_rows == i)]])
            assert owners == set(range(3)) - {i}
        assert np.array_equal(b.c_v, data.categories[data.image_owner[b.image_rows]])

    def test_too_small(self):
        with pytest.raises(SamplingError):
            sample_pairs(tiny_data(n=1, n_val=0), 4)


class TestTrain:
    def test_stage_one_freezes_image_side(self):
        data = tiny_data()
        cfg = small_config(stages=(1,), max_epochs=(1,))
        model = model_for(data, cfg)
        W_v, b_v, W_r = model.W_v.data.copy(), model.b_v.data.copy(), model.W_r.data.copy()
        joint_train_no_restore(model, data, cfg)
        assert np.array_equal(model.W_v.data, W_v) and np.array_equal(model.b_v.data, b_v)
        assert not np.array_equal(model.W_r.data, W_r)

    def test_stage_two_freezes_recipe_side(self):
        data = tiny_data()
        cfg = small_config(stages=(2,), max_epochs=(3,))
        model = model_for(data, cfg)
        before = {k: p.data.copy() for k, p in model.recipe_params().items()}
        W_c, W_v = model.W_c.data.copy(), model.W_v.data.copy()
        joint_train_no_restore(model, data, cfg)
        assert all(np.array_equal(model.recipe_params()[k].data, v) for k, v in before.items())
        assert np.array_equal(model.W_c.data, W_c) and not np.array_equal(model.W_v.data, W_v)

    def test_early_stopping_on_constant_medr(self, monkeypatch):
        monkeypatch.setattr(joint, "validation_scores", lambda *a: (3.0, 0.2))
        data = tiny_data()
        cfg = small_config(stages=(1, 3), max_epochs=(10, 10), patience=2)
        _, log = train(model_for(data, cfg), data, cfg)
        assert [s["after_epoch"] for s in log.stage_switches] == [3, 6]
        assert all(s["reason"] == "plateau" for s in log.stage_switches)
        assert log.best["epoch"] == 1

    def test_returns_best_snapshot(self, monkeypatch):
        scores = iter([(5.0, 0.0), (2.0, 0.5), (4.0, 0.1), (4.0, 0.1)])
        snaps = []

        def fake(model, *a):
            snaps.append(model.snapshot())
            return next(scores)

        monkeypatch.setattr(joint, "validation_scores", fake)
        data = tiny_data()
        cfg = small_config(stages=(3,), max_epochs=(4,), patience=5)
        model, log = train(model_for(data, cfg), data, cfg)
        assert log.best["epoch"] == 2
        assert all(np.array_equal(model.params()[k].data, v) for k, v in snaps[1].items())

    def test_log_records(self):
        data = tiny_data()
        cfg = small_config()
        _, log = train(model_for(data, cfg), data, cfg)
        assert len(log.epochs) == 6 and [e["stage"] for e in log.epochs] == [1, 1, 2, 2, 3, 3]
        assert set(log.epochs[0]) >= {"epoch", "stage", "train_loss", "val_medr", "seed"}

    def test_deterministic(self):
        data = tiny_data(seed=6)
        cfg = small_config()
        a = train(model_for(data, cfg), data, cfg)
        b = train(model_for(data, cfg), data, cfg)
        assert a[1].to_json() == b[1].to_json()
        assert all(np.array_equal(a[0].params()[k].data, b[0].params()[k].data) for k in a[0].params())

    def test_divergence_keeps_last_good_checkpoint(self, monkeypatch):
        data = tiny_data()
        cfg = small_config(batch_size=100)
        calls = []
        real = joint.total_loss

        def exploding(batch, model, config, d):
            calls.append(1)
            loss = real(batch, model, config, d)
            return loss * Tensor(np.nan) if len(calls) == 3 else loss

        monkeypatch.setattr(joint, "total_loss", exploding)
        model = model_for(data, cfg)
        with pytest.raises(TrainingDivergence) as info:
            train(model, data, cfg)
        snap = info.value.checkpoint
        assert set(snap) == set(model.params())
        assert all(np.all(np.isfinite(v)) for v in snap.values())
        assert all(np.array_equal(model.params()[k].data, v) for k, v in snap.items())


def joint_train_no_restore(model, data, cfg):
    """Train with a validation score that improves every epoch, so the restored best is the last state."""
    counter = iter(range(1000, 0, -1))
    orig = joint.validation_scores
    joint.validation_scores = lambda *a: (float(next(counter)), 0.0)
    try:
        return train(model, data, cfg)
    finally:
        joint.validation_scores = orig


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(margin=0), dict(margin=1), dict(reg_weight=-0.1), dict(positive_prob=0),
                                    dict(positive_prob=1.5), dict(stages=(4,), max_epochs=(1,)),
                                    dict(stages=(1, 2), max_epochs=(1,)), dict(patience=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)

    def test_round_trip(self):
        cfg = TrainConfig(reg_weight=0.0, stages=(1, 3), max_epochs=(4, 5))
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"bogus": 1})
