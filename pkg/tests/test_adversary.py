"""Randomized multilinear map, discriminator, losses, gradient reversal."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from qadapt.adversary import (
    Discriminator,
    DiscriminatorConfig,
    DomainBatch,
    adversarial_loss,
    adversarial_step,
    entropy_weight,
    gradient_reversal,
    init_randomized_map,
    multilinear_embed,
    sample_entropy,
)
from qadapt.corpus.records import AnswerSpan
from qadapt.corpus.vocab import Vocabulary
from qadapt.corpus.windows import window_examples
from qadapt.errors import ConfigurationError
from qadapt.model import EncoderConfig, SpanModel

from test_corpus import make_example


class TestRandomizedMap:
    def test_same_seed_reproduces(self):
        a = init_randomized_map(16, 8, seed=5)
        b = init_randomized_map(16, 8, seed=5)
        assert torch.equal(a.r_f, b.r_f) and torch.equal(a.r_g, b.r_g)

    def test_full_scale_shapes(self):
        m = init_randomized_map(768, 512, seed=0)
        assert m.r_f.shape == (768, 512)
        assert m.r_g.shape == (768, 1024)

    def test_entry_mean_within_clt_bound(self):
        m = init_randomized_map(768, 512, seed=1)
        n = m.r_f.numel()
        assert abs(float(m.r_f.double().mean())) < 3.0 / math.sqrt(n)

    def test_d_r_validated(self):
        with pytest.raises(ConfigurationError):
            init_randomized_map(0, 8, seed=0)


class TestMultilinearEmbed:
    def test_hand_example(self):
        from qadapt.adversary import RandomizedMap

        rmap = RandomizedMap(
            r_f=torch.tensor([[1.0, 1.0]]),
            r_g=torch.tensor([[1.0, 1.0, 1.0, 1.0]]),
            d_r=1,
            seed=0,
        )
        f = torch.ones(2, 2)
        gs = torch.tensor([1.0, 0.0])
        ge = torch.tensor([0.0, 0.0])
        out = multilinear_embed(f, gs, ge, rmap)
        assert out.shape == (1,)
        assert float(out[0]) == pytest.approx(2.0)

    def test_zero_features_annihilate(self):
        rmap = init_randomized_map(8, 4, seed=2)
        out = multilinear_embed(
            torch.zeros(4, 6), torch.randn(4), torch.randn(4), rmap
        )
        assert torch.equal(out, torch.zeros(8))

    def test_padding_rows_zeroed_before_average(self):
        rmap = init_randomized_map(8, 4, seed=2)
        f = torch.randn(4, 6)
        gs, ge = torch.randn(4), torch.randn(4)
        pad = torch.tensor([False, False, True, True])
        padded_f = f.clone()
        padded_f[2:] = 123.0  # garbage that must not leak
        a = multilinear_embed(padded_f, gs, ge, rmap, pad_mask=pad)
        zeroed_f = f.clone()
        zeroed_f[2:] = 0.0
        b = multilinear_embed(zeroed_f, gs, ge, rmap)
        assert torch.allclose(a, b)

    def test_unconditioned_variant_drops_logits(self):
        rmap = init_randomized_map(8, 4, seed=2)
        f = torch.randn(4, 6)
        a = multilinear_embed(f, torch.randn(4), torch.randn(4), rmap, conditioned=False)
        b = multilinear_embed(f, torch.zeros(4), torch.zeros(4), rmap, conditioned=False)
        assert torch.allclose(a, b)

    def test_shape_mismatch_raises(self):
        rmap = init_randomized_map(8, 4, seed=2)
        with pytest.raises(ValueError, match="map width"):
            multilinear_embed(torch.randn(5, 6), torch.randn(5), torch.randn(5), rmap)

    @given(alpha=st.floats(-3, 3), beta=st.floats(-3, 3), seed=st.integers(0, 500))
    @settings(max_examples=60, deadline=None)
    def test_bilinearity(self, alpha, beta, seed):
        rmap = init_randomized_map(6, 5, seed=seed, dtype=torch.float64)
        rng = np.random.default_rng(seed)
        f = torch.tensor(rng.normal(size=(5, 3)))
        gs = torch.tensor(rng.normal(size=5))
        ge = torch.tensor(rng.normal(size=5))
        base = multilinear_embed(f, gs, ge, rmap)
        assert torch.allclose(
            multilinear_embed(alpha * f, gs, ge, rmap), alpha * base, atol=1e-9
        )
        assert torch.allclose(
            multilinear_embed(f, beta * gs, beta * ge, rmap), beta * base, atol=1e-9
        )

    def test_monte_carlo_inner_product_estimate(self):
        # small-scale version of the unbiasedness check: the mean of
        # <Z(f,g), Z(f',g')> over map draws approximates
        # <avg(f), avg(f')> * <g, g'>
        rng = np.random.default_rng(3)
        m, d, d_r, draws = 8, 4, 64, 800
        f = rng.normal(loc=0.5, size=(m, d))
        f2 = rng.normal(loc=0.5, size=(m, d))
        g = rng.normal(loc=0.5, size=2 * m)
        g2 = rng.normal(loc=0.5, size=2 * m)
        a, a2 = f.mean(axis=1), f2.mean(axis=1)
        exact = float(a @ a2) * float(g @ g2)
        estimates = []
        for k in range(draws):
            r_f = rng.standard_normal((d_r, m))
            r_g = rng.standard_normal((d_r, 2 * m))
            z1 = (r_f @ a) * (r_g @ g) / math.sqrt(d_r)
            z2 = (r_f @ a2) * (r_g @ g2) / math.sqrt(d_r)
            estimates.append(float(z1 @ z2))
        assert np.mean(estimates) == pytest.approx(exact, rel=0.1)


class TestDiscriminator:
    def test_zero_parameters_output_half(self):
        disc = Discriminator(DiscriminatorConfig(input_dim=8, hidden_dim=4))
        with torch.no_grad():
            for p in disc.parameters():
                p.zero_()
        out = disc(torch.randn(3, 8), train_mode=False)
        assert torch.allclose(out, torch.full((3,), 0.5))

    def test_eval_mode_deterministic(self):
        torch.manual_seed(0)
        disc = Discriminator(DiscriminatorConfig(input_dim=8, hidden_dim=4))
        x = torch.randn(2, 8)
        assert torch.equal(disc(x, train_mode=False), disc(x, train_mode=False))

    def test_one_unit_layers_match_scalar_composition(self):
        disc = Discriminator(
            DiscriminatorConfig(input_dim=1, hidden_dim=1, dropout_rate=0.0)
        )
        with torch.no_grad():
            for layer in (disc.layers[0], disc.layers[3], disc.layers[6]):
                layer.weight.fill_(2.0)
                layer.bias.fill_(-0.5)
        x = 0.8
        h1 = max(2.0 * x - 0.5, 0.0)
        h2 = max(2.0 * h1 - 0.5, 0.0)
        oracle = 1.0 / (1.0 + math.exp(-(2.0 * h2 - 0.5)))
        out = disc(torch.tensor([[x]]), train_mode=False)
        assert float(out) == pytest.approx(oracle, abs=1e-6)

    def test_output_stays_in_unit_interval(self):
        torch.manual_seed(1)
        disc = Discriminator(DiscriminatorConfig(input_dim=8))
        out = disc(torch.randn(64, 8) * 3, train_mode=False)
        assert bool(((out > 0) & (out < 1)).all())


class TestAdversarialLoss:
    def test_half_prediction_gives_log_two(self):
        for label in (0.0, 1.0):
            loss = adversarial_loss(torch.tensor([0.5]), torch.tensor([label]))
            assert float(loss) == pytest.approx(math.log(2), abs=1e-6)

    def test_confident_correct_target(self):
        loss = adversarial_loss(torch.tensor([0.9]), torch.tensor([1.0]))
        assert float(loss) == pytest.approx(-math.log(0.9), abs=1e-6)
        assert float(loss) == pytest.approx(0.10536, abs=1e-5)

    def test_confident_wrong_source(self):
        loss = adversarial_loss(torch.tensor([0.9]), torch.tensor([0.0]))
        assert float(loss) == pytest.approx(-math.log(0.1), abs=1e-6)
        assert float(loss) == pytest.approx(2.30259, abs=1e-5)

    def test_saturated_predictions_are_clamped(self):
        loss = adversarial_loss(torch.tensor([0.0, 1.0]), torch.tensor([1.0, 0.0]))
        assert math.isfinite(float(loss))
        # both terms clamp to within a couple of float32 ulps of 1e-7
        assert float(loss) == pytest.approx(-math.log(1e-7), rel=2e-2)

    @given(p=st.floats(0.001, 0.999))
    @settings(max_examples=80, deadline=None)
    def test_label_swap_symmetry(self, p):
        pred = torch.tensor([p], dtype=torch.float64)
        flipped = 1.0 - pred
        a = float(adversarial_loss(pred, torch.tensor([1.0])))
        b = float(adversarial_loss(flipped, torch.tensor([0.0])))
        assert a == pytest.approx(b, rel=1e-12)

    def test_batch_value_is_mean(self):
        preds = torch.tensor([0.2, 0.7, 0.9])
        labels = torch.tensor([0.0, 1.0, 1.0])
        whole = float(adversarial_loss(preds, labels))
        singles = [
            float(adversarial_loss(preds[i : i + 1], labels[i : i + 1]))
            for i in range(3)
        ]
        assert whole == pytest.approx(sum(singles) / 3, rel=1e-6)


class TestSampleEntropy:
    def test_one_hot_distributions_have_zero_entropy(self):
        gs = torch.full((1, 6), -1e4)
        gs[0, 2] = 0.0
        entropy = sample_entropy(gs, gs.clone())
        assert float(entropy) == pytest.approx(0.0, abs=1e-3)

    def test_uniform_over_512_positions(self):
        gs = torch.zeros(1, 512)
        entropy = sample_entropy(gs, gs.clone())
        assert float(entropy) == pytest.approx(2 * math.log(512), abs=1e-5)
        assert float(entropy) == pytest.approx(12.47665, abs=1e-5)

    def test_uniform_over_4_valid_positions(self):
        gs = torch.zeros(1, 16)
        mask = torch.zeros(1, 16, dtype=torch.bool)
        mask[0, :4] = True
        entropy = sample_entropy(gs, gs.clone(), mask)
        assert float(entropy) == pytest.approx(2 * math.log(4), abs=1e-5)


class TestEntropyWeight:
    def test_zero_entropy_doubles(self):
        assert entropy_weight(0.0) == pytest.approx(2.0)

    def test_high_entropy_approaches_one(self):
        assert entropy_weight(12.47665) == pytest.approx(1.0000038, abs=1e-6)

    def test_log_two_gives_three_halves(self):
        assert entropy_weight(math.log(2)) == pytest.approx(1.5, abs=1e-9)

    def test_tensor_weight_is_detached(self):
        e = torch.tensor([0.5], requires_grad=True)
        w = entropy_weight(e)
        assert not w.requires_grad

    @given(e1=st.floats(0, 30), e2=st.floats(0, 30))
    @settings(max_examples=80, deadline=None)
    def test_range_and_monotonicity(self, e1, e2):
        # above ~e=36 the weight collapses to exactly 1.0 in float64
        w1, w2 = entropy_weight(e1), entropy_weight(e2)
        assert 1.0 < w1 <= 2.0
        if e1 < e2:
            assert w1 >= w2


def build_domain_batch(seed=0, n=4):
    torch.manual_seed(seed)
    examples = [
        make_example([f"t{i}{k}" for i in range(6)], answer=AnswerSpan(1, 1), eid=f"ex{k}")
        for k in range(n)
    ]
    vocab = Vocabulary.build(examples)
    windows = []
    for ex in examples:
        windows.extend(window_examples(ex, vocab, 16, 8, 4, training=False))
    labels = tuple(k % 2 for k in range(len(windows)))
    model = SpanModel(
        EncoderConfig(n_layers=1, hidden_dim=8, n_heads=2, max_len=16,
                      dropout_rate=0.0, vocab_size=len(vocab))
    )
    return model, DomainBatch(windows=tuple(windows), domain_labels=labels)


class TestAdversarialStep:
    def test_zero_coefficient_leaves_model_untouched(self):
        model, batch = build_domain_batch()
        rmap = init_randomized_map(8, 16, seed=1)
        disc = Discriminator(DiscriminatorConfig(input_dim=8, hidden_dim=8, dropout_rate=0.0))
        optimizer = torch.optim.Adam(
            list(model.parameters()) + list(disc.parameters()), lr=1e-2
        )
        model_before = [p.detach().clone() for p in model.parameters()]
        disc_before = [p.detach().clone() for p in disc.parameters()]
        adversarial_step(model, disc, rmap, batch, optimizer, reversal_coefficient=0.0)
        assert all(
            torch.equal(a, b) for a, b in zip(model_before, model.parameters())
        )
        assert not all(
            torch.equal(a, b) for a, b in zip(disc_before, disc.parameters())
        )

    def test_reversal_flips_and_scales_feature_gradients(self):
        torch.manual_seed(3)
        rmap = init_randomized_map(8, 4, seed=1, dtype=torch.float64)
        disc = Discriminator(
            DiscriminatorConfig(input_dim=8, hidden_dim=8, dropout_rate=0.0)
        ).double()
        f = torch.randn(2, 4, 3, dtype=torch.float64)
        gs = torch.randn(2, 4, dtype=torch.float64)
        ge = torch.randn(2, 4, dtype=torch.float64)
        labels = torch.tensor([0.0, 1.0], dtype=torch.float64)
        lam = 0.7

        def loss_for(features, coefficient=None):
            z = multilinear_embed(features, gs, ge, rmap)
            if coefficient is not None:
                z = gradient_reversal(z, coefficient)
            return adversarial_loss(disc(z, train_mode=False), labels)

        direct = f.clone().requires_grad_(True)
        loss_for(direct).backward()
        reversed_input = f.clone().requires_grad_(True)
        loss_for(reversed_input, coefficient=lam).backward()
        assert torch.allclose(reversed_input.grad, -lam * direct.grad, atol=1e-12)

    def test_entropy_weighting_doubles_confident_batch_loss(self):
        torch.manual_seed(4)
        rmap = init_randomized_map(8, 4, seed=2)
        disc = Discriminator(
            DiscriminatorConfig(input_dim=8, hidden_dim=8, dropout_rate=0.0)
        )
        # one-hot logits: entropy 0, so every weight is exactly 2
        gs = torch.full((3, 4), -1e4)
        gs[:, 1] = 0.0
        f = torch.randn(3, 4, 5)
        labels = torch.tensor([0.0, 1.0, 0.0])
        z = multilinear_embed(f, gs, gs.clone(), rmap)
        preds = disc(z, train_mode=False)
        plain = adversarial_loss(preds, labels)
        weighted = adversarial_loss(
            preds, labels, entropy_weight(sample_entropy(gs, gs.clone()))
        )
        assert float(weighted) == pytest.approx(2 * float(plain), rel=1e-4)

    def test_map_is_fixed_through_training_steps(self):
        model, batch = build_domain_batch()
        rmap = init_randomized_map(8, 16, seed=1)
        before = (rmap.r_f.clone(), rmap.r_g.clone())
        disc = Discriminator(DiscriminatorConfig(input_dim=8, hidden_dim=8))
        optimizer = torch.optim.Adam(
            list(model.parameters()) + list(disc.parameters()), lr=1e-2
        )
        for _ in range(3):
            adversarial_step(model, disc, rmap, batch, optimizer)
        assert torch.equal(before[0], rmap.r_f)
        assert torch.equal(before[1], rmap.r_g)

    def test_negative_coefficient_rejected(self):
        with pytest.raises(ConfigurationError):
            gradient_reversal(torch.zeros(2), -0.5)


class TestDomainBatch:
    def test_label_window_mismatch_rejected(self):
        _, batch = build_domain_batch()
        with pytest.raises(ValueError):
            DomainBatch(windows=batch.windows, domain_labels=batch.domain_labels[:-1])

    def test_labels_must_be_binary(self):
        _, batch = build_domain_batch()
        with pytest.raises(ValueError):
            DomainBatch(windows=batch.windows[:1], domain_labels=(2,))
