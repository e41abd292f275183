"""Encoder, batch normalization, span head, loss, checkpoints."""

import math

import numpy as np
import pytest
import torch

from qadapt.checkpoint import load_checkpoint, restore_model, save_checkpoint
from qadapt.corpus.records import AnswerSpan
from qadapt.corpus.vocab import Vocabulary
from qadapt.errors import ConfigurationError
from qadapt.model import (
    ChannelBatchNorm,
    EncoderConfig,
    SpanModel,
    collate_windows,
    span_loss,
)

from test_corpus import make_example
from qadapt.corpus.windows import window_examples


def tiny_config(**kw):
    defaults = dict(
        n_layers=1, hidden_dim=8, n_heads=2, max_len=16,
        dropout_rate=0.1, vocab_size=24,
    )
    defaults.update(kw)
    return EncoderConfig(**defaults)


def tiny_batch(n=2, max_len=16):
    token_ids = torch.randint(4, 24, (n, max_len))
    mask = torch.zeros(n, max_len, dtype=torch.bool)
    mask[:, 4:12] = True
    return token_ids, mask


class TestEncoderConfig:
    def test_head_divisibility(self):
        with pytest.raises(ConfigurationError):
            tiny_config(hidden_dim=9)

    def test_dropout_range(self):
        with pytest.raises(ConfigurationError):
            tiny_config(dropout_rate=1.0)

    def test_external_mode_needs_encoder(self):
        with pytest.raises(ConfigurationError, match="feature_encoder"):
            SpanModel(tiny_config(mode="external_pretrained"))


class TestEncode:
    def test_zero_parameters_give_constant_rows(self):
        torch.manual_seed(0)
        model = SpanModel(tiny_config(dropout_rate=0.0))
        with torch.no_grad():
            for p in model.parameters():
                p.zero_()
        token_ids, _ = tiny_batch()
        features = model.encode(token_ids, train_mode=False)
        first_row = features[:, :1, :]
        assert torch.allclose(features, first_row.expand_as(features))

    def test_duplicate_window_determinism_in_eval(self):
        torch.manual_seed(0)
        model = SpanModel(tiny_config())
        token_ids, _ = tiny_batch(1)
        doubled = token_ids.repeat(2, 1)
        features = model.encode(doubled, train_mode=False)
        assert torch.equal(features[0], features[1])

    def test_seeded_dropout_reproduces_in_train_mode(self):
        token_ids, _ = tiny_batch(4)

        def run():
            torch.manual_seed(31)
            model = SpanModel(tiny_config(dropout_rate=0.3))
            return model.encode(token_ids, train_mode=True)

        assert torch.equal(run(), run())

    def test_wrong_length_raises(self):
        torch.manual_seed(0)
        model = SpanModel(tiny_config())
        with pytest.raises(ValueError, match="max_len"):
            model.encode(torch.zeros(1, 9, dtype=torch.long), train_mode=False)


class TestBatchNormalize:
    def test_eval_identity_parameters_pass_through(self):
        bn = ChannelBatchNorm(4)
        x = torch.randn(3, 5, 4)
        out = bn(x, train_mode=False)
        assert torch.allclose(out, x, atol=1e-4)

    def test_train_constant_batch_is_zero_before_shift(self):
        bn = ChannelBatchNorm(4)
        x = torch.full((3, 5, 4), 2.5)
        out = bn(x, train_mode=True)
        assert torch.allclose(out, torch.zeros_like(x), atol=1e-5)

    def test_train_matches_hand_computed_channel_stats(self):
        # oracle: per-channel (x - mean) / sqrt(var + eps) over batch*positions
        bn = ChannelBatchNorm(2, eps=1e-5)
        x = torch.tensor([[[1.0, 10.0]], [[3.0, 14.0]]])  # (2, 1, 2)
        flat = x.numpy().reshape(-1, 2)
        mean = flat.mean(axis=0)
        var = flat.var(axis=0)
        expected = (flat - mean) / np.sqrt(var + 1e-5)
        out = bn(x, train_mode=True)
        assert np.allclose(out.detach().numpy().reshape(-1, 2), expected, atol=1e-6)

    def test_train_singleton_batch_rejected(self):
        bn = ChannelBatchNorm(4)
        with pytest.raises(ValueError, match="batch size >= 2"):
            bn(torch.randn(1, 5, 4), train_mode=True)

    def test_running_stats_update_only_in_train(self):
        bn = ChannelBatchNorm(3)
        x = torch.randn(4, 2, 3) + 5.0
        bn(x, train_mode=False)
        assert torch.allclose(bn.running_mean, torch.zeros(3))
        bn(x, train_mode=True)
        assert not torch.allclose(bn.running_mean, torch.zeros(3))


class TestSpanLogits:
    def test_zero_head_gives_zero_logits_before_mask(self):
        torch.manual_seed(0)
        model = SpanModel(tiny_config())
        with torch.no_grad():
            model.span_head.weight.zero_()
            model.span_head.bias.zero_()
        features = torch.randn(2, 16, 8)
        mask = torch.ones(2, 16, dtype=torch.bool)
        gs, ge = model.span_logits(features, mask)
        assert torch.equal(gs, torch.zeros(2, 16))
        assert torch.equal(ge, torch.zeros(2, 16))

    def test_one_hot_selector_reads_feature_channel(self):
        torch.manual_seed(0)
        model = SpanModel(tiny_config())
        with torch.no_grad():
            model.span_head.weight.zero_()
            model.span_head.bias.zero_()
            model.span_head.weight[0, 3] = 1.0
        features = torch.randn(1, 16, 8)
        mask = torch.ones(1, 16, dtype=torch.bool)
        gs, _ = model.span_logits(features, mask)
        assert torch.allclose(gs[0], features[0, :, 3])

    def test_matches_hand_matrix_product(self):
        torch.manual_seed(0)
        model = SpanModel(tiny_config(hidden_dim=4, n_heads=2, max_len=4, vocab_size=8))
        features = torch.randn(1, 4, 4, dtype=torch.float64)
        model.double()
        mask = torch.tensor([[True, True, True, False]])
        gs, ge = model.span_logits(features, mask)
        w = model.span_head.weight.detach().numpy()
        b = model.span_head.bias.detach().numpy()
        oracle = features[0].numpy() @ w.T + b
        oracle[~mask[0].numpy()] += -1e4
        assert np.allclose(gs[0].detach().numpy(), oracle[:, 0], atol=1e-12)
        assert np.allclose(ge[0].detach().numpy(), oracle[:, 1], atol=1e-12)

    def test_masked_positions_get_negative_offset(self):
        torch.manual_seed(0)
        model = SpanModel(tiny_config())
        features = torch.zeros(1, 16, 8)
        mask = torch.zeros(1, 16, dtype=torch.bool)
        mask[0, :4] = True
        gs, _ = model.span_logits(features, mask)
        bias = model.span_head.bias[0].item()
        assert torch.allclose(gs[0, 4:], torch.full((12,), bias - 1e4))


class TestSpanLoss:
    def test_uniform_logits_over_four_valid_positions(self):
        gs = torch.zeros(1, 8)
        mask = torch.zeros(1, 8, dtype=torch.bool)
        mask[0, :4] = True
        gs = gs + (~mask).float() * -1e4
        loss = span_loss(gs, gs.clone(), torch.tensor([1]), torch.tensor([2]), mask)
        assert float(loss) == pytest.approx(math.log(4), abs=1e-6)

    def test_peaked_logits_match_scalar_softmax_oracle(self):
        # oracle: CE of [2, 0, 0, 0] at label 0 is ln((e^2 + 3) / e^2)
        oracle = math.log((math.exp(2) + 3) / math.exp(2))
        assert oracle == pytest.approx(0.3407530, abs=1e-6)
        logits = torch.tensor([[2.0, 0.0, 0.0, 0.0]])
        labels = torch.tensor([0])
        loss = span_loss(logits, logits.clone(), labels, labels)
        assert float(loss) == pytest.approx(oracle, abs=1e-6)

    def test_batch_loss_is_mean_of_singletons(self):
        torch.manual_seed(1)
        gs = torch.randn(3, 6)
        ge = torch.randn(3, 6)
        starts = torch.tensor([0, 2, 5])
        ends = torch.tensor([1, 3, 5])
        whole = float(span_loss(gs, ge, starts, ends))
        singles = [
            float(span_loss(gs[i : i + 1], ge[i : i + 1], starts[i : i + 1], ends[i : i + 1]))
            for i in range(3)
        ]
        assert whole == pytest.approx(sum(singles) / 3, rel=1e-6)

    def test_label_at_masked_position_rejected(self):
        gs = torch.zeros(1, 4)
        mask = torch.tensor([[True, True, False, False]])
        with pytest.raises(ValueError, match="masked position"):
            span_loss(gs, gs, torch.tensor([2]), torch.tensor([2]), mask)

    def test_probabilities_sum_to_one_over_valid_positions(self):
        torch.manual_seed(3)
        model = SpanModel(tiny_config(dropout_rate=0.0))
        token_ids, mask = tiny_batch(3)
        out = model(token_ids, mask, train_mode=False)
        for logits in (out.start_logits, out.end_logits):
            probs = torch.softmax(logits, dim=-1)
            valid_mass = (probs * mask).sum(dim=-1)
            assert torch.allclose(valid_mass, torch.ones(3), atol=1e-6)


class TestGradients:
    def test_span_loss_gradients_match_central_differences(self):
        torch.manual_seed(5)
        model = SpanModel(tiny_config(dropout_rate=0.0, max_len=8, vocab_size=12)).double()
        token_ids = torch.randint(4, 12, (2, 8))
        mask = torch.zeros(2, 8, dtype=torch.bool)
        mask[:, 2:7] = True
        starts = torch.tensor([3, 4])
        ends = torch.tensor([4, 6])

        def loss_value():
            out = model(token_ids, mask, train_mode=True, update_running=False)
            return span_loss(out.start_logits, out.end_logits, starts, ends, mask)

        from conftest import central_difference_worst_error

        worst = central_difference_worst_error(
            loss_value, list(model.named_parameters()), np.random.default_rng(0)
        )
        assert worst < 1e-4


class TestModelForwardInvariance:
    def test_eval_output_invariant_to_batch_composition(self):
        torch.manual_seed(9)
        model = SpanModel(tiny_config(dropout_rate=0.2))
        token_ids, mask = tiny_batch(4)
        batched = model(token_ids, mask, train_mode=False)
        single = model(token_ids[1:2], mask[1:2], train_mode=False)
        assert torch.allclose(batched.start_logits[1], single.start_logits[0], atol=1e-6)
        assert torch.allclose(batched.features[1], single.features[0], atol=1e-6)


class TestCheckpoint:
    def _files(self, directory):
        return {
            "metadata": (directory / "metadata.json").read_bytes(),
            "params": (directory / "params.bin").read_bytes(),
        }

    def test_save_load_save_is_byte_identical(self, tmp_path):
        torch.manual_seed(2)
        model = SpanModel(tiny_config())
        vocab = Vocabulary(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "x"])
        first = tmp_path / "a"
        save_checkpoint(first, model.state_dict(), {"max_len": 16}, 7, vocab=vocab)
        ckpt = load_checkpoint(first)
        second = tmp_path / "b"
        save_checkpoint(second, ckpt.state, ckpt.config, ckpt.step,
                        rng_state=ckpt.rng_state, vocab=ckpt.vocab)
        assert self._files(first) == self._files(second)

    def test_restore_reproduces_outputs(self, tmp_path):
        torch.manual_seed(2)
        model = SpanModel(tiny_config(dropout_rate=0.0))
        token_ids, mask = tiny_batch(2)
        before = model(token_ids, mask, train_mode=False)
        save_checkpoint(tmp_path / "c", model.state_dict(), {}, 0)
        torch.manual_seed(77)
        clone = SpanModel(tiny_config(dropout_rate=0.0))
        restore_model(clone, load_checkpoint(tmp_path / "c"))
        after = clone(token_ids, mask, train_mode=False)
        assert torch.equal(before.start_logits, after.start_logits)
        assert torch.equal(before.features, after.features)

    def test_schema_version_checked(self, tmp_path):
        torch.manual_seed(2)
        model = SpanModel(tiny_config())
        save_checkpoint(tmp_path / "d", model.state_dict(), {}, 0)
        meta = (tmp_path / "d" / "metadata.json").read_text()
        (tmp_path / "d" / "metadata.json").write_text(meta.replace('"schema_version":1', '"schema_version":9'))
        with pytest.raises(ValueError, match="schema"):
            load_checkpoint(tmp_path / "d")


class TestWindowCollation:
    def test_collate_produces_model_ready_tensors(self):
        ex = make_example([f"t{i}" for i in range(10)], answer=AnswerSpan(2, 3))
        vocab = Vocabulary.build([ex])
        windows = window_examples(ex, vocab, 16, 8, 4, training=True)
        batch = collate_windows(windows, with_labels=True)
        assert batch["token_ids"].shape == (len(windows), 16)
        assert batch["passage_mask"].dtype == torch.bool
        assert batch["start_labels"].tolist() == [w.label.start for w in windows]

    def test_collate_requires_labels_when_asked(self):
        ex = make_example(["a", "b"], answer=AnswerSpan(0, 0))
        vocab = Vocabulary.build([ex])
        windows = window_examples(ex, vocab, 16, 8, 4, training=False)
        with pytest.raises(ValueError, match="without labels"):
            collate_windows(windows, with_labels=True)
