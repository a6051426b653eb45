"""Classifier tests: pooling, soft inputs, spectral normalization."""

import pytest
import torch

from restyle.discriminator import ConvTextClassifier, top_singular_values


def make_classifier(vocab=20, emb=8, classes=3, filters=4, widths=(1, 2, 3), **kw):
    torch.manual_seed(0)
    return ConvTextClassifier(
        vocab_size=vocab,
        emb_size=emb,
        num_classes=classes,
        num_filters=filters,
        widths=widths,
        **kw,
    )


def one_hot(ids, vocab_size):
    out = torch.zeros(len(ids), vocab_size)
    out[torch.arange(len(ids)), ids] = 1.0
    return out


class TestForward:
    def test_logit_shape(self):
        clf = make_classifier()
        logits = clf(torch.tensor([[4, 5, 6], [7, 8, 0]]), torch.tensor([3, 2]))
        assert logits.shape == (2, 3)

    def test_short_inputs_padded_to_widest_filter(self):
        clf = make_classifier(widths=(1, 2, 3, 4, 5))
        logits = clf(torch.tensor([[4]]), torch.tensor([1]))
        assert logits.shape == (1, 3)

    def test_padding_invariance(self):
        # eval mode: power iterations would otherwise change the weight
        # between the two calls being compared
        clf = make_classifier().eval()
        a = clf(torch.tensor([[4, 5]]), torch.tensor([2]))
        b = clf(torch.tensor([[4, 5, 0, 0, 0]]), torch.tensor([2]))
        assert torch.allclose(a, b, atol=1e-6)

    def test_one_hot_equals_discrete(self):
        clf = make_classifier().eval()
        ids = [4, 5, 6, 7]
        discrete = clf(torch.tensor([ids]), torch.tensor([4]))
        soft = clf(one_hot(torch.tensor(ids), 20)[None], torch.tensor([4]))
        assert torch.allclose(discrete, soft, atol=1e-6)

    def test_soft_rows_differentiable(self):
        clf = make_classifier()
        probs = torch.softmax(torch.randn(1, 4, 20), dim=-1).requires_grad_(True)
        clf(probs, torch.tensor([4])).sum().backward()
        assert probs.grad is not None
        assert float(probs.grad.abs().sum()) > 0

    def test_junk_rows_past_length_ignored(self):
        clf = make_classifier().eval()
        probs = torch.softmax(torch.randn(1, 5, 20), dim=-1)
        junk = probs.clone()
        junk[0, 3:] = torch.softmax(torch.randn(2, 20), dim=-1)
        a = clf(probs, torch.tensor([3]))
        b = clf(junk, torch.tensor([3]))
        assert torch.allclose(a, b, atol=1e-6)

    def test_empty_sequence_rejected(self):
        clf = make_classifier()
        with pytest.raises(ValueError):
            clf(torch.tensor([[4]]), torch.tensor([0]))

    def test_class_count_validated(self):
        with pytest.raises(ValueError):
            make_classifier(classes=1)


class TestSpectralNorm:
    def test_top_singular_value_near_one_after_iterations(self):
        clf = make_classifier(spectral=True)
        clf.train()
        tokens = torch.randint(1, 20, (8, 6))
        lengths = torch.full((8,), 6)
        # Each forward runs one power iteration per normalized weight.
        for _ in range(30):
            clf(tokens, lengths)
        for name, value in top_singular_values(clf).items():
            assert abs(value - 1.0) <= 0.05, f"{name}: {value}"

    def test_unnormalized_classifier_drifts_freely(self):
        clf = make_classifier(spectral=False)
        with torch.no_grad():
            clf.out.weight.mul_(10.0)
        top = torch.linalg.svdvals(clf.out.weight.double())[0]
        assert top > 1.5  # no constraint anywhere

    def test_state_dict_round_trip(self):
        clf = make_classifier(spectral=True)
        tokens = torch.randint(1, 20, (4, 5))
        lengths = torch.full((4,), 5)
        clf(tokens, lengths)
        clone = make_classifier(spectral=True)
        clone.load_state_dict(clf.state_dict())
        clf.eval(), clone.eval()
        with torch.no_grad():
            assert torch.allclose(clf(tokens, lengths), clone(tokens, lengths), atol=0.0)
