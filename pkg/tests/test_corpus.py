"""Corpus loading, vocabulary, and neutrality-weight tests."""

import numpy as np
import pytest

from restyle.corpus import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    RESERVED,
    UNK_ID,
    StyleCorpus,
    Vocabulary,
    compute_style_stats,
    load_corpus,
    load_style_file,
    neutrality_from_counts,
    reference_file,
    style_file,
    tokenize,
)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def corpus_from(subsets):
    return StyleCorpus(
        subsets=subsets,
        style_names=[str(i) for i in range(len(subsets))],
        split="train",
    )


class TestTokenize:
    def test_lowercase_and_split(self):
        assert tokenize("The Food  IS good .") == ["the", "food", "is", "good", "."]

    def test_empty(self):
        assert tokenize("   ") == []


class TestFileConventions:
    def test_style_file(self):
        assert str(style_file("data/yelp", "train", 1)) == "data/yelp.train.1"

    def test_reference_file(self):
        assert str(reference_file("data/yelp", 0)) == "data/yelp.ref.0"


class TestLoading:
    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "c.train.0"
        path.write_text("a b\n\nc d\n   \ne\n", encoding="utf-8")
        sentences = load_style_file(path)
        assert sentences == [["a", "b"], ["c", "d"], ["e"]]

    def test_missing_file_names_path(self, tmp_path):
        missing = tmp_path / "nope.train.0"
        with pytest.raises(FileNotFoundError) as err:
            load_style_file(missing)
        assert str(missing) in str(err.value)

    def test_load_corpus(self, tmp_path):
        write_lines(tmp_path / "c.train.0", ["a b", "c"])
        write_lines(tmp_path / "c.train.1", ["d e f"])
        corpus = load_corpus(
            [tmp_path / "c.train.0", tmp_path / "c.train.1"], "train"
        )
        assert corpus.num_styles == 2
        assert corpus.sizes == [2, 1]
        assert corpus.all_sentences() == [["a", "b"], ["c"], ["d", "e", "f"]]

    def test_style_count_mismatch(self, tmp_path):
        write_lines(tmp_path / "c.train.0", ["a"])
        write_lines(tmp_path / "c.train.1", ["b"])
        with pytest.raises(ValueError):
            load_corpus(
                [tmp_path / "c.train.0", tmp_path / "c.train.1"],
                "train",
                expected_styles=3,
            )

    def test_single_subset_rejected(self, tmp_path):
        write_lines(tmp_path / "c.train.0", ["a"])
        with pytest.raises(ValueError):
            load_corpus([tmp_path / "c.train.0"], "train")

    def test_empty_subset_rejected(self, tmp_path):
        write_lines(tmp_path / "c.train.0", ["a"])
        (tmp_path / "c.train.1").write_text("\n\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_corpus([tmp_path / "c.train.0", tmp_path / "c.train.1"], "train")


class TestVocabulary:
    def test_reserved_ids(self):
        vocab = Vocabulary([])
        assert [vocab.token_of(i) for i in range(4)] == list(RESERVED)
        assert (PAD_ID, UNK_ID, BOS_ID, EOS_ID) == (0, 1, 2, 3)

    def test_frequency_order_with_ties_alphabetical(self):
        corpus = corpus_from(
            [[["b", "a", "a"]], [["b", "c", "a"]]]
        )
        vocab = Vocabulary.from_corpus(corpus, min_freq=1)
        # a:3 b:2 c:1
        assert vocab.tokens[4:] == ["a", "b", "c"]

    def test_min_freq_folds_to_unk(self):
        corpus = corpus_from([[["a", "a", "rare"]], [["a"]]])
        vocab = Vocabulary.from_corpus(corpus, min_freq=2)
        assert "rare" not in vocab
        assert vocab.encode(["a", "rare"]) == [4, UNK_ID]

    def test_encode_decode_round_trip(self):
        corpus = corpus_from([[["x", "y"]], [["x"]]])
        vocab = Vocabulary.from_corpus(corpus, min_freq=1)
        ids = vocab.encode(["x", "y"])
        assert vocab.decode(ids) == ["x", "y"]

    def test_save_load_round_trip(self, tmp_path):
        corpus = corpus_from([[["m", "n", "n"]], [["o"]]])
        vocab = Vocabulary.from_corpus(corpus, min_freq=1)
        vocab.save(tmp_path / "vocab.txt")
        loaded = Vocabulary.load(tmp_path / "vocab.txt")
        assert loaded.tokens == vocab.tokens

    def test_reserved_collision_rejected(self):
        with pytest.raises(ValueError):
            Vocabulary(["<unk>"])


class TestNeutrality:
    def test_uniform_word_scores_one(self):
        # Equal relative frequency in both styles: deviation is zero.
        _, neutrality = neutrality_from_counts(np.array([[5.0, 5.0]]))
        assert neutrality[0] == pytest.approx(1.0)

    def test_exclusive_word_scores_zero_for_two_styles(self):
        # All mass on one style of two: |1 - 1/2| + |0 - 1/2| = 1.
        _, neutrality = neutrality_from_counts(np.array([[10.0, 0.0]]))
        assert neutrality[0] == pytest.approx(0.0)

    def test_three_style_skew(self):
        # Ratios (2/3, 1/3, 0): deviations 1/3 + 0 + 1/3, weight 1/3.
        _, neutrality = neutrality_from_counts(np.array([[2.0, 1.0, 0.0]]))
        assert neutrality[0] == pytest.approx(1.0 / 3.0)

    def test_unseen_word_scores_one(self):
        _, neutrality = neutrality_from_counts(np.array([[0.0, 0.0, 0.0]]))
        assert neutrality[0] == pytest.approx(1.0)

    def test_property_uniform_iff_one_and_scale_invariant(self):
        rng = np.random.default_rng(7)
        for styles in (2, 3, 5):
            counts = rng.integers(0, 50, size=(1000, styles)).astype(float)
            ratios, neutrality = neutrality_from_counts(counts)
            assert neutrality.shape == (1000,)
            # Weight 1 exactly when the seen word is spread uniformly.
            seen = counts.sum(axis=1) > 0
            uniform = seen & np.all(
                np.abs(ratios - 1.0 / styles) < 1e-12, axis=1
            )
            assert np.allclose(neutrality[uniform], 1.0)
            hit_one = seen & np.isclose(neutrality, 1.0, atol=1e-12)
            assert np.array_equal(hit_one, uniform)
            # Scaling all counts of a word leaves the weight unchanged.
            _, scaled = neutrality_from_counts(counts * 10.0)
            assert np.allclose(neutrality, scaled)
            # Range: the most skewed word loses 2(M-1)/M.
            assert neutrality.min() >= 1.0 - 2.0 * (styles - 1) / styles - 1e-12
            assert neutrality.max() <= 1.0 + 1e-12

    def test_stats_fold_oov_into_unk(self):
        corpus = corpus_from([[["a", "a", "r1"]], [["a", "r2"]]])
        vocab = Vocabulary.from_corpus(corpus, min_freq=2)  # only "a" survives
        stats = compute_style_stats(corpus, vocab)
        assert stats.counts[UNK_ID].tolist() == [1.0, 1.0]
        a_id = vocab.id_of("a")
        assert stats.counts[a_id].tolist() == [2.0, 1.0]
        # pad/bos/eos never occur: neutrality 1
        assert stats.neutrality[PAD_ID] == pytest.approx(1.0)
        assert stats.neutrality[BOS_ID] == pytest.approx(1.0)
