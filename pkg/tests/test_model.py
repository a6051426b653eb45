"""Model assembly tests: wiring, checkpoints, warm start, transfer path."""

import numpy as np
import pytest
import torch

from restyle.corpus import Vocabulary
from restyle.model import (
    ForwardLM,
    build_discriminator,
    build_model,
    init_from_lm,
    load_checkpoint,
    retrieve_for_batch,
    save_checkpoint,
    transfer_sentences,
)
from restyle.retriever import RetrievalResult, Retriever

from helpers import tiny_config, tiny_corpus, tiny_setup


class TestAssembly:
    def test_shared_embedding_object(self):
        trainer = tiny_setup()
        model = trainer.model
        assert model.encoder.embedding is model.embedding
        assert model.decoder.embedding is model.embedding

    def test_discriminator_embedding_is_separate(self):
        trainer = tiny_setup()
        assert trainer.discriminator.embedding is not trainer.model.embedding

    def test_parameter_count_is_stable(self):
        # Construction twice under the same seed gives identical weights.
        a = tiny_setup().model
        b = tiny_setup().model
        for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert torch.equal(pa, pb), name

    def test_encode_retrieved_pads_short_sets(self):
        trainer = tiny_setup()
        model, vocab = trainer.model, trainer.vocab
        retrievals = [
            RetrievalResult(
                sentences=[["the", "food"], ["the", "soup"]], ids=[0, 1],
                scores=[1.0, 0.5],
            ),
            RetrievalResult(sentences=[["the", "room"]], ids=[2], scores=[0.1], short=True),
        ]
        memory, mask = model.encode_retrieved(vocab, retrievals)
        assert memory.shape == (2, 2, 32)
        assert mask.tolist() == [[True, True], [True, False]]
        assert torch.all(memory[1, 1] == 0)

    def test_empty_retrieval_rejected(self):
        trainer = tiny_setup()
        empty = RetrievalResult(sentences=[], ids=[], scores=[], short=True)
        with pytest.raises(ValueError):
            trainer.model.encode_retrieved(trainer.vocab, [empty])


class TestCheckpointRoundTrip:
    def test_bit_exact_state(self, tmp_path):
        trainer = tiny_setup()
        trainer.train_step()
        path = tmp_path / "model.pt"
        save_checkpoint(
            path, trainer.model, trainer.discriminator, trainer.config,
            trainer.vocab, step=1, extra={"note": "x"},
        )
        loaded = load_checkpoint(path)
        for name, tensor in trainer.model.state_dict().items():
            assert torch.equal(tensor, loaded.model.state_dict()[name]), name
        for name, tensor in trainer.discriminator.state_dict().items():
            assert torch.equal(tensor, loaded.discriminator.state_dict()[name]), name
        assert loaded.config == trainer.config
        assert loaded.vocab.tokens == trainer.vocab.tokens
        assert loaded.step == 1
        assert loaded.extra == {"note": "x"}

    def test_inference_identical_after_reload(self, tmp_path):
        trainer = tiny_setup()
        path = tmp_path / "model.pt"
        save_checkpoint(
            path, trainer.model, None, trainer.config, trainer.vocab, step=0
        )
        loaded = load_checkpoint(path)
        sentences = [["the", "food", "was", "really", "good", "1"]]
        a = trainer.model.encode_sentences(trainer.vocab, sentences)
        b = loaded.model.encode_sentences(loaded.vocab, sentences)
        assert torch.equal(a.query, b.query)


class TestWarmStart:
    def test_embedding_and_forward_direction_copied(self):
        config = tiny_config()
        trainer = tiny_setup(config)
        model = trainer.model
        lm = ForwardLM(len(trainer.vocab), config.emb_size, config.hidden_size // 2)
        copied = init_from_lm(model, lm)
        assert "embedding" in copied and "encoder_forward" in copied
        assert torch.equal(model.embedding.weight, lm.embedding.weight)
        assert torch.equal(model.encoder.lstm.weight_ih_l0, lm.lstm.weight_ih_l0)
        assert torch.equal(model.encoder.lstm.bias_hh_l0, lm.lstm.bias_hh_l0)

    def test_reverse_direction_untouched(self):
        config = tiny_config()
        trainer = tiny_setup(config)
        model = trainer.model
        before = model.encoder.lstm.weight_ih_l0_reverse.clone()
        lm = ForwardLM(len(trainer.vocab), config.emb_size, config.hidden_size // 2)
        init_from_lm(model, lm)
        assert torch.equal(model.encoder.lstm.weight_ih_l0_reverse, before)

    def test_shape_mismatch_skips_quietly(self):
        config = tiny_config()
        trainer = tiny_setup(config)
        lm = ForwardLM(len(trainer.vocab), config.emb_size, config.hidden_size)
        copied = init_from_lm(trainer.model, lm)
        assert "encoder_forward" not in copied
        assert "embedding" in copied


class TestTransferPath:
    def test_transfer_outputs_sane_tokens(self):
        trainer = tiny_setup()
        sentences = tiny_corpus().sentences(0)[:4]
        outputs = transfer_sentences(
            trainer.model, trainer.retriever, trainer.vocab,
            sentences, target_style=1, max_len=8,
        )
        assert len(outputs) == 4
        for tokens in outputs:
            assert 0 < len(tokens) <= 8
            for token in tokens:
                assert token in trainer.vocab or token == "<unk>"

    def test_retrieve_for_batch_excludes_query(self):
        trainer = tiny_setup()
        corpus = tiny_corpus()
        query = corpus.sentences(1)[0]
        results = retrieve_for_batch(
            trainer.model, trainer.retriever, trainer.vocab, [query], [1]
        )
        assert all(s != query for s in results[0].sentences)

    def test_dense_retriever_served_by_model_embeddings(self):
        config = tiny_config(retriever="dense")
        trainer = tiny_setup(config)
        sentences = tiny_corpus().sentences(0)[:2]
        outputs = transfer_sentences(
            trainer.model, trainer.retriever, trainer.vocab,
            sentences, target_style=1, max_len=8,
        )
        assert len(outputs) == 2
