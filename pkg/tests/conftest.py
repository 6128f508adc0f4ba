from __future__ import annotations

import numpy as np
import pytest

from ordrec import corpus, embedding, lstm, synthgen, trainer
from ordrec.artifact import ModelArtifact


@pytest.fixture(scope="session")
def small_world():
    """A small synthetic instance trained end to end in a few seconds."""
    cat = synthgen.gen_catalog(5, 3, 4, seed=1)
    orders, views = synthgen.gen_histories(cat, synthgen.GenParams(n_users=600, max_orders=16, seed=2))
    cfg = corpus.CorpusConfig()
    seqs = corpus.filter_min_length(corpus.group_ordered(orders, cfg))
    vseqs = corpus.filter_min_length(corpus.group_ordered(views, cfg))
    vocab = corpus.build_vocab(seqs)
    windows, _ = corpus.windowize_all(seqs, cfg, vocab)
    w2v = embedding.train_word2vec(vseqs, embedding.Word2VecConfig(dim=8, epochs=3, seed=0))
    mcfg = lstm.ModelConfig(feature_dim=10, hidden1=16, hidden2=16, n_outputs=vocab.n_outputs, seed=0)
    tcfg = trainer.TrainConfig(batch_size=32, epochs=8, lr=0.01, validation_fraction=0.2)
    art, report = trainer.train(windows, vocab, w2v, mcfg, tcfg)
    return {
        "catalog": cat, "orders": orders, "views": views, "seqs": seqs, "vseqs": vseqs, "vocab": vocab,
        "windows": windows, "w2v": w2v, "model_cfg": mcfg, "train_cfg": tcfg, "artifact": art, "report": report,
    }


@pytest.fixture
def zero_artifact(small_world):
    """Same vocabulary and features as the trained model, all weights zero."""
    art = small_world["artifact"]
    return ModelArtifact(art.config, art.vocab, art.features, lstm.zero_params(art.config), {})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
