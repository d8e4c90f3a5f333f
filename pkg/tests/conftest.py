"""
Pytest configuration for the sentence ranker tests.
Shared fixtures build tiny models and synthetic corpora quickly.
"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Add the application directory to the path so we can import ranker
sys.path.insert(0, str(Path(__file__).parent.parent / "sentence-ranker"))

from ranker.config import ModelConfig, OptimizerConfig, SynthSpec  # noqa: E402
from ranker.data import Corpus, Paragraph, synth_generate  # noqa: E402
from ranker.model import init_model  # noqa: E402


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    """Token-mode model small enough for finite differences."""
    return ModelConfig(
        mode="tokens",
        vocab_size=20,
        d_model=8,
        heads=2,
        sentence_blocks=1,
        paragraph_blocks=1,
        decoder_hidden=8,
        decoder_layers=3,
        max_len=16,
    )


@pytest.fixture
def small_synth_spec() -> SynthSpec:
    return SynthSpec(
        n_train=24,
        n_val=8,
        n_test=8,
        min_sentences=3,
        max_sentences=4,
        vocab_size=20,
        signal=1.0,
        min_filler=1,
        max_filler=3,
        seed=7,
    )


@pytest.fixture
def small_splits(small_synth_spec):
    return {split: synth_generate(small_synth_spec, split) for split in ("train", "val", "test")}


@pytest.fixture
def quick_optimizer() -> OptimizerConfig:
    return OptimizerConfig(batch_size=8, epochs=2, seed=3)


@pytest.fixture
def slow_enabled():
    """Skip unless RANKER_RUN_SLOW=1; the acceptance-scale runs take minutes."""
    if os.getenv("RANKER_RUN_SLOW") != "1":
        pytest.skip("RANKER_RUN_SLOW=1 not set")
    return True


@pytest.fixture
def oracle_params():
    """Embedding-mode model whose score is the first input coordinate.

    With no paragraph blocks and a single linear decoder layer, paragraphs
    whose first embedding column holds the gold position are ordered
    perfectly under an ascending-sort loss.
    """
    config = ModelConfig(
        mode="embeddings",
        d_model=4,
        heads=1,
        paragraph_blocks=0,
        decoder_layers=1,
        decoder_hidden=1,
    )
    params = init_model(config, seed=0)
    params.decoder.weights[0].values[...] = np.array([[1.0], [0.0], [0.0], [0.0]])
    params.decoder.biases[0].values[...] = 0.0
    return params


@pytest.fixture
def oracle_corpus():
    """Embedding-mode paragraphs whose first column is the gold position."""
    rng = np.random.default_rng(21)
    paragraphs = []
    for n in range(12):
        m = 2 + n % 4
        gold = tuple(int(v) for v in rng.permutation(m) + 1)
        embeddings = rng.normal(size=(m, 4))
        embeddings[:, 0] = gold
        paragraphs.append(Paragraph(id=f"oracle-{n}", gold_order=gold, embeddings=embeddings))
    return Corpus(paragraphs=tuple(paragraphs), split="test")


# Pytest configuration
def pytest_configure(config):
    """Configure pytest."""
    config.addinivalue_line("markers", "unit: mark test as a unit test")
    config.addinivalue_line("markers", "integration: mark test as an integration test")
    config.addinivalue_line("markers", "e2e: mark test as an end-to-end test")
    config.addinivalue_line("markers", "slow: mark test as slow running")


def pytest_collection_modifyitems(config, items):
    """Modify test collection to add markers based on file location."""
    for item in items:
        # Add markers based on test file location
        path = str(item.fspath)
        if f"{os.sep}unit{os.sep}" in path:
            item.add_marker(pytest.mark.unit)
        elif f"{os.sep}integration{os.sep}" in path:
            item.add_marker(pytest.mark.integration)
        elif f"{os.sep}e2e{os.sep}" in path:
            item.add_marker(pytest.mark.e2e)
            item.add_marker(pytest.mark.slow)
