import numpy as np
import pytest

from nhans.audio_io import AudioBuffer
from nhans.corpus import build_desk_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    """Small synthetic corpus shared by the tests that need real files."""
    root = tmp_path_factory.mktemp("corpus")
    files = build_desk_corpus(root, seed=0, clean_count=8, tone_instances=2,
                              broadband_instances=3, speaker_utterances=4)
    return root, files


def make_buffer(samples, rate=16000) -> AudioBuffer:
    return AudioBuffer(np.asarray(samples, dtype=np.float64), rate)
