import numpy as np
import pytest

from partmotion.skeleton import build_default_skeleton
from partmotion.synthdata import CorpusConfig, NoiseSpec, make_corpus


@pytest.fixture(scope="session")
def skeleton_partition():
    return build_default_skeleton()


@pytest.fixture(scope="session")
def small_clean_corpus():
    config = CorpusConfig(
        size=24, length_min=48, length_max=48, seed=101,
        noise=NoiseSpec(target_cell_noise=0.0),
    )
    records, manifest = make_corpus(config)
    return records, manifest


@pytest.fixture(scope="session")
def small_noisy_corpus():
    config = CorpusConfig(
        size=24, length_min=48, length_max=48, seed=102,
        noise=NoiseSpec(target_cell_noise=0.4),
    )
    records, manifest = make_corpus(config)
    return records, manifest
