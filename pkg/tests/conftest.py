"""Shared fixtures: a small synthetic dataset that keeps unit tests fast."""

import pytest

from dmvqa import SyntheticConfig, generate_synthetic


TINY = SyntheticConfig(n_types=3, answers_per_type=3, n_train=120, n_test=60,
                       bias=0.8, visual_noise=0.4, d_img=3, query_pool=4,
                       query_len=1, head_slots=2, head_credit=0.5, seed=11)


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_synthetic(TINY)
