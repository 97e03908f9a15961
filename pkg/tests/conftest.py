import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from dataset import Dataset, generate_synthetic  # noqa: E402


@pytest.fixture
def tiny_csv(tmp_path):
    path = tmp_path / "tiny.csv"
    path.write_text("a,b,c,label\n1,0,1,1\n0,1,0,0\n1,1,1,1\n0,0,0,0\n")
    return path


@pytest.fixture
def synthetic_12():
    """Desk-scale oracle dataset: 12 binary features, {0, 1, 2} informative"""
    return generate_synthetic(500, 12, {0, 1, 2}, noise_rate=0.1, seed=7)


@pytest.fixture
def clean_12():
    return generate_synthetic(600, 12, {0, 1, 2}, noise_rate=0.0, seed=11)


@pytest.fixture
def separable_toy():
    """feature1 equals the label, feature0 is a fair coin"""
    rng = np.random.default_rng(3)
    labels = np.tile([0, 1], 100)
    features = np.column_stack([rng.integers(0, 2, size=200), labels]).astype(float)
    return Dataset(features=features, labels=labels, feature_names=("noise", "signal"))
