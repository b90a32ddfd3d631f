"""Shared builders for the test suite.

Everything is seeded; no test depends on external data or network access.
"""

import numpy as np
import pytest

from survseq.dataset import (
    FeatureSchema,
    NumericalFeature,
    PatientSequence,
    SurvivalDataset,
)


def make_dataset(n_patients=40, v_max=4, width=2, n_events=1, seed=0,
                 censor_fraction=0.3):
    """Random padded dataset with valid masks and positive durations."""
    rng = np.random.default_rng(seed)
    schema = FeatureSchema(
        numerical=tuple(NumericalFeature(f"f{j}", max_value=1.0, mean=0.5)
                        for j in range(width)),
        categorical=(),
    )
    sequences = []
    for i in range(n_patients):
        n_real = int(rng.integers(1, v_max + 1))
        visits = np.zeros((v_max, width))
        visits[:n_real] = rng.uniform(0.0, 1.0, (n_real, width))
        mask = np.zeros(v_max)
        mask[:n_real] = 1.0
        duration = float(rng.uniform(0.1, 10.0))
        if rng.uniform() < censor_fraction:
            event = 0
        else:
            event = int(rng.integers(1, n_events + 1))
        sequences.append(PatientSequence(
            patient_id=f"p{i:03d}", visits=visits, mask=mask, n_real=n_real,
            duration=duration, event=event))
    return SurvivalDataset(schema=schema, sequences=sequences, v_max=v_max,
                           n_events=n_events)


@pytest.fixture
def dataset_factory():
    return make_dataset
