"""In-repo data generators: shapes, signal strength, CSV format."""

import numpy as np
import pytest

from survseq.dataset import (
    assemble_sequences,
    default_max_visits,
    fit_schema,
    load_feature_spec,
    parse_long_csv,
)
from survseq.fixtures import (
    longitudinal_dataset,
    toy_risk_dataset,
    write_pbc2_like_csv,
)
from survseq.metrics import c_td


def test_toy_dataset_shape_and_censoring():
    data = toy_risk_dataset(500, seed=0)
    assert len(data) == 500
    assert data.v_max == 1 and data.n_events == 1
    censored = np.mean(data.events() == 0)
    assert 0.1 < censored < 0.3
    assert np.all(data.durations() > 0)


def test_toy_risk_signal_is_strong():
    # the covariate must rank event times almost perfectly, otherwise no
    # model can recover high concordance from it
    data = toy_risk_dataset(500, seed=0)
    x = np.array([s.visits[0, 0] for s in data.sequences])
    durations, events = data.durations(), data.events()
    tau = float(np.quantile(durations[events == 1], 0.5))
    value, _ = c_td(x, durations, events, tau)
    assert value > 0.93


def test_toy_dataset_deterministic():
    a = toy_risk_dataset(50, seed=4)
    b = toy_risk_dataset(50, seed=4)
    assert np.array_equal(a.visit_tensor(), b.visit_tensor())
    assert np.array_equal(a.durations(), b.durations())


def test_longitudinal_shapes_and_masks():
    data = longitudinal_dataset(300, seed=0)
    assert data.v_max == 8
    counts = np.array([s.n_real for s in data.sequences])
    assert counts.min() >= 2 and counts.max() <= 8
    for s in data.sequences[:20]:
        assert np.all(s.visits[s.n_real:] == 0.0)
        assert np.all(s.mask[:s.n_real] == 1.0)


def test_longitudinal_history_beats_last_visit():
    # averaging the noisy per-visit biomarker must out-rank the last visit
    data = longitudinal_dataset(300, seed=0)
    durations, events = data.durations(), data.events()
    mean_est = np.array([s.visits[:s.n_real, 0].mean()
                         for s in data.sequences])
    last_est = np.array([s.visits[s.n_real - 1, 0] for s in data.sequences])
    tau = float(np.quantile(durations[events == 1], 0.5))
    full, _ = c_td(mean_est, durations, events, tau)
    last, _ = c_td(last_est, durations, events, tau)
    assert full - last > 0.05


def test_pbc2_like_csv_parses_and_matches_marginals(tmp_path):
    csv_path = tmp_path / "pbc2.csv"
    spec_path = tmp_path / "pbc2_spec.json"
    write_pbc2_like_csv(csv_path, spec_path, n_patients=188, seed=0)

    spec = load_feature_spec(spec_path)
    assert sum(1 for k in spec.values() if k == "numerical") == 8
    assert sum(1 for k in spec.values() if k == "categorical") == 7

    table = parse_long_csv(csv_path, spec)
    schema = fit_schema(table, spec)
    data = assemble_sequences(table, schema, default_max_visits(table))
    assert len(data) == 188
    event_rate = np.mean(data.events() > 0)
    assert abs(event_rate - 0.4487) < 0.02
    assert data.durations().min() >= 41
    assert data.durations().max() <= 5071


def test_pbc2_like_csv_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_pbc2_like_csv(a, tmp_path / "sa.json", n_patients=50, seed=3)
    write_pbc2_like_csv(b, tmp_path / "sb.json", n_patients=50, seed=3)
    assert a.read_bytes() == b.read_bytes()
