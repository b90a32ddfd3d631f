"""Release gate: ten numbered acceptance checks.

Each test prints one `[criterion NN] name: PASS/FAIL` line (run with -s to
see them on success) and asserts the stated bound, including the runtime
budgets. Criterion 7 needs the real PBC2 visit table, which is not
redistributable; point SURVSEQ_PBC2_CSV at a long-format export to enable
it.
"""

import os
import time

import numpy as np
import pytest

from survseq import dataset as ds
from survseq.encoder import EncoderConfig, embed, encoder_layer, masked_attention
from survseq.fixtures import (
    PBC2_CATEGORICALS,
    PBC2_NUMERICALS,
    longitudinal_dataset,
    toy_risk_dataset,
)
from survseq.metrics import brier, c_td
from survseq.numerics import Tape
from survseq.survival_head import (
    HeadConfig,
    SurvivalModel,
    TrainingBatch,
    combined_loss,
    predict_sequences,
)
from survseq.synth import GeneratorConfig, optimism, optimism_from_curves
from survseq.timegrid import StepFunction
from survseq.trainer import (
    TrainConfig,
    cross_validate,
    load_checkpoint,
    save_checkpoint,
    train,
)

TOY_CONFIG = TrainConfig(learning_rate=1e-3, n_bins=8, max_epochs=30,
                         patience=5, batch_size=64, n_features=15,
                         n_heads=1, n_layers=2, seed=0)
LONG_CONFIG = TrainConfig(learning_rate=1e-3, n_bins=8, max_epochs=40,
                          patience=6, batch_size=32, n_features=15,
                          n_heads=2, n_layers=2, seed=0)
SMALL_CONFIG = TrainConfig(learning_rate=1e-3, n_bins=4, max_epochs=4,
                           patience=4, batch_size=16, n_features=15,
                           n_heads=1, n_layers=2, seed=0)


def report(number, name, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[criterion {number:02d}] {name}: {status}{suffix}")


def aggregate_row(result, quantile, event=1):
    for row in result.aggregate():
        if row.event == event and abs(row.quantile - quantile) < 1e-9:
            return row
    raise KeyError((event, quantile))


def pbc2_dataset():
    path = os.environ.get("SURVSEQ_PBC2_CSV", "").strip()
    if not path:
        return None
    spec = {name: ds.NUMERICAL for name in PBC2_NUMERICALS}
    spec.update({name: ds.CATEGORICAL for name in PBC2_CATEGORICALS})
    table = ds.parse_long_csv(path, spec)
    schema = ds.fit_schema(table, spec)
    return ds.assemble_sequences(table, schema, ds.default_max_visits(table))


# --- criterion 1: metric oracle equivalence --------------------------------

def brute_force_ctd(risk, durations, events, tau, k, weights):
    """Independent O(n^2) pair enumerator."""
    num, den, pairs = 0.0, 0.0, 0
    for i in range(len(risk)):
        if events[i] != k or durations[i] > tau:
            continue
        w2 = weights[i] * weights[i]
        for j in range(len(risk)):
            if durations[j] <= durations[i]:
                continue
            pairs += 1
            den += w2
            if risk[i] > risk[j]:
                num += w2
            elif risk[i] == risk[j]:
                num += 0.5 * w2
    return num / den, pairs


def brute_force_brier(survival_at_tau, durations, events, tau, weights):
    num, den = 0.0, 0.0
    for i in range(len(durations)):
        if events[i] > 0 and durations[i] <= tau:
            outcome = 1.0
        elif durations[i] > tau:
            outcome = 0.0
        else:
            continue
        w = 1.0 if weights is None else weights[i]
        num += w * ((1.0 - survival_at_tau[i]) - outcome) ** 2
        den += w
    return num / den


def test_criterion_01_metric_oracle_equivalence():
    start = time.perf_counter()
    worst_ctd, worst_brier = 0.0, 0.0
    for instance in range(50):
        rng = np.random.default_rng(instance)
        n = int(rng.integers(30, 201))
        risk = rng.normal(size=n)
        durations = rng.exponential(5.0, size=n) + 0.05
        observed = rng.random(n) > 0.3  # 30% censoring
        competing = instance % 2 == 1
        kinds = 1 + (rng.random(n) < 0.4).astype(int) if competing else 1
        events = np.where(observed, kinds, 0)
        if instance % 3 == 0:
            risk = np.round(risk, 1)  # exercise half-credit risk ties
        if instance % 4 == 0:
            durations = np.round(durations, 1)  # exercise time ties
        tau = float(np.quantile(durations[events > 0], 0.5))
        weights = rng.uniform(0.5, 2.0, size=n) if instance % 2 else None
        k = 2 if competing and instance % 5 == 0 else 1

        got, got_pairs = c_td(risk, durations, events, tau, k=k, ipcw=weights)
        w = np.ones(n) if weights is None else weights
        want, want_pairs = brute_force_ctd(risk, durations, events, tau, k, w)
        assert got_pairs == want_pairs
        worst_ctd = max(worst_ctd, abs(got - want))

        survival_at_tau = rng.uniform(0.0, 1.0, size=n)
        got_b = brier(survival_at_tau, durations, events, tau, ipcw=weights)
        want_b = brute_force_brier(survival_at_tau, durations, events, tau,
                                   weights)
        worst_brier = max(worst_brier, abs(got_b - want_b))
    elapsed = time.perf_counter() - start

    passed = worst_ctd < 1e-12 and worst_brier < 1e-12 and elapsed < 10.0
    report(1, "metric oracle equivalence", passed,
           f"max |c_td delta| {worst_ctd:.2e}, max |brier delta| "
           f"{worst_brier:.2e}, {elapsed:.1f}s")
    assert worst_ctd < 1e-12
    assert worst_brier < 1e-12
    assert elapsed < 10.0


# --- criterion 2: gradient integrity ---------------------------------------

def test_criterion_02_gradient_integrity():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        enc_config = EncoderConfig(encoded_width=2, v_max=3, d_model=4,
                                   n_layers=2, n_heads=1, d_ff=8, n_out=5)
        head_config = HeadConfig(n_features=5, n_events=2, n_bins=3,
                                 depth=2, d_hidden=5)
        model = SurvivalModel.initialize(enc_config, head_config, rng)

        n = 4
        n_real = rng.integers(1, 4, size=n)
        mask = (np.arange(3)[None, :] < n_real[:, None]).astype(np.float64)
        batch = TrainingBatch(
            visits=rng.normal(0.0, 0.5, size=(n, 3, 2)),
            mask=mask,
            bins=rng.integers(0, 3, size=n),
            events=rng.integers(0, 3, size=n),
            weights=rng.uniform(0.5, 2.0, size=n),
            duration_norm=rng.uniform(0.0, 1.0, size=n))

        model.zero_grad()
        with Tape() as tape:
            loss = combined_loss(batch, model, 0.7, 0.4)
        tape.backward(loss)

        def loss_value():
            return float(combined_loss(batch, model, 0.7, 0.4).data)

        h = 1e-5
        for p in model.parameters():
            grad = p.grad
            flat = p.data.reshape(-1)
            for idx in range(flat.size):
                kept = flat[idx]
                flat[idx] = kept + h
                up = loss_value()
                flat[idx] = kept - h
                down = loss_value()
                flat[idx] = kept
                fd = (up - down) / (2.0 * h)
                analytic = grad.reshape(-1)[idx]
                scale = max(abs(fd), abs(analytic), 1e-6)
                worst = max(worst, abs(fd - analytic) / scale)
    elapsed = time.perf_counter() - start

    passed = worst < 1e-4 and elapsed < 30.0
    report(2, "gradient integrity", passed,
           f"max rel err {worst:.2e} over 5 seeds, {elapsed:.1f}s")
    assert worst < 1e-4
    assert elapsed < 30.0


# --- criterion 3: padding independence -------------------------------------

def test_criterion_03_padding_independence():
    rng = np.random.default_rng(7)
    enc_config = EncoderConfig(encoded_width=4, v_max=6, d_model=8,
                               n_layers=2, n_heads=2, d_ff=16, n_out=8)
    head_config = HeadConfig(n_features=8, n_events=2, n_bins=6)
    model = SurvivalModel.initialize(enc_config, head_config, rng)

    n = 100
    visits = rng.normal(size=(n, 6, 4))
    n_real = rng.integers(1, 7, size=n)
    mask = (np.arange(6)[None, :] < n_real[:, None]).astype(np.float64)
    base = predict_sequences(visits, mask, model)

    noise = rng.normal(0.0, 1e3, size=visits.shape)
    perturbed = visits + noise * (1.0 - mask)[:, :, None]
    moved = predict_sequences(perturbed, mask, model)

    worst = max(np.abs(moved.hazards - base.hazards).max(),
                np.abs(moved.survival - base.survival).max(),
                np.abs(moved.pmf - base.pmf).max())
    passed = worst < 1e-9
    report(3, "padding independence", passed,
           f"max prediction shift {worst:.2e} over {n} sequences")
    assert worst < 1e-9


# --- criterion 4: structural invariants ------------------------------------

@pytest.fixture(scope="module")
def small_trained():
    data = toy_risk_dataset(80, censoring=0.2, seed=1)
    train_set, val_set = ds.split_dataset(data, 0.8, seed=0)
    return train(SMALL_CONFIG, train_set, val_set), train_set, val_set


def check_prediction_invariants(pred):
    assert np.all(pred.survival[..., 0] == 1.0)
    assert np.all(np.diff(pred.survival, axis=-1) <= 0.0)
    total = pred.pmf.sum(axis=-1) + pred.survival[..., -1]
    return np.abs(total - 1.0).max()


def test_criterion_04_structural_invariants(small_trained):
    worst_mass, worst_att = 0.0, 0.0
    for trial in range(20):
        rng = np.random.default_rng(100 + trial)
        d_model = int(rng.choice([4, 8]))
        n_heads = int(rng.choice([1, 2]))
        width = int(rng.integers(2, 7))
        v_max = int(rng.integers(2, 8))
        enc_config = EncoderConfig(encoded_width=width, v_max=v_max,
                                   d_model=d_model, n_layers=2,
                                   n_heads=n_heads, d_ff=2 * d_model,
                                   n_out=6)
        head_config = HeadConfig(n_features=6,
                                 n_events=int(rng.integers(1, 4)),
                                 n_bins=int(rng.integers(3, 13)))
        model = SurvivalModel.initialize(enc_config, head_config, rng)

        n = int(rng.integers(1, 41))
        visits = rng.normal(size=(n, v_max, width))
        n_real = rng.integers(1, v_max + 1, size=n)
        mask = (np.arange(v_max)[None, :] < n_real[:, None]).astype(float)

        pred = predict_sequences(visits, mask, model)
        worst_mass = max(worst_mass, check_prediction_invariants(pred))

        x = embed(visits, model.encoder)
        for layer in model.encoder.layers:
            _, per_head = masked_attention(x, mask, layer,
                                           return_weights=True)
            for att in per_head:
                worst_att = max(worst_att,
                                np.abs(att.sum(axis=-1) - 1.0).max())
            x = encoder_layer(x, mask, layer)

    trained, _, val_set = small_trained
    pred = predict_sequences(val_set.visit_tensor(), val_set.mask_tensor(),
                             trained.model)
    worst_mass = max(worst_mass, check_prediction_invariants(pred))

    passed = worst_mass < 1e-10 and worst_att < 1e-12
    report(4, "structural invariants", passed,
           f"max |pmf+tail-1| {worst_mass:.2e}, max |att row sum - 1| "
           f"{worst_att:.2e}")
    assert worst_mass < 1e-10
    assert worst_att < 1e-12


# --- criterion 5: toy recovery ---------------------------------------------

def test_criterion_05_toy_recovery():
    start = time.perf_counter()
    data = toy_risk_dataset(500, censoring=0.2, seed=0)
    result = cross_validate(TOY_CONFIG, data, folds=5, seed=0)
    elapsed = time.perf_counter() - start
    row = aggregate_row(result, 0.5)

    passed = row.c_td_mean >= 0.90 and elapsed < 180.0
    report(5, "toy recovery", passed,
           f"5-fold mean C_td@median {row.c_td_mean:.4f} >= 0.90, "
           f"{elapsed:.0f}s")
    assert row.c_td_mean >= 0.90
    assert elapsed < 180.0


# --- criteria 6 and 8 share the longitudinal CV runs -----------------------

@pytest.fixture(scope="module")
def longitudinal_runs():
    data = longitudinal_dataset(300, seed=0)
    start = time.perf_counter()
    full = cross_validate(LONG_CONFIG, data, folds=5, seed=0)
    ablation = cross_validate(LONG_CONFIG, ds.last_visit_only(data),
                              folds=5, seed=0)
    advantage_elapsed = time.perf_counter() - start
    augmented = cross_validate(
        LONG_CONFIG, data, folds=5, seed=0,
        generator_config=GeneratorConfig(fraction=0.5, seed=0))
    return {"full": full, "ablation": ablation, "augmented": augmented,
            "elapsed": advantage_elapsed}


def test_criterion_06_time_varying_advantage(longitudinal_runs):
    data = pbc2_dataset()
    if data is not None:
        start = time.perf_counter()
        full = cross_validate(LONG_CONFIG, data, folds=5, seed=0)
        ablation = cross_validate(LONG_CONFIG, ds.last_visit_only(data),
                                  folds=5, seed=0)
        elapsed = time.perf_counter() - start
        source = "pbc2"
    else:
        full = longitudinal_runs["full"]
        ablation = longitudinal_runs["ablation"]
        elapsed = longitudinal_runs["elapsed"]
        source = "longitudinal fixture"

    gaps = [aggregate_row(full, q).c_td_mean
            - aggregate_row(ablation, q).c_td_mean
            for q in (0.25, 0.5, 0.75)]
    mean_gap = float(np.mean(gaps))

    passed = all(g > 0.0 for g in gaps) and mean_gap >= 0.02 \
        and elapsed < 900.0
    report(6, "time-varying advantage", passed,
           f"{source}: C_td gaps {gaps[0]:+.4f}/{gaps[1]:+.4f}/"
           f"{gaps[2]:+.4f}, mean {mean_gap:+.4f} >= 0.02, {elapsed:.0f}s")
    assert all(g > 0.0 for g in gaps)
    assert mean_gap >= 0.02
    assert elapsed < 900.0


# --- criterion 7: PBC2 band (needs user-supplied data) ---------------------

def test_criterion_07_pbc2_band():
    data = pbc2_dataset()
    if data is None:
        print("[criterion 07] pbc2 band: SKIP "
              "(set SURVSEQ_PBC2_CSV to a long-format PBC2 export)")
        pytest.skip("PBC2 data not supplied (SURVSEQ_PBC2_CSV unset)")
    config = TrainConfig(learning_rate=1e-3, n_bins=10, max_epochs=60,
                         patience=8, batch_size=32, n_features=15,
                         n_heads=2, n_layers=2, seed=0)
    result = cross_validate(config, data, folds=5, seed=0)
    row = aggregate_row(result, 0.25)

    passed = row.c_td_mean >= 0.65 and row.brier_mean <= 0.12
    report(7, "pbc2 band", passed,
           f"C_td@0.25 {row.c_td_mean:.4f} >= 0.65, "
           f"Brier@0.25 {row.brier_mean:.4f} <= 0.12")
    assert row.c_td_mean >= 0.65
    assert row.brier_mean <= 0.12


# --- criterion 8: augmentation non-degradation -----------------------------

def test_criterion_08_augmentation_direction(longitudinal_runs):
    full = longitudinal_runs["full"]
    augmented = longitudinal_runs["augmented"]
    deltas = [aggregate_row(augmented, q).c_td_mean
              - aggregate_row(full, q).c_td_mean
              for q in (0.25, 0.5, 0.75)]

    passed = all(d >= -0.01 for d in deltas)
    report(8, "augmentation direction", passed,
           f"C_td deltas {deltas[0]:+.4f}/{deltas[1]:+.4f}/{deltas[2]:+.4f} "
           f"all >= -0.01")
    assert all(d >= -0.01 for d in deltas)


# --- criterion 9: optimism metric ------------------------------------------

def test_criterion_09_optimism():
    data = longitudinal_dataset(60, seed=2)
    horizon = float(data.durations().max())
    self_value = optimism(data, data, horizon).value

    ones = StepFunction(np.array([]), np.array([]))
    zeros = StepFunction(np.array([0.0]), np.array([0.0]))
    worst = 0.0
    for T in (1.0, 4.0, 12.5):
        got = optimism_from_curves(ones, zeros, horizon=T, upper=T)
        worst = max(worst, abs(got - T / 2.0))

    passed = self_value == 0.0 and worst < 1e-12
    report(9, "optimism metric", passed,
           f"self-comparison {self_value:g}, max |T/2 delta| {worst:.2e}")
    assert self_value == 0.0
    assert worst < 1e-12


# --- criterion 10: determinism and persistence -----------------------------

def test_criterion_10_determinism_persistence(small_trained, tmp_path):
    trained, train_set, val_set = small_trained
    again = train(SMALL_CONFIG, train_set, val_set)

    path_a = str(tmp_path / "a.bin")
    path_b = str(tmp_path / "b.bin")
    save_checkpoint(trained, path_a)
    save_checkpoint(again, path_b)
    with open(path_a, "rb") as fh:
        blob_a = fh.read()
    with open(path_b, "rb") as fh:
        blob_b = fh.read()
    same_bytes = blob_a == blob_b

    visits, mask = val_set.visit_tensor(), val_set.mask_tensor()
    before = predict_sequences(visits, mask, trained.model)
    loaded = load_checkpoint(path_a)
    after = predict_sequences(visits, mask, loaded.model)
    same_preds = (np.array_equal(before.hazards, after.hazards)
                  and np.array_equal(before.survival, after.survival))

    data_path = str(tmp_path / "data.bin")
    ds.save_dataset(train_set, data_path)
    round_trip = ds.load_dataset(data_path)
    same_data = (train_set.visit_tensor().tobytes()
                 == round_trip.visit_tensor().tobytes()
                 and train_set.mask_tensor().tobytes()
                 == round_trip.mask_tensor().tobytes()
                 and np.array_equal(train_set.durations(),
                                    round_trip.durations())
                 and np.array_equal(train_set.events(),
                                    round_trip.events()))

    passed = same_bytes and same_preds and same_data
    report(10, "determinism and persistence", passed,
           f"checkpoint bytes identical: {same_bytes}, predictions "
           f"identical: {same_preds}, dataset round-trip identical: "
           f"{same_data}")
    assert same_bytes
    assert same_preds
    assert same_data
