"""In-repo dataset generators for tests, examples, and self-checks.

Three constructions:

* ``toy_risk_dataset``: one visit per patient, one informative covariate,
  hazard monotone in it, light censoring. A sanity benchmark any working
  model should score highly on.
* ``longitudinal_dataset``: multi-visit records where each visit carries a
  noisy readout of the patient's latent risk. Averaging visits denoises
  the signal, so models that use the whole sequence hold a real advantage
  over any single-visit summary.
* ``write_pbc2_like_csv``: a long-format CSV (plus feature-spec sidecar)
  shaped like the PBC2 liver study export: 8 numerical and 7 categorical
  covariates, follow-up times between 41 and 5071 days, roughly 44.9%
  events. For format/pipeline testing only; values are simulated.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .dataset import (
    CategoricalFeature,
    FeatureSchema,
    NumericalFeature,
    PatientSequence,
    SurvivalDataset,
)


def _sequence(pid: str, visits: np.ndarray, n_real: int, v_max: int,
              width: int, duration: float, event: int) -> PatientSequence:
    padded = np.zeros((v_max, width))
    padded[:n_real] = visits[:n_real]
    mask = np.zeros(v_max)
    mask[:n_real] = 1.0
    return PatientSequence(patient_id=pid, visits=padded, mask=mask,
                           n_real=n_real, duration=float(duration),
                           event=int(event))


def toy_risk_dataset(n_patients: int = 500, censoring: float = 0.2,
                     seed: int = 0, noise: float = 0.1) -> SurvivalDataset:
    """Single-visit dataset with event risk monotone in one covariate.

    Event times decrease in x up to a small lognormal wobble, so the true
    risk ranking is recoverable to high concordance; a `censoring`
    fraction of subjects is cut off uniformly before their event time.
    """
    rng = np.random.default_rng(seed)
    schema = FeatureSchema(
        numerical=(NumericalFeature("x", max_value=1.0, mean=0.5),),
        categorical=(),
    )
    sequences = []
    for i in range(n_patients):
        x = rng.uniform(0.0, 1.0)
        t = (1.05 - x) * np.exp(rng.normal(0.0, noise))
        event = 1
        if rng.uniform() < censoring:
            t = t * rng.uniform(0.05, 0.95)
            event = 0
        sequences.append(_sequence(
            f"p{i:04d}", np.array([[x]]), 1, 1, 1, max(t, 1e-6), event))
    return SurvivalDataset(schema=schema, sequences=sequences, v_max=1,
                           n_events=1)


def longitudinal_dataset(n_patients: int = 300, seed: int = 0,
                         noise: float = 0.5,
                         censoring: float = 0.2) -> SurvivalDataset:
    """Multi-visit dataset whose per-visit biomarker is a noisy readout of
    the latent risk driving the hazard; a distractor column carries no
    signal. Visit counts vary between 2 and 8.
    """
    rng = np.random.default_rng(seed)
    v_max = 8
    schema = FeatureSchema(
        numerical=(NumericalFeature("biomarker", max_value=2.0, mean=0.5),
                   NumericalFeature("distractor", max_value=1.0, mean=0.5)),
        categorical=(),
    )
    sequences = []
    for i in range(n_patients):
        risk = rng.uniform(0.0, 1.0)
        n_visits = int(rng.integers(2, v_max + 1))
        biomarker = np.clip(risk + rng.normal(0.0, noise, n_visits),
                            0.0, 2.0) / 2.0
        distractor = rng.uniform(0.0, 1.0, n_visits)
        visits = np.column_stack([biomarker, distractor])
        t = (1.05 - risk) * np.exp(rng.normal(0.0, 0.1))
        event = 1
        if rng.uniform() < censoring:
            t = t * rng.uniform(0.05, 0.95)
            event = 0
        sequences.append(_sequence(
            f"p{i:04d}", visits, n_visits, v_max, 2, max(t, 1e-6), event))
    return SurvivalDataset(schema=schema, sequences=sequences, v_max=v_max,
                           n_events=1)


PBC2_NUMERICALS = ("serBilir", "serChol", "albumin", "alkaline",
                   "SGOT", "platelets", "prothrombin", "age")
PBC2_CATEGORICALS = {
    "drug": ("placebo", "D-penicil"),
    "sex": ("male", "female"),
    "ascites": ("No", "Yes"),
    "hepatomegaly": ("No", "Yes"),
    "spiders": ("No", "Yes"),
    "edema": ("No edema", "edema no diuretics", "edema despite diuretics"),
    "histologic": ("1", "2", "3", "4"),
}


def write_pbc2_like_csv(csv_path, spec_path, n_patients: int = 188,
                        seed: int = 0) -> None:
    """Simulated long CSV in the PBC2 column layout, plus its feature
    spec. Event fraction lands near 44.87%; durations span [41, 5071]."""
    rng = np.random.default_rng(seed)
    n_events = int(round(0.4487 * n_patients))
    event_flags = np.zeros(n_patients, dtype=int)
    event_flags[:n_events] = 1
    rng.shuffle(event_flags)

    header = ["patient_id", "visit_time", "duration", "event",
              *PBC2_NUMERICALS, *PBC2_CATEGORICALS]
    scales = {"serBilir": 3.0, "serChol": 300.0, "albumin": 3.5,
              "alkaline": 1500.0, "SGOT": 120.0, "platelets": 250.0,
              "prothrombin": 10.5, "age": 50.0}
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(n_patients):
            severity = rng.uniform(0.0, 1.0)
            event = int(event_flags[i])
            # sicker and dying patients get shorter follow-up
            lo, hi = 41.0, 5071.0
            frac = rng.beta(2.0, 2.0 + 2.5 * severity + 1.5 * event)
            duration = round(lo + frac * (hi - lo), 1)
            n_visits = int(rng.integers(1, 13))
            times = np.sort(rng.choice(
                np.arange(0, 5000, 30), size=n_visits, replace=False))
            for v in range(n_visits):
                drift = 0.3 * severity * v / max(n_visits - 1, 1)
                row = [f"pbc{i:03d}", float(times[v]), duration, event]
                for name in PBC2_NUMERICALS:
                    base = scales[name]
                    wobble = rng.normal(1.0, 0.15)
                    level = base * (0.7 + 0.6 * severity + drift) * wobble
                    if name == "serChol" and rng.uniform() < 0.25:
                        row.append("nan")  # lab value not collected
                    else:
                        row.append(f"{abs(level):.4g}")
                for name, vocab in PBC2_CATEGORICALS.items():
                    if name in ("drug", "sex", "histologic"):
                        # fixed per patient
                        pick = vocab[int(
                            np.random.default_rng(seed * 100003 + i)
                            .integers(len(vocab)))]
                    else:
                        p_yes = 0.15 + 0.5 * severity
                        pick = vocab[-1] if rng.uniform() < p_yes else vocab[0]
                        if name == "edema" and pick != vocab[0]:
                            pick = vocab[1 + int(rng.uniform() < severity)]
                    row.append(pick)
                writer.writerow(row)

    spec = {name: "numerical" for name in PBC2_NUMERICALS}
    spec.update({name: "categorical" for name in PBC2_CATEGORICALS})
    with open(spec_path, "w", encoding="utf-8") as fh:
        json.dump(spec, fh, indent=2, sort_keys=True)
        fh.write("\n")
