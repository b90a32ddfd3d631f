"""Ingest long-format visit records and build fixed-length masked sequences.

A long CSV holds one visit per line (patient_id, visit_time, duration,
event, feature columns). The pipeline is: parse -> fit a feature schema on
the training split -> encode every visit as [normalized numericals |
one-hot blocks] -> per patient, sort visits by time, keep the earliest
``v_max``, zero-pad the rest and record a mask. Covariates-only data is the
one-visit special case (v_max = 1).

Normalization statistics are frozen at fit time: numericals divide by the
training maximum (test values may exceed 1), unseen categories encode as
all-zero, and missing numericals (literal NaN cells) impute the training
mean. Empty cells are rejected outright.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .config import dump_kv, parse_kv
from .container import DATASET_MAGIC, read_container, write_container
from .errors import (
    ConfigError,
    DegenerateFeature,
    DuplicateVisitTime,
    EmptyPatient,
    InconsistentLabel,
    MissingColumn,
    ParseFailure,
    SchemaMismatch,
)

REQUIRED_COLUMNS = ("patient_id", "visit_time", "duration", "event")
NUMERICAL = "numerical"
CATEGORICAL = "categorical"


@dataclass
class RawRow:
    patient_id: str
    visit_time: float
    duration: float
    event: int
    features: dict


@dataclass
class RawTable:
    rows: list[RawRow] = field(default_factory=list)

    def patient_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for row in self.rows:
            seen.setdefault(row.patient_id, None)
        return list(seen)


@dataclass(frozen=True)
class NumericalFeature:
    name: str
    max_value: float
    mean: float


@dataclass(frozen=True)
class CategoricalFeature:
    name: str
    vocabulary: tuple[str, ...]


@dataclass(frozen=True)
class FeatureSchema:
    numerical: tuple[NumericalFeature, ...]
    categorical: tuple[CategoricalFeature, ...]

    @property
    def n_num(self) -> int:
        return len(self.numerical)

    @property
    def n_cat(self) -> int:
        return len(self.categorical)

    @property
    def encoded_width(self) -> int:
        return self.n_num + sum(len(c.vocabulary) for c in self.categorical)

    def encode_row(self, features: dict) -> np.ndarray:
        """Encode one visit's feature map as [numericals | one-hot blocks]."""
        out = np.zeros(self.encoded_width)
        for i, feat in enumerate(self.numerical):
            x = features[feat.name]
            if math.isnan(x):
                x = feat.mean
            out[i] = normalize_numerical(x, feat.max_value)
        offset = self.n_num
        for feat in self.categorical:
            size = len(feat.vocabulary)
            out[offset:offset + size] = encode_categorical(
                features[feat.name], feat.vocabulary
            )
            offset += size
        return out


@dataclass
class PatientSequence:
    """One patient's padded visit matrix: real rows first, zero rows after."""

    patient_id: str
    visits: np.ndarray   # (v_max, encoded_width)
    mask: np.ndarray     # (v_max,), 1.0 for real visits
    n_real: int
    duration: float
    event: int


@dataclass
class SurvivalDataset:
    schema: FeatureSchema
    sequences: list[PatientSequence]
    v_max: int
    n_events: int

    def __len__(self) -> int:
        return len(self.sequences)

    def patient_ids(self) -> list[str]:
        return [s.patient_id for s in self.sequences]

    def durations(self) -> np.ndarray:
        return np.array([s.duration for s in self.sequences])

    def events(self) -> np.ndarray:
        return np.array([s.event for s in self.sequences], dtype=np.int64)

    def visit_tensor(self) -> np.ndarray:
        if not self.sequences:
            return np.zeros((0, self.v_max, self.schema.encoded_width))
        return np.stack([s.visits for s in self.sequences])

    def mask_tensor(self) -> np.ndarray:
        if not self.sequences:
            return np.zeros((0, self.v_max))
        return np.stack([s.mask for s in self.sequences])

    def subset(self, indices) -> "SurvivalDataset":
        return SurvivalDataset(
            schema=self.schema,
            sequences=[self.sequences[i] for i in indices],
            v_max=self.v_max,
            n_events=self.n_events,
        )


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def load_feature_spec(path) -> dict[str, str]:
    """JSON sidecar mapping column name -> "numerical" | "categorical"."""
    with open(path, "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    if not isinstance(spec, dict) or not spec:
        raise ConfigError("feature spec must be a non-empty JSON object")
    for name, kind in spec.items():
        if kind not in (NUMERICAL, CATEGORICAL):
            raise ConfigError(
                f"feature {name!r}: kind must be {NUMERICAL!r} or {CATEGORICAL!r},"
                f" got {kind!r}"
            )
    return spec


def parse_long_csv(path, feature_spec: dict[str, str]) -> RawTable:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in (*REQUIRED_COLUMNS, *feature_spec):
            if col not in header:
                raise MissingColumn(f"column {col!r} missing from {path}")
        rows = []
        for record in reader:
            rows.append(_parse_row(record, reader.line_num, feature_spec))

    _check_label_consistency(rows)
    _check_distinct_visit_times(rows)
    return RawTable(rows)


def _parse_row(record: dict, line: int, feature_spec: dict[str, str]) -> RawRow:
    pid = (record.get("patient_id") or "").strip()
    if not pid:
        raise ParseFailure(line, "patient_id", "empty")
    visit_time = _parse_real(record, line, "visit_time")
    if visit_time < 0:
        raise ParseFailure(line, "visit_time", "must be >= 0")
    duration = _parse_real(record, line, "duration")
    if duration <= 0:
        raise ParseFailure(line, "duration", "must be > 0")
    raw_event = (record.get("event") or "").strip()
    try:
        event = int(raw_event)
    except ValueError:
        raise ParseFailure(line, "event", f"not an integer: {raw_event!r}") from None
    if event < 0:
        raise ParseFailure(line, "event", "must be >= 0")

    features: dict = {}
    for name, kind in feature_spec.items():
        cell = record.get(name)
        if cell is None or cell.strip() == "":
            raise ParseFailure(line, name, "empty cell")
        if kind == NUMERICAL:
            try:
                value = float(cell)
            except ValueError:
                raise ParseFailure(line, name, f"not a number: {cell!r}") from None
            if math.isinf(value):
                raise ParseFailure(line, name, "infinite value")
            features[name] = value
        else:
            features[name] = cell.strip()
    return RawRow(pid, visit_time, duration, event, features)


def _parse_real(record: dict, line: int, column: str) -> float:
    cell = (record.get(column) or "").strip()
    try:
        value = float(cell)
    except ValueError:
        raise ParseFailure(line, column, f"not a number: {cell!r}") from None
    if math.isnan(value) or math.isinf(value):
        raise ParseFailure(line, column, "must be finite")
    return value


def _check_label_consistency(rows: list[RawRow]) -> None:
    labels: dict[str, tuple[float, int]] = {}
    for row in rows:
        label = (row.duration, row.event)
        prior = labels.setdefault(row.patient_id, label)
        if prior != label:
            raise InconsistentLabel(row.patient_id)


def _check_distinct_visit_times(rows: list[RawRow]) -> None:
    seen: dict[str, set] = {}
    for row in rows:
        times = seen.setdefault(row.patient_id, set())
        if row.visit_time in times:
            raise DuplicateVisitTime(
                f"patient {row.patient_id!r} has two visits at t={row.visit_time}"
            )
        times.add(row.visit_time)


# ---------------------------------------------------------------------------
# Schema fitting and encoding
# ---------------------------------------------------------------------------

def fit_schema(table: RawTable, feature_spec: dict[str, str]) -> FeatureSchema:
    """Fit normalization constants and vocabularies. Call on the training
    split only; the statistics are frozen afterwards."""
    if not table.rows:
        raise EmptyPatient("cannot fit a schema on an empty table")
    numerical = []
    categorical = []
    for name, kind in feature_spec.items():
        values = [row.features[name] for row in table.rows]
        if kind == NUMERICAL:
            observed = [v for v in values if not math.isnan(v)]
            if not observed:
                raise DegenerateFeature(f"feature {name!r} has no observed values")
            max_value = max(observed)
            if max_value <= 0:
                raise DegenerateFeature(
                    f"feature {name!r} has max {max_value} <= 0; x/max is undefined"
                )
            numerical.append(
                NumericalFeature(name, max_value, sum(observed) / len(observed))
            )
        else:
            categorical.append(
                CategoricalFeature(name, tuple(sorted(set(values))))
            )
    return FeatureSchema(tuple(numerical), tuple(categorical))


def normalize_numerical(x: float, max_value: float) -> float:
    return x / max_value


def encode_categorical(value: str, vocabulary) -> np.ndarray:
    """One-hot against the vocabulary; unseen values encode as all-zero."""
    out = np.zeros(len(vocabulary))
    try:
        out[list(vocabulary).index(value)] = 1.0
    except ValueError:
        pass
    return out


# ---------------------------------------------------------------------------
# Sequence assembly and splitting
# ---------------------------------------------------------------------------

def assemble_sequences(table: RawTable, schema: FeatureSchema,
                       v_max: int) -> SurvivalDataset:
    """Per patient: sort visits by time, keep the earliest ``v_max``, pad the
    rest with zero rows (mask 0)."""
    if v_max < 1:
        raise ValueError("v_max must be >= 1")
    groups: dict[str, list[RawRow]] = {}
    for row in table.rows:
        groups.setdefault(row.patient_id, []).append(row)

    sequences = []
    max_event = 0
    for pid, rows in groups.items():
        if not rows:
            raise EmptyPatient(f"patient {pid!r} has no visit rows")
        rows = sorted(rows, key=lambda r: r.visit_time)[:v_max]
        visits = np.zeros((v_max, schema.encoded_width))
        for i, row in enumerate(rows):
            visits[i] = schema.encode_row(row.features)
        mask = np.zeros(v_max)
        mask[:len(rows)] = 1.0
        sequences.append(PatientSequence(
            patient_id=pid,
            visits=visits,
            mask=mask,
            n_real=len(rows),
            duration=rows[0].duration,
            event=rows[0].event,
        ))
        max_event = max(max_event, rows[0].event)

    return SurvivalDataset(
        schema=schema,
        sequences=sequences,
        v_max=v_max,
        n_events=max(1, max_event),
    )


def default_max_visits(table: RawTable) -> int:
    """95th percentile of per-patient visit counts (at least 1)."""
    counts: dict[str, int] = {}
    for row in table.rows:
        counts[row.patient_id] = counts.get(row.patient_id, 0) + 1
    if not counts:
        raise EmptyPatient("empty table")
    return max(1, int(np.ceil(np.quantile(sorted(counts.values()), 0.95))))


def split_dataset(dataset: SurvivalDataset, train_fraction: float,
                  seed: int) -> tuple[SurvivalDataset, SurvivalDataset]:
    """Patient-level split; deterministic for a fixed seed."""
    n = len(dataset)
    if n < 2:
        raise ValueError("need at least 2 patients to split")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return dataset.subset(train_idx), dataset.subset(test_idx)


def conform_max_visits(dataset: SurvivalDataset, v_max: int
                       ) -> SurvivalDataset:
    """Re-pad (or truncate to the earliest v_max visits) so the dataset
    matches a model trained with a different sequence length."""
    if dataset.v_max == v_max:
        return dataset
    width = dataset.schema.encoded_width
    sequences = []
    for seq in dataset.sequences:
        n_real = min(seq.n_real, v_max)
        visits = np.zeros((v_max, width))
        visits[:n_real] = seq.visits[:n_real]
        mask = np.zeros(v_max)
        mask[:n_real] = 1.0
        sequences.append(PatientSequence(
            patient_id=seq.patient_id,
            visits=visits,
            mask=mask,
            n_real=n_real,
            duration=seq.duration,
            event=seq.event,
        ))
    return SurvivalDataset(
        schema=dataset.schema,
        sequences=sequences,
        v_max=v_max,
        n_events=dataset.n_events,
    )


def last_visit_only(dataset: SurvivalDataset) -> SurvivalDataset:
    """Covariates-only ablation: keep each patient's final real visit."""
    sequences = []
    for seq in dataset.sequences:
        visits = seq.visits[seq.n_real - 1:seq.n_real].copy()
        sequences.append(PatientSequence(
            patient_id=seq.patient_id,
            visits=visits,
            mask=np.ones(1),
            n_real=1,
            duration=seq.duration,
            event=seq.event,
        ))
    return SurvivalDataset(
        schema=dataset.schema,
        sequences=sequences,
        v_max=1,
        n_events=dataset.n_events,
    )


# ---------------------------------------------------------------------------
# On-disk container
# ---------------------------------------------------------------------------

DATASET_FORMAT_VERSION = 1


def schema_to_meta(schema: FeatureSchema) -> dict:
    return {
        "numerical": [[f.name, f.max_value, f.mean] for f in schema.numerical],
        "categorical": [[f.name, list(f.vocabulary)] for f in schema.categorical],
    }


def schema_from_meta(meta: dict) -> FeatureSchema:
    numerical = tuple(
        NumericalFeature(name, float(mx), float(mean))
        for name, mx, mean in meta["numerical"]
    )
    categorical = tuple(
        CategoricalFeature(name, tuple(vocab))
        for name, vocab in meta["categorical"]
    )
    return FeatureSchema(numerical, categorical)


def save_dataset(dataset: SurvivalDataset, path) -> None:
    meta = dump_kv({
        "kind": "dataset",
        "v_max": dataset.v_max,
        "n_events": dataset.n_events,
        "patient_ids": dataset.patient_ids(),
        "schema": schema_to_meta(dataset.schema),
    })
    arrays = {
        "visits": dataset.visit_tensor(),
        "mask": dataset.mask_tensor(),
        "durations": dataset.durations(),
        "events": dataset.events().astype(np.float64),
    }
    write_container(path, DATASET_MAGIC, DATASET_FORMAT_VERSION, meta, arrays)


def load_dataset(path) -> SurvivalDataset:
    _, meta_text, arrays = read_container(path, DATASET_MAGIC,
                                          (DATASET_FORMAT_VERSION,))
    meta = parse_kv(meta_text)
    schema = schema_from_meta(meta["schema"])
    ids = meta["patient_ids"]
    visits = arrays["visits"]
    mask = arrays["mask"]
    durations = arrays["durations"]
    events = arrays["events"].astype(np.int64)
    sequences = []
    for i, pid in enumerate(ids):
        sequences.append(PatientSequence(
            patient_id=pid,
            visits=visits[i],
            mask=mask[i],
            n_real=int(mask[i].sum()),
            duration=float(durations[i]),
            event=int(events[i]),
        ))
    return SurvivalDataset(
        schema=schema,
        sequences=sequences,
        v_max=int(meta["v_max"]),
        n_events=int(meta["n_events"]),
    )


def check_schema_compatible(a: FeatureSchema, b: FeatureSchema) -> None:
    if a != b:
        raise SchemaMismatch("feature schemas differ")


def write_feature_spec(schema: FeatureSchema, path) -> None:
    spec = {f.name: NUMERICAL for f in schema.numerical}
    spec.update({f.name: CATEGORICAL for f in schema.categorical})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_long_csv(dataset: SurvivalDataset, path) -> None:
    """Decode encoded sequences back to the long CSV format.

    Numericals are denormalized by the schema maxima; one-hot blocks decode
    to their category string (an all-zero block falls back to the first
    vocabulary entry). Visit times are emitted as 0, 1, 2, ... per patient,
    which preserves visit order through a re-ingest.
    """
    schema = dataset.schema
    header = list(REQUIRED_COLUMNS) + \
        [f.name for f in schema.numerical] + \
        [f.name for f in schema.categorical]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for seq in dataset.sequences:
            for v in range(seq.n_real):
                row = [seq.patient_id, v, repr(float(seq.duration)),
                       int(seq.event)]
                offset = 0
                for feat in schema.numerical:
                    row.append(repr(float(seq.visits[v, offset])
                                    * feat.max_value))
                    offset += 1
                for feat in schema.categorical:
                    width = len(feat.vocabulary)
                    block = seq.visits[v, offset:offset + width]
                    idx = int(np.argmax(block)) if block.max() > 0 else 0
                    row.append(feat.vocabulary[idx])
                    offset += width
                writer.writerow(row)
