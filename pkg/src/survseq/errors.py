"""Exception types shared across the package."""


class SurvseqError(Exception):
    """Base class for all survseq errors."""


# --- ingestion / schema ---

class MissingColumn(SurvseqError):
    pass


class ParseFailure(SurvseqError):
    def __init__(self, row: int, column: str, detail: str = ""):
        self.row = row
        self.column = column
        msg = f"row {row}, column {column!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class InconsistentLabel(SurvseqError):
    def __init__(self, patient_id: str):
        self.patient_id = patient_id
        super().__init__(
            f"patient {patient_id!r} carries conflicting (duration, event) labels"
        )


class DuplicateVisitTime(SurvseqError):
    pass


class DegenerateFeature(SurvseqError):
    pass


class EmptyPatient(SurvseqError):
    pass


class SchemaMismatch(SurvseqError):
    pass


# --- time grid / weighting ---

class InsufficientEvents(SurvseqError):
    pass


class NoEvents(SurvseqError):
    pass


# --- numerics ---

class ShapeMismatch(SurvseqError):
    pass


class NotScalarLoss(SurvseqError):
    pass


class AllMasked(SurvseqError):
    pass


class OddModelDim(SurvseqError):
    pass


# --- metrics ---

class NoComparablePairs(SurvseqError):
    pass


class NoScoreableSubjects(SurvseqError):
    pass


# --- training / persistence ---

class TooFewPatients(SurvseqError):
    pass


class NonFiniteLoss(SurvseqError):
    def __init__(self, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")


class ConfigError(SurvseqError):
    pass


class VersionMismatch(SurvseqError):
    pass


class CorruptContainer(SurvseqError):
    pass
