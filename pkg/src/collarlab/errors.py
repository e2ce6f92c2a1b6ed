"""Exception types shared across the pipeline."""


class CollarLabError(Exception):
    """Base class for all pipeline errors."""


# --- ingest ---------------------------------------------------------------

class MalformedRecord(CollarLabError):
    def __init__(self, message: str, line: int | None = None, offset: int | None = None):
        loc = f"line {line}" if line is not None else f"offset {offset}"
        super().__init__(f"{message} ({loc})")
        self.line = line
        self.offset = offset


class EmptyLog(CollarLabError):
    pass


class NonMonotonicAfterRepair(CollarLabError):
    pass


class MixedDogIds(CollarLabError):
    pass


# --- dsp ------------------------------------------------------------------

class InsufficientOrientations(CollarLabError):
    pass


class NonConvergence(CollarLabError):
    pass


class TooFewSamples(CollarLabError):
    pass


class GridMismatch(CollarLabError):
    pass


class InvalidCutoff(CollarLabError):
    pass


# --- features -------------------------------------------------------------

class NoCompleteWindow(CollarLabError):
    pass


class PeriodTooShort(CollarLabError):
    pass


class EmptySlice(CollarLabError):
    pass


class MissingLabels(CollarLabError):
    pass


class MissingDemographics(CollarLabError):
    pass


# --- activity -------------------------------------------------------------

class SingleClassTraining(CollarLabError):
    pass


class ShapeMismatch(CollarLabError):
    pass


class ManifestMismatch(CollarLabError):
    pass


class EmptyInput(CollarLabError):
    pass


class NoOverlap(CollarLabError):
    pass


# --- personality ----------------------------------------------------------

class MissingItem(CollarLabError):
    def __init__(self, item_ids):
        super().__init__(f"missing responses for items: {sorted(item_ids)}")
        self.item_ids = sorted(item_ids)


class OutOfRangeResponse(CollarLabError):
    pass


class DegenerateTrait(CollarLabError):
    pass


# --- stats ----------------------------------------------------------------

class DegenerateVariance(CollarLabError):
    pass


class ClassImbalanceDegenerate(CollarLabError):
    pass


# --- mlharness ------------------------------------------------------------

class SingleClass(CollarLabError):
    pass


class SingleClassTest(CollarLabError):
    pass


class InfeasibleSplit(CollarLabError):
    pass


# --- synthgen / cli -------------------------------------------------------

class InvalidConfig(CollarLabError):
    pass


class IoFailure(CollarLabError):
    pass
