"""Exception hierarchy shared by all dvppsim modules."""


class DvppError(Exception):
    """Base class for all toolkit errors."""


# --- transfer-function / state-space layer ---------------------------------

class PoleAtQueryPoint(DvppError):
    """Transfer function evaluated on (or numerically at) a pole."""


class InverseOfZero(DvppError):
    """Attempted to invert a transfer function with zero numerator."""


class ImproperTransferFunction(DvppError):
    """Realization requested for a non-proper transfer function."""


class DegreeCapExceeded(DvppError):
    """Polynomial degree grew past the sanity cap (runaway composition)."""


class UnstableDiscretization(DvppError):
    """Discretized pole left the unit circle for a stable continuous model."""


# --- fleet design -----------------------------------------------------------

class NonPositiveDroop(DvppError):
    """Desired behavior needs strictly positive droop gains."""


class InvalidGain(DvppError):
    """Participation-factor DC gain outside its admissible range."""


class InvalidBandSplit(DvppError):
    """Band-pass factor with corner frequencies in the wrong order."""


class OverSubscribed(DvppError):
    """Low-pass DC gains sum past one; the DC-gain condition cannot hold."""


class MissingFactor(DvppError):
    """A device lacks a participation factor for the requested channel."""


class ImproperAfterAugmentation(DvppError):
    """Reference model stayed improper after the roll-off augmentation."""


class UnrealizedDevice(DvppError):
    """A device has no realized reference model for the requested check."""


# --- network ----------------------------------------------------------------

class DisconnectedGraph(DvppError):
    """Operation requires a connected interconnection graph."""


class SingularInteriorBlock(DvppError):
    """Kron reduction hit a non-invertible interior block."""


class ImproperDevice(DvppError):
    """Closed-loop assembly needs a proper (realizable) device model."""


class DimensionMismatch(DvppError):
    """Inconsistent node/device/channel counts."""


class DegenerateSum(DvppError):
    """Aggregate response collapsed to a zero numerator."""


class AlgebraicLoopUnstable(DvppError):
    """Static voltage feedback loop is ill-posed at infinite frequency."""


class ZeroWeightSum(DvppError):
    """Weighted average requested with all-zero weights."""


# --- adaptation -------------------------------------------------------------

class CapacityExceedsRating(DvppError):
    """Active-power capacity exceeds the apparent-power rating."""


class AllCapacitiesZero(DvppError):
    """No low-pass device has positive capacity on the channel."""


class UnknownDevice(DvppError):
    """Event targets a device that is not in the fleet."""


# --- spatially distributed plants --------------------------------------------

class ZeroImpedance(DvppError):
    """Rotation parameters require a nonzero impedance magnitude."""


class HeterogeneousRatioWithStrictMode(DvppError):
    """Heterogeneous R/X ratios are only allowed in Monte Carlo mode."""


# --- scenarios ----------------------------------------------------------------

class ParseError(DvppError):
    """Scenario text violates the grammar."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SemanticError(DvppError):
    """Scenario is grammatical but semantically inconsistent."""


class MissingChannel(DvppError):
    """Metric computation needs a channel the series does not carry."""
