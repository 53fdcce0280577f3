"""Exception hierarchy shared by all layers of the simulator."""


class HcmError(Exception):
    """Base class; ``code`` is the machine-readable tag reported by the CLI."""

    code = "error"

    def __init__(self, message="", **details):
        super().__init__(message or self.code)
        self.details = details


# assembly geometry
class TargetError(HcmError):
    code = "target_invalid"


class Disconnected(TargetError):
    code = "disconnected"


class DegreeExceeded(TargetError):
    code = "degree_exceeded"


class EmbeddingMismatch(TargetError):
    code = "embedding_mismatch"


class DuplicateCell(TargetError):
    code = "duplicate_cell"


class InvalidShape(HcmError):
    code = "invalid_shape"


class CellNotAdjacent(HcmError):
    code = "cell_not_adjacent"


# dynamics
class LimitExceeded(HcmError):
    code = "limit_exceeded"


class UnknownBond(HcmError):
    code = "unknown_bond"


class WouldDisconnect(HcmError):
    code = "would_disconnect"


# docking
class AlreadyReleasing(HcmError):
    code = "already_releasing"


class FaceBonded(HcmError):
    code = "face_bonded"


# protocol
class StaleFrame(HcmError):
    code = "stale_frame"


class InconsistentShapes(HcmError):
    code = "inconsistent_shapes"


# platform
class TrajectoryError(HcmError):
    code = "trajectory_invalid"


class LimitViolation(TrajectoryError):
    code = "limit_violation"


class SlewViolation(TrajectoryError):
    code = "slew_violation"


class NonMonotonicTime(TrajectoryError):
    code = "non_monotonic_time"


class CalibrationMissing(HcmError):
    code = "calibration_missing"


class NoSolution(HcmError):
    code = "no_solution"


# harness
class ScenarioInvalid(HcmError):
    code = "scenario_invalid"


class DivergenceAt(HcmError):
    code = "divergence"

    def __init__(self, tick, expected=None, actual=None):
        super().__init__(f"trace diverges at tick {tick}", tick=tick)
        self.tick = tick
        self.expected = expected
        self.actual = actual
