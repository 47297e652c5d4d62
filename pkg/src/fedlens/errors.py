"""Exception hierarchy shared across fedlens."""


class FedLensError(Exception):
    """Base class for all fedlens errors."""


# core / data
class SchemaError(FedLensError):
    pass


class SchemaMismatch(SchemaError):
    pass


class DuplicateFeature(SchemaError):
    pass


class MissingTarget(SchemaError):
    pass


class MissingColumn(SchemaError):
    pass


class UnparsableRow(FedLensError):
    def __init__(self, row_index: int, message: str):
        super().__init__(f"row {row_index}: {message}")
        self.row_index = row_index


class EmptyFile(FedLensError):
    pass


class InsufficientRows(FedLensError):
    pass


class InvalidSpec(FedLensError):
    pass


# stats
class NonFiniteInput(FedLensError):
    pass


class InsufficientSamples(FedLensError):
    pass


class DegenerateDistribution(FedLensError):
    pass


class InvalidRange(FedLensError):
    pass


# queries
class EmptyCohort(FedLensError):
    pass


class UnknownClient(FedLensError):
    pass


class IncompatibleAggregation(FedLensError):
    pass


class IncompatibleKernel(FedLensError):
    pass


class QueryTimeout(FedLensError):
    """Raised only where partial results are not acceptable (secure, PCA)."""


class ShapeMismatch(FedLensError):
    pass


class ZeroTotalWeight(FedLensError):
    pass


class NonCategoricalAttribute(FedLensError):
    pass


class CohortTooSmall(FedLensError):
    pass


class DropoutUnsupported(FedLensError):
    pass


class SecureRangeError(FedLensError):
    """A value is too large for the fixed-point ring used by masking."""


class RankDeficientWarning(UserWarning):
    """PCA asked for more components than the covariance rank supports."""


class ClientError(FedLensError):
    """A client answered a request with an ERROR envelope."""


# selection
class MissingKernelOutputs(FedLensError):
    pass


# fl
class InvalidLayout(FedLensError):
    pass


class LayoutMismatch(FedLensError):
    pass


class EmptyUpdateSet(FedLensError):
    pass


class EmptyDataset(FedLensError):
    pass


class EmptyEvalSet(FedLensError):
    pass


# pipeline
class DegenerateFeature(FedLensError):
    pass


class EmptySelection(FedLensError):
    pass


# transport
class TransportError(FedLensError):
    pass


class OversizePayload(TransportError):
    pass


class TruncatedFrame(TransportError):
    pass


class MalformedPayload(TransportError):
    pass


class UnknownKind(TransportError):
    pass


class UnsupportedVersion(TransportError):
    pass
