"""Exception hierarchy shared by the pipeline modules."""


class SoloError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(SoloError, ValueError):
    pass


class AlignmentError(SoloError, ValueError):
    """Image dimensions are not multiples of the patch size."""


class DimensionError(SoloError, ValueError):
    pass


class VocabularyError(SoloError, ValueError):
    pass


class UnpackableExampleError(SoloError, ValueError):
    """An example cannot be placed into any sequence of the requested length."""


class FormatError(SoloError):
    """Base class for binary container errors."""


class MagicMismatchError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncationError(FormatError):
    pass


class CorruptRecordError(FormatError):
    """A record body does not parse (unknown tag, bad enum value)."""

    def __init__(self, record_index, message):
        self.record_index = record_index
        super().__init__(f"record {record_index}: {message}")


class ChecksumError(FormatError):
    def __init__(self, record_index, expected, actual):
        self.record_index = record_index
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"CRC32 mismatch in record {record_index}: "
            f"stored {expected:#010x}, computed {actual:#010x}"
        )


class ConfigurationError(SoloError, ValueError):
    pass


class IngestionError(SoloError):
    def __init__(self, dataset, message):
        self.dataset = dataset
        super().__init__(f"dataset {dataset!r}: {message}")


class TrainingDivergedError(SoloError, FloatingPointError):
    def __init__(self, step, batch, loss):
        self.step = step
        self.batch = batch
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at step {step} (sequence indices {list(batch)})"
        )
