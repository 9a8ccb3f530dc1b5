from typing import ClassVar


class TwostreamError(Exception):
    """Base error; `category` is the machine-parsable name the CLI reports."""

    category: ClassVar[str] = 'error'
    exit_code: ClassVar[int] = 4

    def __init__(self, detail: str = '') -> None:
        super().__init__(f'{self.category}: {detail}' if detail else self.category)
        self.detail = detail


class EmptyVectorError(TwostreamError):
    category = 'empty-vector'


class BadLabelError(TwostreamError):
    category = 'bad-label'


class BadClassError(TwostreamError):
    category = 'bad-class'


class ShapeMismatchError(TwostreamError):
    category = 'shape-mismatch'


class NonfiniteFunctionError(TwostreamError):
    category = 'nonfinite-function'


class NoTrainingDataError(TwostreamError):
    category = 'no-training-data'


class NoTestDataError(TwostreamError):
    category = 'no-test-data'


class BadConfigError(TwostreamError):
    category = 'bad-config'


class CorruptFileError(TwostreamError):
    category = 'corrupt-file'


class UnsupportedVersionError(TwostreamError):
    category = 'unsupported-version'


class DuplicateIdError(TwostreamError):
    category = 'duplicate-id'


class MissingFileError(TwostreamError):
    category = 'missing-file'
    exit_code = 3


class ManifestNotFoundError(MissingFileError):
    category = 'manifest-not-found'


class GradientCheckError(TwostreamError):
    category = 'gradient-check'
