from typing import Optional


class MetaPromptingException(Exception):
    pass


class ContractError(MetaPromptingException):
    """Raised when a documented precondition is violated"""


class DimensionError(ContractError):
    """Raised when tensor shapes or vector lengths do not conform"""


class NumericDomainError(MetaPromptingException):
    """Raised when log/exp are evaluated outside their domain"""


class NonFiniteError(MetaPromptingException):
    """Raised when a NaN/Inf shows up in a loss, gradient or op result"""

    def __init__(self, error_msg: str, step_index: Optional[int] = None):
        if step_index is not None:
            error_msg = f"{error_msg} (inner step {step_index})"
        super().__init__(error_msg)

        self.error_msg = error_msg
        self.step_index = step_index


class CapacityError(ContractError):
    """Raised when a corpus or split cannot supply what was asked of it"""

    def __init__(self, error_msg: str, label: Optional[str] = None):
        super().__init__(error_msg)

        self.error_msg = error_msg
        self.label = label


class CorpusParseError(MetaPromptingException):
    def __init__(self, error_msg: str, line_number: Optional[int] = None):
        if line_number is not None:
            error_msg = f"line {line_number}: {error_msg}"
        super().__init__(error_msg)

        self.error_msg = error_msg
        self.line_number = line_number


class TemplateError(ContractError):
    pass


class ConfigError(MetaPromptingException):
    def __init__(self, error_msg: str, key_path: Optional[str] = None):
        if key_path:
            error_msg = f"{key_path}: {error_msg}"
        super().__init__(error_msg)

        self.error_msg = error_msg
        self.key_path = key_path


class CheckpointError(MetaPromptingException):
    pass


class CheckpointVersionError(CheckpointError):
    def __init__(self, found: int, expected: int):
        super().__init__(
            f"Checkpoint format version {found} is not supported (expected {expected})"
        )
        self.found = found
        self.expected = expected


class CheckpointIntegrityError(CheckpointError):
    pass


class CheckpointSpecMismatchError(CheckpointError):
    def __init__(self, found: str, expected: str):
        super().__init__(
            f"Checkpoint was written for model spec {found[:12]}, not {expected[:12]}"
        )
        self.found = found
        self.expected = expected


class PairingError(ContractError):
    pass


class RunDirectoryLockedError(MetaPromptingException):
    def __init__(self, lock_path: str):
        super().__init__(f"Output directory is in use by another run ({lock_path})")
        self.lock_path = lock_path


class EpisodeError(MetaPromptingException):
    """Wraps an error raised while processing one episode of a batch"""

    def __init__(self, error_msg: str, episode_index: int):
        super().__init__(f"episode {episode_index}: {error_msg}")

        self.error_msg = error_msg
        self.episode_index = episode_index
