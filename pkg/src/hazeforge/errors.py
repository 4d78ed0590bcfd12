"""Exception hierarchy shared across the toolkit.

Every error carries a short ``category`` used by the CLI to pick an exit code
and print a single machine-parsable line.
"""


class HazeForgeError(Exception):
    category = "error"
    exit_code = 1


class ShapeError(HazeForgeError, ValueError):
    """Array dimensions violate an operation's contract."""

    category = "shape"
    exit_code = 4


class ConfigError(HazeForgeError, ValueError):
    category = "config"
    exit_code = 5


class CheckpointError(HazeForgeError):
    """Corrupt, truncated or otherwise unreadable checkpoint file."""

    category = "checkpoint"
    exit_code = 6


class CheckpointVersionError(CheckpointError):
    category = "checkpoint-version"
    exit_code = 7


class PairingError(HazeForgeError):
    """Hazy/clear files that cannot be matched one-to-one."""

    category = "pairing"
    exit_code = 8


class TrainingDiverged(HazeForgeError, FloatingPointError):
    category = "diverged"
    exit_code = 9

    def __init__(self, message, step=None, batch_ids=None):
        super().__init__(message)
        self.step = step
        self.batch_ids = batch_ids
