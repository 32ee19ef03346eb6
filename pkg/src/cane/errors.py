"""Exception hierarchy shared by every cane module.

Each class carries the process exit code the command line maps it to.
"""


class CaneError(Exception):
    exit_code = 1


class NotFoundError(CaneError, LookupError):
    """A block, path, stamp, or key is not known."""

    exit_code = 3


class NoHistoryError(NotFoundError):
    """"." was followed on a directory version with no predecessor."""


class CorruptionError(CaneError):
    """Stored bytes do not hash to the id they were stored under."""

    exit_code = 4


class StoreIOError(CaneError, OSError):
    exit_code = 4


class AccessDeniedError(CaneError):
    exit_code = 5


class SpecError(CaneError, ValueError):
    """Malformed scenario, topology, or other structured input."""

    exit_code = 6


class SceneError(SpecError):
    def __init__(self, path, message):
        super().__init__(f"{path or '<scene root>'}: {message}")
        self.path = path


class InvalidOperationError(CaneError):
    exit_code = 7


class BlockSizeError(InvalidOperationError, ValueError):
    pass


class InvalidNameError(InvalidOperationError, ValueError):
    pass


class StampError(InvalidOperationError, ValueError):
    pass


class KindError(InvalidOperationError, TypeError):
    """A path component has the wrong entry kind (e.g. traversing a file)."""


class MissingKeyError(InvalidOperationError):
    """Signing was attempted with a public-only identity."""


class WindowError(InvalidOperationError, ValueError):
    pass


class CycleError(InvalidOperationError):
    pass


class PlatformError(NotFoundError):
    def __init__(self, platform, offender):
        super().__init__(f"platform {platform!r} missing in {offender}")
        self.platform = platform
        self.offender = offender


class FetchError(NotFoundError):
    def __init__(self, block_id, cause=None):
        super().__init__(f"could not fetch block {block_id}")
        self.block_id = block_id
        self.cause = cause


class NoTargetError(NotFoundError):
    """An event point hit no receptor rectangle."""
