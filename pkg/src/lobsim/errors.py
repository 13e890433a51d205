"""Exception types raised across the package."""


class LobsimError(Exception):
    pass


class InfeasibleMoments(LobsimError):
    """No pmf on {-1, 0, 1} realises the requested drift/diffusion."""


class CrossedBook(LobsimError):
    """Bid rose above ask; the spread guard should make this unreachable."""


class SeedMismatch(LobsimError):
    """A replayed event stream disagrees with the recorded path."""


class NotEnoughActiveEvents(LobsimError):
    pass


class GridBreach(LobsimError):
    """A price came too close to the edge of the limit-solver grid."""


class SnapshotMissing(LobsimError):
    pass


class EmptySample(LobsimError):
    pass


class ParseError(LobsimError):
    pass


class ValidationError(LobsimError):
    """Invalid configuration; ``errors`` holds ``(field_path, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"{path}: {msg}" for path, msg in self.errors]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))
