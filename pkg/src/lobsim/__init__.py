"""Discrete limit order book model, its SDE-SPDE scaling limit, and convergence diagnostics."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CrossedBook,
    EmptySample,
    GridBreach,
    InfeasibleMoments,
    LobsimError,
    NotEnoughActiveEvents,
    ParseError,
    SeedMismatch,
    SnapshotMissing,
    ValidationError,
)
from .model import (  # noqa: E402
    ModelSpec,
    ScalingParams,
    default_model,
    derive_scaling,
    imbalance_model,
    joint_move_pmf,
    price_move_pmf,
    snap_to_grid,
)
from .engine import build_event_stream, simulate_path  # noqa: E402
from .limit import LimitGrid, solve_limit  # noqa: E402

__all__ = [
    "CrossedBook", "EmptySample", "GridBreach", "InfeasibleMoments", "LobsimError", "NotEnoughActiveEvents",
    "ParseError", "SeedMismatch", "SnapshotMissing", "ValidationError",
    "ModelSpec", "ScalingParams", "default_model", "derive_scaling", "imbalance_model", "joint_move_pmf",
    "price_move_pmf", "snap_to_grid", "build_event_stream", "simulate_path", "LimitGrid", "solve_limit",
]
