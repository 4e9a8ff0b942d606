"""Exception types raised by the simulator."""

from __future__ import annotations


class FLTuneError(Exception):
    """Base class for all simulator errors."""


class ConfigError(FLTuneError, ValueError):
    """Invalid configuration; ``field`` names the offending entry when known."""

    def __init__(self, message: str, field: str | None = None) -> None:
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class TrainingFault(FLTuneError):
    """Local training produced a non-finite loss or gradient."""

    def __init__(self, message: str, round_index: int | None = None, client_id: int | None = None) -> None:
        ctx = []
        if round_index is not None:
            ctx.append(f"round={round_index}")
        if client_id is not None:
            ctx.append(f"client={client_id}")
        super().__init__(f"{message} ({', '.join(ctx)})" if ctx else message)
        self.round_index = round_index
        self.client_id = client_id


class AggregationFault(FLTuneError):
    pass


class AccountingFault(FLTuneError):
    pass


class TunerFault(FLTuneError):
    pass


class ComparisonRefused(FLTuneError):
    """Runs cannot be compared because a target accuracy was not reached."""
