"""Per-round and cumulative system overheads.

Four quantities are tracked, all as dimensionless proxies:

* computation time, set by the slowest participant: ``C1 * E * max(n_k)``
* transmission time, one download plus one upload per round: ``C2``
* computation load, summed over participants: ``C3 * E * sum(n_k)``
* transmission load, one transfer per participant: ``C4 * M``
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

from .errors import AccountingFault, ConfigError
from .model import ModelDescriptor


@dataclass(frozen=True)
class CostConstants:
    C1: float
    C2: float
    C3: float
    C4: float

    def __post_init__(self) -> None:
        for name in ("C1", "C2", "C3", "C4"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be > 0", name)

    @classmethod
    def from_descriptor(cls, desc: ModelDescriptor) -> CostConstants:
        return cls(desc.flops_per_input, desc.num_params, desc.flops_per_input, desc.num_params)

    def scaled(self, factor: float) -> CostConstants:
        return CostConstants(self.C1 * factor, self.C2 * factor, self.C3 * factor, self.C4 * factor)


class Overheads(NamedTuple):
    """One (CompT, TransT, CompL, TransL) tuple."""

    t: float
    q: float
    z: float
    v: float

    def __add__(self, other: Overheads) -> Overheads:  # type: ignore[override]
        return Overheads(self.t + other.t, self.q + other.q, self.z + other.z, self.v + other.v)


ZERO = Overheads(0.0, 0.0, 0.0, 0.0)


def round_comp_time(C1: float, E: float, n_selected: Sequence[int]) -> float:
    if len(n_selected) == 0:
        raise AccountingFault("empty participant selection")
    return C1 * E * max(n_selected)


def round_trans_time(C2: float) -> float:
    return C2


def round_comp_load(C3: float, E: float, n_selected: Sequence[int]) -> float:
    if len(n_selected) == 0:
        raise AccountingFault("empty participant selection")
    return C3 * E * sum(n_selected)


def round_trans_load(C4: float, M: int) -> float:
    if M < 1:
        raise AccountingFault(f"M must be >= 1, got {M}")
    return C4 * M


def round_overheads(costs: CostConstants, M: int, E: float, n_selected: Sequence[int]) -> Overheads:
    return Overheads(
        round_comp_time(costs.C1, E, n_selected),
        round_trans_time(costs.C2),
        round_comp_load(costs.C3, E, n_selected),
        round_trans_load(costs.C4, M),
    )


@dataclass(frozen=True)
class OverheadLedger:
    t: float = 0.0
    q: float = 0.0
    z: float = 0.0
    v: float = 0.0
    rounds: int = 0

    @property
    def totals(self) -> Overheads:
        return Overheads(self.t, self.q, self.z, self.v)


def accrue(ledger: OverheadLedger, record) -> OverheadLedger:
    """Add one round's overheads. ``record`` is anything with ``.overheads``."""
    o: Overheads = record.overheads
    if min(o) < 0:
        raise AccountingFault(f"negative per-round overhead {o}")
    return OverheadLedger(ledger.t + o.t, ledger.q + o.q, ledger.z + o.z, ledger.v + o.v, ledger.rounds + 1)


def resum(records: Iterable) -> OverheadLedger:
    ledger = OverheadLedger()
    for rec in records:
        ledger = accrue(ledger, rec)
    return ledger
