"""Online tuning of participants-per-round (M) and passes-per-round (E).

The controller waits until accuracy has improved by more than ``epsilon``
since its last decision, normalizes the overhead spent in that interval by
the accuracy gained, and moves M and E by one step each in the direction
that the preference-weighted overhead estimate favours.

Per-overhead preferred directions (+1 means "larger is better"):

    ========  ===  ===
    overhead   M    E
    ========  ===  ===
    CompT     +1   -1
    TransT    +1   +1
    CompL     -1   -1
    TransL    -1   +1
    ========  ===  ===
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

from .cost import ZERO, Overheads
from .errors import ComparisonRefused, ConfigError, TunerFault
from .flcore import HyperParams

M_SIGNS = (+1, +1, -1, -1)
E_SIGNS = (-1, +1, -1, +1)

# Indices into (t, q, z, v) of the overheads that favour growing M / E.
_M_UP_FAVOURED, _M_DOWN_FAVOURED = (0, 1), (2, 3)
_E_UP_FAVOURED, _E_DOWN_FAVOURED = (1, 3), (0, 2)

SLOPE_MIN, SLOPE_MAX = 1e-3, 1e3
# Repeated penalties grow slopes geometrically; cap them well below overflow.
SLOPE_CEILING = 1e12


@dataclass(frozen=True)
class Preference:
    alpha: float
    beta: float
    gamma: float
    delta: float

    def __post_init__(self) -> None:
        # Store floats so Preference(0, 0, 0, 1) serializes like its parsed twin.
        for name in ("alpha", "beta", "gamma", "delta"):
            object.__setattr__(self, name, float(getattr(self, name)))
        w = self.weights
        if any(not 0 <= x <= 1 for x in w):
            raise ConfigError(f"weights must lie in [0, 1], got {w}", "preference")
        if abs(sum(w) - 1.0) > 1e-9:
            raise ConfigError(f"weights must sum to 1, got {sum(w)!r}", "preference")

    @property
    def weights(self) -> tuple[float, float, float, float]:
        return (self.alpha, self.beta, self.gamma, self.delta)

    @classmethod
    def parse(cls, text: str | Sequence[float]) -> Preference:
        parts = text.split(",") if isinstance(text, str) else list(text)
        if len(parts) != 4:
            raise ConfigError("expected four comma-separated weights", "preference")
        vals = [float(p) for p in parts]
        total = sum(vals)
        # Allow the customary 0.33 shorthand for thirds.
        if total > 0 and abs(total - 1.0) <= 0.02:
            vals = [v / total for v in vals]
        return cls(*vals)

    def label(self) -> str:
        return "-".join(f"{x:g}" for x in self.weights)


def preference_grid() -> list[Preference]:
    """The 15 equal-weight combinations over non-empty subsets of the four overheads."""
    prefs = []
    for size in (1, 2, 3, 4):
        for subset in combinations(range(4), size):
            w = [1.0 / size if i in subset else 0.0 for i in range(4)]
            prefs.append(Preference(*w))
    return prefs


def compare(s1: Sequence[float], s2: Sequence[float], pref: Preference) -> float:
    """Weighted relative change from ``s1`` to ``s2``; negative means ``s2`` is better."""
    total = 0.0
    for w, a, b in zip(pref.weights, s1, s2):
        if a == 0:
            raise TunerFault("comparison against a zero overhead")
        total += w * (b - a) / a
    return total


def _directional(
    signs: Sequence[int], pref: Preference, slopes: Sequence[float], cur: Sequence[float], prv: Sequence[float]
) -> float:
    total = 0.0
    for sign, w, k, c, p in zip(signs, pref.weights, slopes, cur, prv):
        if c == 0:
            raise TunerFault("zero current overhead")
        total += sign * w * k * abs(c - p) / c
    return total


def delta_m(pref: Preference, eta: Sequence[float], cur: Sequence[float], prv: Sequence[float]) -> float:
    return _directional(M_SIGNS, pref, eta, cur, prv)


def delta_e(pref: Preference, zeta: Sequence[float], cur: Sequence[float], prv: Sequence[float]) -> float:
    return _directional(E_SIGNS, pref, zeta, cur, prv)


@dataclass(frozen=True)
class Snapshot:
    accuracy: float
    overheads: Overheads
    measured: bool = True


@dataclass(frozen=True)
class Decision:
    previous: HyperParams
    current: HyperParams
    next: HyperParams
    gain: float
    normalized: Overheads
    comparison: float | None
    delta_m: float
    delta_e: float
    penalized: bool
    eta: tuple[float, ...]
    zeta: tuple[float, ...]


@dataclass
class TunerState:
    preference: Preference
    current: HyperParams
    previous: HyperParams
    prv: Snapshot
    M_max: int
    E_max: int = 100
    epsilon: float = 0.01
    penalty: float = 10.0
    prvprv: Snapshot | None = None
    eta: list[float] = field(default_factory=lambda: [1.0] * 4)
    zeta: list[float] = field(default_factory=lambda: [1.0] * 4)
    interval: Overheads = ZERO

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ConfigError("must be > 0", "epsilon")
        if not self.penalty >= 1:
            raise ConfigError("must be >= 1", "penalty")
        if self.M_max < 1 or self.E_max < 1:
            raise ConfigError("bounds must be >= 1", "M_max/E_max")

    @classmethod
    def start(
        cls,
        preference: Preference,
        hyper: HyperParams,
        initial_accuracy: float,
        M_max: int,
        E_max: int = 100,
        epsilon: float = 0.01,
        penalty: float = 10.0,
    ) -> TunerState:
        """Fresh state; the initial snapshot has zero overheads and the untrained accuracy."""
        if hyper.E != int(hyper.E):
            raise ConfigError("tuning requires an integer initial E", "E")
        return cls(
            preference=preference,
            current=hyper,
            previous=hyper,
            prv=Snapshot(initial_accuracy, ZERO, measured=False),
            M_max=M_max,
            E_max=E_max,
            epsilon=epsilon,
            penalty=penalty,
        )


def _ratio(cur: float, prv: float, prvprv: float) -> float | None:
    num, den = abs(cur - prv), abs(prv - prvprv)
    if den == 0:
        return None if num == 0 else SLOPE_MAX
    return min(max(num / den, SLOPE_MIN), SLOPE_MAX)


def _refresh(slopes: list[float], idx: Sequence[int], cur, prv, prvprv) -> None:
    for i in idx:
        r = _ratio(cur[i], prv[i], prvprv[i])
        if r is not None:
            slopes[i] = r


def _penalize(slopes: list[float], idx: Sequence[int], factor: float) -> None:
    for i in idx:
        slopes[i] = min(slopes[i] * factor, SLOPE_CEILING)


def tuner_step(state: TunerState, accuracy: float, round_overheads: Overheads) -> Decision | None:
    """Feed one finished round; returns a decision when the accuracy gate opens."""
    state.interval = state.interval + round_overheads
    gain = accuracy - state.prv.accuracy
    if not gain > state.epsilon:
        return None

    cur = Overheads(*(x / gain for x in state.interval))
    if not all(math.isfinite(x) and x >= 0 for x in cur):
        raise TunerFault(f"invalid normalized overheads {cur}")
    prv = state.prv.overheads

    comparison = compare(prv, cur, state.preference) if state.prv.measured else None
    M_up = state.current.M > state.previous.M
    E_up = state.current.E > state.previous.E

    if state.prv.measured and state.prvprv is not None and state.prvprv.measured:
        pp = state.prvprv.overheads
        _refresh(state.eta, _M_UP_FAVOURED if M_up else _M_DOWN_FAVOURED, cur, prv, pp)
        _refresh(state.zeta, _E_UP_FAVOURED if E_up else _E_DOWN_FAVOURED, cur, prv, pp)

    penalized = comparison is not None and comparison > 0
    if penalized:
        _penalize(state.eta, _M_DOWN_FAVOURED if M_up else _M_UP_FAVOURED, state.penalty)
        _penalize(state.zeta, _E_DOWN_FAVOURED if E_up else _E_UP_FAVOURED, state.penalty)

    dm = delta_m(state.preference, state.eta, cur, prv)
    de = delta_e(state.preference, state.zeta, cur, prv)
    M, E = state.current.M, int(state.current.E)
    nxt = HyperParams(
        M=min(max(M + 1 if dm > 0 else M - 1, 1), state.M_max),
        E=min(max(E + 1 if de > 0 else E - 1, 1), state.E_max),
    )

    decision = Decision(
        previous=state.previous,
        current=state.current,
        next=nxt,
        gain=gain,
        normalized=cur,
        comparison=comparison,
        delta_m=dm,
        delta_e=de,
        penalized=penalized,
        eta=tuple(state.eta),
        zeta=tuple(state.zeta),
    )
    state.prvprv = state.prv
    state.prv = Snapshot(accuracy, cur)
    state.previous = state.current
    state.current = nxt
    state.interval = ZERO
    return decision


def overall_improvement(
    baseline: Sequence[float],
    tuned: Sequence[float],
    pref: Preference,
    *,
    baseline_reached: bool = True,
    tuned_reached: bool = True,
) -> float:
    """Percentage overhead reduction of ``tuned`` relative to ``baseline`` (positive is better)."""
    if not (baseline_reached and tuned_reached):
        raise ComparisonRefused("both runs must reach the target accuracy")
    return -100.0 * compare(baseline, tuned, pref)
