"""Static single-jump treatment regimes."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.errors import InvalidRegimeError, RegimeLengthError

UNSPECIFIED = -1


@dataclass(frozen=True)
class TreatmentRegime:
    """A binary 0->1 treatment sequence, optionally with an unspecified tail.

    ``values`` has one entry per time point. Entries after the specified
    prefix are ``UNSPECIFIED``: the regime places no constraint there and
    treatment follows its natural course.
    """

    values: np.ndarray
    name: str = "custom"

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.int8).ravel()
        if values.size == 0:
            raise InvalidRegimeError("regime has no time points")
        tail = np.flatnonzero(values == UNSPECIFIED)
        n_specified = int(tail[0]) if tail.size else values.size
        prefix, rest = values[:n_specified], values[n_specified:]
        if (rest != UNSPECIFIED).any():
            raise InvalidRegimeError("unspecified entries must form a tail")
        if not np.isin(prefix, (0, 1)).all():
            raise InvalidRegimeError("regime values must be 0 or 1")
        if (np.diff(prefix) < 0).any():
            raise InvalidRegimeError("regime must be monotone with at most one 0->1 jump")
        object.__setattr__(self, "values", values)

    @property
    def t(self) -> int:
        return int(self.values.size)

    @property
    def n_specified(self) -> int:
        tail = np.flatnonzero(self.values == UNSPECIFIED)
        return int(tail[0]) if tail.size else self.t

    @property
    def fully_specified(self) -> bool:
        return self.n_specified == self.t

    @property
    def boundary(self) -> Optional[int]:
        """1-based time index where the unspecified tail starts."""
        return None if self.fully_specified else self.n_specified + 1

    @property
    def prefix(self) -> np.ndarray:
        return self.values[: self.n_specified]

    @property
    def jump_index(self) -> Optional[int]:
        """1-based time of the 0->1 jump within the prefix, if any."""
        ones = np.flatnonzero(self.prefix == 1)
        return int(ones[0]) + 1 if ones.size else None

    def require_length(self, t: int) -> None:
        if self.t != t:
            raise RegimeLengthError(f"regime has {self.t} time points, data has {t}")

    def __str__(self) -> str:
        return self.name


def never(t: int) -> TreatmentRegime:
    return TreatmentRegime(np.zeros(t, dtype=np.int8), name="never")


def immediate(t: int) -> TreatmentRegime:
    return TreatmentRegime(np.ones(t, dtype=np.int8), name="immediate")


def jump_at(j: int, t: int) -> TreatmentRegime:
    """Untreated before time ``j``, treated from ``j`` onwards."""
    if not 1 <= j <= t:
        raise InvalidRegimeError(f"jump time {j} outside 1..{t}")
    values = np.zeros(t, dtype=np.int8)
    values[j - 1:] = 1
    return TreatmentRegime(values, name=f"jump:{j}")


def no_treat_before(k: int, t: int) -> TreatmentRegime:
    """Untreated at times 1..k-1; unconstrained from ``k`` on."""
    if not 1 <= k <= t:
        raise InvalidRegimeError(f"boundary {k} outside 1..{t}")
    values = np.full(t, UNSPECIFIED, dtype=np.int8)
    values[: k - 1] = 0
    return TreatmentRegime(values, name=f"no-treat-before:{k}")


def parse_regime(text: str, t: int) -> TreatmentRegime:
    """Parse ``never``, ``immediate``, ``jump:<j>`` or ``no-treat-before:<k>``."""
    kind, _, arg = text.strip().lower().partition(":")
    if kind == "never" and not arg:
        return never(t)
    if kind in ("immediate", "always") and not arg:
        return immediate(t)
    try:
        index = int(arg)
    except ValueError:
        raise InvalidRegimeError(f"unknown regime {text!r}") from None
    if kind == "jump":
        return jump_at(index, t)
    if kind == "no-treat-before":
        return no_treat_before(index, t)
    raise InvalidRegimeError(f"unknown regime {text!r}")
