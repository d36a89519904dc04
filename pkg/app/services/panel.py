"""Subject-by-time panels.

Layout of a panel with ``n`` subjects and ``t`` time points:

* ``v``  (n, p)     baseline features
* ``l``  (n, t, q)  time-varying features, NaN once unobserved
* ``a``  (n, t)     treatment, 0/1, single jump, carried forward after
                    censoring or discharge
* ``c``  (n, t)     optional censoring indicator, absorbing
* ``d``  (n, t)     optional death/discharge indicator; ``d[:, t] = 1`` means
                    the subject left before time ``t``
* ``y``  (n,)       outcome, NaN for censored subjects
* ``weights`` (n,)  frequency weights, ones for sampled data

Within one time point the ordering is L, (C), A.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from app.errors import EmptyPanelError, PanelFormatError


def _is_monotone_binary(rows: np.ndarray) -> bool:
    if rows.size == 0:
        return True
    if not np.isin(rows, (0, 1)).all():
        return False
    return bool((np.diff(rows.astype(np.int8), axis=1) >= 0).all())


@dataclass(frozen=True)
class Panel:
    v: np.ndarray
    l: np.ndarray
    a: np.ndarray
    y: np.ndarray
    delta: int = 1
    c: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    times: Optional[np.ndarray] = field(default=None)

    def __post_init__(self) -> None:
        v = np.asarray(self.v, dtype=float)
        l = np.asarray(self.l, dtype=float)
        a = np.asarray(self.a, dtype=np.int8)
        y = np.asarray(self.y, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1)
        if l.ndim == 2:
            l = l[:, :, None]

        if a.ndim != 2:
            raise PanelFormatError("treatment must be a subjects x time matrix")
        n, t = a.shape
        if n == 0:
            raise EmptyPanelError("panel has no subjects")
        if t == 0:
            raise PanelFormatError("panel has no time points")
        if v.shape[0] != n or l.shape[:2] != (n, t) or y.shape != (n,):
            raise PanelFormatError(
                f"inconsistent shapes: v {v.shape}, l {l.shape}, a {a.shape}, y {y.shape}"
            )
        if self.delta < 1:
            raise PanelFormatError(f"bin width must be >= 1, got {self.delta}")
        if not _is_monotone_binary(a):
            raise PanelFormatError("treatment rows must be binary with at most one 0->1 jump")

        c = None if self.c is None else np.asarray(self.c, dtype=np.int8)
        if c is not None and (c.shape != (n, t) or not _is_monotone_binary(c)):
            raise PanelFormatError("censoring rows must be binary, absorbing and n x t")
        d = None if self.d is None else np.asarray(self.d, dtype=np.int8)
        if d is not None and (d.shape != (n, t) or not _is_monotone_binary(d)):
            raise PanelFormatError("discharge rows must be binary, absorbing and n x t")

        weights = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float)
        if weights.shape != (n,) or (weights < 0).any() or not np.isfinite(weights).all():
            raise PanelFormatError("frequency weights must be finite, non-negative and length n")

        if c is not None:
            missing = ~np.isfinite(y) & (c[:, -1] == 0)
        else:
            missing = ~np.isfinite(y)
        if missing.any():
            raise PanelFormatError(f"{int(missing.sum())} uncensored subjects have no outcome")

        times = np.arange(1, t + 1) if self.times is None else np.asarray(self.times, dtype=int)
        if times.shape != (t,):
            raise PanelFormatError("times must list one fine-grid index per column")

        for name, value in (("v", v), ("l", l), ("a", a), ("y", y), ("c", c), ("d", d),
                            ("weights", weights), ("times", times)):
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return int(self.a.shape[0])

    @property
    def t(self) -> int:
        return int(self.a.shape[1])

    @property
    def n_baseline(self) -> int:
        return int(self.v.shape[1])

    @property
    def n_features(self) -> int:
        return int(self.l.shape[2])

    def uncensored(self) -> np.ndarray:
        """(n, t) mask: uncensored through each time point."""
        if self.c is None:
            return np.ones((self.n, self.t), dtype=bool)
        return self.c == 0

    def discharged(self) -> np.ndarray:
        """(n, t) mask: left before each time point."""
        if self.d is None:
            return np.zeros((self.n, self.t), dtype=bool)
        return self.d == 1

    def take(self, index: np.ndarray) -> "Panel":
        """Subjects at ``index`` (with repetition, for resampling)."""
        return replace(
            self,
            v=self.v[index],
            l=self.l[index],
            a=self.a[index],
            y=self.y[index],
            c=None if self.c is None else self.c[index],
            d=None if self.d is None else self.d[index],
            weights=self.weights[index],
        )

    def columns(self, keep: np.ndarray, delta: int, censoring: Optional[np.ndarray] = None) -> "Panel":
        """Panel restricted to the 0-based columns ``keep``."""
        return replace(
            self,
            l=self.l[:, keep],
            a=self.a[:, keep],
            c=censoring if censoring is not None else (None if self.c is None else self.c[:, keep]),
            d=None if self.d is None else self.d[:, keep],
            delta=delta,
            times=self.times[keep],
        )
