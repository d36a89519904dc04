"""Temporal coarsening of panels and regimes."""

import logging
from dataclasses import dataclass

import numpy as np

from app.errors import BoundaryNotRetainedError, InvalidGridError
from app.services.panel import Panel
from app.services.regimes import TreatmentRegime

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CoarseGrid:
    """Retained 1-based indices of a grid with ``t_star`` points at bin width ``delta``."""

    t_star: int
    delta: int
    indices: np.ndarray
    delta_star: int = 1

    @property
    def length(self) -> int:
        return int(self.indices.size)

    @property
    def is_identity(self) -> bool:
        return self.length == self.t_star

    def retains(self, index: int) -> bool:
        return bool(np.isin(index, self.indices))

    def describe(self) -> str:
        return " ".join(str(int(i)) for i in self.indices)


def _check(t_star: int, delta: int) -> None:
    if t_star < 1:
        raise InvalidGridError(f"sequence length must be >= 1, got {t_star}")
    if delta < 1:
        raise InvalidGridError(f"bin width must be >= 1, got {delta}")
    if t_star >= 2 and delta > t_star - 1:
        raise InvalidGridError(f"bin width {delta} leaves no interior grid for length {t_star}")


def coarse_length(t_star: int, delta: int) -> int:
    """T(delta) = floor((t_star - 1) / delta) + 1."""
    if delta < 1:
        raise InvalidGridError(f"bin width must be >= 1, got {delta}")
    return (t_star - 1) // delta + 1


def coarse_indices(t_star: int, delta: int) -> CoarseGrid:
    """Walk back from ``t_star`` in steps of ``delta``; the earliest index is snapped to 1.

    Both endpoints are always retained and the length equals ``coarse_length``.
    When ``delta`` does not divide ``t_star - 1`` the first gap is wider than
    ``delta``.
    """
    _check(t_star, delta)
    indices = np.arange(t_star, 0, -delta)[::-1].copy()
    indices[0] = 1
    return CoarseGrid(t_star=t_star, delta=delta, indices=indices)


def coarsen_panel(panel: Panel, grid: CoarseGrid) -> Panel:
    """Keep the columns at ``grid.indices``.

    A coarse censoring indicator at position k is set when the subject was
    censored before the next retained feature measurement, so an uncensored
    coarse step always has an observed next feature vector.
    """
    if grid.t_star != panel.t:
        raise InvalidGridError(f"grid covers {grid.t_star} points, panel has {panel.t}")
    keep = grid.indices - 1
    censoring = None
    if panel.c is not None:
        last_before_next = np.append(keep[1:] - 1, panel.t - 1)
        censoring = panel.c[:, last_before_next]
    coarse = panel.columns(keep, delta=panel.delta * grid.delta, censoring=censoring)
    logger.debug("Coarsened panel %d -> %d time points (delta=%d)", panel.t, coarse.t, coarse.delta)
    return coarse


def coarsen_regime(regime: TreatmentRegime, grid: CoarseGrid) -> TreatmentRegime:
    """Subset a fine-grid regime to the retained indices."""
    regime.require_length(grid.t_star)
    boundary = regime.boundary
    if boundary is not None and not grid.retains(boundary):
        raise BoundaryNotRetainedError(
            f"regime boundary at index {boundary} is not on the grid ({grid.describe()})"
        )
    return TreatmentRegime(regime.values[grid.indices - 1], name=regime.name)
