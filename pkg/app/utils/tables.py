"""CSV layouts for panels and reports.

Panel CSV: one row per (subject, time) with columns ``subject_id, t, v1..vp,
l1..lq, a`` and, when present, ``c`` and ``d``. ``t`` is the fine-grid
index of the column. Outcome CSV: ``subject_id, y, weight``. Lines starting
with ``#`` carry metadata and are skipped on read.
"""

from pathlib import Path
from typing import IO, Optional, Union

import numpy as np
import pandas as pd

from app.errors import PanelFormatError
from app.models import Estimate
from app.services.panel import Panel

FLOAT_FORMAT = "%.10g"

Target = Union[str, Path, IO[str]]


def panel_frames(panel: Panel) -> tuple[pd.DataFrame, pd.DataFrame]:
    n, t = panel.n, panel.t
    rows = {
        "subject_id": np.repeat(np.arange(n), t),
        "t": np.tile(panel.times, n),
    }
    for j in range(panel.n_baseline):
        rows[f"v{j + 1}"] = np.repeat(panel.v[:, j], t)
    for j in range(panel.n_features):
        rows[f"l{j + 1}"] = panel.l[:, :, j].ravel()
    rows["a"] = panel.a.ravel()
    if panel.c is not None:
        rows["c"] = panel.c.ravel()
    if panel.d is not None:
        rows["d"] = panel.d.ravel()
    outcomes = pd.DataFrame({"subject_id": np.arange(n), "y": panel.y, "weight": panel.weights})
    return pd.DataFrame(rows), outcomes


def _write(frame: pd.DataFrame, target: Target, header: Optional[str]) -> None:
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="") as handle:
            _write(frame, handle, header)
        return
    if header:
        for line in header.splitlines():
            target.write(f"# {line}\n")
    frame.to_csv(target, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_panel(panel: Panel, panel_target: Target, outcome_target: Target) -> None:
    header = f"delta={panel.delta} grid={' '.join(str(int(i)) for i in panel.times)}"
    long, outcomes = panel_frames(panel)
    _write(long, panel_target, header)
    _write(outcomes, outcome_target, None)


def _columns(frame: pd.DataFrame, prefix: str) -> list[str]:
    found = [col for col in frame.columns if col.startswith(prefix) and col[len(prefix):].isdigit()]
    return sorted(found, key=lambda col: int(col[len(prefix):]))


def read_panel(panel_source: Target, outcome_source: Target, delta: int = 1) -> Panel:
    """Inverse of ``write_panel``; subjects are ordered by ``subject_id``."""
    try:
        long = pd.read_csv(panel_source, comment="#")
        outcomes = pd.read_csv(outcome_source, comment="#")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise PanelFormatError(f"cannot read panel: {e}") from e

    missing = {"subject_id", "t", "a"} - set(long.columns)
    if missing or not {"subject_id", "y"} <= set(outcomes.columns):
        raise PanelFormatError(f"missing columns: {sorted(missing) or ['subject_id', 'y']}")

    long = long.sort_values(["subject_id", "t"], kind="stable")
    subjects = long["subject_id"].unique()
    times = np.sort(long["t"].unique())
    n, t = subjects.size, times.size
    if len(long) != n * t or long.duplicated(["subject_id", "t"]).any():
        raise PanelFormatError("panel CSV must have exactly one row per (subject, time)")

    v_cols, l_cols = _columns(long, "v"), _columns(long, "l")
    first_rows = long.groupby("subject_id", sort=True).head(1)
    v = first_rows[v_cols].to_numpy(dtype=float).reshape(n, len(v_cols))
    l = long[l_cols].to_numpy(dtype=float).reshape(n, t, len(l_cols))
    a = long["a"].to_numpy().reshape(n, t)
    c = long["c"].to_numpy().reshape(n, t) if "c" in long else None
    d = long["d"].to_numpy().reshape(n, t) if "d" in long else None

    outcomes = outcomes.set_index("subject_id")
    if not outcomes.index.is_unique or not np.isin(subjects, outcomes.index).all():
        raise PanelFormatError("outcome CSV must have one row per panel subject")
    outcomes = outcomes.loc[subjects]
    weights = outcomes["weight"].to_numpy(dtype=float) if "weight" in outcomes else None

    return Panel(v=v, l=l, a=a, y=outcomes["y"].to_numpy(dtype=float), delta=delta,
                 c=c, d=d, weights=weights, times=times)


def write_frame(frame: pd.DataFrame, target: Target, header: Optional[str] = None) -> None:
    """CSV with optional ``#`` header lines and a fixed float format."""
    _write(frame, target, header)


ESTIMATE_COLUMNS = ["psi_hat", "ci_lo", "ci_hi", "n_followers", "ess", "flags"]


def estimate_frame(estimate: Estimate, ci_lo: Optional[float] = None,
                   ci_hi: Optional[float] = None) -> pd.DataFrame:
    """One-row summary of an estimate; interval columns stay empty without a bootstrap."""
    row = {
        "psi_hat": estimate.psi_hat,
        "ci_lo": ci_lo,
        "ci_hi": ci_hi,
        "n_followers": estimate.n_followers,
        "ess": estimate.diagnostics.ess,
        "flags": ";".join(estimate.flags),
    }
    return pd.DataFrame([row], columns=ESTIMATE_COLUMNS)
