"""
metrics.csv and heatmap output for a finished grid.
"""
import logging
import math
from dataclasses import asdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .exceptions import EmptyReport, ReportIOError  # noqa: E402
from .harness import ALL_MODELS, MetricsRow  # noqa: E402
from .trialgen import Trajectory  # noqa: E402

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
PANELS = (
    ("bias", "Bias (mL)", "RdBu_r"),
    ("halfwidth_change_vs_full", "Change in 95% CI halfwidth (%)", "PuOr_r"),
    ("coverage", "95% CI coverage", "viridis"),
)
INT_FIELDS = ("scenario_id", "n_sims")
STR_FIELDS = ("model", "estimand")


def trajectory_of(scenario_id):
    return Trajectory.RETURN_TO_BASELINE if scenario_id <= 36 else Trajectory.SAME_AS_ACTIVE


def metrics_frame(rows):
    if not rows:
        raise EmptyReport("no metrics rows to report")
    return pd.DataFrame([asdict(r) for r in rows], columns=MetricsRow.field_names())


def write_metrics(rows, path):
    frame = metrics_frame(rows)
    try:
        frame.to_csv(path, index=False, lineterminator="\r\n")
    except OSError as exc:
        raise ReportIOError(path, exc.strerror or str(exc)) from exc
    return Path(path)


def read_metrics(path):
    """Parse a metrics.csv back into MetricsRow objects."""
    try:
        frame = pd.read_csv(path, float_precision="round_trip", dtype={f: str for f in STR_FIELDS})
    except OSError as exc:
        raise ReportIOError(path, exc.strerror or str(exc)) from exc
    missing = [f for f in MetricsRow.field_names() if f not in frame.columns]
    if missing:
        raise ReportIOError(path, f"missing column(s) {', '.join(missing)}")
    rows = []
    for record in frame.to_dict(orient="records"):
        values = {}
        for name in MetricsRow.field_names():
            value = record[name]
            if name in INT_FIELDS:
                value = int(value)
            elif name not in STR_FIELDS:
                value = float(value)
            values[name] = value
        rows.append(MetricsRow(**values))
    return rows


def heatmap_tables(rows, estimand="effect"):
    """``{trajectory: {panel metric: DataFrame(scenario x model)}}`` for one estimand."""
    frame = metrics_frame(rows)
    frame = frame[frame["estimand"] == estimand]
    if frame.empty:
        raise EmptyReport(f"no rows for estimand {estimand!r}")
    models = [m for m in ALL_MODELS if m in set(frame["model"])]
    tables = {}
    for trajectory in Trajectory:
        part = frame[frame["scenario_id"].map(trajectory_of) == trajectory]
        if part.empty:
            continue
        tables[trajectory] = {
            metric: part.pivot(index="scenario_id", columns="model", values=metric)
            .reindex(columns=models)
            .sort_index()
            for metric, _, _ in PANELS
        }
    return tables


def _draw_panel(ax, table, title, cmap, center=None):
    values = table.to_numpy(dtype=float)
    finite = values[np.isfinite(values)]
    if center is not None and finite.size:
        span = max(float(np.max(np.abs(finite - center))), 1e-9)
        vmin, vmax = center - span, center + span
    else:
        vmin = vmax = None
    ax.imshow(np.ma.masked_invalid(values), cmap=cmap, vmin=vmin, vmax=vmax, aspect="auto")
    ax.set_title(title, fontsize=9)
    ax.set_xticks(range(table.shape[1]))
    ax.set_xticklabels(table.columns, rotation=90, fontsize=7)
    ax.set_yticks(range(table.shape[0]))
    ax.set_yticklabels([str(i) for i in table.index], fontsize=7)
    cells = 0
    for (r, c), value in np.ndenumerate(values):
        text = "NA" if not math.isfinite(value) else f"{value:.2f}" if abs(value) < 10 else f"{value:.0f}"
        ax.text(c, r, text, ha="center", va="center", fontsize=5)
        cells += 1
    return cells


def render_heatmap(tables, path, title):
    """One SVG with the three panels; returns the number of annotated cells."""
    fig, axes = plt.subplots(1, len(PANELS), figsize=(4.5 * len(PANELS), 1.2 + 0.3 * len(next(iter(tables.values())))))
    cells = 0
    for ax, (metric, label, cmap) in zip(np.atleast_1d(axes), PANELS):
        center = {"bias": 0.0, "halfwidth_change_vs_full": 0.0}.get(metric)
        cells += _draw_panel(ax, tables[metric], label, cmap, center)
    fig.suptitle(title, fontsize=10)
    try:
        fig.savefig(path, format="svg", bbox_inches="tight")
    except OSError as exc:
        raise ReportIOError(path, exc.strerror or str(exc)) from exc
    finally:
        plt.close(fig)
    return cells


def report(rows, out_dir, estimand="effect"):
    """
    Write metrics.csv and one heatmap SVG per trajectory into ``out_dir``.

    Returns the written paths.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportIOError(out, exc.strerror or str(exc)) from exc

    paths = [write_metrics(rows, out / METRICS_FILE)]
    for trajectory, tables in heatmap_tables(rows, estimand).items():
        path = out / f"heatmap_{trajectory.value}.svg"
        cells = render_heatmap(tables, path, f"{trajectory.value}: {estimand}")
        logger.info("wrote %s (%d cells)", path, cells)
        paths.append(path)
    return paths
