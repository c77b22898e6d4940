"""Load report-data CSVs, render the two figures, and emit markdown tables.

This package is a pure consumer of the CSV contract written by
`capire report-data`; it recomputes nothing.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd


class ReportError(ValueError):
    pass


_INDICATORS = [
    "backbone_completion",
    "blocked_credits",
    "distance_to_graduation",
    "bottleneck_approval_ratio",
    "prerequisites_met_ratio",
    "mean_in_degree_approved",
    "mean_out_degree_approved",
]

FIGURE1_COLUMNS = ["scenario_id", "semester", "backbone_mean"]
EFFECTS_COLUMNS = ["key", "value"]
TABLE2_COLUMNS = ["scenario_id", "dropout_rate", "mean_courses",
                  "std_courses", "median_courses"]
TABLE3_COLUMNS = (["scenario_id", "n_survivors"]
                  + [f"{n}_{s}" for n in _INDICATORS for s in ("mean", "sd")]
                  + ["blocked_credits_median"]
                  + [f"frozen_{n}_mean" for n in _INDICATORS]
                  + ["frozen_blocked_credits_median"])

EFFECT_KEYS = [f"{f}_{o}" for f in "ABC" for o in ("courses", "dropout")]

DEFAULT_FIGURE1_SCENARIOS = ("A0B0C0", "A0B1C0", "A1B1C1")


@dataclass(frozen=True)
class ReportInputs:
    figure1: pd.DataFrame
    effects: pd.DataFrame
    table2: pd.DataFrame
    table3: pd.DataFrame


def _read(path, expected_columns) -> pd.DataFrame:
    if not os.path.exists(path):
        raise ReportError(f"missing input file: {path}")
    df = pd.read_csv(path)
    unknown = [c for c in df.columns if c not in expected_columns]
    if unknown:
        raise ReportError(f"{os.path.basename(path)}: unknown columns "
                          + ", ".join(unknown))
    missing = [c for c in expected_columns if c not in df.columns]
    if missing:
        raise ReportError(f"{os.path.basename(path)}: missing columns "
                          + ", ".join(missing))
    if df.empty:
        raise ReportError(f"{os.path.basename(path)}: no rows")
    return df


def load_report_inputs(in_dir) -> ReportInputs:
    inputs = ReportInputs(
        figure1=_read(os.path.join(in_dir, "figure1.csv"), FIGURE1_COLUMNS),
        effects=_read(os.path.join(in_dir, "figure2_effects.csv"), EFFECTS_COLUMNS),
        table2=_read(os.path.join(in_dir, "table2.csv"), TABLE2_COLUMNS),
        table3=_read(os.path.join(in_dir, "table3_semester8.csv"), TABLE3_COLUMNS),
    )
    missing = [k for k in EFFECT_KEYS
               if k not in set(inputs.effects["key"])]
    if missing:
        raise ReportError("figure2_effects.csv: missing effects "
                          + ", ".join(missing))
    return inputs


def render_figure1(inputs: ReportInputs, out_path,
                   scenarios=DEFAULT_FIGURE1_SCENARIOS) -> str:
    """Backbone completion over semesters, one line per selected scenario."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for sid in scenarios:
        sub = inputs.figure1[inputs.figure1["scenario_id"] == sid]
        if sub.empty:
            plt.close(fig)
            raise ReportError(f"figure1.csv: no series for scenario {sid}")
        sub = sub.sort_values("semester")
        ax.plot(sub["semester"], sub["backbone_mean"], marker="o", label=sid)
    ax.set_xlabel("semester")
    ax.set_ylabel("mean backbone completion")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return str(out_path)


def render_figure2(inputs: ReportInputs, out_path) -> str:
    """Main effects of the three factors: two panels, one bar per factor."""
    values = dict(zip(inputs.effects["key"], inputs.effects["value"]))
    factors = ["A", "B", "C"]
    fig, axes = plt.subplots(1, 2, figsize=(9, 4.5))
    panels = [("dropout", "effect on non-completion rate"),
              ("courses", "effect on mean approved courses")]
    for ax, (outcome, title) in zip(axes, panels):
        heights = [values[f"{f}_{outcome}"] for f in factors]
        ax.bar(factors, heights)
        ax.axhline(0.0, linewidth=0.8, color="black")
        ax.set_title(title)
        ax.set_xlabel("factor")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return str(out_path)


def _fmt(value, decimals):
    return f"{float(value):.{decimals}f}"


def _markdown_table(headers, rows) -> str:
    lines = ["| " + " | ".join(headers) + " |",
             "| " + " | ".join("---" for _ in headers) + " |"]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return "\n".join(lines)


def render_tables(inputs: ReportInputs) -> str:
    """Markdown document with the outcome and structural-indicator tables."""
    t2_rows = [[str(r["scenario_id"]), _fmt(r["dropout_rate"], 4),
                _fmt(r["mean_courses"], 2), _fmt(r["std_courses"], 2),
                _fmt(r["median_courses"], 0)]
               for _, r in inputs.table2.iterrows()]
    t3_rows = [[str(r["scenario_id"]),
                _fmt(r["backbone_completion_mean"], 2),
                _fmt(r["blocked_credits_median"], 0),
                _fmt(r["distance_to_graduation_mean"], 2)]
               for _, r in inputs.table3.iterrows()]
    effects = dict(zip(inputs.effects["key"], inputs.effects["value"]))
    eff_rows = [[f, _fmt(effects[f"{f}_dropout"], 4),
                 _fmt(effects[f"{f}_courses"], 2)] for f in "ABC"]
    parts = [
        "# Scenario outcomes",
        "",
        _markdown_table(
            ["scenario", "non-completion", "mean courses", "sd courses",
             "median courses"], t2_rows),
        "",
        "# Structural indicators at semester 8 (survivors)",
        "",
        _markdown_table(
            ["scenario", "backbone completion", "blocked credits (median)",
             "distance to graduation"], t3_rows),
        "",
        "# Factorial main effects",
        "",
        _markdown_table(
            ["factor", "non-completion effect", "mean-courses effect"],
            eff_rows),
        "",
    ]
    return "\n".join(parts)


def render_all(in_dir, out_dir) -> dict:
    inputs = load_report_inputs(in_dir)
    os.makedirs(out_dir, exist_ok=True)
    out = {
        "figure1.png": render_figure1(inputs, os.path.join(out_dir, "figure1.png")),
        "figure2.png": render_figure2(inputs, os.path.join(out_dir, "figure2.png")),
    }
    md_path = os.path.join(out_dir, "report.md")
    with open(md_path, "w", encoding="utf-8") as fh:
        fh.write(render_tables(inputs))
    out["report.md"] = md_path
    return out
