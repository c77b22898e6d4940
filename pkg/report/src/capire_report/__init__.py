"""Render figures and markdown tables from capire-lab report-data CSVs."""

from capire_report.report import (ReportError, ReportInputs, load_report_inputs,
                                  render_figure1, render_figure2, render_tables)

__all__ = ["ReportError", "ReportInputs", "load_report_inputs",
           "render_figure1", "render_figure2", "render_tables"]
