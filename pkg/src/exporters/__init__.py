"""Export utilities for evaluation reports."""

from .report_exporter import (
    export_report,
    export_report_to_excel,
    export_report_to_json,
    export_rows_to_csv,
)

__all__ = [
    "export_report",
    "export_report_to_excel",
    "export_report_to_json",
    "export_rows_to_csv",
]
