"""
Evaluation report exporters.

Writes an EvalReport as:
- JSON (per-dataset means, weighted aggregate, per-image rows)
- CSV of per-image rows (dataset, image_id, psnr, ssim)
- Excel workbook with a summary sheet and a per-image sheet
"""

import csv
import json
import logging
from pathlib import Path

from openpyxl import Workbook
from openpyxl.styles import Alignment, Font, PatternFill

from src.models.models import EvalReport

logger = logging.getLogger(__name__)

ROW_HEADERS = ["Dataset", "Image ID", "PSNR (dB)", "SSIM"]
SUMMARY_HEADERS = ["Dataset", "Images", "Mean PSNR (dB)", "Mean SSIM"]


def _log_written(output_file: Path, what: str) -> None:
    logger.info("✅ Exported %s to: %s (%.1f KB)", what, output_file, output_file.stat().st_size / 1024)


def export_report_to_json(report: EvalReport, output_path: str) -> str:
    """
    Export a report as a JSON document.

    Args:
        report: Evaluation report
        output_path: Path to output JSON file

    Returns:
        Path to created JSON file
    """
    output_file = Path(output_path)
    output_file.parent.mkdir(parents=True, exist_ok=True)
    output_file.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    _log_written(output_file, "report")
    return str(output_file)


def export_rows_to_csv(report: EvalReport, output_path: str) -> str:
    """
    Export the per-image rows of a report as a flat CSV.

    Returns:
        Path to created CSV file
    """
    output_file = Path(output_path)
    output_file.parent.mkdir(parents=True, exist_ok=True)

    with open(output_file, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(ROW_HEADERS)
        for row in report.rows:
            writer.writerow([row.dataset, row.image_id, f"{row.psnr:.4f}", f"{row.ssim:.6f}"])

    _log_written(output_file, f"{len(report.rows)} rows")
    return str(output_file)


def export_report_to_excel(report: EvalReport, output_path: str) -> str:
    """
    Export a report to an Excel workbook.

    The "Summary" sheet lists per-dataset means followed by the weighted
    average; the "Images" sheet holds the per-image rows.

    Returns:
        Path to created Excel file
    """
    output_file = Path(output_path)
    output_file.parent.mkdir(parents=True, exist_ok=True)

    header_fill = PatternFill(start_color="366092", end_color="366092", fill_type="solid")
    header_font = Font(bold=True, color="FFFFFF")

    def write_header(ws, headers):
        for col_num, header in enumerate(headers, 1):
            cell = ws.cell(row=1, column=col_num)
            cell.value = header
            cell.fill = header_fill
            cell.font = header_font
            cell.alignment = Alignment(horizontal="center", vertical="center")
            ws.column_dimensions[chr(64 + col_num)].width = 20

    wb = Workbook()
    summary = wb.active
    summary.title = "Summary"
    write_header(summary, SUMMARY_HEADERS)
    for row_num, d in enumerate(report.datasets, 2):
        for col_num, value in enumerate([d.name, d.image_count, round(d.mean_psnr, 4), round(d.mean_ssim, 6)], 1):
            summary.cell(row=row_num, column=col_num).value = value
    total_row = len(report.datasets) + 2
    total_count = sum(d.image_count for d in report.datasets)
    for col_num, value in enumerate(["Average", total_count, round(report.weighted_psnr, 4),
                                     round(report.weighted_ssim, 6)], 1):
        cell = summary.cell(row=total_row, column=col_num)
        cell.value = value
        cell.font = Font(bold=True)

    images = wb.create_sheet("Images")
    write_header(images, ROW_HEADERS)
    for row_num, row in enumerate(report.rows, 2):
        for col_num, value in enumerate([row.dataset, row.image_id, row.psnr, row.ssim], 1):
            images.cell(row=row_num, column=col_num).value = value

    wb.save(output_file)
    _log_written(output_file, "workbook")
    return str(output_file)


def export_report(report: EvalReport, output_dir: str, stem: str = "report", excel: bool = False) -> dict:
    """
    Write the JSON report and the per-image CSV (and optionally Excel) into a directory.

    Returns:
        Mapping of format name to written path
    """
    out = Path(output_dir)
    written = {
        "json": export_report_to_json(report, str(out / f"{stem}.json")),
        "csv": export_rows_to_csv(report, str(out / f"{stem}_rows.csv")),
    }
    if excel:
        written["excel"] = export_report_to_excel(report, str(out / f"{stem}.xlsx"))
    return written
