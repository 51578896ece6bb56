"""
SleepMeta - Self-Supervised Meta-Learning for Sleep Scoring
--------------------------------------
report_generator.py file for experiment reports
--------------------------------------
Writes MetricsReports as CSV records, an Excel workbook of summary tables, a
PDF summary document and MF1 bar charts.
"""

from datetime import datetime
from pathlib import Path

import pandas as pd
import plotly.express as px
from reportlab.lib import colors
from reportlab.lib.pagesizes import landscape, letter
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from config import APP_NAME, MODE_COLORS, VERSION
from logging_config import get_logger

logger = get_logger(__name__)

HEADER_COLOR = "#1976D2"


def _flat(table):
    frame = table.reset_index()
    frame.columns = [str(c) for c in frame.columns]
    return frame


def write_report_csv(report, directory):
    """One row per dataset x split x mode x fold x seed, plus one CSV per summary table"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / f"{report.protocol}_records.csv"]
    report.records.to_csv(paths[0], index=False)
    for name, table in report.tables.items():
        path = directory / f"{name}.csv"
        _flat(table).to_csv(path, index=False, float_format="%.4f")
        paths.append(path)
    logger.info(f"Wrote {len(report.records)} metric records and {len(report.tables)} tables to {directory}")
    return paths


def write_tables_excel(report, path):
    """Workbook with the records sheet and one sheet per summary table"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with pd.ExcelWriter(path, engine="openpyxl") as writer:
        for name, table in report.tables.items():
            _flat(table).to_excel(writer, sheet_name=name[:31], index=False)
        report.records.to_excel(writer, sheet_name="records", index=False)
    return path


def _format_cell(value):
    if isinstance(value, float):
        return "nan" if pd.isna(value) else f"{value:.3f}"
    return str(value)


def _table_flowable(frame, styles):
    cell_style = ParagraphStyle("cell", parent=styles["Normal"], fontSize=8, leading=10)
    data = [list(frame.columns)]
    for row in frame.itertuples(index=False):
        data.append([Paragraph(_format_cell(v), cell_style) for v in row])
    width = 10.0 * inch / max(len(frame.columns), 1)
    table = Table(data, colWidths=[width] * len(frame.columns), repeatRows=1)
    table.hAlign = "LEFT"
    table.setStyle(
        TableStyle([
            ("BACKGROUND", (0, 0), (-1, 0), colors.HexColor(HEADER_COLOR)),
            ("TEXTCOLOR", (0, 0), (-1, 0), colors.whitesmoke),
            ("FONTNAME", (0, 0), (-1, 0), "Helvetica-Bold"),
            ("FONTSIZE", (0, 0), (-1, 0), 8),
            ("ALIGN", (0, 0), (-1, 0), "CENTER"),
            ("GRID", (0, 0), (-1, -1), 0.5, colors.HexColor("#DEE2E6")),
            ("VALIGN", (0, 1), (-1, -1), "TOP"),
        ])
    )
    for i in range(1, len(data)):
        bg_color = colors.HexColor("#FFFFFF") if i % 2 == 0 else colors.HexColor("#F5F5F5")
        table.setStyle(TableStyle([("BACKGROUND", (0, i), (-1, i), bg_color)]))
    return table


def write_summary_pdf(report, path, manifest=None):
    """Summary document with every table of the report; falls back to a minimal PDF"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        doc = SimpleDocTemplate(
            str(path),
            pagesize=landscape(letter),
            leftMargin=0.5 * inch,
            rightMargin=0.5 * inch,
            topMargin=0.5 * inch,
            bottomMargin=0.5 * inch,
            author=APP_NAME,
            title=f"{report.protocol} report",
        )
        styles = getSampleStyleSheet()
        title_style = ParagraphStyle(
            "ReportTitle", parent=styles["Heading1"], fontSize=20, spaceAfter=16, alignment=1,
            textColor=colors.HexColor(HEADER_COLOR),
        )
        elements = [
            Paragraph(f"Experiment {report.protocol}", title_style),
            Paragraph(f"Generated on {datetime.now().strftime('%B %d, %Y %H:%M')} by {APP_NAME} {VERSION}", styles["Normal"]),
            Spacer(1, 12),
        ]
        if manifest:
            seeds = manifest.get("seeds", manifest.get("seed"))
            elements.append(Paragraph(f"Seeds: {seeds}; deterministic: {manifest.get('deterministic')}", styles["Normal"]))
            elements.append(Spacer(1, 12))
        for name, table in report.tables.items():
            elements.append(Paragraph(name, styles["Heading2"]))
            elements.append(_table_flowable(_flat(table), styles))
            elements.append(Spacer(1, 16))
        doc.build(elements)
    except Exception as e:
        logger.warning(f"PDF summary failed ({e}); writing a minimal document instead")
        _fallback_pdf(path, report.protocol)
    return path


def _fallback_pdf(path, protocol):
    doc = SimpleDocTemplate(str(path), pagesize=letter)
    styles = getSampleStyleSheet()
    doc.build([
        Paragraph(f"Experiment {protocol}", styles["Heading1"]),
        Paragraph("The summary tables could not be rendered; see the CSV records.", styles["Normal"]),
    ])


def mf1_chart_frame(report):
    """Long frame of mean MF1 per (mode, dataset, split) for plotting"""
    means = report.fold_means()
    return means.groupby(["mode", "dataset", "split"], as_index=False)["mf1"].mean()


def write_mf1_chart(report, path):
    """Grouped MF1 bar chart per dataset; PNG through kaleido, HTML when that fails"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = mf1_chart_frame(report)
    fig = px.bar(
        frame,
        x="dataset",
        y="mf1",
        color="mode",
        facet_col="split",
        barmode="group",
        color_discrete_map=MODE_COLORS,
        range_y=[0, 1],
    )
    fig.update_layout(
        margin=dict(t=40, b=20, l=20, r=20),
        height=400,
        xaxis_title="",
        yaxis_title="MF1",
        title=f"{report.protocol}: macro F1",
    )
    try:
        fig.write_image(str(path.with_suffix(".png")))
        return path.with_suffix(".png")
    except Exception as e:
        logger.warning(f"Static image export unavailable ({e}); writing HTML chart")
        html_path = path.with_suffix(".html")
        fig.write_html(str(html_path))
        return html_path


def write_report(report, directory, manifest=None, charts=True):
    """All report artifacts of one experiment; returns the written paths"""
    directory = Path(directory)
    paths = write_report_csv(report, directory)
    paths.append(write_tables_excel(report, directory / f"{report.protocol}.xlsx"))
    paths.append(write_summary_pdf(report, directory / f"{report.protocol}.pdf", manifest))
    if charts and len(report.records):
        paths.append(write_mf1_chart(report, directory / f"{report.protocol}_mf1"))
    return paths
