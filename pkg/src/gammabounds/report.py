"""Serialization of sensitivity reports and Monte Carlo summaries."""

from __future__ import annotations

import csv
import io
import json
import math

from .bounds import ReportRow, SensitivityReport

REPORT_COLUMNS = ("gamma", "tau_lower", "se_lower", "tau_upper", "se_upper", "ci_low", "ci_high")
PLOT_COLUMNS = ("gamma", "series", "value")


def _num(x) -> str:
    """Full-precision text for machine formats (round-trips through float())."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (bool, int)) and not isinstance(x, float):
        return str(int(x))
    return repr(float(x))


def _sig(x, digits: int = 6) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "-"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.{digits}g}"


def row_record(row: ReportRow) -> dict:
    return {
        "gamma": row.gamma,
        "tau_lower": row.tau_lower.value,
        "se_lower": row.tau_lower.se,
        "tau_upper": row.tau_upper.value,
        "se_upper": row.tau_upper.se,
        "ci_low": row.ci_low,
        "ci_high": row.ci_high,
    }


def _csv(header, records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in records:
        w.writerow([_num(r[k]) if not isinstance(r[k], str) else r[k] for k in header])
    return buf.getvalue()


def report_csv(report: SensitivityReport) -> str:
    return _csv(REPORT_COLUMNS, [row_record(r) for r in report.rows])


def read_report_csv(text: str) -> list[dict]:
    return [{k: float(v) for k, v in rec.items()} for rec in csv.DictReader(io.StringIO(text))]


def report_json(report: SensitivityReport, extra: dict | None = None) -> str:
    rows = []
    for r in report.rows:
        rec = row_record(r)
        rec.update(n=r.tau_lower.n, alpha=r.alpha)
        rows.append(rec)
    doc = {"rows": rows, "provenance": report.provenance}
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def plot_csv(report: SensitivityReport) -> str:
    return _csv(PLOT_COLUMNS, [dict(zip(PLOT_COLUMNS, rec)) for rec in report.plot_series()])


def _table(header, rows) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n"


def report_pretty(report: SensitivityReport) -> str:
    """Text table with Lower, Upper, the CI ends and the CI length."""
    level = round(100 * (1 - report.rows[0].alpha)) if report.rows else 95
    header = ["Gamma", "Lower", "Upper", f"Lower {level}% CI", f"Upper {level}% CI", "Length of CI"]
    rows = [[f"{r.gamma:.4f}", _sig(r.tau_lower.value), _sig(r.tau_upper.value),
             _sig(r.ci_low), _sig(r.ci_high), _sig(r.ci_high - r.ci_low)] for r in report.rows]
    prov = report.provenance
    foot = f"n = {prov.get('n')}, treated = {prov.get('n_treated')}, seed = {prov.get('seed')}\n"
    return _table(header, rows) + foot


def summary_csv(row: dict) -> str:
    return _csv(tuple(row), [row])


def summary_json(row: dict, extra: dict | None = None) -> str:
    doc = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()}
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def summary_pretty(row: dict) -> str:
    header = ["n", "mean lower", "mean se-", "sd lower", "mean upper", "mean se+", "sd upper",
              "coverage", "reps"]
    keys = ["n", "mean_lower", "mean_se_lower", "sd_lower", "mean_upper", "mean_se_upper",
            "sd_upper", "coverage", "replications"]
    cells = [str(row[k]) if isinstance(row[k], int) else _sig(row[k]) for k in keys]
    return _table(header, [cells])
