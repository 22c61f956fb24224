"""Report emission: human-readable tables plus a flat file of every cell."""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Any

from tabulate import tabulate

from sxextract.models import VIEWS, WEIGHTINGS, MetricsReport
from sxextract.services.agreement import AgreementReport
from sxextract.services.evaluation import PairedComparison

__all__ = [
    "VIEW_TITLES",
    "metrics_table",
    "false_negative_table",
    "comparison_table",
    "agreement_line",
    "flat_records",
    "write_flat_records",
]

VIEW_TITLES = {"sx": "Sx", "sx_status": "Sx + Status"}


def metrics_table(rows: Sequence[tuple[str, MetricsReport]], tablefmt: str = "pipe") -> str:
    """One row per (label, report), one ``F1 (Precision, Recall)`` column per cell."""
    columns = [(w, v) for w in WEIGHTINGS for v in VIEWS]
    headers = ["Model", "Mode", *(f"{VIEW_TITLES[v]} ({w})" for w, v in columns)]
    body = []
    for label, report in rows:
        mode = f"{report.mode} (body system)" if report.projected else report.mode
        cells = [report.cells[c].render() if c in report.cells else "-" for c in columns]
        body.append([label, mode, *cells])
    table = tabulate(body, headers, tablefmt=tablefmt)
    notes = sorted({note for _, report in rows for note in report.notes})
    if notes:
        table = "\n".join([table, "", *(f"note: {n}" for n in notes)])
    return table


def false_negative_table(counts: Sequence[tuple[str, int]], limit: int = 10, tablefmt: str = "pipe") -> str:
    return tabulate([list(row) for row in counts[:limit]], ["Symptom", "Missed conversations"], tablefmt=tablefmt)


def comparison_table(
    comparisons: Mapping[tuple[str, str], PairedComparison], tablefmt: str = "pipe"
) -> str:
    body = [
        [a, b, f"{c.mean_a:.3f}", f"{c.mean_b:.3f}", f"{c.u_statistic:.1f}", f"{c.p_value:.3g}"]
        for (a, b), c in comparisons.items()
    ]
    return tabulate(body, ["A", "B", "mean F1 A", "mean F1 B", "U", "p"], tablefmt=tablefmt)


def agreement_line(report: AgreementReport) -> str:
    return (
        f"Cohen's kappa {report.kappa:.3f} over {report.n_conversations} conversations "
        f"({report.n_pairs} annotator pairs)"
    )


def flat_records(
    rows: Sequence[tuple[str, MetricsReport]], provenance: Mapping[str, Any] | None = None
) -> list[dict[str, Any]]:
    """Every cell as one flat record, stamped with ``provenance`` (seed, config hash)."""
    records = []
    for label, report in rows:
        for record in report.flat_rows(label):
            records.append({**record, **(provenance or {})})
    return records


def write_flat_records(path: Path, records: Sequence[Mapping[str, Any]]) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(dict(record), sort_keys=True))
            handle.write("\n")
