"""
Result emission
iaa.csv, summary.json, iaa.svg and per-run records under an output directory
"""
import csv
import io
import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Optional, Sequence, Union
from xml.sax.saxutils import escape

import numpy as np

from app.core.exceptions import ContractViolation
from app.schemas.record import MethodSummary, RunRecord, SeedMetrics
from app.schemas.run import RunConfig
from app.services import metrics
from app.services.run_config import write_effective_config

logger = logging.getLogger(__name__)

CSV_HEADER = ("method", "scenario", "seed", "round", "iaa")

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def format_real(value: float) -> str:
    """Locale-independent, round-trippable decimal text."""
    return format(float(value), ".17g")


def iaa_csv(records: Sequence[RunRecord]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for record in records:
        for round_index, value in enumerate(record.iaa, start=1):
            writer.writerow(
                (record.method.value, record.scenario.kind.value, record.seed, round_index, format_real(value))
            )
    return out.getvalue()


def load_iaa_csv(path: Union[str, Path]) -> dict[tuple[str, str, int], list[float]]:
    """IAA series keyed by (method, scenario, seed), rounds in file order."""
    series: dict[tuple[str, str, int], list[float]] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ContractViolation(f"Unexpected iaa.csv header {reader.fieldnames}")
        for row in reader:
            series[(row["method"], row["scenario"], int(row["seed"]))].append(float(row["iaa"]))
    return dict(series)


def _std(values: list[float]) -> Optional[float]:
    return float(np.std(values, ddof=1)) if len(values) > 1 else None


def summarize_records(records: Sequence[RunRecord]) -> dict[str, MethodSummary]:
    """Per-method AA/AFM for every seed plus mean and sample standard deviation across seeds."""
    grouped: dict[str, list[RunRecord]] = defaultdict(list)
    for record in records:
        grouped[record.method.value].append(record)
    summaries = {}
    for method, runs in grouped.items():
        per_seed = {}
        for record in runs:
            summary = metrics.summarize(record.iaa)
            per_seed[str(record.seed)] = SeedMetrics(aa=summary.aa, afm=summary.afm)
        aas = [m.aa for m in per_seed.values()]
        afms = [m.afm for m in per_seed.values()]
        summaries[method] = MethodSummary(
            scenario=runs[0].scenario.kind.value,
            runs=per_seed,
            aa_mean=float(np.mean(aas)),
            aa_std=_std(aas),
            afm_mean=float(np.mean(afms)),
            afm_std=_std(afms),
        )
    return summaries


def iaa_svg(records: Sequence[RunRecord], width: int = 640, height: int = 400) -> str:
    """Line chart of seed-averaged IAA per round, one polyline per method."""
    grouped: dict[str, list[list[float]]] = defaultdict(list)
    for record in records:
        grouped[record.method.value].append(record.iaa)
    margin = 50
    rounds = max(len(series) for runs in grouped.values() for series in runs)
    plot_w, plot_h = width - 2 * margin, height - 2 * margin

    def x_of(round_index: int) -> float:
        return margin + (plot_w * (round_index - 1) / (rounds - 1) if rounds > 1 else plot_w / 2)

    def y_of(value: float) -> float:
        return margin + plot_h * (1.0 - value)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{margin + plot_h}" x2="{margin + plot_w}" y2="{margin + plot_h}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{margin + plot_h}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="12">round</text>',
        f'<text x="12" y="{height / 2:.1f}" font-size="12" transform="rotate(-90 12 {height / 2:.1f})" '
        f'text-anchor="middle">IAA</text>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(
            f'<text x="{margin - 6}" y="{y_of(tick) + 4:.1f}" text-anchor="end" font-size="10">{tick:.2f}</text>'
        )
    for index, (method, runs) in enumerate(sorted(grouped.items())):
        length = min(len(series) for series in runs)
        mean = np.mean([series[:length] for series in runs], axis=0)
        points = " ".join(f"{x_of(t):.2f},{y_of(v):.2f}" for t, v in enumerate(mean, start=1))
        color = _PALETTE[index % len(_PALETTE)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{points}"/>')
        parts.append(
            f'<text x="{margin + plot_w - 4}" y="{margin + 14 * (index + 1)}" text-anchor="end" '
            f'font-size="11" fill="{color}">{escape(method)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def emit_results(
    records: Sequence[RunRecord],
    out_dir: Union[str, Path],
    cfg: Optional[RunConfig] = None,
) -> list[Path]:
    """
    Write every result file for a set of runs.

    Args:
        records: Finished runs
        out_dir: Output directory, created if missing
        cfg: Run document to echo as effective_config.json

    Returns:
        Paths written

    Raises:
        ContractViolation: no records
        OSError: the directory is not writable
    """
    if not records:
        raise ContractViolation("No run records to emit")
    out_dir = Path(out_dir)
    written = [
        _write(out_dir / "iaa.csv", iaa_csv(records)),
        _write(out_dir / "summary.json", _summary_json(records)),
        _write(out_dir / "iaa.svg", iaa_svg(records)),
    ]
    for record in records:
        written.append(_write(out_dir / "runs" / record.run_name / "record.json", record.model_dump_json(indent=2)))
    if cfg is not None:
        written.append(write_effective_config(cfg, out_dir / "effective_config.json"))
    logger.info(f"Wrote {len(written)} result files to {out_dir}")
    return written


def _summary_json(records: Sequence[RunRecord]) -> str:
    summaries = {method: summary.model_dump() for method, summary in summarize_records(records).items()}
    return json.dumps(summaries, indent=2, sort_keys=True) + "\n"


def load_records(out_dir: Union[str, Path]) -> list[RunRecord]:
    """Run records previously written by emit_results, ordered by run directory name."""
    paths = sorted((Path(out_dir) / "runs").glob("*/record.json"))
    return [RunRecord.model_validate_json(path.read_text(encoding="utf-8")) for path in paths]


def report(out_dir: Union[str, Path]) -> list[Path]:
    """Regenerate the aggregate files of an output directory from its run records."""
    records = load_records(out_dir)
    if not records:
        raise ContractViolation(f"No run records under {out_dir}")
    return emit_results(records, out_dir)
