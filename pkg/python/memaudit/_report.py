"""
Report documents and plot exports.

A report is one relaxed Extended JSON document::

    {"format": "memaudit-report", "version": 1,
     "provenance": {...}, "sections": {"memorization": {...}, ...}}

Finite floats are written with their shortest round-trip representation, so
reading a report back reproduces every number bit for bit; NaN and infinities
use ``{"$numberDouble": ...}``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence, Union

import numpy as np

from ._codec import dumps_document, loads_document
from ._errors import NumericError, ReportFormatError, ReportVersionError
from ._numerics import width_bins
from ._types import Document, HistBins, Provenance

logger = logging.getLogger(__name__)

REPORT_FORMAT = 'memaudit-report'
REPORT_VERSION = 1

PathLike = Union[str, Path]


@dataclass
class ReportFile:
    sections: Dict[str, Document] = field(default_factory=dict)
    provenance: Provenance = field(default_factory=dict)  # type: ignore[assignment]
    version: int = REPORT_VERSION

    def add(self, name: str, section: Any) -> ReportFile:
        self.sections[name] = (
            section.to_document() if hasattr(section, 'to_document') else section
        )
        return self

    def to_document(self) -> Document:
        return {
            'format': REPORT_FORMAT,
            'version': self.version,
            'provenance': dict(self.provenance),
            'sections': self.sections,
        }


def write_report(report: ReportFile, path: PathLike) -> None:
    text = dumps_document(report.to_document())
    Path(path).write_text(text, encoding='utf-8')
    logger.info('wrote report %s (%s)', path, ', '.join(report.sections))


def read_report(path: PathLike) -> ReportFile:
    text = Path(path).read_text(encoding='utf-8')
    if not text.strip():
        raise ReportFormatError(f'{path}: empty report')
    try:
        doc = loads_document(text)
    except json.JSONDecodeError as e:
        raise ReportFormatError(
            f'{path}: line {e.lineno}, column {e.colno}: {e.msg}'
        ) from e
    if not isinstance(doc, dict) or doc.get('format') != REPORT_FORMAT:
        raise ReportFormatError(f'{path}: not a {REPORT_FORMAT} document')
    if doc.get('version') != REPORT_VERSION:
        raise ReportVersionError(doc.get('version'), REPORT_VERSION)
    sections = doc.get('sections')
    if not isinstance(sections, dict):
        raise ReportFormatError(f'{path}: "sections" must be an object')
    return ReportFile(
        sections=sections,
        provenance=doc.get('provenance') or {},
        version=doc['version'],
    )


def _cell(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_rows(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    """Comma-separated plot rows; None becomes an empty cell."""
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def hist_bins(
    log_probs: Sequence[float],
    memorized: Sequence[bool],
    bin_width: float,
) -> HistBins:
    """Counts of memorized and regular observations per log-probability bin."""
    values = np.asarray(log_probs, dtype=np.float64)
    flags = np.asarray(memorized, dtype=bool)
    if values.size == 0:
        raise NumericError('cannot bin an empty vector')
    if flags.shape != values.shape:
        raise NumericError('one memorized flag per log-probability is required')
    if not np.isfinite(values).all():
        raise NumericError('log-probabilities must be finite to bin')
    if not bin_width > 0:
        raise NumericError(f'bin width must be positive, got {bin_width!r}')
    first, index = width_bins(values, bin_width)
    bins = int(index.max()) + 1
    edges = (first + np.arange(bins + 1)) * float(bin_width)
    mem = np.bincount(index[flags], minlength=bins)
    reg = np.bincount(index[~flags], minlength=bins)
    total = mem + reg
    with np.errstate(invalid='ignore', divide='ignore'):
        proportion = np.where(total > 0, mem / np.maximum(total, 1), 0.0)
    return {
        'bin_width': float(bin_width),
        'edges': edges.tolist(),
        'memorized': mem.tolist(),
        'regular': reg.tolist(),
        'proportion': proportion.tolist(),
    }


def hist_rows(bins: HistBins) -> Iterable[Sequence[Any]]:
    edges = bins['edges']
    for b, (m, r, p) in enumerate(
        zip(bins['memorized'], bins['regular'], bins['proportion'])
    ):
        yield edges[b], edges[b + 1], m, r, p


def score_histogram(
    scores: Sequence[float], marker: Optional[float] = None
) -> Iterable[Sequence[Any]]:
    """(low, high, count, marked) rows; ``marked`` flags the bin holding ``marker``."""
    values = np.asarray(scores, dtype=np.float64)
    values = values[np.isfinite(values)]
    counts, edges = np.histogram(values, bins='auto')
    for b, count in enumerate(counts):
        low, high = float(edges[b]), float(edges[b + 1])
        last = b == counts.size - 1
        marked = marker is not None and low <= marker and (
            marker < high or (last and marker <= high)
        )
        yield low, high, int(count), int(marked)
