"""Report document (JSON) and its text / CSV table views."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from . import __version__
from .core import INTENSITIES, Kind
from .metrics import CORRUPTIONS, AggregateReport, EvaluationReport, aggregate

SCHEMA_VERSION = "1.0"
CSV_FIELDS = ["table", "kind", "level", "class", "metric", "value"]
TOP_K = 3


class SchemaVersionError(ValueError):
    pass


_KIND_ORDER = {k: i for i, k in enumerate(["clean"] + [k.value for k in Kind])}
_LEVEL_ORDER = {i.value: n for n, i in enumerate(INTENSITIES)}


def cell_sort_key(kind: str, level) -> tuple:
    lvl = _LEVEL_ORDER.get(level, level if isinstance(level, int) else -1)
    return (_KIND_ORDER.get(kind, len(_KIND_ORDER)), kind, lvl)


@dataclass
class ReportDocument:
    manifest: dict
    cells: List[EvaluationReport]
    aggregate: AggregateReport
    schema_version: str = SCHEMA_VERSION
    tool_version: str = __version__
    timestamp: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "tool_version": self.tool_version,
            "timestamp": self.timestamp,
            "manifest": self.manifest,
            "cells": [c.to_dict() for c in self.cells],
            "aggregate": self.aggregate.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReportDocument":
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaVersionError(f"unsupported report schema_version {version!r}; expected {SCHEMA_VERSION!r}")
        return cls(
            manifest=d.get("manifest", {}),
            cells=[EvaluationReport.from_dict(c) for c in d.get("cells", [])],
            aggregate=AggregateReport.from_dict(d.get("aggregate", {})),
            schema_version=version,
            tool_version=d.get("tool_version", ""),
            timestamp=d.get("timestamp"),
        )


@dataclass
class DifferenceTable:
    """Per-class AP by intensity for one corruption, with the low-to-high drop."""

    kind: str
    rows: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def difference(self, label: str) -> Optional[float]:
        row = self.rows.get(label, {})
        if "low" in row and "high" in row:
            return row["low"] - row["high"]
        return None

    def top(self, k: int = TOP_K) -> List[str]:
        diffs = [(lbl, self.difference(lbl)) for lbl in self.rows]
        ranked = sorted((d for d in diffs if d[1] is not None), key=lambda d: -d[1])
        return [lbl for lbl, _ in ranked[:k]]


def difference_tables(doc: ReportDocument) -> List[DifferenceTable]:
    tables = {}
    for cell in doc.cells:
        if cell.kind not in CORRUPTIONS or cell.level not in _LEVEL_ORDER:
            continue
        t = tables.setdefault(cell.kind, DifferenceTable(cell.kind))
        for label, ap in cell.per_class_ap.items():
            t.rows.setdefault(label, {})[cell.level] = ap
    return [tables[c] for c in CORRUPTIONS if c in tables]


def _fmt(v, digits: int = 3) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.{digits}f}"
    return str(v)


def _table(header: List[str], rows: List[List[str]]) -> List[str]:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    for r in rows:
        lines.append("  ".join(str(x).ljust(w) for x, w in zip(r, widths)).rstrip())
    return lines


def render_text(doc: ReportDocument) -> str:
    out = []
    cells = sorted(doc.cells, key=lambda c: cell_sort_key(c.kind, c.level))
    out.append("Evaluation cells")
    out.extend(_table(
        ["cell", "images", "mAP", "avg_conf", "TP", "TN", "FP", "FN", "misclass_err"],
        [[c.key, c.n_images, _fmt(c.map), _fmt(c.avg_confidence), *c.counts, _fmt(c.misclassification_error, 4)]
         for c in cells],
    ))
    for t in difference_tables(doc):
        top = set(t.top())
        rows = []
        for label, row in t.rows.items():
            diff = _fmt(t.difference(label))
            rows.append([label, *(_fmt(row.get(i.value)) for i in INTENSITIES),
                         f"**{diff}**" if label in top else diff])
        out.append("")
        out.append(f"Average precision with {t.kind} applied (** = top {TOP_K} low-to-high drops)")
        out.extend(_table(["class", "low", "medium", "high", "difference"], rows))

    agg = doc.aggregate
    grid = {(c.kind, c.level): c.map for c in doc.cells}
    kinds = [k for k in CORRUPTIONS if any(key[0] == k for key in grid)]
    if kinds:
        out.append("")
        out.append("mAP across corruptions")
        out.extend(_table(["corruption", "low", "medium", "high", "CmAP"],
                          [[k, *(_fmt(grid.get((k, i.value))) for i in INTENSITIES), _fmt(agg.cmap.get(k))]
                           for k in kinds]))
    if agg.mcmap is not None:
        out.append("")
        out.append(f"MCmAP: {agg.mcmap:.3f}")
    if agg.flip_probability is not None:
        out.append(f"Flip probability: {agg.flip_probability:.4f}")
    if agg.incomplete and doc.cells:
        out.append(f"Aggregate incomplete; missing cells: {', '.join(agg.incomplete)}")
    return "\n".join(out) + "\n"


def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_rows(doc: ReportDocument):
    for c in sorted(doc.cells, key=lambda c: cell_sort_key(c.kind, c.level)):
        level = "" if c.level is None else c.level
        yield ["cell", c.kind, level, "", "n_images", c.n_images]
        yield ["cell", c.kind, level, "", "map", c.map]
        yield ["cell", c.kind, level, "", "avg_confidence", c.avg_confidence]
        for name, value in c.counts._asdict().items():
            yield ["cell", c.kind, level, "", name, value]
        yield ["cell", c.kind, level, "", "misclassification_error", c.misclassification_error]
        for label, ap in c.per_class_ap.items():
            yield ["ap", c.kind, level, label, "ap", ap]
    for t in difference_tables(doc):
        top = set(t.top())
        for label in t.rows:
            diff = t.difference(label)
            if diff is not None:
                yield ["difference", t.kind, "", label, "difference_top" if label in top else "difference", diff]
    agg = doc.aggregate
    for k, v in agg.cmap.items():
        yield ["aggregate", k, "", "", "cmap", v]
    if agg.mcmap is not None:
        yield ["aggregate", "", "", "", "mcmap", agg.mcmap]
    if agg.flip_probability is not None:
        yield ["aggregate", "", "", "", "flip_probability", agg.flip_probability]


def render_csv(doc: ReportDocument) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for row in csv_rows(doc):
        w.writerow([_csv_value(x) for x in row])
    return buf.getvalue()


def check_self_consistency(doc: ReportDocument, tol: float = 1e-12) -> List[str]:
    """Recompute the aggregate from the document's own cells; return any discrepancies."""
    fresh = aggregate(doc.cells)
    problems = []
    for k in set(fresh.cmap) | set(doc.aggregate.cmap):
        a, b = fresh.cmap.get(k), doc.aggregate.cmap.get(k)
        if a is None or b is None or not math.isclose(a, b, rel_tol=0, abs_tol=tol):
            problems.append(f"cmap[{k}]: stored {b}, recomputed {a}")
    a, b = fresh.mcmap, doc.aggregate.mcmap
    if (a is None) != (b is None) or (a is not None and not math.isclose(a, b, rel_tol=0, abs_tol=tol)):
        problems.append(f"mcmap: stored {b}, recomputed {a}")
    if sorted(fresh.incomplete) != sorted(doc.aggregate.incomplete):
        problems.append(f"incomplete: stored {doc.aggregate.incomplete}, recomputed {fresh.incomplete}")
    return problems
