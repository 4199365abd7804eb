"""Aggregate trial results into tables, curves and result stores."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path

import numpy as np

from .trainer import METHODS

METHOD_ORDER = tuple(METHODS)


class AggregationError(ValueError):
    pass


class OrderError(ValueError):
    pass


@dataclass(frozen=True)
class TrialResult:
    dataset: str
    method: str
    num_false: int
    seed: int
    test_mse: float
    validation_metric: float
    runtime_seconds: float = 0.0
    selected: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (np.isfinite(self.test_mse) and self.test_mse >= 0):
            raise ValueError(f"test_mse must be finite and >= 0, got {self.test_mse}")

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.dataset, self.method, int(self.num_false))

    @property
    def trial_id(self) -> tuple[str, str, int, int]:
        return (self.dataset, self.method, int(self.num_false), int(self.seed))

    def store_record(self) -> dict:
        """Fields written to the results store; wall-clock time is kept out so reruns are byte-identical."""
        d = asdict(self)
        d.pop("runtime_seconds")
        return d


@dataclass(frozen=True)
class Cell:
    mean: float
    std: float
    n_trials: int
    values: tuple[float, ...]

    @property
    def single(self) -> bool:
        return self.n_trials == 1


@dataclass
class BenchReport:
    cells: dict[tuple[str, str, int], Cell]
    metadata: dict = field(default_factory=dict)

    def rows(self) -> list[tuple[str, int]]:
        return sorted({(d, k) for d, _, k in self.cells}, key=lambda r: (r[0], r[1]))

    def methods(self) -> list[str]:
        return sorted({m for _, m, _ in self.cells}, key=_method_rank)


def _method_rank(m: str):
    return (METHOD_ORDER.index(m), m) if m in METHOD_ORDER else (len(METHOD_ORDER), m)


def _cell_key(key):
    d, m, k = key
    return (d, k, _method_rank(m))


def aggregate(trials, metadata: dict | None = None) -> BenchReport:
    """Mean and sample std of test MSE per (dataset, method, num_false)."""
    trials = list(trials)
    if not trials:
        raise AggregationError("no trials to aggregate")
    groups: dict[tuple, list[float]] = {}
    seen: dict[tuple, float] = {}
    for t in trials:
        if not isinstance(t, TrialResult):
            raise AggregationError(f"expected TrialResult, got {type(t).__name__}")
        # a trial recorded twice (e.g. by a resumed run) counts once
        if t.trial_id in seen:
            if seen[t.trial_id] != t.test_mse:
                raise AggregationError(f"conflicting results for trial {t.trial_id}")
            continue
        seen[t.trial_id] = t.test_mse
        groups.setdefault(t.key, []).append(float(t.test_mse))
    cells = {}
    for key in sorted(groups, key=_cell_key):
        # sorted values make the summary independent of trial order
        vals = tuple(sorted(groups[key]))
        arr = np.array(vals)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        cells[key] = Cell(float(arr.mean()), std, arr.size, vals)
    return BenchReport(cells, dict(metadata or {}))


def aggregate_cell(trials) -> Cell:
    """Aggregate trials that must all share one key."""
    trials = list(trials)
    keys = {t.key for t in trials}
    if len(keys) != 1:
        raise AggregationError(f"trials in one cell must share (dataset, method, num_false); got {sorted(keys)}")
    return next(iter(aggregate(trials).cells.values()))


def fmt2(x: float) -> str:
    """Two decimals, half-to-even on the shortest decimal form of ``x``."""
    return str(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN))


def render_table(report: BenchReport, fmt: str = "markdown") -> str:
    if not report.cells:
        raise AggregationError("report is empty")
    methods = report.methods()
    header = ["dataset", "num_false", *methods]
    body = []
    for dataset, k in report.rows():
        cells = [report.cells.get((dataset, m, k)) for m in methods]
        means = [c.mean for c in cells if c is not None]
        best = min(means) if means else None
        row = [dataset, str(k)]
        for c in cells:
            if c is None:
                row.append("")
                continue
            text = f"{fmt2(c.mean)} ({fmt2(c.std)})"
            if c.single:
                text += " n=1"
            if fmt == "markdown" and c.mean == best:
                text = f"**{text}**"
            row.append(text)
        body.append(row)

    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown table format {fmt!r}")
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in body]
    return "\n".join(lines) + "\n"


# -- results store ----------------------------------------------------------------


def append_results(path, trials) -> None:
    with open(path, "a") as fh:
        for t in trials:
            fh.write(json.dumps(t.store_record(), sort_keys=True) + "\n")


def read_results(path) -> list[TrialResult]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    for line in path.read_text().splitlines():
        if line.strip():
            out.append(TrialResult(**json.loads(line)))
    return out


# -- curves and charts ----------------------------------------------------------


def emit_scaling_curve(results, out_dir, name: str = "scaling") -> tuple[Path, Path]:
    """Write ``(fraction, mean, std)`` rows as CSV plus an SVG line chart with an error band."""
    pts = [(float(f), float(m), float(s)) for f, m, s in results]
    if not pts:
        raise OrderError("no points to plot")
    fr = [p[0] for p in pts]
    if any(not 0 < f <= 1 for f in fr) or any(b <= a for a, b in zip(fr, fr[1:])):
        raise OrderError(f"fractions must be strictly increasing within (0, 1], got {fr}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fraction", "mean_mse", "std"])
        for f, m, s in pts:
            w.writerow([repr(f), repr(m), repr(s)])
    svg_path = out_dir / f"{name}.svg"
    svg_path.write_text(
        line_chart({name: pts}, x_label="fraction of training data", y_label="test MSE", band=True)
    )
    return csv_path, svg_path


def read_curve_csv(path) -> list[tuple[float, float, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [(float(a), float(b), float(c)) for a, b, c in rows[1:]]


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf")


def line_chart(series: dict, x_label: str = "", y_label: str = "", band: bool = False,
               width: int = 480, height: int = 320) -> str:
    """Minimal SVG line chart; ``series`` maps a label to ``(x, y, err)`` points."""
    ml, mr, mt, mb = 60, 120, 20, 45
    xs = [p[0] for pts in series.values() for p in pts]
    lows = [p[1] - (p[2] if band else 0) for pts in series.values() for p in pts]
    highs = [p[1] + (p[2] if band else 0) for pts in series.values() for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(lows), max(highs)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - ml - mr, height - mt - mb

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + (1 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>',
        f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="12">{x_label}</text>',
        f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {mt + ph / 2:.1f})">{y_label}</text>',
    ]
    for v in (y0, y1):
        out.append(f'<text x="{ml - 4}" y="{py(v):.1f}" text-anchor="end" font-size="10">{v:.3g}</text>')
    for v in sorted(set(xs)):
        out.append(f'<text x="{px(v):.1f}" y="{mt + ph + 14}" text-anchor="middle" font-size="10">{v:g}</text>')
    for i, (label, pts) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        if band:
            upper = " ".join(f"{px(x):.2f},{py(y + e):.2f}" for x, y, e in pts)
            lower = " ".join(f"{px(x):.2f},{py(y - e):.2f}" for x, y, e in reversed(pts))
            out.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        d = " ".join(("M" if j == 0 else "L") + f"{px(x):.2f},{py(y):.2f}" for j, (x, y, _) in enumerate(pts))
        out.append(f'<path d="{d}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y, _ in pts:
            out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="{color}"/>')
        out.append(f'<text x="{ml + pw + 8}" y="{mt + 14 + 16 * i}" font-size="11" fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bench_chart(report: BenchReport, dataset: str) -> str:
    """Mean test MSE against |S_bar| for every method on one dataset."""
    series = {}
    for (d, m, k), c in report.cells.items():
        if d == dataset:
            series.setdefault(m, []).append((float(k), c.mean, c.std))
    series = {m: sorted(series[m]) for m in sorted(series, key=_method_rank)}
    return line_chart(series, x_label="number of false labels", y_label=f"{dataset} test MSE")
