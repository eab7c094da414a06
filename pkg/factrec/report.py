import csv
import io
import json
import logging
import math
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict
from typing_extensions import Literal

from factrec.exceptions import UndefinedCorrelation
from factrec.metrics import pearson_r
from factrec.models import MetricRecord

logger = logging.getLogger(__name__)

Marker = Literal["best", "second", "second_worst", "worst"]
Granularity = Literal["system", "interaction"]

MARKDOWN_STYLE: Dict[str, Tuple[str, str]] = {
    "best": ("**", "**"),
    "second": ("<u>", "</u>"),
    "second_worst": ("<i>", "</i>†"),
    "worst": ("<i>", "</i>"),
}


class AggregateCell(BaseModel):
    model_config = ConfigDict(frozen=True)

    dataset: str
    model_name: str
    metric_name: str
    mean: Optional[float]
    std: Optional[float]
    count: int
    degenerate_count: int
    marker: Optional[Marker] = None


class CorrelationPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: str
    x: float
    y: float


class Correlation(BaseModel):
    model_config = ConfigDict(frozen=True)

    metric_x: str
    metric_y: str
    granularity: Granularity
    r: Optional[float]
    point_count: int
    points: Tuple[CorrelationPoint, ...] = ()
    note: str = ""


class AggregateReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    cells: Tuple[AggregateCell, ...]
    correlations: Tuple[Correlation, ...] = ()

    def cell(self, dataset: str, model_name: str, metric_name: str) -> Optional[AggregateCell]:
        for c in self.cells:
            if (c.dataset, c.model_name, c.metric_name) == (dataset, model_name, metric_name):
                return c
        return None

    def datasets(self) -> List[str]:
        return sorted({c.dataset for c in self.cells})


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and population standard deviation, with compensated sums."""
    n = len(values)
    mean = math.fsum(values) / n
    return mean, math.sqrt(math.fsum((v - mean) ** 2 for v in values) / n)


def rank_markers(means: Dict[str, float]) -> Dict[str, Marker]:
    """
    best / second / worst per metric, plus second_worst from four models on.
    Higher means rank first; ties go to the model name.
    """
    order = sorted(means, key=lambda m: (-means[m], m))
    markers: Dict[str, Marker] = {}
    if not order:
        return markers
    n = len(order)
    if n >= 2:
        markers[order[-1]] = "worst"
    if n >= 4:
        markers[order[-2]] = "second_worst"
    if n >= 3:
        markers[order[1]] = "second"
    markers[order[0]] = "best"
    return markers


Key = Tuple[str, str, str]


def _group(records: Iterable[MetricRecord]) -> Dict[Key, List[MetricRecord]]:
    groups: Dict[Key, List[MetricRecord]] = defaultdict(list)
    for r in records:
        groups[(r.dataset, r.model_name, r.metric_name)].append(r)
    return groups


def _correlate(
    metric_x: str,
    metric_y: str,
    granularity: Granularity,
    pairs: List[Tuple[str, float, float]],
) -> Correlation:
    points = tuple(CorrelationPoint(label=label, x=x, y=y) for label, x, y in pairs)
    try:
        r: Optional[float] = pearson_r([p.x for p in points], [p.y for p in points])
        note = ""
    except UndefinedCorrelation as e:
        r, note = None, str(e)
    return Correlation(
        metric_x=metric_x,
        metric_y=metric_y,
        granularity=granularity,
        r=r,
        point_count=len(points),
        points=points,
        note=note,
    )


def aggregate(
    records: Iterable[MetricRecord],
    correlations: Sequence[Tuple[str, str]] = (),
    granularity: Granularity = "system",
) -> AggregateReport:
    """
    Mean and population std per (dataset, model, metric) over non-degenerate
    records, best/second/worst markers per (dataset, metric), and Pearson r
    for each requested metric pair. Values are summed in interaction-id order.
    """
    groups = _group(records)
    cells: List[AggregateCell] = []
    for key in sorted(groups):
        dataset, model, metric = key
        rows = sorted(groups[key], key=lambda r: r.interaction_id)
        values = [r.value for r in rows if not r.degenerate and r.value is not None]
        mean: Optional[float] = None
        std: Optional[float] = None
        if values:
            mean, std = mean_std(values)
        cells.append(
            AggregateCell(
                dataset=dataset,
                model_name=model,
                metric_name=metric,
                mean=mean,
                std=std,
                count=len(values),
                degenerate_count=len(rows) - len(values),
            )
        )

    by_metric: Dict[Tuple[str, str], Dict[str, float]] = defaultdict(dict)
    for c in cells:
        if c.mean is not None:
            by_metric[(c.dataset, c.metric_name)][c.model_name] = c.mean
    markers = {key: rank_markers(means) for key, means in by_metric.items()}
    marked = []
    for c in cells:
        marker = markers.get((c.dataset, c.metric_name), {}).get(c.model_name)
        marked.append(c.model_copy(update={"marker": marker}) if marker else c)

    results = []
    for metric_x, metric_y in correlations:
        if granularity == "system":
            means = {(c.dataset, c.model_name, c.metric_name): c.mean for c in cells}
            systems = sorted({(c.dataset, c.model_name) for c in cells})
            pairs = []
            for dataset, model in systems:
                x = means.get((dataset, model, metric_x))
                y = means.get((dataset, model, metric_y))
                if x is not None and y is not None:
                    pairs.append((f"{dataset}/{model}", x, y))
        else:
            pairs = _interaction_pairs(groups, metric_x, metric_y)
        results.append(_correlate(metric_x, metric_y, granularity, pairs))
    return AggregateReport(cells=tuple(marked), correlations=tuple(results))


def _interaction_pairs(
    groups: Dict[Key, List[MetricRecord]], metric_x: str, metric_y: str
) -> List[Tuple[str, float, float]]:
    values: Dict[Tuple[str, str, str], Dict[str, float]] = defaultdict(dict)
    for (dataset, model, metric), rows in groups.items():
        if metric not in (metric_x, metric_y):
            continue
        for r in rows:
            if not r.degenerate and r.value is not None:
                values[(dataset, model, r.interaction_id)][metric] = r.value
    pairs = []
    for key in sorted(values):
        point = values[key]
        if metric_x in point and metric_y in point:
            pairs.append(("/".join(key), point[metric_x], point[metric_y]))
    return pairs


CSV_FIELDS = (
    "dataset",
    "model",
    "metric",
    "mean",
    "std",
    "count",
    "degenerate_count",
    "marker",
)


def _num(value: Optional[float]) -> str:
    return "" if value is None else repr(value)


def render_csv(report: AggregateReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for c in report.cells:
        writer.writerow(
            [
                c.dataset,
                c.model_name,
                c.metric_name,
                _num(c.mean),
                _num(c.std),
                c.count,
                c.degenerate_count,
                c.marker or "",
            ]
        )
    return out.getvalue()


def render_json(report: AggregateReport) -> str:
    """Line-delimited: one object per cell, then one per correlation (without points)."""
    lines = [json.dumps({"kind": "cell", **c.model_dump()}, ensure_ascii=False) for c in report.cells]
    for corr in report.correlations:
        row = corr.model_dump(exclude={"points"})
        lines.append(json.dumps({"kind": "correlation", **row}, ensure_ascii=False))
    return "".join(line + "\n" for line in lines)


def render_points_csv(report: AggregateReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("metric_x", "metric_y", "granularity", "label", "x", "y"))
    for corr in report.correlations:
        for p in corr.points:
            writer.writerow((corr.metric_x, corr.metric_y, corr.granularity, p.label, repr(p.x), repr(p.y)))
    return out.getvalue()


def _format_cell(c: Optional[AggregateCell]) -> str:
    if c is None or c.mean is None or c.std is None:
        return "n/a"
    text = f"{c.mean:.4f}<sub>{c.std:.4f}</sub>"
    if c.marker:
        before, after = MARKDOWN_STYLE[c.marker]
        text = f"{before}{text}{after}"
    return text


def render_markdown(report: AggregateReport, metric_order: Sequence[str] = ()) -> str:
    """
    One table per dataset: a row per metric, a column per model, mean with
    std as subscript. Best is bold, second underlined, worst italic and second
    worst italic with a dagger.
    """
    rank = {m: i for i, m in enumerate(metric_order)}
    parts: List[str] = []
    for dataset in report.datasets():
        cells = [c for c in report.cells if c.dataset == dataset]
        models = sorted({c.model_name for c in cells})
        metrics = sorted({c.metric_name for c in cells}, key=lambda m: (rank.get(m, len(rank)), m))
        lookup = {(c.model_name, c.metric_name): c for c in cells}
        parts.append(f"## {dataset or 'dataset'}\n")
        parts.append("| metric | " + " | ".join(models) + " |")
        parts.append("|---|" + "---|" * len(models))
        for metric in metrics:
            row = [_format_cell(lookup.get((m, metric))) for m in models]
            parts.append(f"| {metric} | " + " | ".join(row) + " |")
        degenerate = [
            f"{c.model_name}/{c.metric_name}: {c.degenerate_count}"
            for c in cells
            if c.degenerate_count
        ]
        if degenerate:
            parts.append("")
            parts.append("Degenerate records (excluded): " + ", ".join(degenerate))
        parts.append("")
    if report.correlations:
        parts.append("## correlations\n")
        parts.append("| metric x | metric y | granularity | r | points |")
        parts.append("|---|---|---|---|---|")
        for corr in report.correlations:
            r = "n/a" if corr.r is None else f"{corr.r:.4f}"
            parts.append(
                f"| {corr.metric_x} | {corr.metric_y} | {corr.granularity} | {r} | {corr.point_count} |"
            )
        parts.append("")
    return "\n".join(parts)


def write_report(
    out_dir: Union[str, Path],
    report: AggregateReport,
    formats: Sequence[str],
    metric_order: Sequence[str] = (),
) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    renderers = {
        "csv": ("report.csv", lambda: render_csv(report)),
        "json": ("report.jsonl", lambda: render_json(report)),
        "markdown": ("report.md", lambda: render_markdown(report, metric_order)),
    }
    for fmt in formats:
        name, render = renderers[fmt]
        path = out / name
        path.write_text(render(), encoding="utf-8")
        written.append(path)
    if report.correlations:
        path = out / "correlation_points.csv"
        path.write_text(render_points_csv(report), encoding="utf-8")
        written.append(path)
    for path in written:
        logger.info("wrote %s", path)
    return written
