"""Run reports: per-layer rows, model aggregates, JSON / text / CSV renderings."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .metrics import DeltaStats, aggregate_stats


@dataclass
class LayerReport:
    name: str
    elements: int
    granularity: str
    chosen_alpha: float | None
    baseline_metric: float | None
    best_metric: float | None
    sign_rate: float
    cos_sim: float
    mse: float
    delta_l2: float
    post_norm: float
    quant_norm: float
    zero_delta: bool = False

    @classmethod
    def from_stats(cls, name: str, granularity: str, stats: DeltaStats, **search) -> LayerReport:
        return cls(
            name=name,
            elements=stats.elements,
            granularity=granularity,
            chosen_alpha=search.get("chosen_alpha"),
            baseline_metric=search.get("baseline_metric"),
            best_metric=search.get("best_metric"),
            sign_rate=stats.sign_rate,
            cos_sim=stats.cos_sim,
            mse=stats.mse,
            delta_l2=stats.delta_l2,
            post_norm=stats.post_norm,
            quant_norm=stats.quant_norm,
            zero_delta=bool(search.get("zero_delta", False)),
        )

    def stats(self) -> DeltaStats:
        return DeltaStats(self.elements, self.sign_rate, self.cos_sim, self.mse,
                          self.delta_l2, self.post_norm, self.quant_norm)


@dataclass
class RunReport:
    config: dict
    per_layer: list[LayerReport]
    aggregate: dict = field(default_factory=dict)
    wall_seconds: float | None = None

    def __post_init__(self):
        if not self.aggregate:
            self.aggregate = aggregate_stats([r.stats() for r in self.per_layer])

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "per_layer": [asdict(r) for r in self.per_layer],
            "aggregate": self.aggregate,
            "wall_seconds": self.wall_seconds,
        }

    @classmethod
    def from_dict(cls, data: dict) -> RunReport:
        return cls(
            config=data["config"],
            per_layer=[LayerReport(**row) for row in data["per_layer"]],
            aggregate=data["aggregate"],
            wall_seconds=data.get("wall_seconds"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> RunReport:
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=[f.name for f in fields(LayerReport)], lineterminator="\n")
        writer.writeheader()
        for row in self.per_layer:
            writer.writerow(asdict(row))
        return buf.getvalue()

    def to_text(self) -> str:
        header = ["layer", "elements", "granularity", "alpha", "SignRate (%)", "CosSim", "MSE", "dW L2"]
        rows = [
            [r.name, str(r.elements), r.granularity, _fmt_alpha(r.chosen_alpha),
             f"{100 * r.sign_rate:.2f}%", f"{r.cos_sim:.4f}", f"{r.mse:.6e}", f"{r.delta_l2:.6g}"]
            for r in self.per_layer
        ]
        agg = self.aggregate
        rows.append(["TOTAL", str(agg["elements"]), "", "", f"{100 * agg['sign_rate']:.2f}%",
                     f"{agg['cos_sim']:.4f}", f"{agg['mse']:.6e}", f"{agg['delta_l2']:.6g}"])
        text = format_table(header, rows)
        text += (f"\nper-layer mean: SignRate {100 * agg['sign_rate_layer_mean']:.2f}%"
                 f"  CosSim {agg['cos_sim_layer_mean']:.4f}\n")
        return text


def _fmt_alpha(alpha: float | None) -> str:
    return "-" if alpha is None else f"{alpha:.4f}"


def format_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    lines = []
    for i, row in enumerate([header, *rows]):
        cells = [c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(cells).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_report(report: RunReport, path, csv_path=None) -> None:
    """JSON at ``path``, aligned text table at ``path`` with a ``.txt`` suffix."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json())
    path.with_suffix(".txt").write_text(report.to_text())
    if csv_path is not None:
        Path(csv_path).write_text(report.to_csv())
