"""Built-in accelerator configurations and the FPGA reference comparison.

The preset rows follow the 3x3 stages of ResNet18 on 32x32 inputs, whose
map width at a given channel count is fixed by the stage geometry:
64 maps -> 32, 128 -> 16, 256 -> 8, 512 -> 4. Each row carries the
latency and sustained-throughput figures measured on a VU13P FPGA
implementation of this architecture, for regression comparison; derived
numbers land within 2% of them.
"""

from __future__ import annotations

from dataclasses import dataclass

from .hwsim import CycleReport, LayerConfig, pipeline_report, speedup

#: map width per channel count for the 32x32-input residual-network stages
STAGE_WIDTH = {64: 32, 128: 16, 256: 8, 512: 4}


@dataclass(frozen=True)
class PresetRow:
    name: str
    layers: int
    maps: int            # in_maps == out_maps for these stages
    P: int
    frequency_hz: float
    reference_latency_us: float
    reference_images_per_s: float

    @property
    def width(self) -> int:
        return STAGE_WIDTH[self.maps]

    def layer_config(self) -> LayerConfig:
        return LayerConfig(width=self.width, in_maps=self.maps,
                           out_maps=self.maps, P=self.P,
                           frequency_hz=self.frequency_hz)

    def report(self) -> CycleReport:
        return pipeline_report([self.layer_config()] * self.layers)


PRESET_ROWS = (
    PresetRow("Conv64-64", 1, 64, 16, 240e6, 52.0, 19230),
    PresetRow("4xConv64-64", 4, 64, 16, 240e6, 208.0, 19230),
    PresetRow("3xConv128-128", 3, 128, 32, 240e6, 154.8, 19379),
    PresetRow("3xConv128-128", 3, 128, 64, 240e6, 103.2, 29069),
    PresetRow("3xConv256-256", 3, 256, 64, 250e6, 147.3, 20366),
    PresetRow("3xConv256-256", 3, 256, 128, 218e6, 112.8, 26595),
    PresetRow("3xConv512-512", 3, 512, 128, 208e6, 177.0, 16949),
)


def performance_rows(rows=None) -> list[dict]:
    """Derived latency/throughput/speedup per preset row, with references."""
    out = []
    for row in rows if rows is not None else PRESET_ROWS:
        cfg = row.layer_config()
        rep = row.report()
        sp = speedup(cfg)
        lat_us = rep.latency_seconds * 1e6
        ips = rep.throughput_images_per_s
        out.append({
            "name": row.name,
            "layers": row.layers,
            "P": row.P,
            "frequency_mhz": row.frequency_hz / 1e6,
            "latency_us": lat_us,
            "images_per_s": ips,
            "reference_latency_us": row.reference_latency_us,
            "reference_images_per_s": row.reference_images_per_s,
            "latency_deviation_pct":
                100.0 * (lat_us - row.reference_latency_us) / row.reference_latency_us,
            "throughput_deviation_pct":
                100.0 * (ips - row.reference_images_per_s) / row.reference_images_per_s,
            "speedup_exact": sp.exact_ratio,
            "speedup_processing_term": sp.asymptotic,
        })
    return out


_COLUMNS = (
    ("name", "{}"), ("layers", "{}"), ("P", "{}"), ("frequency_mhz", "{:.0f}"),
    ("latency_us", "{:.1f}"), ("images_per_s", "{:.0f}"),
    ("reference_latency_us", "{:.1f}"), ("reference_images_per_s", "{:.0f}"),
    ("latency_deviation_pct", "{:+.2f}"), ("speedup_exact", "{:.0f}"),
    ("speedup_processing_term", "{}"),
)


def performance_table(rows=None, style: str = "markdown") -> str:
    """Render the preset comparison as markdown or CSV."""
    data = performance_rows(rows)
    names = [c for c, _ in _COLUMNS]
    if style == "csv":
        lines = [",".join(names)]
        for r in data:
            lines.append(",".join(fmt.format(r[c]) for c, fmt in _COLUMNS))
        return "\n".join(lines) + "\n"
    if style != "markdown":
        raise ValueError(f"unknown table style {style!r}")
    lines = ["| " + " | ".join(names) + " |",
             "|" + "---|" * len(names)]
    for r in data:
        lines.append("| " + " | ".join(fmt.format(r[c]) for c, fmt in _COLUMNS) + " |")
    return "\n".join(lines) + "\n"
