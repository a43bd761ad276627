"""Cycle-accurate model of the multiplexer-based convolution layer block.

One layer block is a memory block (two BRAMs) plus a processing unit with P
accumulator registers. Execution per image:

1. Copy: every row of every input map moves from BRAM1 to BRAM2, one row
   per cycle (``width * in_maps`` cycles). The copy applies the horizontal
   window for that map's kept kernel column; with stride 2 a multiplexer
   pair network keeps alternate columns.
2. Processing: output maps are produced P at a time. One pass computes one
   output row for one P-wide group by reading one windowed row per input
   map per cycle (``in_maps`` cycles per pass). The first read of a pass
   raises FI, which makes the registers load instead of accumulate; each
   register adds the row or its negation as selected by its weight bit.
   Totals ``width * in_maps * out_maps / P`` cycles.
3. Writeback: after a pass, Enable_s raises and the P registers drain one
   per cycle through ReLU into the next layer's BRAM1 (``width * out_maps``
   cycles over the whole layer). Itter_done pulses once when the last pass
   has drained.

Total cycles per layer:

    width*in_maps + width*in_maps*out_maps/P + width*out_maps

versus ``3*width**2*in_maps*out_maps/P`` for a row-sequential architecture
that revisits each output row once per kernel row; the processing terms
differ by exactly 3*width.

Stride 2 halves both output axes (even indices kept). The block still
schedules every stride-1 row through processing and writeback (dropped
rows consume their cycles without storing), so the cycle formula is
unchanged. Rows fold zeros in from beyond the vertical edges; the valid
interior is width-2 columns wide and is re-embedded centered (zero
borders) when written into the next layer's wider BRAM words.

The register accumulation is bit-identical to ``conv2d_fixed``; the drained
output equals ``relu(conv2d_fixed(...))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .binarize import BinaryWeightPlane
from .convolution import ConvConfig, conv2d_fixed, relu
from .fixedpoint import DEFAULT_FORMAT, FixedPointFormat, add_arrays, negate_array
from .pruning import kept_position
from .tensors import FIXED, FeatureTensor

IDLE = "idle"
COPYING = "copying"
PROCESSING = "processing"
WRITEBACK = "writeback"
DONE = "done"


class SimulationError(RuntimeError):
    """A phase was invoked out of order or a config is unusable."""


class PortContractError(SimulationError):
    """A BRAM port served more than one access of a kind in one cycle."""


@dataclass(frozen=True)
class LayerConfig:
    """One 3x3 convolution layer block (square width x width maps)."""

    width: int
    in_maps: int
    out_maps: int
    P: int
    stride: int = 1
    fmt: FixedPointFormat = DEFAULT_FORMAT
    frequency_hz: float = 240e6

    def __post_init__(self):
        if self.width < 1 or self.in_maps < 1 or self.out_maps < 1:
            raise ValueError("dimensions must be >= 1")
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        if not 1 <= self.P <= self.out_maps:
            raise ValueError("P must satisfy 1 <= P <= out_maps")
        if self.out_maps % self.P:
            raise ValueError(f"P={self.P} must divide out_maps={self.out_maps}")
        if self.frequency_hz <= 0:
            raise ValueError("frequency must be positive")

    @property
    def conv_config(self) -> ConvConfig:
        return ConvConfig(stride=self.stride, padding_mode="hw_window")

    @property
    def out_rows(self) -> int:
        return self.conv_config.out_shape(self.width, self.width)[0]

    @property
    def out_cols(self) -> int:
        return self.conv_config.out_shape(self.width, self.width)[1]

    @property
    def groups(self) -> int:
        return self.out_maps // self.P

    @property
    def passes(self) -> int:
        # every stride-1 row is scheduled, for each P-wide output group
        return self.groups * self.width


def layer_cycles(cfg: LayerConfig) -> int:
    """Copy + processing + writeback cycles for one image through one layer."""
    j, k, l, p = cfg.width, cfg.in_maps, cfg.out_maps, cfg.P
    return j * k + j * k * l // p + j * l


def baseline_cycles(cfg: LayerConfig) -> int:
    """Cycles for the row-sequential reference architecture."""
    j, k, l, p = cfg.width, cfg.in_maps, cfg.out_maps, cfg.P
    return 3 * j * j * k * l // p


def processing_cycles(cfg: LayerConfig) -> int:
    return cfg.width * cfg.in_maps * cfg.out_maps // cfg.P


@dataclass(frozen=True)
class SpeedupReport:
    exact_ratio: float   # baseline / whole layer-block formula
    asymptotic: int      # baseline / processing term == 3 * width


def speedup(cfg: LayerConfig) -> SpeedupReport:
    return SpeedupReport(
        exact_ratio=baseline_cycles(cfg) / layer_cycles(cfg),
        asymptotic=3 * cfg.width,
    )


@dataclass
class CyclesBreakdown:
    copy: int = 0
    processing: int = 0
    writeback: int = 0

    @property
    def total(self) -> int:
        return self.copy + self.processing + self.writeback


class CycleTrace:
    """Optional per-cycle recorder: (cycle, layer, phase, FI, Enable_s, Itter_done)."""

    COLUMNS = ("cycle", "layer", "phase", "fi", "enable_s", "itter_done")

    def __init__(self):
        self.rows = []

    def emit(self, cycle, layer, phase, fi, enable_s, itter_done):
        self.rows.append((cycle, layer, phase, int(fi), int(enable_s), int(itter_done)))

    def to_csv(self) -> str:
        lines = [",".join(self.COLUMNS)]
        lines += [",".join(str(v) for v in row) for row in self.rows]
        return "\n".join(lines) + "\n"


class BlockRam:
    """Word-addressed memory of fixed-point row vectors.

    Enforces the physical port budget: at most one read and one write per
    cycle. Out-of-band bulk loading (image ingest) bypasses the ports.
    """

    def __init__(self, words: int, lanes: int, name: str = "bram"):
        self.words = words
        self.lanes = lanes
        self.name = name
        self.data = np.zeros((words, lanes), dtype=np.int64)
        self._last_read = None
        self._last_write = None

    def _check(self, addr):
        if not 0 <= addr < self.words:
            raise SimulationError(f"{self.name}: address {addr} out of range")

    def read(self, addr: int, cycle: int) -> np.ndarray:
        self._check(addr)
        if self._last_read == cycle:
            raise PortContractError(f"{self.name}: second read in cycle {cycle}")
        self._last_read = cycle
        return self.data[addr].copy()

    def write(self, addr: int, row: np.ndarray, cycle: int):
        self._check(addr)
        if self._last_write == cycle:
            raise PortContractError(f"{self.name}: second write in cycle {cycle}")
        if len(row) != self.lanes:
            raise SimulationError(
                f"{self.name}: row of {len(row)} lanes into {self.lanes}-lane words"
            )
        self._last_write = cycle
        self.data[addr] = row

    def load(self, addr: int, row: np.ndarray):
        self._check(addr)
        self.data[addr] = row


class LayerBlockSim:
    """Micro-stepped simulation of one layer block processing one image."""

    def __init__(self, cfg: LayerConfig, plane: BinaryWeightPlane,
                 layer_index: int = 0, trace: CycleTrace | None = None,
                 start_cycle: int = 0):
        if (plane.kernel_w, plane.kernel_h) != (3, 3):
            raise SimulationError("the layer block implements 3x3 kernels")
        if (plane.in_maps, plane.out_maps) != (cfg.in_maps, cfg.out_maps):
            raise SimulationError("weight plane maps do not match the layer config")
        if plane.P != cfg.P:
            raise SimulationError("weight plane group width must equal P")
        self.cfg = cfg
        self.plane = plane
        self.layer_index = layer_index
        self.trace = trace
        self.cycle = start_cycle

        r = cfg.width
        self._taps = [kept_position(k, 3, 3) for k in range(cfg.in_maps)]
        if cfg.stride == 1:
            lanes2 = max(r - 2, 0)
        else:
            lanes2 = (r + 1) // 2
        self.bram1 = BlockRam(cfg.in_maps * r, r, f"L{layer_index}.bram1")
        self.bram2 = BlockRam(cfg.in_maps * r, lanes2, f"L{layer_index}.bram2")
        self._reg_lanes = cfg.out_cols
        self.registers = np.zeros((cfg.P, self._reg_lanes), dtype=np.int64)

        self.phase = IDLE
        self.fi = False
        self.enable_s = False
        self.itter_done = False
        self.fi_count = 0
        self.enable_s_count = 0
        self.itter_done_count = 0
        self._pass_index = 0

        self._out = np.zeros((cfg.out_rows, cfg.out_cols, cfg.out_maps), dtype=np.int64)
        self._pre = np.zeros_like(self._out)

    # -- timed micro-step -------------------------------------------------

    def _tick(self, phase):
        self.cycle += 1
        if self.trace is not None:
            self.trace.emit(self.cycle, self.layer_index, phase,
                            self.fi, self.enable_s, self.itter_done)
        return self.cycle

    # -- image ingest (untimed: previous layer or external load) ----------

    def load_input(self, x: FeatureTensor):
        cfg = self.cfg
        if x.kind != FIXED or x.fmt != cfg.fmt:
            raise SimulationError("input must be fixed-point in the layer format")
        if x.shape != (cfg.width, cfg.width, cfg.in_maps):
            raise SimulationError(
                f"expected {cfg.width}x{cfg.width}x{cfg.in_maps} input, got {x.shape}"
            )
        for k in range(cfg.in_maps):
            for i in range(cfg.width):
                self.bram1.load(k * cfg.width + i, x.data[i, :, k])
        self.phase = COPYING

    def accept_external_fill(self):
        """Arm the block after its BRAM1 was filled by the previous layer."""
        if self.phase != IDLE:
            raise SimulationError(f"cannot re-arm in phase {self.phase!r}")
        self.phase = COPYING

    # -- phase 1: BRAM1 -> BRAM2 row copy ----------------------------------

    def _copied_row(self, row: np.ndarray, k: int) -> np.ndarray:
        col, _ = self._taps[k]
        if self.cfg.stride == 1:
            return row[col:col + self.bram2.lanes]
        # stride 2: the mux pairs keep one column parity; the kept kernel
        # columns 0 and 2 both live on the even phase, column 1 on the odd
        out = np.zeros(self.bram2.lanes, dtype=np.int64)
        seq = row[(1 if col == 1 else 0)::2]
        out[:len(seq)] = seq
        return out

    def copy_phase(self) -> int:
        """Move every (map, row) word into BRAM2, one per cycle."""
        if self.phase != COPYING:
            raise SimulationError(f"copy_phase in phase {self.phase!r}")
        cfg = self.cfg
        start = self.cycle
        for k in range(cfg.in_maps):
            for i in range(cfg.width):
                c = self._tick(COPYING)
                row = self.bram1.read(k * cfg.width + i, c)
                self.bram2.write(k * cfg.width + i, self._copied_row(row, k), c)
        self.phase = PROCESSING
        return self.cycle - start

    # -- phase 2: one pass = one output row for one P-wide group ----------

    def _window_lanes(self, word: np.ndarray, k: int) -> np.ndarray:
        if self.cfg.stride == 1:
            return word
        col, _ = self._taps[k]
        start = 1 if col == 2 else 0
        return word[start:start + self._reg_lanes]

    def processing_phase(self) -> int:
        """Accumulate one pass: in_maps reads, FI on the first one."""
        if self.phase != PROCESSING:
            raise SimulationError(f"processing_phase in phase {self.phase!r}")
        cfg = self.cfg
        group, out_row = divmod(self._pass_index, cfg.width)
        start = self.cycle
        for k in range(cfg.in_maps):
            self.fi = k == 0
            if self.fi:
                self.fi_count += 1
            c = self._tick(PROCESSING)
            _, row_off = self._taps[k]
            src = out_row + row_off - 1
            if 0 <= src < cfg.width:
                word = self.bram2.read(k * cfg.width + src, c)
                lanes = self._window_lanes(word, k)
            else:
                lanes = np.zeros(self._reg_lanes, dtype=np.int64)
            bits = self.plane.lane_word(group, k)
            neg = negate_array(lanes, cfg.fmt)
            addend = np.where(bits[:, None], lanes[None, :], neg[None, :])
            base = np.zeros_like(self.registers) if self.fi else self.registers
            self.registers = add_arrays(base, addend, cfg.fmt)
        self.fi = False
        self.enable_s = True
        self.enable_s_count += 1
        self.phase = WRITEBACK
        return self.cycle - start

    # -- phase 3: drain registers through ReLU -----------------------------

    def writeback_phase(self, dst: BlockRam | None = None,
                        dst_col_offset: int = 0) -> int:
        """Write the P registers one per cycle; advance to the next pass.

        With stride 2, odd rows still drain (consuming their cycles) but
        are not stored. ``dst`` is the next layer's BRAM1; its words may be
        wider than the register, in which case the row lands at
        ``dst_col_offset`` and the borders stay zero.
        """
        if self.phase != WRITEBACK or not self.enable_s:
            raise SimulationError("writeback requires Enable_s")
        cfg = self.cfg
        group, out_row = divmod(self._pass_index, cfg.width)
        keep = cfg.stride == 1 or out_row % 2 == 0
        stored_row = out_row // cfg.stride
        start = self.cycle
        for p in range(cfg.P):
            c = self._tick(WRITEBACK)
            l = group * cfg.P + p
            if keep:
                pre = self.registers[p]
                post = np.maximum(pre, 0)
                self._pre[stored_row, :, l] = pre
                self._out[stored_row, :, l] = post
                if dst is not None:
                    word = np.zeros(dst.lanes, dtype=np.int64)
                    word[dst_col_offset:dst_col_offset + self._reg_lanes] = post
                    dst.write(l * cfg.out_rows + stored_row, word, c)
        self.enable_s = False
        self._pass_index += 1
        if self._pass_index == cfg.passes:
            self.itter_done = True
            self.itter_done_count += 1
            if self.trace is not None and self.trace.rows:
                last = self.trace.rows[-1]
                self.trace.rows[-1] = last[:5] + (1,)
            self.phase = DONE
        else:
            self.itter_done = False
            self.phase = PROCESSING
        return self.cycle - start

    # -- whole layer --------------------------------------------------------

    def run(self, dst: BlockRam | None = None, dst_col_offset: int = 0) -> CyclesBreakdown:
        cycles = CyclesBreakdown()
        cycles.copy = self.copy_phase()
        while self.phase != DONE:
            cycles.processing += self.processing_phase()
            cycles.writeback += self.writeback_phase(dst, dst_col_offset=dst_col_offset)
        return cycles

    def output_tensor(self) -> FeatureTensor:
        return FeatureTensor(self._out.copy(), self.cfg.fmt)

    def preactivation_tensor(self) -> FeatureTensor:
        """Register contents as drained, before ReLU."""
        return FeatureTensor(self._pre.copy(), self.cfg.fmt)


def run_layer(x: FeatureTensor, cfg: LayerConfig, plane: BinaryWeightPlane,
              trace: CycleTrace | None = None) -> tuple[FeatureTensor, CyclesBreakdown]:
    """Simulate one image through one layer block."""
    sim = LayerBlockSim(cfg, plane, trace=trace)
    sim.load_input(x)
    breakdown = sim.run()
    return sim.output_tensor(), breakdown


@dataclass(frozen=True)
class CycleReport:
    """Pipeline timing: latency adds per-layer cycles, throughput is set by
    the slowest layer thanks to double-buffered BRAM1s."""

    per_layer_cycles: tuple
    frequency_hz: float

    @property
    def latency_cycles(self) -> int:
        return sum(self.per_layer_cycles)

    @property
    def bottleneck_cycles(self) -> int:
        return max(self.per_layer_cycles)

    @property
    def latency_seconds(self) -> float:
        return self.latency_cycles / self.frequency_hz

    @property
    def throughput_images_per_s(self) -> float:
        return self.frequency_hz / self.bottleneck_cycles

    def to_markdown(self) -> str:
        head = "| layer | cycles |\n|---|---|\n"
        body = "".join(
            f"| {i} | {c} |\n" for i, c in enumerate(self.per_layer_cycles)
        )
        tail = (
            f"\nlatency: {self.latency_cycles} cycles = "
            f"{self.latency_seconds * 1e6:.2f} us at {self.frequency_hz / 1e6:.0f} MHz, "
            f"throughput: {self.throughput_images_per_s:.0f} images/s\n"
        )
        return head + body + tail

    def to_csv(self) -> str:
        lines = ["layer,cycles"]
        lines += [f"{i},{c}" for i, c in enumerate(self.per_layer_cycles)]
        lines.append(f"latency_cycles,{self.latency_cycles}")
        lines.append(f"latency_us,{self.latency_seconds * 1e6:.3f}")
        lines.append(f"throughput_images_per_s,{self.throughput_images_per_s:.1f}")
        return "\n".join(lines) + "\n"


@dataclass
class PipelineResult:
    report: CycleReport
    outputs: list = field(default_factory=list)
    breakdowns: list = field(default_factory=list)


def _chain_check(stages):
    for t, ((cfg_a, _), (cfg_b, _)) in enumerate(zip(stages, stages[1:])):
        if cfg_a.out_maps != cfg_b.in_maps:
            raise SimulationError(
                f"stage {t} feeds {cfg_a.out_maps} maps into stage {t + 1} "
                f"expecting {cfg_b.in_maps}"
            )
        if cfg_a.out_rows != cfg_b.width or cfg_a.out_cols > cfg_b.width:
            raise SimulationError(
                f"stage {t} output {cfg_a.out_rows}x{cfg_a.out_cols} does not "
                f"embed in stage {t + 1} width {cfg_b.width}"
            )
    freqs = {cfg.frequency_hz for cfg, _ in stages}
    if len(freqs) != 1:
        raise SimulationError("pipeline stages must share one clock frequency")
    fmts = {cfg.fmt for cfg, _ in stages}
    if len(fmts) != 1:
        raise SimulationError("pipeline stages must share one fixed-point format")


def embed_columns(t: FeatureTensor, width: int) -> FeatureTensor:
    """Center the valid interior in a wider zero row (re-padding)."""
    pad = width - t.cols
    left = pad // 2
    data = np.zeros((t.rows, width, t.maps), dtype=t.data.dtype)
    data[:, left:left + t.cols, :] = t.data
    return FeatureTensor(data, t.fmt)


def pipeline_report(cfgs) -> CycleReport:
    """Analytical timing for a pipeline of layer configs."""
    cfgs = list(cfgs)
    freqs = {cfg.frequency_hz for cfg in cfgs}
    if len(freqs) != 1:
        raise SimulationError("pipeline stages must share one clock frequency")
    return CycleReport(tuple(layer_cycles(c) for c in cfgs), freqs.pop())


def run_pipeline(stages, images=(), mode: str = "simulate",
                 trace: CycleTrace | None = None) -> PipelineResult:
    """Push images through stacked layer blocks.

    ``simulate`` micro-steps every layer (and records the measured cycle
    breakdowns); ``analytic`` computes outputs functionally and takes the
    timing from the cycle formula. Both re-embed each layer's valid
    interior into the next layer's row width.
    """
    stages = [(cfg, plane) for cfg, plane in stages]
    if not stages:
        raise SimulationError("pipeline needs at least one stage")
    _chain_check(stages)
    if mode not in ("simulate", "analytic"):
        raise ValueError(f"unknown mode {mode!r}")

    result = PipelineResult(report=pipeline_report([cfg for cfg, _ in stages]))
    for image in images:
        if mode == "simulate":
            sims = [LayerBlockSim(cfg, plane, layer_index=t, trace=trace)
                    for t, (cfg, plane) in enumerate(stages)]
            sims[0].load_input(image)
            breakdowns = []
            for t, sim in enumerate(sims):
                if t + 1 < len(sims):
                    nxt = sims[t + 1]
                    offset = (nxt.cfg.width - sim.cfg.out_cols) // 2
                    breakdowns.append(sim.run(dst=nxt.bram1, dst_col_offset=offset))
                    nxt.cycle = sim.cycle  # shared timeline across the chain
                    nxt.accept_external_fill()
                else:
                    breakdowns.append(sim.run())
            result.outputs.append(sims[-1].output_tensor())
            result.breakdowns.append(breakdowns)
        else:
            x = image
            for t, (cfg, plane) in enumerate(stages):
                y = relu(conv2d_fixed(x, plane, cfg.conv_config, cfg.fmt))
                x = embed_columns(y, stages[t + 1][0].width) if t + 1 < len(stages) else y
            result.outputs.append(x)
    return result
