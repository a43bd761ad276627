"""Command-line interface.

Subcommands: mask, quantize, infer, simulate, report, train-toy. Every run
is deterministic given its flags and seed (MXCV_SEED overrides the default
seed). Exit codes: 0 success, 1 I/O or file-format failure, 2 usage,
3 verification failure (cross-check mismatch or training divergence).
"""

from __future__ import annotations

import functools
import sys

import click
import numpy as np

from .binarize import BC, FULL32, PRUNED_BC, binarize, memory_footprint
from .convolution import OpCounters, conv2d_pruned, conv2d_pruned_binary, relu
from .hwsim import (CycleTrace, LayerConfig, SimulationError, embed_columns,
                    run_pipeline)
from .modelio import (ImportedModel, MagicError, ModelBlobError, config_from_json,
                      export_blob, import_blob, ingest_float_weights, masks_for,
                      read_feature_tensor, write_feature_tensor)
from .pruning import build_mask, coverage_stats, random_mask
from .tensors import FeatureTensor
from .training import (TrainingDivergedError, build_toy_network, history_to_csv,
                       make_toy_dataset, sweep_random_removal, sweep_to_csv, train)

EXIT_IO = 1
EXIT_VERIFY = 3


def cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (OSError, ModelBlobError) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_IO)
        except TrainingDivergedError as e:
            click.echo(f"training diverged: {e}", err=True)
            sys.exit(EXIT_VERIFY)
    return wrapper


def _parse_kernel(text: str) -> tuple[int, int]:
    try:
        w, h = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise click.UsageError(f"--kernel expects WxH, got {text!r}")
    if w < 1 or h < 1:
        raise click.UsageError("kernel extents must be >= 1")
    return w, h


@click.group()
def main():
    """Multiplication-free pruned binary convolutions and their hardware model."""


# ---------------------------------------------------------------------------


@main.command()
@click.option("--kernel", default="3x3", show_default=True, help="Kernel extents WxH.")
@click.option("--kmax", type=int, required=True, help="Input feature maps.")
@click.option("--lmax", type=int, required=True, help="Output feature maps.")
@click.option("--random-m", type=int, default=None,
              help="Random scheme: positions removed per slice.")
@click.option("--seed", type=int, default=0, envvar="MXCV_SEED", show_default=True)
@click.option("--csv", "as_csv", is_flag=True, help="Emit the histogram as CSV.")
@cli_errors
def mask(kernel, kmax, lmax, random_m, seed, as_csv):
    """Summarize a pruning mask: kept fraction, removal, kernel coverage."""
    kw, kh = _parse_kernel(kernel)
    area = kw * kh
    if kmax < 1 or lmax < 1:
        raise click.UsageError("--kmax and --lmax must be >= 1")
    if random_m is not None:
        if not 0 <= random_m < area:
            raise click.UsageError(
                f"--random-m must be in [0, {area}) for a {kernel} kernel")
        m = random_mask(kw, kh, kmax, lmax, random_m, seed)
        kept = area - random_m
    else:
        m = build_mask(kw, kh, kmax, lmax)
        kept = 1
    stats = coverage_stats(m)
    removal = 100.0 * (area - kept) / area
    click.echo(f"scheme: {m.scheme}")
    click.echo(f"kept fraction {kept}/{area}, removal {removal:.1f}%")
    click.echo(f"positions used: {stats['positions_used']} of {area}")
    hist = stats["per_position_histogram"]
    if as_csv:
        click.echo("col,row,count")
        for col in range(kw):
            for row in range(kh):
                click.echo(f"{col},{row},{hist[col, row]}")
    else:
        click.echo(f"per-position counts (cols x rows):\n{hist}")


# ---------------------------------------------------------------------------


def _load_model(path: str) -> ImportedModel:
    with open(path, "rb") as fh:
        return import_blob(fh.read())


def _planes_of(model: ImportedModel):
    if model.planes is not None:
        return model.planes
    if model.latents is not None:
        return [binarize(lat, layer.P)
                for layer, lat in zip(model.config.layers, model.latents)]
    raise click.UsageError("model carries neither sign bits nor latent weights")


@main.command()
@click.argument("model_in")
@click.argument("model_out")
@click.option("--float-weights", default=None,
              help="Flat weight file when MODEL_IN is a JSON network config.")
@cli_errors
def quantize(model_in, model_out, float_weights):
    """Binarize a model's latent weights into packed sign bits."""
    with open(model_in, "rb") as fh:
        raw = fh.read()
    try:
        model = import_blob(raw)
    except MagicError:
        # JSON config + external flat weights
        config = config_from_json(raw.decode("utf-8"))
        if float_weights is None:
            raise click.UsageError(
                "a JSON config input needs --float-weights for the latent values")
        with open(float_weights, "rb") as fh:
            ingest = ingest_float_weights(fh.read(), config)
        if ingest.clipped_values:
            click.echo(f"clipped {ingest.clipped_values} values into [-1, 1]", err=True)
        model = ImportedModel(config=config, latents=ingest.latents)

    planes = _planes_of(model)
    blob = export_blob(model.config, planes=planes)
    with open(model_out, "wb") as fh:
        fh.write(blob)

    full = memory_footprint(model.config, FULL32)
    packed = memory_footprint(model.config, PRUNED_BC)
    bc_only = memory_footprint(model.config, BC)
    click.echo(f"wrote {model_out}: {len(blob)} bytes")
    click.echo(f"footprint full32: {full} B, bc: {bc_only} B, pruned_bc: {packed} B")
    click.echo(f"compression full32/bc: {full / bc_only:.1f}, "
               f"full32/pruned_bc: {full / packed:.1f}")


# ---------------------------------------------------------------------------


def _infer_chain(model: ImportedModel, x: FeatureTensor, engine: str,
                 counters: OpCounters):
    config = model.config
    masks = masks_for(config)
    planes = _planes_of(model) if engine != "float" else None
    for t, layer in enumerate(config.layers):
        cfg = LayerConfig(width=layer.width, in_maps=layer.in_maps,
                          out_maps=layer.out_maps, P=layer.P, stride=layer.stride,
                          fmt=layer.fmt).conv_config
        if engine == "float":
            if model.latents is None:
                raise click.UsageError("float engine needs latent weights")
            y = relu(conv2d_pruned(x, model.latents[t].weights, masks[t], cfg,
                                   counters))
        else:
            plane = planes[t]
            if engine == "fixed":
                if x.kind == "real":
                    x = FeatureTensor.quantized(x, layer.fmt)
                elif x.fmt != layer.fmt:  # formats may change between layers
                    x = FeatureTensor.quantized(x.to_real(), layer.fmt)
            y = relu(conv2d_pruned_binary(x, plane, cfg, counters))
        if t + 1 < len(config.layers):
            x = embed_columns(y, config.layers[t + 1].width)
        else:
            x = y
    return x


@main.command()
@click.argument("model")
@click.argument("input_file")
@click.argument("output_file")
@click.option("--engine", type=click.Choice(["float", "binary", "fixed"]),
              default="binary", show_default=True)
@cli_errors
def infer(model, input_file, output_file, engine):
    """Run an image through the network and report the operation counts."""
    m = _load_model(model)
    with open(input_file, "rb") as fh:
        x = read_feature_tensor(fh.read())
    layer0 = m.config.layers[0]
    if x.shape != (layer0.width, layer0.width, layer0.in_maps):
        raise click.UsageError(
            f"input shape {x.shape} does not match the first layer "
            f"({layer0.width}x{layer0.width}x{layer0.in_maps})")
    counters = OpCounters()
    y = _infer_chain(m, x, engine, counters)
    with open(output_file, "wb") as fh:
        fh.write(write_feature_tensor(y))
    click.echo(f"engine: {engine}")
    click.echo(f"multiplications: {counters.multiplications}")
    click.echo(f"additions: {counters.additions}")
    if engine == "fixed":
        click.echo(f"saturations: {counters.saturations}")


# ---------------------------------------------------------------------------


def _hw_stages(model: ImportedModel, frequency_hz: float, layer_count=None):
    layers = model.config.layers[:layer_count]
    if any(layer.kernel != "3x3" for layer in layers):
        raise click.UsageError("the layer block simulates 3x3 kernels only")
    planes = _planes_of(model)[:len(layers)]
    cfgs = [LayerConfig(width=l.width, in_maps=l.in_maps, out_maps=l.out_maps,
                        P=l.P, stride=l.stride, fmt=l.fmt,
                        frequency_hz=frequency_hz) for l in layers]
    return list(zip(cfgs, planes))


@main.command()
@click.argument("model")
@click.option("--frequency", type=float, default=240.0, show_default=True,
              help="Clock frequency in MHz.")
@click.option("--layers", "layer_count", type=int, default=None,
              help="Simulate only the first N layers.")
@click.option("--trace", "trace_file", default=None,
              help="Write a per-cycle CSV trace to this file.")
@click.option("--check", is_flag=True,
              help="Cross-verify the simulator against the functional engine.")
@click.option("--seed", type=int, default=0, envvar="MXCV_SEED", show_default=True)
@click.option("--csv", "as_csv", is_flag=True, help="Report as CSV.")
@cli_errors
def simulate(model, frequency, layer_count, trace_file, check, seed, as_csv):
    """Cycle-accurate run of the layer pipeline on a seeded random image."""
    m = _load_model(model)
    stages = _hw_stages(m, frequency * 1e6, layer_count)
    layer0 = stages[0][0]
    rng = np.random.default_rng(seed)
    image = FeatureTensor.quantized(
        FeatureTensor(rng.uniform(-1, 1, (layer0.width, layer0.width,
                                          layer0.in_maps))), layer0.fmt)
    trace = CycleTrace() if trace_file else None
    try:
        result = run_pipeline(stages, [image], mode="simulate", trace=trace)
    except SimulationError as e:
        click.echo(f"simulation failed: {e}", err=True)
        sys.exit(EXIT_VERIFY)
    if trace_file:
        with open(trace_file, "w") as fh:
            fh.write(trace.to_csv())
    click.echo(result.report.to_csv() if as_csv else result.report.to_markdown())
    if check:
        functional = run_pipeline(stages, [image], mode="analytic")
        if not np.array_equal(result.outputs[0].data, functional.outputs[0].data):
            click.echo("check FAILED: simulator and functional engine disagree",
                       err=True)
            sys.exit(EXIT_VERIFY)
        click.echo("check passed: simulator output is bit-exact")


# ---------------------------------------------------------------------------


@main.command()
@click.option("--table2", is_flag=True, required=True,
              help="Reproduce the FPGA latency/outflow comparison table.")
@click.option("--rows", "row_sel", default=None,
              help="Comma-separated preset row indices; empty for header only.")
@click.option("--csv", "as_csv", is_flag=True, help="Emit CSV instead of markdown.")
@cli_errors
def report(table2, row_sel, as_csv):
    """Derived latency, throughput, and speedup for the preset configurations."""
    from .presets import PRESET_ROWS, performance_table
    rows = None
    if row_sel is not None:
        indices = [int(p) for p in row_sel.split(",") if p.strip() != ""]
        rows = [PRESET_ROWS[i] for i in indices]
    click.echo(performance_table(rows, style="csv" if as_csv else "markdown"))


# ---------------------------------------------------------------------------


@main.command("train-toy")
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--lr", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, default=0, envvar="MXCV_SEED", show_default=True)
@click.option("--sweep-m", default=None,
              help="Sweep removed-per-slice values, e.g. '0..8' or '0,4,8'.")
@click.option("--out", "out_file", default=None, help="Write the CSV here.")
@cli_errors
def train_toy(epochs, lr, seed, sweep_m, out_file):
    """Train the toy pruned+binarized net; emit per-epoch CSV curves."""
    dataset = make_toy_dataset(seed=seed)
    if sweep_m is not None:
        if ".." in sweep_m:
            lo, hi = (int(p) for p in sweep_m.split(".."))
            m_values = list(range(lo, hi + 1))
        else:
            m_values = [int(p) for p in sweep_m.split(",")]
        if any(not 0 <= m < 9 for m in m_values):
            raise click.UsageError("sweep values must be in [0, 9) for 3x3 kernels")
        rows = sweep_random_removal(dataset, m_values, seeds=[seed],
                                    epochs=epochs, lr=lr)
        text = sweep_to_csv(rows)
    else:
        net = build_toy_network(dataset.train_x.shape[3], classes=dataset.classes,
                                seed=seed)
        history = train(net, dataset, epochs=epochs, lr=lr, seed=seed)
        text = history_to_csv(history)
    if out_file:
        with open(out_file, "w") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":
    main()
