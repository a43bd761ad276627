"""Multiplication-free pruned binary convolutions and their hardware model.

The package covers the full path from a dense float convolution oracle,
through rule-based pruning and sign binarization, to an integer-exact
functional engine and a cycle-accurate simulation of the multiplexer-based
FPGA layer pipeline, plus a binary model container and a toy trainer.
"""

from .binarize import (BC, FULL32, PRUNED_BC, BinaryWeightPlane, LatentWeights,
                       bc_update, binarize, memory_footprint)
from .convolution import (ConvConfig, OpCounters, conv2d_dense, conv2d_fixed,
                          conv2d_pruned, conv2d_pruned_binary, relu)
from .fixedpoint import (DEFAULT_FORMAT, FixedPointFormat, FixedPointValue,
                         fx_add, fx_negate, quantize)
from .hwsim import (BlockRam, CycleReport, CycleTrace, CyclesBreakdown,
                    LayerBlockSim, LayerConfig, PortContractError,
                    SimulationError, baseline_cycles, layer_cycles,
                    pipeline_report, run_layer, run_pipeline, speedup)
from .modelio import (ChecksumError, ConfigError, CountMismatchError,
                      ImportedModel, MagicError, ModelBlobError, export_blob,
                      import_blob, ingest_float_weights)
from .network import LayerSpec, NetworkConfig, PruneScheme
from .pruning import (PruneMask, apply_mask, build_mask, coverage_stats,
                      full_mask, kept_position, random_mask)
from .tensors import FeatureTensor, KernelTensor

__version__ = "0.1.0"
