"""spindle: an SPMD partitioning compiler for tensor programs.

Programs are straight-line SSA tensor functions over a named device mesh.
Partitioning tactics rewrite them into tiled loops, which lower to collective
communication ops and finally to per-device local functions. A simulator
estimates runtime and peak memory, and a search pass picks shardings
automatically.
"""
from .interp import interpret, random_inputs
from .ir import (
    AnyAction,
    Func,
    FuncBuilder,
    Mesh,
    Module,
    Op,
    RangeType,
    Region,
    ShapeError,
    Sum,
    TensorType,
    Tile,
)
from .models import MODELS, build_model
from .parser import ParseError, parse_module
from .printer import print_module
from .rewrite import (
    Conflict,
    PartitionError,
    apply_atomic,
    apply_tile,
    can_tile,
    conflict_scan,
    propagate,
)
from .schedule import (
    FIRST_DIVISIBLE_DIM,
    REPLICATED,
    AutomaticPartition,
    ManualPartition,
    Partitioner,
    TacticReport,
    cookbook_schedule,
    schedule_stages,
    tactic_from_json,
)
from .search import auto_partition
from .sim import (
    BUILTIN_SPECS,
    CostReport,
    MachineSpec,
    load_machine_spec,
    simulate,
    total_flops,
)
from .spmd import (
    ShardingSpec,
    collective_counts,
    fuse_collectives,
    localize,
    lower_to_spmd,
)
from .spmd_interp import DivergenceError, relative_error, spmd_interpret
from .verify import VerifyError, verify_module

__all__ = [
    "AnyAction", "Func", "FuncBuilder", "Mesh", "Module", "Op", "RangeType",
    "Region", "ShapeError", "Sum", "TensorType", "Tile",
    "ParseError", "parse_module", "print_module",
    "interpret", "random_inputs",
    "MODELS", "build_model",
    "Conflict", "PartitionError", "apply_atomic", "apply_tile", "can_tile",
    "conflict_scan", "propagate",
    "FIRST_DIVISIBLE_DIM", "REPLICATED", "AutomaticPartition",
    "ManualPartition", "Partitioner", "TacticReport", "cookbook_schedule",
    "schedule_stages", "tactic_from_json",
    "auto_partition",
    "BUILTIN_SPECS", "CostReport", "MachineSpec", "load_machine_spec",
    "simulate", "total_flops",
    "ShardingSpec", "collective_counts", "fuse_collectives", "localize",
    "lower_to_spmd",
    "DivergenceError", "relative_error", "spmd_interpret",
    "VerifyError", "verify_module",
]
