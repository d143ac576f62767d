"""Burst-level fusion of MPI executions recorded with different counter sets."""

from .burstcsv import read_burst_csv, write_burst_csv
from .fusion import FusedDataset, emit_prv, fuse, select_base
from .matching import match_executions
from .matchset import MatchGroup, MatchSet, recovery
from .model import Burst, CommContext, ExecutionDataset
from .paraver import extract_bursts, parse_pcf, parse_prv
from .stage2 import SimilarityWeights
from .synth import SynthConfig, emit_as_prv, generate_suite
from .validation import validate

__all__ = [
    "Burst",
    "CommContext",
    "ExecutionDataset",
    "FusedDataset",
    "MatchGroup",
    "MatchSet",
    "SimilarityWeights",
    "SynthConfig",
    "emit_as_prv",
    "emit_prv",
    "extract_bursts",
    "fuse",
    "generate_suite",
    "match_executions",
    "parse_pcf",
    "parse_prv",
    "read_burst_csv",
    "recovery",
    "select_base",
    "validate",
    "write_burst_csv",
]
