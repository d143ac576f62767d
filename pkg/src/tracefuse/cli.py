"""tracefuse: extract, match, fuse and validate bursts of multi-run MPI traces.

Logs go to standard error; machine-readable summaries to standard output.
Exit status: 0 success, 1 data error, 2 usage/file/config error, 3 trace
or CSV parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .burstcsv import BurstCsvError, read_burst_csv, write_burst_csv
from .config import ConfigError, PipelineConfig
from .fusion import emit_prv, fuse
from .matching import match_executions
from .matchset import DIRECT, PATTERN, STRUCTURAL, MatchSet, recovery
from .model import DerivedConfig
from .paraver import (
    PAPI_CODES,
    ExtractConfig,
    TraceFormatError,
    extract_bursts,
    mpi_pcf,
    parse_pcf,
    parse_prv,
    papi_type,
)
from .synth import SynthConfig, SynthConfigError, generate_suite, write_suite
from .validation import validate

log = logging.getLogger("tracefuse")

EXIT_OK, EXIT_DATA, EXIT_USAGE, EXIT_PARSE = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _read(path: Path) -> str:
    try:
        return path.read_text()
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except IsADirectoryError:
        raise UsageError(f"is a directory: {path}") from None


def _write(path: Path, text: str) -> None:
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _emit(summary: dict) -> None:
    json.dump(summary, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.config:
        cfg = PipelineConfig.from_json(_read(Path(args.config)))
    overrides: dict = {}
    if args.threshold is not None:
        overrides["threshold"] = args.threshold
    if args.weights is not None:
        try:
            overrides["weights"] = [float(w) for w in _csv_list(args.weights)]
        except ValueError:
            raise ConfigError(f"--weights expects t,s,p numbers, got {args.weights!r}") from None
    if args.collectives is not None:
        overrides["collectives"] = _csv_list(args.collectives)
    if args.mpi_types is not None:
        try:
            overrides["mpi_types"] = [int(t) for t in _csv_list(args.mpi_types)]
        except ValueError:
            raise ConfigError(f"--mpi-types expects integer ids, got {args.mpi_types!r}") from None
    if args.fence is not None:
        overrides["fence"] = args.fence == "on"
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.log_level is not None:
        overrides["log_level"] = args.log_level.upper()
    return cfg.merged(overrides)


def _load_csvs(paths, cfg: PipelineConfig):
    out = []
    for p in paths:
        ds = read_burst_csv(_read(Path(p)), cfg.collectives)
        log.info("read %s: exec %s, %d bursts", p, ds.exec_id, ds.n_bursts)
        out.append(ds)
    return out


def _builtin_pcf():
    pcf = mpi_pcf()
    for name in PAPI_CODES:
        pcf.event_labels[papi_type(name)] = name
    return pcf


# ------------------------------------------------------------------ commands


def cmd_extract(args, cfg: PipelineConfig) -> int:
    prv = Path(args.prv)
    text = _read(prv)
    pcf_path = Path(args.pcf) if args.pcf else prv.with_suffix(".pcf")
    if pcf_path.exists() or args.pcf:
        pcf = parse_pcf(_read(pcf_path))
    else:
        log.warning("no .pcf next to %s; using the built-in MPI/PAPI dictionary", prv)
        pcf = _builtin_pcf()
    trace = parse_prv(text)
    ds = extract_bursts(
        trace,
        pcf,
        ExtractConfig(cfg.mpi_types, cfg.collectives, derived=DerivedConfig()),
        exec_id=args.exec_id or prv.stem,
        counter_set=args.counter_set or "",
    )
    _write(Path(args.output), write_burst_csv(ds))
    _emit(
        {
            "exec_id": ds.exec_id,
            "ranks": len(ds.ranks),
            "bursts": ds.n_bursts,
            "counters": list(ds.counter_names),
            "output": str(args.output),
        }
    )
    return EXIT_OK


def cmd_match(args, cfg: PipelineConfig) -> int:
    if len(args.inputs) < 2:
        raise UsageError("match needs at least two burst CSVs")
    executions = _load_csvs(args.inputs, cfg)
    ms = match_executions(
        executions, cfg.similarity(), cfg.collectives, workers=cfg.workers, stage2=not args.stage1_only
    )
    if args.truth:
        truth = MatchSet.from_json(_read(Path(args.truth)))
        ms.stats["recovery"] = {
            "stage1": recovery(ms, truth, (DIRECT, PATTERN)),
            "combined": recovery(ms, truth, (DIRECT, PATTERN, STRUCTURAL)),
        }
    _write(Path(args.output), ms.to_json())
    _emit({"output": str(args.output), "groups": len(ms.groups), **ms.stats})
    return EXIT_OK


def cmd_fuse(args, cfg: PipelineConfig) -> int:
    executions = _load_csvs(args.inputs, cfg)
    ms = MatchSet.from_json(_read(Path(args.matches)))
    missing = set(ms.executions) ^ {e.exec_id for e in executions}
    if missing:
        raise ValueError(f"match set and inputs disagree on executions: {sorted(missing)}")
    fused = fuse(executions, ms, prefix=cfg.prefix)
    if not fused.rows:
        log.warning("no group spans every execution; the fused table is empty")
    out = Path(args.output)
    _write(out, fused.to_csv())
    _write(out.with_name(out.name + ".manifest.json"), fused.manifest_json())
    _write(out.with_name(out.name + ".partial.json"), fused.partial_report_json())
    summary = {
        "base_exec": fused.base_exec,
        "rows": len(fused.rows),
        "columns": len(fused.columns),
        "counter_columns": fused.counter_columns,
        "partial_groups": len(fused.partial_groups),
        "output": str(out),
    }
    if args.emit_prv:
        base = next(e for e in executions if e.exec_id == fused.base_exec)
        header = pcf_base = None
        if args.base_prv:
            header = parse_prv(_read(Path(args.base_prv))).header.line
        if args.base_pcf:
            pcf_base = parse_pcf(_read(Path(args.base_pcf)))
        prv_text, pcf_text = emit_prv(
            fused,
            header,
            pcf_base,
            base_counter_names=base.counter_names,
            new_type_base=cfg.new_type_base,
            mpi_events=args.mpi_events,
        )
        prv_path = Path(args.emit_prv)
        _write(prv_path, prv_text)
        _write(prv_path.with_suffix(".pcf"), pcf_text)
        summary["prv"] = str(prv_path)
    _emit(summary)
    return EXIT_OK


def cmd_validate(args, cfg: PipelineConfig) -> int:
    if len(args.inputs) < 2:
        raise UsageError("validate needs at least two burst CSVs")
    executions = _load_csvs(args.inputs, cfg)
    ms = MatchSet.from_json(_read(Path(args.matches)))
    report = validate(executions, ms, fence=cfg.fence)
    out = Path(args.output)
    _write(out, report.to_json())
    _write(out.with_suffix(".txt"), report.to_table())
    if args.scores_dir:
        d = Path(args.scores_dir)
        d.mkdir(parents=True, exist_ok=True)
        for f in report.features:
            (d / f"{f.feature}.csv").write_text(report.score_csv(f.feature))
    sys.stderr.write(report.to_table())
    _emit(
        {
            "output": str(out),
            "base_exec": report.base_exec,
            "matched_bursts": report.matched_bursts,
            "features": len(report.features),
        }
    )
    return EXIT_OK


def cmd_synth(args, cfg: PipelineConfig) -> int:
    sc = SynthConfig.from_json(_read(Path(args.synth_config))) if args.synth_config else SynthConfig()
    if args.seed is not None:
        sc = SynthConfig.from_dict({**sc.to_dict(), "seed": args.seed})
    datasets, truth = generate_suite(sc)
    out = Path(args.outdir)
    write_suite(datasets, truth, out, sc)
    for ds in datasets:
        _write(out / f"{ds.exec_id}.csv", write_burst_csv(ds))
    _emit(
        {
            "outdir": str(out),
            "executions": [d.exec_id for d in datasets],
            "bursts": {d.exec_id: d.n_bursts for d in datasets},
            "truth_groups": len(truth.groups),
            "seed": sc.seed,
        }
    )
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON; flags override it")
    common.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument("--threshold", type=float, help="Stage 2 acceptance threshold on S")
    common.add_argument("--weights", help="Stage 2 weights t,s,p")
    common.add_argument("--collectives", help="collective call names, comma separated")
    common.add_argument("--mpi-types", help="MPI event type ids, comma separated")
    common.add_argument("--fence", choices=("on", "off"), help="outlier fence in validation")
    common.add_argument("--workers", type=int, help="processes for per-rank matching")

    parser = argparse.ArgumentParser(prog="tracefuse", description=__doc__.split("\n")[0], parents=[common])
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("extract", parents=[common], help="Paraver trace -> burst CSV")
    p.add_argument("prv")
    p.add_argument("--pcf", help="event dictionary (default: sibling .pcf)")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--exec-id", help="execution label (default: trace file stem)")
    p.add_argument("--counter-set", help="counter-set name recorded in the CSV")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("match", parents=[common], help="match bursts across executions")
    p.add_argument("inputs", nargs="+", help="burst CSVs, one per execution")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--truth", help="ground-truth match set; adds recovery to the stats")
    p.add_argument("--stage1-only", action="store_true")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("fuse", parents=[common], help="merge matched bursts into one table")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-m", "--matches", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--emit-prv", help="also write a synthetic .prv (and .pcf) here")
    p.add_argument("--base-prv", help="take the .prv header from this trace")
    p.add_argument("--base-pcf", help="extend this .pcf instead of the built-in one")
    p.add_argument("--mpi-events", action="store_true", help="write MPI entry/exit records too")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("validate", parents=[common], help="quality metrics for same-counter runs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-m", "--matches", required=True)
    p.add_argument("-o", "--output", required=True, help="report JSON; a .txt table goes next to it")
    p.add_argument("--scores-dir", help="write per-feature per-burst score CSVs here")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic suite")
    p.add_argument("synth_config", nargs="?", help="SynthConfig JSON (default: built-in)")
    p.add_argument("-o", "--outdir", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK

    try:
        cfg = _config(args)
    except (ConfigError, UsageError) as exc:
        sys.stderr.write(f"tracefuse: {exc}\n")
        return EXIT_USAGE
    logging.basicConfig(
        level=getattr(logging, cfg.log_level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    if args.dump_config:
        sys.stdout.write(cfg.to_json())
        return EXIT_OK
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    try:
        return args.func(args, cfg)
    except (UsageError, ConfigError, SynthConfigError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (TraceFormatError, BurstCsvError) as exc:
        log.error("%s", exc)
        return EXIT_PARSE
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
