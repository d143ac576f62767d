from __future__ import annotations

import json
from collections import Counter

import numpy as np
import pytest

from tracefuse.matching import match_executions
from tracefuse.matchset import DIRECT, check_partition, recovery
from tracefuse.model import ExecutionDataset
from tracefuse.paraver import counter_records, extract_bursts, parse_pcf, parse_prv
from tracefuse.synth import (
    PRESETS,
    Perturbations,
    SynthConfig,
    SynthConfigError,
    emit_as_prv,
    expected_rel_diff,
    generate_suite,
    write_suite,
)
from tracefuse.validation import validate

SMALL = dict(ranks=2, iterations=10)


def _refs(datasets):
    return {d.exec_id: [b.ref for b in d.bursts()] for d in datasets}


def test_presets_shipped():
    assert set(PRESETS) == {"INS_MIX", "OPS_SET", "OPS_CYC"}
    assert all(len(v) > 0 for v in PRESETS.values())


def test_zero_perturbation_all_direct():
    datasets, truth = generate_suite(SynthConfig(**SMALL))
    assert len({tuple(b.pattern for b in d.bursts()) for d in datasets}) == 1
    ms = match_executions(datasets)
    assert all(g.stage == DIRECT for g in ms.groups)
    assert recovery(ms, truth) == 1.0
    assert [d.counter_set_name for d in datasets] == ["INS_MIX", "OPS_SET", "OPS_CYC"]
    assert all(set(d.counter_names) == set(PRESETS[d.counter_set_name]) for d in datasets)


@pytest.mark.parametrize(
    "perturb",
    [
        Perturbations(),
        Perturbations(extra_burst_rate=0.1),
        Perturbations(drop_burst_rate=0.1),
        Perturbations(pattern_drift=0.5, time_jitter=0.2),
    ],
)
def test_truth_is_a_partition(perturb):
    datasets, truth = generate_suite(SynthConfig(**SMALL, perturbations=perturb, seed=3))
    assert check_partition(truth, _refs(datasets)) == []
    by_id = {d.exec_id: d for d in datasets}
    for g in truth.groups:
        # truth never pairs bursts of different ranks
        assert len({by_id[e].burst(*r).task_id for e, r in g.members.items()}) == 1


def test_seed_determinism_and_sensitivity():
    cfg = SynthConfig(**SMALL, perturbations=Perturbations(0.1, 0.1, 0.1, 0.1), seed=7)
    a, ta = generate_suite(cfg)
    b, tb = generate_suite(cfg)
    assert a == b and ta.to_json() == tb.to_json()
    c, _ = generate_suite(SynthConfig(**SMALL, perturbations=cfg.perturbations, seed=8))
    assert a != c


def test_write_suite_byte_identical(tmp_path):
    cfg = SynthConfig(**SMALL, perturbations=Perturbations(extra_burst_rate=0.05), seed=1)
    for out in ("a", "b"):
        write_suite(*generate_suite(cfg), tmp_path / out, cfg)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["config.json", "run1.pcf", "run1.prv", "run2.pcf", "run2.prv", "run3.pcf", "run3.prv", "truth.json"]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    again = SynthConfig.from_json((tmp_path / "a" / "config.json").read_text())
    assert again == cfg


def test_emit_round_trip_and_conservation():
    cfg = SynthConfig(ranks=2, iterations=12, executions=("INS_MIX",), perturbations=Perturbations(0.2, 0.05, 0.05, 0.3))
    (ds,), _ = generate_suite(cfg)
    assert ds.n_bursts >= 100
    prv, pcf_text = emit_as_prv(ds)
    tr, pcf = parse_prv(prv), parse_pcf(pcf_text)
    back = extract_bursts(tr, pcf, exec_id=ds.exec_id, counter_set=ds.counter_set_name)
    assert back == ds
    sums = Counter()
    for (rank, _), d in counter_records(tr, pcf).items():
        for k, v in d.items():
            sums[(rank, k)] += v
    expected = Counter()
    for b in ds.bursts():
        for k, v in b.counters.items():
            expected[(b.task_id, k)] += v
    assert sums == expected


def test_empty_dataset_header_only():
    prv, pcf = emit_as_prv(ExecutionDataset("run1", "INS_MIX", {}, ()))
    assert prv.count("\n") == 1 and prv.startswith("#Paraver")
    assert parse_pcf(pcf).event_labels


@pytest.mark.parametrize(
    "doc, msg",
    [
        ({"seed": "abc"}, "seed"),
        ({"ranks": 0}, "ranks"),
        ({"executions": ["NOPE"]}, "unknown counter set"),
        ({"perturbations": {"extra_burst_rate": 2}}, "extra_burst_rate"),
        ({"perturbations": {"bogus": 1}}, "malformed"),
        ({"templates": [["MPI_Nope"]]}, "unknown MPI call"),
        ({"whatever": 1}, "unknown config keys"),
    ],
)
def test_config_errors(doc, msg):
    with pytest.raises(SynthConfigError, match=msg):
        SynthConfig.from_dict(doc)


def test_config_json_errors():
    with pytest.raises(SynthConfigError):
        SynthConfig.from_json("[1, 2]")
    with pytest.raises(SynthConfigError):
        SynthConfig.from_json("{")


def test_recovery_non_increasing_in_extra_rate():
    means = []
    for rate in (0.0, 0.03, 0.12):
        rs = []
        for seed in range(10):
            cfg = SynthConfig(ranks=3, iterations=25, executions=("INS_MIX",) * 3, seed=seed,
                              perturbations=Perturbations(extra_burst_rate=rate))
            datasets, truth = generate_suite(cfg)
            rs.append(recovery(match_executions(datasets), truth))
        means.append(float(np.mean(rs)))
    assert means[0] == 1.0
    assert means[0] >= means[1] >= means[2]


def test_noise_matches_analytic_expectation():
    sigma = 0.05
    cfg = SynthConfig.from_dict(
        {
            "ranks": 4,
            "iterations": 60,
            "executions": ["INS_MIX", "INS_MIX"],
            "counter_models": {"PAPI_L1_DCM": {"noise": sigma}},
        }
    )
    datasets, _ = generate_suite(cfg)
    report = validate(datasets, match_executions(datasets), fence=False)
    l1 = next(f for f in report.features if f.feature == "PAPI_L1_DCM")
    assert l1.rel_diff == pytest.approx(expected_rel_diff(sigma), rel=0.10)


def test_expected_rel_diff_small_sigma():
    # for small spreads E|1 - e^{sZ}| ≈ s sqrt(2/pi)
    s = 0.001
    assert expected_rel_diff(s) == pytest.approx(s * np.sqrt(2) * np.sqrt(2 / np.pi), rel=1e-3)
    assert expected_rel_diff(0.0) == 0.0
    json.dumps(SynthConfig().to_dict())
