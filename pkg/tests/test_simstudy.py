import json

import numpy as np
import pytest

from compmarks.envelope import build_ensemble, envelope_test
from compmarks.errors import ConfigError, EmptyInputError
from compmarks.pattern import GLOBAL_PERM, GROUND, LOCAL_PERM, MARKS, build_scenario, sample_poisson, scenario_preset, stream
from compmarks.simstudy import (
    StudyConfig,
    aggregate,
    desk_config,
    detection_metrics,
    load_checkpoint,
    run_pattern,
    run_study,
)
from compmarks.summary import KernelSpec, RGrid, StatisticSpec


def tiny(**kw):
    base = dict(scenario=scenario_preset("II", intensity=120), n_patterns=3, permutations=19,
                grid=RGrid.regular(0.2, 24), seed=4,
                statistics=(StatisticSpec("t1", "clr", 0), StatisticSpec("t2", "clr", 1)))
    base.update(kw)
    return StudyConfig(**base)


def test_detection_metrics():
    d = detection_metrics([0.01, 0.2, 0.04, 0.5, 0.05], [True, True, False, False, False])
    assert (d.true_positives, d.false_negatives, d.false_positives, d.true_negatives) == (1, 1, 2, 1)
    assert d.tpr == 0.5 and d.fpr == pytest.approx(2 / 3) and d.rate == 0.6
    with pytest.raises(EmptyInputError):
        detection_metrics([], [])
    with pytest.raises(ConfigError):
        detection_metrics([0.1], [True, False])


def test_config_validation():
    with pytest.raises(ConfigError):
        tiny(alpha=1.5)
    with pytest.raises(ConfigError):
        tiny(track="normalized", statistics=(StatisticSpec("t3", "clr", 0),))
    with pytest.raises(Exception):
        tiny(statistics=(StatisticSpec("t1", "ilr", 2),))
    assert tiny().config_hash() == tiny(workers=3).config_hash()
    assert tiny().config_hash() != tiny(seed=5).config_hash()
    assert desk_config("I").scenario.intensity == 200 and desk_config("III").n_patterns == 50


def test_record_matches_envelope_test():
    """The batched study path agrees with the one-off envelope test."""
    cfg = tiny()
    rec = run_pattern(cfg, 1)
    sc = cfg.scenario
    xy = sample_poisson(sc.intensity, sc.window, stream(cfg.seed, GROUND, 1))
    pat, region = build_scenario(sc, xy, stream(cfg.seed, MARKS, 1))
    assert rec["n"] == pat.n and rec["region"] == region.tolist()
    st = cfg.statistics[0]
    ens = build_ensemble(pat, st, cfg.grid, cfg.kernel, 19, stream(cfg.seed, GLOBAL_PERM, 1))
    assert rec["global"][st.label(3)] == envelope_test(ens, 0.05).p_value
    for i in (0, pat.n // 2):
        ens = build_ensemble(pat, cfg.statistics[1].at(i), cfg.grid, cfg.kernel, 19,
                             stream(cfg.seed, LOCAL_PERM, 1, i))
        expected = envelope_test(ens, 0.05).p_value if ens.valid.any() else None
        assert rec["local"][cfg.statistics[1].label(3)][i] == expected


def test_parallel_and_resume_identical(tmp_path):
    cfg = tiny()
    serial = run_study(cfg).to_json()
    assert run_study(tiny(workers=2)).to_json() == serial
    ck = tmp_path / "ck.jsonl"
    first = tiny(n_patterns=3)
    run_study(first, checkpoint=str(ck))
    lines = ck.read_text().splitlines()
    ck.write_text("\n".join(lines[:3]) + "\n" + lines[3][:10])  # truncated write
    assert sorted(load_checkpoint(str(ck), first.config_hash())) == [0, 1]
    resumed = run_study(first, checkpoint=str(ck))
    assert resumed.to_json() == serial and resumed.telemetry["resumed_patterns"] == 2
    with pytest.raises(ConfigError):
        run_study(tiny(seed=9), checkpoint=str(ck))


def test_report_excludes_telemetry():
    rep = run_study(tiny(n_patterns=1, local=False))
    body = json.loads(rep.to_json())
    assert "telemetry" not in body and set(body["config"]) >= {"seed", "grid", "kernel"}
    assert rep.telemetry["workers"] == 1


def test_aggregate_counts():
    cfg = StudyConfig(scenario=scenario_preset("III"), n_patterns=2, permutations=19,
                      statistics=(StatisticSpec("t1", "clr", 0), StatisticSpec("t1", "clr", 2)))
    recs = [
        {"pattern": 0, "n": 4, "region": [0, 0, 1, -1],
         "global": {"t1_clr_1_1": 0.01, "t1_clr_3_3": 0.5},
         "local": {"t1_clr_1_1": [0.01, 0.3, 0.02, 0.04], "t1_clr_3_3": [0.5, 0.02, 0.01, None]}},
        {"pattern": 1, "n": 2, "region": [1, -1],
         "global": {"t1_clr_1_1": 0.2, "t1_clr_3_3": None},
         "local": {"t1_clr_1_1": [0.5, 0.9], "t1_clr_3_3": [0.03, 0.6]}},
    ]
    stats, attr = aggregate(recs, cfg)
    s1 = stats["t1_clr_1_1"]
    assert s1["global"] == {"tests": 2, "rejections": 1, "rate": 0.5}
    assert s1["local"]["regions"]["1"] == {"points": 2, "detected": 1, "rate": 0.5}
    assert s1["local"]["background"] == {"points": 2, "detected": 1, "rate": 0.5}
    s3 = stats["t1_clr_3_3"]
    assert s3["global"]["tests"] == 1 and s3["local"]["untestable_points"] == 1
    assert s3["local"]["regions"]["2"] == {"points": 2, "detected": 2, "rate": 1.0}
    assert attr["1"] == {"target_component": 1, "detected": 2, "attributed": 1, "rate": 0.5}
    assert attr["2"] == {"target_component": 3, "detected": 2, "attributed": 2, "rate": 1.0}


def test_null_scenario_is_roughly_calibrated():
    cfg = StudyConfig(scenario=scenario_preset("I", intensity=80), n_patterns=12, permutations=39,
                      grid=RGrid.regular(0.2, 32), kernel=KernelSpec(bandwidth=0.04), seed=2)
    rep = run_study(cfg)
    bg = rep.local_rate("t1_clr_1_1", "background")
    assert 0.01 <= bg <= 0.10
    assert np.isfinite(rep.global_rate("t1_clr_1_1"))
