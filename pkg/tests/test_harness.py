import json

import numpy as np
import pytest

from latentbeam import harness
from latentbeam.config import parse_config
from latentbeam.oracle import GmmDenoiser
from latentbeam.records import RunRecord, records_from_csv
from latentbeam.search import nfe_estimate

SWEEP = """\
problem:
  name: bimodal-1d
schedule:
  T: 10
search:
  method: bon
  B: 1
sweep:
  axes:
    "method,K,B": [[bon, 1, 8], [greedy, 8, 1], [dlbs, 2, 4], [bon, 1, 16], [greedy, 16, 1], [dlbs, 4, 4]]
  seeds: 5
"""


def strip(recs):
    return [r.without_timing() for r in recs]


def test_sweep_grid(tmp_path):
    recs = harness.run_sweep(parse_config(SWEEP), tmp_path)
    assert len(recs) == 30 and all(r.status == "ok" for r in recs)
    rows = records_from_csv((tmp_path / "results.csv").read_text())
    assert strip(rows) == strip(recs)
    assert len({(r.config_hash, r.seed) for r in recs}) == 30
    for r in recs:
        assert r.nfe == nfe_estimate(r.method, r.K, r.B, 10)
    assert (tmp_path / "problem.json").exists()


def test_resume_matches_uninterrupted(tmp_path):
    cfg = parse_config(SWEEP)
    full = harness.run_sweep(cfg, tmp_path / "a")
    with pytest.raises(harness.SweepInterrupted):
        harness.run_sweep(cfg, tmp_path / "b", stop_after=7)
    assert len(list((tmp_path / "b" / "records").iterdir())) == 7
    resumed = harness.run_sweep(cfg, tmp_path / "b", resume=True)
    assert strip(resumed) == strip(full)
    rows = (tmp_path / "b" / "results.csv").read_text().splitlines()
    assert len(rows) == 31


def test_refuses_existing_without_resume(tmp_path):
    cfg = parse_config(SWEEP)
    with pytest.raises(harness.SweepInterrupted):
        harness.run_sweep(cfg, tmp_path, stop_after=1)
    with pytest.raises(FileExistsError):
        harness.run_sweep(cfg, tmp_path)


def test_failed_cell_recorded_and_retried(tmp_path, monkeypatch):
    cfg = parse_config(SWEEP)
    real = harness.run_search

    def flaky(sc, *a, **kw):
        if sc.seed == 2 and sc.method == "dlbs":
            raise FloatingPointError("boom")
        return real(sc, *a, **kw)

    monkeypatch.setattr(harness, "run_search", flaky)
    recs = harness.run_sweep(cfg, tmp_path)
    failed = [r for r in recs if r.status == "failed"]
    assert len(failed) == 2 and all("boom" in r.error and r.final_reward is None for r in failed)
    monkeypatch.setattr(harness, "run_search", real)
    recs = harness.run_sweep(cfg, tmp_path, resume=True)
    assert all(r.status == "ok" for r in recs)


@pytest.mark.slow
def test_worker_count_does_not_change_records(tmp_path):
    cfg = parse_config(SWEEP)
    one = harness.run_sweep(cfg, tmp_path / "w1", workers=1)
    four = harness.run_sweep(cfg, tmp_path / "w4", workers=4)
    assert strip(one) == strip(four)


def test_run_single_with_trace(tmp_path):
    cfg = parse_config(SWEEP.split("sweep:")[0].replace("method: bon\n  B: 1", "method: dlbs\n  K: 2\n  B: 2")
                       + "output:\n  trace: true\n")
    rec = harness.run_single(cfg, tmp_path, seed_offset=3)
    assert rec.seed == 3 and rec.status == "ok"
    trace = json.loads((tmp_path / rec.trace_path).read_text())
    assert len(trace) == 9 and all(len(s["selected"]) == 2 for s in trace)
    saved = RunRecord.from_json((tmp_path / "records" / f"{rec.config_hash[:16]}_3.json").read_text())
    assert saved == rec


def test_output_root(tmp_path, monkeypatch):
    cfg = parse_config(SWEEP)
    monkeypatch.setenv(harness.ENV_OUT, str(tmp_path))
    assert harness.output_root(cfg) == tmp_path / cfg.config_hash()[:12]
    assert str(harness.output_root(cfg, "x")) == "x"


def test_estimation_errors_reference_is_exact(schedule):
    cfg = parse_config(SWEEP)
    gmm = cfg.gmm()
    z = harness.mid_trajectory_latents(gmm, schedule, 20, 50, 0)
    errs = harness.estimation_errors(GmmDenoiser(gmm, schedule), schedule, z, 20, [1, 20])
    assert errs[20] == 0.0 and errs[1] > 0


def test_loglog_slope():
    xs = [1, 2, 4, 8]
    assert harness.loglog_slope(xs, [3 * x**-1.5 for x in xs]) == pytest.approx(-1.5)


def test_ablation_writes_csv(tmp_path):
    text = SWEEP.split("sweep:")[0] + "ablation:\n  T_primes: [1, 2, 3]\n  latents: 30\n  runs: 3\n"
    rows = harness.run_ablation(parse_config(text), tmp_path)
    assert [r.T_prime for r in rows] == [1, 2, 3]
    assert all(np.isfinite(r.final_reward_mean) for r in rows)
    assert (tmp_path / "ablation.csv").read_bytes().count(b"\r\n") == 4
