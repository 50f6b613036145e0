"""Running searches, sweeps and the lookahead ablation, with persistence.

Every run is written as its own JSON record under ``records/``; the sweep
index ``results.csv`` is rebuilt atomically from those records in the
sweep's cell order, so an interrupted sweep resumed with ``resume=True``
ends with the same CSV as an uninterrupted one (timing aside).
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .config import RunConfig, canonical_hash
from .oracle import GaussianMixture, GmmDenoiser, gmm_exact_sample, gmm_marginal
from .records import RunRecord, atomic_write, finite_or_none, records_to_csv
from .sampler import lookahead_estimate
from .schedule import NoiseSchedule
from .search import SearchConfig, expand_axes, run_search

log = logging.getLogger(__name__)

ENV_OUT = "LATENTBEAM_OUT"
DEFAULT_OUT = "runs"


def output_root(cfg: RunConfig, out: str | None = None) -> Path:
    """``out`` if given, else the config's ``output.dir``, else ``$LATENTBEAM_OUT/<hash>``."""
    if out:
        return Path(out)
    if cfg.sections["output"]["dir"]:
        return Path(cfg.sections["output"]["dir"])
    return Path(os.environ.get(ENV_OUT, DEFAULT_OUT)) / cfg.config_hash()[:12]


def cell_hash(cfg: RunConfig, sc: SearchConfig) -> str:
    over = {f.name: getattr(sc, f.name) for f in fields(sc) if f.name != "seed"}
    return cfg.config_hash(**over)


def record_name(config_hash: str, seed: int) -> str:
    return f"{config_hash[:16]}_{seed}"


@lru_cache(maxsize=16)
def _built(sections_json: str):
    cfg = RunConfig(json.loads(sections_json))
    schedule = cfg.schedule()
    return cfg, GmmDenoiser(cfg.gmm(), schedule), schedule, cfg.reward()


def execute(sections_json: str, sc: SearchConfig, trace_dir: str | None = None) -> RunRecord:
    """One search cell as a record; failures become ``status="failed"`` records.

    Module-level so process-pool workers can run it.
    """
    cfg, denoiser, schedule, reward = _built(sections_json)
    h = cell_hash(cfg, sc)
    base = dict(
        config_hash=h, seed=int(sc.seed), method=sc.method, K=int(sc.K), B=int(sc.B),
        T_prime=int(sc.T_prime), eta=float(sc.eta), solver=sc.solver, problem_name=cfg.problem_name,
    )
    steps: list = []
    trace_path = None
    if trace_dir is not None:
        trace_path = os.path.join("traces", record_name(h, sc.seed) + ".json")
    start = time.perf_counter()
    try:
        res = run_search(sc, denoiser, schedule, reward, trace=steps if trace_dir is not None else False)
        rec = RunRecord(**base, final_reward=finite_or_none(res.best_reward), nfe=int(res.nfe),
                        wall_clock_s=res.wall_clock_s, trace_path=trace_path)
    except Exception as exc:  # a failed cell must not stop a sweep
        log.error("run %s seed %d failed: %s", h[:12], sc.seed, exc)
        rec = RunRecord(**base, final_reward=None, nfe=0, wall_clock_s=time.perf_counter() - start,
                        trace_path=trace_path, status="failed", error=f"{type(exc).__name__}: {exc}")
    if trace_dir is not None:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)
        atomic_write(os.path.join(trace_dir, record_name(h, sc.seed) + ".json"),
                     json.dumps([asdict(s) for s in steps], allow_nan=True) + "\n")
    return rec


def write_problem(cfg: RunConfig, out: Path) -> None:
    """Mixture and reward target next to the records, for audit."""
    out.mkdir(parents=True, exist_ok=True)
    body = {"name": cfg.problem_name, "gmm": cfg.sections["problem"]["gmm"], "reward": cfg.sections["reward"]}
    atomic_write(out / "problem.json", json.dumps(body, indent=1) + "\n")


def _sections_json(cfg: RunConfig) -> str:
    return json.dumps(cfg.sections, sort_keys=True)


def run_single(cfg: RunConfig, out: Path, seed_offset: int = 0) -> RunRecord:
    sc = cfg.search_config()
    sc = replace(sc, seed=sc.seed + seed_offset)
    trace_dir = str(out / "traces") if cfg.sections["output"]["trace"] else None
    rec = execute(_sections_json(cfg), sc, trace_dir)
    write_problem(cfg, out)
    (out / "records").mkdir(parents=True, exist_ok=True)
    atomic_write(out / "records" / (record_name(rec.config_hash, rec.seed) + ".json"), rec.to_json())
    return rec


# -------------------------------------------------------------------- sweep


def sweep_cells(cfg: RunConfig, seed_offset: int = 0) -> list[SearchConfig]:
    sw = cfg.sections["sweep"]
    seeds = sw["seeds"]
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    seeds = [s + seed_offset for s in seeds]
    axes = {}
    for name, values in sw["axes"].items():
        axes[name] = [tuple(v) if isinstance(v, list) else v for v in values]
    return list(expand_axes(cfg.search_config(), axes, seeds))


class SweepInterrupted(RuntimeError):
    pass


def run_sweep(
    cfg: RunConfig,
    out: Path,
    *,
    workers: int = 1,
    seed_offset: int = 0,
    resume: bool = False,
    stop_after: int | None = None,
) -> list[RunRecord]:
    """Run every sweep cell not already recorded and rebuild ``results.csv``.

    ``stop_after`` aborts after that many new records (used to test resume).
    """
    cells = sweep_cells(cfg, seed_offset)
    rec_dir = out / "records"
    if rec_dir.exists() and any(rec_dir.iterdir()) and not resume:
        raise FileExistsError(f"{rec_dir} already holds records; pass --resume or choose another --out")
    rec_dir.mkdir(parents=True, exist_ok=True)
    write_problem(cfg, out)
    sj = _sections_json(cfg)
    trace_dir = str(out / "traces") if cfg.sections["output"]["trace"] else None

    names = [record_name(cell_hash(cfg, c), c.seed) for c in cells]
    if len(set(names)) != len(names):
        raise ValueError("sweep produces duplicate (config, seed) cells")
    pending = [(c, n) for c, n in zip(cells, names) if not _completed(rec_dir / (n + ".json"))]
    log.info("%d cells, %d pending", len(cells), len(pending))

    done = 0

    def store(rec: RunRecord, name: str):
        nonlocal done
        atomic_write(rec_dir / (name + ".json"), rec.to_json())
        done += 1
        if stop_after is not None and done >= stop_after:
            raise SweepInterrupted(f"stopped after {done} runs")

    if workers <= 1:
        for c, n in pending:
            store(execute(sj, c, trace_dir), n)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [(pool.submit(execute, sj, c, trace_dir), n) for c, n in pending]
            try:
                for fut, n in futures:
                    store(fut.result(), n)
            except BaseException:
                for fut, _ in futures:
                    fut.cancel()
                raise

    records = [RunRecord.from_json((rec_dir / (n + ".json")).read_text(encoding="utf-8")) for n in names]
    atomic_write(out / "results.csv", records_to_csv(records))
    return records


def _completed(path: Path) -> bool:
    if not path.exists():
        return False
    try:
        return RunRecord.from_json(path.read_text(encoding="utf-8")).status == "ok"
    except (ValueError, TypeError):
        return False


# ----------------------------------------------------------------- ablation


def mid_trajectory_latents(gmm: GaussianMixture, schedule: NoiseSchedule, entry: int, n: int, seed: int) -> np.ndarray:
    """Exact draws from the noisy marginal at step ``entry``."""
    gen = rng_mod.stream(seed, rng_mod.AUX, entry, 1)
    return np.atleast_2d(gmm_exact_sample(gmm_marginal(gmm, schedule.alpha_bar[entry]), gen, n))


def estimation_errors(denoiser, schedule: NoiseSchedule, latents: np.ndarray, entry: int, T_primes) -> dict[int, float]:
    """Mean distance from each lookahead estimate to the full deterministic endpoint.

    The reference runs deterministic DDIM through every step from ``entry``;
    ``T_prime == 1`` is the one-step (Tweedie) estimate.
    """
    ref = lookahead_estimate(latents, entry, entry, denoiser, schedule).value
    out = {}
    for tp in T_primes:
        est = lookahead_estimate(latents, entry, int(tp), denoiser, schedule).value
        out[int(tp)] = float(np.mean(np.linalg.norm(est - ref, axis=1)))
    return out


@dataclass(frozen=True)
class AblationRow:
    problem: str
    T_prime: int
    estimation_error: float
    final_reward_mean: float
    final_reward_se: float


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


def run_ablation(cfg: RunConfig, out: Path, *, workers: int = 1, seed_offset: int = 0) -> list[AblationRow]:
    ab = cfg.sections["ablation"]
    _, denoiser, schedule, reward = _built(_sections_json(cfg))
    entry = ab["entry_step"] if ab["entry_step"] is not None else (3 * schedule.T) // 5
    base_seed = cfg.sections["search"]["seed"] + seed_offset
    z = mid_trajectory_latents(cfg.gmm(), schedule, entry, ab["latents"], base_seed)
    errs = estimation_errors(denoiser, schedule, z, entry, ab["T_primes"])

    sj = _sections_json(cfg)
    cells = [
        replace(cfg.search_config(), method="dlbs_la", K=ab["K"], B=ab["B"], T_prime=int(tp), seed=base_seed + s)
        for tp in ab["T_primes"]
        for s in range(ab["runs"])
    ]
    if workers <= 1:
        recs = [execute(sj, c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            recs = list(pool.map(execute, [sj] * len(cells), cells))
    rows = []
    for tp in ab["T_primes"]:
        r = np.array([x.final_reward for x in recs if x.T_prime == tp and x.status == "ok"], dtype=float)
        se = float(r.std(ddof=1) / np.sqrt(r.size)) if r.size > 1 else float("nan")
        rows.append(AblationRow(cfg.problem_name, int(tp), errs[int(tp)], float(r.mean()), se))
    out.mkdir(parents=True, exist_ok=True)
    lines = ["problem,T_prime,estimation_error,final_reward_mean,final_reward_se"]
    lines += [f"{r.problem},{r.T_prime},{r.estimation_error!r},{r.final_reward_mean!r},{r.final_reward_se!r}" for r in rows]
    atomic_write(out / "ablation.csv", "\r\n".join(lines) + "\r\n")
    return rows


__all__ = [
    "ENV_OUT",
    "canonical_hash",
    "execute",
    "estimation_errors",
    "mid_trajectory_latents",
    "output_root",
    "run_ablation",
    "run_single",
    "run_sweep",
    "sweep_cells",
]
