"""Aggregation of sweep results and paired method comparisons."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .records import RunRecord, atomic_write

RESAMPLES = 10000


def sign_flip_pvalue(diffs, resamples: int = RESAMPLES, seed: int = 0) -> float:
    """One-sided paired sign-flip test of ``mean(diffs) > 0``.

    Each resample flips the sign of every difference independently; the
    p-value is ``(1 + #{null mean >= observed}) / (1 + resamples)``.
    """
    d = np.asarray(diffs, dtype=np.float64).ravel()
    if d.size == 0:
        raise ValueError("no paired differences")
    obs = d.mean()
    gen = np.random.default_rng(seed)
    hits = 0
    for lo in range(0, resamples, 2000):
        n = min(2000, resamples - lo)
        signs = gen.integers(0, 2, size=(n, d.size)) * 2 - 1
        null = (signs * d).mean(axis=1)
        hits += int(np.sum(null >= obs - 1e-12 * max(1.0, abs(obs))))
    return (1 + hits) / (1 + resamples)


def mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
    return float(v.mean()), se


@dataclass(frozen=True)
class GroupStats:
    problem: str
    method: str
    KB: int
    K: int
    T_prime: int
    mean: float
    stderr: float | None
    count: int


@dataclass(frozen=True)
class Comparison:
    problem: str
    a: str
    b: str
    KB_a: int
    KB_b: int
    n: int
    mean_diff: float
    p_value: float


@dataclass
class AggregateReport:
    groups: list[GroupStats]
    comparisons: list[Comparison]

    def to_json(self) -> str:
        def clean(d):
            return {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in d.items()}

        return json.dumps(
            {"groups": [clean(asdict(g)) for g in self.groups], "comparisons": [clean(asdict(c)) for c in self.comparisons]},
            indent=1,
            allow_nan=False,
        ) + "\n"


def _key(r: RunRecord):
    return (r.problem_name, r.method, r.KB, r.K, r.T_prime)


def _ok(records):
    return [r for r in records if r.status == "ok" and r.final_reward is not None]


def aggregate(records) -> list[GroupStats]:
    groups = defaultdict(list)
    for r in _ok(records):
        groups[_key(r)].append(r.final_reward)
    out = []
    for key in sorted(groups):
        m, se = mean_se(groups[key])
        out.append(GroupStats(*key, mean=m, stderr=None if np.isnan(se) else se, count=len(groups[key])))
    return out


def parse_selector(text: str) -> dict:
    """``method[/K=4][/B=4][/KB=16][/T_prime=6]`` as a filter dict."""
    parts = text.strip().split("/")
    sel = {"method": parts[0]}
    for p in parts[1:]:
        name, _, value = p.partition("=")
        if name not in ("K", "B", "KB", "T_prime") or not value:
            raise ConfigurationError(f"bad selector term {p!r} in {text!r}")
        sel[name] = int(value)
    return sel


def _match(r: RunRecord, sel: dict) -> bool:
    return all(getattr(r, k) == v for k, v in sel.items())


def compare(records, pair: str, resamples: int = RESAMPLES, seed: int = 0) -> list[Comparison]:
    """Seed-matched comparisons for ``"A:B"`` (H1: A has the higher mean reward).

    Within each problem, every A group is paired with the B group at the
    same ``K * B`` unless either selector fixes ``KB``, in which case all
    group combinations are compared.
    """
    a_txt, sep, b_txt = pair.partition(":")
    if not sep:
        raise ConfigurationError(f"pair {pair!r} must look like A:B")
    sa, sb = parse_selector(a_txt), parse_selector(b_txt)
    ok = _ok(records)
    out = []
    for problem in sorted({r.problem_name for r in ok}):
        ga, gb = defaultdict(dict), defaultdict(dict)
        for r in ok:
            if r.problem_name != problem:
                continue
            if _match(r, sa):
                ga[_key(r)][r.seed] = r.final_reward
            if _match(r, sb):
                gb[_key(r)][r.seed] = r.final_reward
        pin = "KB" in sa or "KB" in sb
        for ka in sorted(ga):
            for kb in sorted(gb):
                if ka == kb or (not pin and ka[2] != kb[2]):
                    continue
                xa, xb = ga[ka], gb[kb]
                orphans = sorted(set(xa) ^ set(xb))
                if orphans:
                    raise ValueError(f"pair {pair!r} on {problem}: unmatched seeds {orphans}")
                seeds = sorted(xa)
                d = np.array([xa[s] - xb[s] for s in seeds])
                out.append(Comparison(problem, a_txt, b_txt, ka[2], kb[2], len(seeds), float(d.mean()),
                                      sign_flip_pvalue(d, resamples, seed)))
    return out


def build_report(records, pairs=(), resamples: int = RESAMPLES, seed: int = 0) -> AggregateReport:
    comps = []
    for p in pairs:
        comps.extend(compare(records, p, resamples, seed))
    return AggregateReport(aggregate(records), comps)


TWEEDIE_METHODS = ("bon", "greedy", "dlbs")


def plot_tables(groups: list[GroupStats]) -> dict[str, list[tuple]]:
    """``(x, mean, stderr)`` tables keyed by file stem.

    ``<problem>__<method>[__T<T'>]__by_KB`` follows one method across budgets
    (only budgets with a single K setting); ``<problem>__KB<n>__by_K`` follows
    the one-step-estimator methods across K at a fixed budget.
    """
    tables: dict[str, list[tuple]] = {}
    by_method = defaultdict(lambda: defaultdict(list))
    by_budget = defaultdict(dict)
    for g in groups:
        by_method[(g.problem, g.method, g.T_prime)][g.KB].append(g)
        if g.method in TWEEDIE_METHODS:
            by_budget[(g.problem, g.KB)][g.K] = g
    for (problem, method, tp), per_kb in sorted(by_method.items()):
        rows = [(kb, gs[0].mean, gs[0].stderr) for kb, gs in sorted(per_kb.items()) if len(gs) == 1]
        if rows:
            stem = f"{problem}__{method}" + (f"__T{tp}" if method == "dlbs_la" else "") + "__by_KB"
            tables[stem] = rows
    for (problem, kb), per_k in sorted(by_budget.items()):
        if len(per_k) > 1:
            tables[f"{problem}__KB{kb}__by_K"] = [(k, g.mean, g.stderr) for k, g in sorted(per_k.items())]
    return tables


def write_report(report: AggregateReport, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "report.json", report.to_json())
    pd = out / "plotdata"
    pd.mkdir(exist_ok=True)
    for stem, rows in plot_tables(report.groups).items():
        lines = ["x,mean,stderr"] + [f"{x},{m!r},{'' if s is None else repr(s)}" for x, m, s in rows]
        atomic_write(pd / f"{stem}.csv", "\r\n".join(lines) + "\r\n")
