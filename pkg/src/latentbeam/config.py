"""Run configuration: a YAML file with named sections, strictly validated.

Sections ``problem``, ``schedule``, ``search``, ``reward`` and ``output``
describe one run; ``sweep`` and ``ablation`` are read only by the commands
that need them.  Unknown sections and keys are rejected, and every
validation error names the file line of the offending entry.

Example::

    problem:
      name: bimodal-1d
    schedule:
      T: 50
    search:
      method: dlbs
      K: 4
      B: 4
    reward:
      kind: mode_distance
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from typing import Any, Callable

import numpy as np
import yaml

from .errors import ConfigurationError
from .metrics import testbed_reward
from .oracle import GaussianMixture
from .problems import preset
from .schedule import NoiseSchedule, linear_beta_schedule
from .search import SearchConfig


def _float(v):
    if isinstance(v, bool):
        raise ValueError("expected a number")
    if isinstance(v, str):
        v = float(v)
    f = float(v)
    if not math.isfinite(f):
        raise ValueError("expected a finite number")
    return f


def _int(v):
    if isinstance(v, bool):
        raise ValueError("expected an integer")
    if isinstance(v, str):
        v = float(v) if any(c in v for c in ".eE") else int(v)
    if isinstance(v, float):
        if not v.is_integer():
            raise ValueError(f"expected an integer, got {v}")
        v = int(v)
    if not isinstance(v, int):
        raise ValueError("expected an integer")
    return v


def _str(v):
    if not isinstance(v, str):
        raise ValueError("expected a string")
    return v


def _bool(v):
    if not isinstance(v, bool):
        raise ValueError("expected true or false")
    return v


def _optional(fn):
    return lambda v: None if v is None else fn(v)


def _float_list(v):
    if not isinstance(v, list):
        raise ValueError("expected a list of numbers")
    return [_float(x) for x in v]


def _int_list(v):
    if not isinstance(v, list):
        raise ValueError("expected a list of integers")
    return [_int(x) for x in v]


def _step_range(v):
    vals = _int_list(v)
    if len(vals) != 2:
        raise ValueError("expected [t_hi, t_lo]")
    return vals


def _gmm(v):
    if not isinstance(v, dict) or set(v) != {"weights", "means", "variances"}:
        raise ValueError("expected a mapping with exactly weights, means, variances")
    means = v["means"]
    if not isinstance(means, list):
        raise ValueError("means must be a list")
    means = [_float_list(m) if isinstance(m, list) else [_float(m)] for m in means]
    return {"weights": _float_list(v["weights"]), "means": means, "variances": _float_list(v["variances"])}


def _mapping(v):
    if not isinstance(v, dict):
        raise ValueError("expected a mapping")
    return v


def _seeds(v):
    if isinstance(v, list):
        return _int_list(v)
    return _int(v)


Schema = dict[str, tuple[Callable[[Any], Any], Any]]

SCHEMA: dict[str, Schema] = {
    "problem": {"name": (_optional(_str), None), "gmm": (_optional(_gmm), None)},
    "schedule": {
        "kind": (_str, "linear"),
        "beta_start": (_float, 1e-4),
        "beta_end": (_float, 2e-2),
        "train_steps": (_int, 1000),
        "T": (_int, 50),
    },
    "search": {
        "method": (_str, "dlbs"),
        "K": (_int, 1),
        "B": (_int, 1),
        "T_prime": (_int, 0),
        "eta": (_float, 1.0),
        "solver": (_str, "ddim"),
        "step_range": (_optional(_step_range), None),
        "seed": (_int, 0),
    },
    "reward": {
        "kind": (_str, "mode_distance"),
        "target": (_optional(_float_list), None),
        "scale": (_float, 1.0),
        "component": (_int, 0),
        "w": (_optional(_float_list), None),
    },
    "output": {"dir": (_optional(_str), None), "trace": (_bool, False)},
    "sweep": {"axes": (_mapping, {}), "seeds": (_seeds, 1)},
    "ablation": {
        "T_primes": (_int_list, [1, 2, 3, 6, 12]),
        "latents": (_int, 200),
        "entry_step": (_optional(_int), None),
        "runs": (_int, 20),
        "K": (_int, 4),
        "B": (_int, 2),
    },
}
REQUIRED = ("problem", "search")


# ------------------------------------------------------------------ loading


def _line_map(text: str) -> dict[tuple[str, ...], int]:
    """1-based line of every mapping key path in the document."""
    lines: dict[tuple[str, ...], int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (str(k.value),)
                lines[p] = k.start_mark.line + 1
                walk(v, p)

    root = yaml.compose(text)
    if root is not None:
        walk(root, ())
    return lines


@dataclass
class RunConfig:
    """Validated configuration with every default filled in."""

    sections: dict[str, dict[str, Any]]
    source: str = "<config>"
    lines: dict[tuple[str, ...], int] = field(default_factory=dict)

    # -- derived objects

    @property
    def problem_name(self) -> str:
        return self.sections["problem"]["name"]

    def search_config(self, **overrides) -> SearchConfig:
        s = dict(self.sections["search"])
        s.update(overrides)
        if s.get("step_range") is not None:
            s["step_range"] = tuple(s["step_range"])
        return SearchConfig(**s)

    def gmm(self) -> GaussianMixture:
        return GaussianMixture.from_dict(self.sections["problem"]["gmm"])

    def schedule(self) -> NoiseSchedule:
        s = self.sections["schedule"]
        return linear_beta_schedule(s["beta_start"], s["beta_end"], s["train_steps"]).subsample(s["T"])

    def reward(self):
        r = self.sections["reward"]
        if r["kind"] == "mode_distance":
            return testbed_reward("mode_distance", target=r["target"], scale=r["scale"])
        if r["kind"] == "component_preference":
            return testbed_reward("component_preference", gmm=self.gmm(), component=r["component"])
        return testbed_reward("linear", w=r["w"])

    # -- hashing

    def canonical(self, **search_overrides) -> dict:
        """Sections that determine a run's outcome, seed excluded."""
        sc = self.search_config(**search_overrides)
        search = {f.name: getattr(sc, f.name) for f in fields(sc) if f.name != "seed"}
        return {
            "problem": self.sections["problem"],
            "schedule": self.sections["schedule"],
            "search": search,
            "reward": self.sections["reward"],
        }

    def config_hash(self, **search_overrides) -> str:
        return canonical_hash(self.canonical(**search_overrides))


def _canon_value(v):
    if isinstance(v, bool) or v is None or isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return int(f) if f.is_integer() and abs(f) < 2**53 else repr(f)
    if isinstance(v, dict):
        return {str(k): _canon_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_canon_value(x) for x in v]
    raise TypeError(f"cannot canonicalise {type(v).__name__}")


def canonical_hash(obj) -> str:
    """SHA-256 of a canonical JSON rendering.

    Keys are sorted and numbers are rendered as shortest round-trip decimal
    text, with integral values written as integers, so reordering keys or
    writing ``1e-4`` for ``0.0001`` does not change the hash.
    """
    text = json.dumps(_canon_value(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        raw = yaml.safe_load(text)
        lines = _line_map(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigurationError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    raw = raw or {}

    def fail(path, msg):
        line = lines.get(tuple(path))
        where = f"{source}:{line}" if line else source
        raise ConfigurationError(f"{where}: {'.'.join(path)}: {msg}")

    if not isinstance(raw, dict):
        raise ConfigurationError(f"{source}:1: top level must be a mapping of sections")
    for sec in raw:
        if sec not in SCHEMA:
            fail([str(sec)], f"unknown section (expected one of {', '.join(SCHEMA)})")
    for sec in REQUIRED:
        if sec not in raw:
            raise ConfigurationError(f"{source}: missing required section '{sec}'")

    sections: dict[str, dict[str, Any]] = {}
    for sec, schema in SCHEMA.items():
        body = raw.get(sec) or {}
        if not isinstance(body, dict):
            fail([sec], "section must be a mapping")
        out = {}
        for key in body:
            if key not in schema:
                fail([sec, str(key)], f"unknown key (expected one of {', '.join(schema)})")
        for key, (conv, default) in schema.items():
            if key in body:
                try:
                    out[key] = conv(body[key])
                except (ValueError, TypeError) as exc:
                    fail([sec, key], str(exc))
            else:
                out[key] = json.loads(json.dumps(default))
        sections[sec] = out

    cfg = RunConfig(sections, source, lines)
    _resolve(cfg, fail)
    return cfg


def _resolve(cfg: RunConfig, fail) -> None:
    """Fill preset-dependent defaults and cross-check sections."""
    p = cfg.sections["problem"]
    if p["gmm"] is None:
        if p["name"] is None:
            fail(["problem"], "give a preset name or an explicit gmm")
        try:
            prob = preset(p["name"])
        except ConfigurationError as exc:
            fail(["problem", "name"], str(exc))
        p["gmm"] = prob.gmm.to_dict()
        default_target = prob.target.tolist()
    else:
        p["name"] = p["name"] or "custom"
        default_target = None
    try:
        gmm = cfg.gmm()
    except Exception as exc:
        fail(["problem", "gmm"], str(exc))

    s = cfg.sections["schedule"]
    if s["kind"] != "linear":
        fail(["schedule", "kind"], f"unknown schedule kind {s['kind']!r}")
    try:
        cfg.schedule()
    except ConfigurationError as exc:
        fail(["schedule"], str(exc))

    try:
        cfg.search_config()
    except ConfigurationError as exc:
        key = str(exc).split(":", 1)[0]
        fail(["search", key] if key in SCHEMA["search"] else ["search"], str(exc).split(": ", 1)[-1])

    r = cfg.sections["reward"]
    if r["kind"] == "mode_distance":
        if r["target"] is None:
            if default_target is None:
                fail(["reward", "target"], "required for a custom problem")
            r["target"] = default_target
        if len(r["target"]) != gmm.dim:
            fail(["reward", "target"], f"expected {gmm.dim} values")
        if not r["scale"] > 0:
            fail(["reward", "scale"], "must be positive")
    elif r["kind"] == "component_preference":
        if not 0 <= r["component"] < gmm.n_components:
            fail(["reward", "component"], f"must lie in [0, {gmm.n_components})")
    elif r["kind"] == "linear":
        if r["w"] is None or len(r["w"]) != gmm.dim:
            fail(["reward", "w"], f"expected {gmm.dim} values")
    else:
        fail(["reward", "kind"], f"unknown reward kind {r['kind']!r}")

    sw = cfg.sections["sweep"]
    for axis in sw["axes"]:
        if not isinstance(sw["axes"][axis], list):
            fail(["sweep", "axes", str(axis)], "axis values must be a list")


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))
