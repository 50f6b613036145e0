"""Run records and their JSON / CSV forms."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, fields


@dataclass(frozen=True)
class RunRecord:
    config_hash: str
    seed: int
    method: str
    K: int
    B: int
    T_prime: int
    eta: float
    solver: str
    problem_name: str
    final_reward: float | None
    nfe: int
    wall_clock_s: float
    trace_path: str | None = None
    status: str = "ok"
    error: str | None = None

    @property
    def KB(self) -> int:
        return self.K * self.B

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, allow_nan=False, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        data = json.loads(text)
        return cls(**{f.name: data.get(f.name) for f in fields(cls)})

    def without_timing(self) -> dict:
        d = asdict(self)
        d.pop("wall_clock_s")
        return d


COLUMNS = tuple(f.name for f in fields(RunRecord))
_INT = {"seed", "K", "B", "T_prime", "nfe"}
_FLOAT = {"eta", "final_reward", "wall_clock_s"}


def finite_or_none(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(name: str, text: str):
    if name in _INT:
        return int(text)
    if text == "":
        return None
    if name in _FLOAT:
        return float(text)
    return text


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(COLUMNS)
    for r in records:
        w.writerow([_cell(getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def records_from_csv(text: str) -> list[RunRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return []
    header = rows[0]
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise ValueError(f"results CSV is missing columns: {', '.join(missing)}")
    idx = {c: header.index(c) for c in COLUMNS}
    return [RunRecord(**{c: _parse(c, row[idx[c]]) for c in COLUMNS}) for row in rows[1:] if row]


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
