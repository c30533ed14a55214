"""Run artifacts: atomic text/CSV writers, CSV readers and the run report."""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import OpenMarketError

__all__ = ["atomic_write_text", "write_table", "read_table", "Check", "RunReport", "VERDICTS"]

VERDICTS = ("PASS", "FAIL", "HYPOTHESIS-UNMET")


def atomic_write_text(file, text: str) -> None:
    """Write ``text`` through a temporary file in the target directory, then rename."""
    file = os.fspath(file)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(file)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, file)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_table(file, header: Sequence[str], rows) -> None:
    """CSV with mixed string and numeric cells; floats keep round-trip precision."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    atomic_write_text(file, "\n".join(lines) + "\n")


def read_table(file) -> Dict[str, np.ndarray]:
    """Read a CSV written by this package into ``{column: array}``.

    Numeric columns become float arrays; anything else stays a string array.
    """
    with open(file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise OpenMarketError(f"{file}: empty file")
        rows = [r for r in reader if r]
    cols = {}
    for j, name in enumerate(header):
        raw = [r[j] for r in rows]
        try:
            cols[name] = np.array([float(v) for v in raw])
        except ValueError:
            cols[name] = np.array(raw)
    return cols


@dataclass
class Check:
    """One verdict, tied to the property it tests."""

    name: str
    verdict: str
    detail: str
    criterion: str = ""

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")


def verdict(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


@dataclass
class RunReport:
    """Config echo, verdicts, key scalars (value and SE), artifact list and wall clock."""

    kind: str
    config: Dict[str, Dict[str, str]]
    checks: List[Check] = field(default_factory=list)
    scalars: Dict[str, List[Optional[float]]] = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)
    wall_clock: float = 0.0

    def add(self, name: str, ok, detail: str, criterion: str = "") -> None:
        v = ok if isinstance(ok, str) else verdict(bool(ok))
        self.checks.append(Check(name, v, detail, criterion))

    def scalar(self, name: str, value, se=None) -> None:
        self.scalars[name] = [float(value), None if se is None else float(se)]

    @property
    def ok(self) -> bool:
        return all(c.verdict != "FAIL" for c in self.checks)

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        d = json.loads(text)
        d["checks"] = [Check(**c) for c in d.get("checks", [])]
        return cls(**d)

    def to_text(self) -> str:
        lines = [f"experiment: {self.kind}", ""]
        w = max([len(c.name) for c in self.checks] + [5])
        for c in self.checks:
            lines.append(f"{c.verdict:<17} {c.name:<{w}}  {c.detail}")
        if self.scalars:
            lines.append("")
            for k, (v, se) in self.scalars.items():
                lines.append(f"{k:<28} {v:.6g}" + ("" if se is None else f"  (se {se:.3g})"))
        lines += ["", "artifacts:"] + [f"  {a}" for a in self.artifacts]
        lines.append(f"wall clock: {self.wall_clock:.2f} s")
        return "\n".join(lines) + "\n"

    def save(self, directory) -> None:
        d = Path(directory)
        atomic_write_text(d / "report.json", self.to_json())
        atomic_write_text(d / "report.txt", self.to_text())
