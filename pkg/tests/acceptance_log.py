"""Per-criterion result lines shared between the acceptance tests and the summary hook."""
from __future__ import annotations

LINES: dict = {}


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:02d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    LINES[number] = line
    print(line)
