"""Verdict containers for the assumption validators."""
from __future__ import annotations

from dataclasses import dataclass, field

PASS = "PASS"
FAIL = "FAIL"
INCONCLUSIVE = "INCONCLUSIVE"


@dataclass
class ConditionResult:
    name: str
    verdict: str
    detail: dict = field(default_factory=dict)
    worst: dict | None = None
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict == PASS


@dataclass
class ValidationReport:
    """Per-condition verdicts; the overall verdict is the worst one."""

    subject: str
    conditions: list = field(default_factory=list)
    scope: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        verdicts = {c.verdict for c in self.conditions}
        if FAIL in verdicts:
            return FAIL
        if INCONCLUSIVE in verdicts:
            return INCONCLUSIVE
        return PASS

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def __getitem__(self, name: str) -> ConditionResult:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed(self) -> list:
        return [c.name for c in self.conditions if c.verdict == FAIL]

    def rows(self) -> list:
        """Flat (subject, condition, verdict, note) rows for tabular output."""
        return [(self.subject, c.name, c.verdict, c.note) for c in self.conditions]

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "verdict": self.verdict,
            "scope": self.scope,
            "notes": list(self.notes),
            "conditions": [
                {"name": c.name, "verdict": c.verdict, "detail": c.detail,
                 "worst": c.worst, "note": c.note}
                for c in self.conditions
            ],
        }
