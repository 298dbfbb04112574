"""Check results shared by the verifiers and the simulator."""

from dataclasses import dataclass, field
from typing import Any


@dataclass
class CheckResult:
    """Result of one numerical check."""

    summary: str  # one-line human summary
    details: dict[str, Any] = field(default_factory=dict)  # machine-readable numbers
    artifacts: list[str] = field(default_factory=list)  # files written for this check
    success: bool = True
    error: str | None = None

    def to_text(self) -> str:
        if not self.success:
            return f"FAIL: {self.error or self.summary}"
        return self.summary

    def to_dict(self) -> dict[str, Any]:
        return {
            "summary": self.summary,
            "success": self.success,
            "error": self.error,
            "details": self.details,
            "artifacts": self.artifacts,
        }
