"""Shared candidate-set container (produced by sampling, consumed by aggregation)."""

from __future__ import annotations

from dataclasses import dataclass

from .geometry import Pose


@dataclass
class PoseCandidateSet:
    candidates: list[Pose]
    energies: list[float] | None = None
    condition_id: str = ""

    def __post_init__(self):
        if self.energies is not None and len(self.energies) != len(self.candidates):
            raise ValueError("energies must have exactly one entry per candidate")

    def __len__(self) -> int:
        return len(self.candidates)
