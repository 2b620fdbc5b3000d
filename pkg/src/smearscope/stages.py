from __future__ import annotations

from enum import IntEnum


class StageLabel(IntEnum):
    HEALTHY = 0
    RING = 1
    TROPHOZOITE = 2
    SCHIZONT = 3
    GAMETOCYTE = 4

    @property
    def infected(self) -> bool:
        return self is not StageLabel.HEALTHY

    @property
    def label_name(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "StageLabel":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown stage label {text!r}") from None


STAGE_NAMES = [s.label_name for s in StageLabel]
INFECTED_STAGES = [s for s in StageLabel if s.infected]
