"""
Run context: one root seed expanded into reproducible per-stage seeds.
"""

import zlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, Optional

import numpy as np


def derive_seed(root_seed: int, stage: str) -> int:
    """Derive the seed of ``stage`` from ``root_seed``; stable across processes and platforms."""
    sequence = np.random.SeedSequence([int(root_seed), zlib.crc32(stage.encode("utf-8"))])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


@dataclass
class RunContext:
    """
    Randomness and provenance of one command invocation.

    Attributes:
        root_seed: Seed every stage seed is derived from
        command: Command that created the context
        created_at: When the context was created
        stage_seeds: Seeds handed out so far, by stage name
    """

    root_seed: int
    command: Optional[str]
    created_at: datetime
    stage_seeds: Dict[str, int] = field(default_factory=dict)

    def seed_for(self, stage: str) -> int:
        """Return (and record) the seed of ``stage``."""
        if stage not in self.stage_seeds:
            self.stage_seeds[stage] = derive_seed(self.root_seed, stage)
        return self.stage_seeds[stage]

    def rng(self, stage: str) -> np.random.Generator:
        """Fresh generator for ``stage``; two calls with the same stage give identical streams."""
        return np.random.default_rng(self.seed_for(stage))

    def to_dict(self) -> dict:
        return {
            "root_seed": self.root_seed,
            "command": self.command,
            "created_at": self.created_at.isoformat(),
            "stage_seeds": dict(sorted(self.stage_seeds.items())),
        }


def create_run_context(root_seed: int, command: Optional[str] = None) -> RunContext:
    """
    Create a new run context.

    Args:
        root_seed: Root seed of the run
        command: Optional command name recorded in manifests

    Returns:
        RunContext: A new run context instance
    """
    return RunContext(
        root_seed=int(root_seed),
        command=command,
        created_at=datetime.now(timezone.utc),
    )
