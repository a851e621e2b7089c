"""
Acceptance bookkeeping for the samplers.

Every Metropolis-Hastings family and every birth-death event kind gets a
counter; summaries are logged at the end of a run and written into the draw
archive metadata.
"""

import logging
from typing import Dict, Iterable, Optional

LOG = logging.getLogger(__name__)

# proposal families
PI = "pi"
C = "c"
RHO = "rho"
NU2 = "nu2"
MH_FAMILIES = (PI, C, RHO, NU2)

# birth-death events
BIRTH = "birth"
DEATH = "death"


class AcceptanceTracker:
    def __init__(self, families: Iterable[str] = MH_FAMILIES) -> None:
        self.proposed: Dict[str, int] = {f: 0 for f in families}
        self.accepted: Dict[str, int] = {f: 0 for f in families}
        self._window_proposed: Dict[str, int] = dict(self.proposed)
        self._window_accepted: Dict[str, int] = dict(self.accepted)

    def __repr__(self) -> str:
        rates = ", ".join(f"{f}: {r:.3f}" for f, r in self.rates().items())
        return f"AcceptanceTracker({rates})"

    def record(self, family: str, accepted: bool) -> None:
        self.proposed[family] = self.proposed.get(family, 0) + 1
        self._window_proposed[family] = self._window_proposed.get(family, 0) + 1
        if accepted:
            self.accepted[family] = self.accepted.get(family, 0) + 1
            self._window_accepted[family] = self._window_accepted.get(family, 0) + 1

    def rate(self, family: str) -> Optional[float]:
        n = self.proposed.get(family, 0)
        return self.accepted.get(family, 0) / n if n else None

    def rates(self) -> Dict[str, float]:
        return {f: self.accepted[f] / n for f, n in self.proposed.items() if n}

    def window_rate(self, family: str) -> Optional[float]:
        """Acceptance rate since the last call to `reset_window`."""
        n = self._window_proposed.get(family, 0)
        return self._window_accepted.get(family, 0) / n if n else None

    def reset_window(self) -> None:
        self._window_proposed = {f: 0 for f in self.proposed}
        self._window_accepted = {f: 0 for f in self.accepted}

    def merge(self, other: "AcceptanceTracker") -> None:
        for f, n in other.proposed.items():
            self.proposed[f] = self.proposed.get(f, 0) + n
            self.accepted[f] = self.accepted.get(f, 0) + other.accepted.get(f, 0)

    def to_dict(self) -> Dict[str, Dict[str, int]]:
        return {
            f: {"proposed": n, "accepted": self.accepted.get(f, 0)}
            for f, n in self.proposed.items()
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Dict[str, int]]) -> "AcceptanceTracker":
        tracker = cls(families=data.keys())
        for f, counts in data.items():
            tracker.proposed[f] = int(counts["proposed"])
            tracker.accepted[f] = int(counts["accepted"])
        return tracker

    def log_summary(self, label: str = "run") -> None:
        for f, n in self.proposed.items():
            if n:
                LOG.info(
                    "%s acceptance %s: %d/%d (%.3f)",
                    label,
                    f,
                    self.accepted[f],
                    n,
                    self.accepted[f] / n,
                )
