"""Timestep curriculum: disjoint partition (t0, t1, t2) and its update rule.

t0 holds timesteps already aligned, t1 the ones currently being fitted,
t2 the rest. Each update promotes all of t1 into t0 and pulls the
``window`` t2 elements closest to the just-promoted set into t1 (ties
toward the smaller index). The partition of {0..T-1} is preserved at
every step and |t0| never decreases.
"""

import math
from dataclasses import dataclass, field


@dataclass
class TimestepSchedule:
    t0: list
    t1: list
    t2: list
    window: int = 1
    update_interval: int = 1000

    def __post_init__(self):
        self.t0 = sorted(int(t) for t in self.t0)
        self.t1 = sorted(int(t) for t in self.t1)
        self.t2 = sorted(int(t) for t in self.t2)
        self.validate()

    @classmethod
    def initial(cls, n_timesteps: int, window: int = 1, update_interval: int = 1000):
        """Start state: timestep 0 aligned, the next ``window`` active."""
        if n_timesteps < 1:
            raise ValueError("need at least one timestep")
        if window < 1:
            raise ValueError("window must be >= 1")
        rest = list(range(1, n_timesteps))
        return cls(t0=[0], t1=rest[:window], t2=rest[window:],
                   window=window, update_interval=update_interval)

    def validate(self):
        n = len(self.t0) + len(self.t1) + len(self.t2)
        union = set(self.t0) | set(self.t1) | set(self.t2)
        if len(union) != n:
            raise ValueError("t0/t1/t2 overlap")
        if union != set(range(n)):
            raise ValueError("t0/t1/t2 must partition 0..T-1")
        if self.window < 1:
            raise ValueError("window must be >= 1")

    @property
    def terminal(self) -> bool:
        return not self.t1 and not self.t2

    def updates_to_drain(self) -> int:
        """Updates until t2 is empty."""
        return math.ceil(len(self.t2) / self.window)

    def updates_to_terminal(self) -> int:
        """Updates until t1 and t2 are both empty."""
        return self.updates_to_drain() + (1 if self.t1 else 0)

    def snapshot(self) -> dict:
        return {"t0": list(self.t0), "t1": list(self.t1), "t2": list(self.t2)}


def pick_reference(t1_elem: int, schedule: TimestepSchedule) -> int:
    """Aligned timestep closest to ``t1_elem``; ties go to the smaller index."""
    if not schedule.t0:
        raise ValueError("t0 is empty; nothing to align against")
    return min(schedule.t0, key=lambda t: (abs(t1_elem - t), t))


def schedule_update(schedule: TimestepSchedule) -> list:
    """Advance the partition in place; returns the timesteps promoted to t0.

    A no-op (empty return) when already terminal. If t1 is empty but t2 is
    not, promotion distances anchor on t0 instead (degenerate start states
    only; the trainer never produces them).
    """
    if schedule.terminal:
        return []
    promoted = list(schedule.t1)
    anchors = promoted if promoted else list(schedule.t0)
    schedule.t0 = sorted(schedule.t0 + promoted)
    if schedule.t2:
        if anchors:
            def key(t):
                return (min(abs(t - a) for a in anchors), t)
        else:
            def key(t):
                return t
        incoming = sorted(sorted(schedule.t2, key=key)[:schedule.window])
        schedule.t1 = incoming
        schedule.t2 = sorted(set(schedule.t2) - set(incoming))
    else:
        schedule.t1 = []
    return promoted
