import math

import numpy as np
import pytest

from pg4d.schedule import TimestepSchedule, pick_reference, schedule_update


def test_pick_reference_prefers_closest():
    s = TimestepSchedule(t0=[0, 4], t1=[3], t2=[1, 2])
    assert pick_reference(3, s) == 4


def test_pick_reference_tie_goes_to_smaller_index():
    s = TimestepSchedule(t0=[0, 4], t1=[2], t2=[1, 3])
    assert pick_reference(2, s) == 0


def test_pick_reference_singleton():
    s = TimestepSchedule(t0=[7], t1=[0, 1, 2, 3, 4, 5, 6], t2=[])
    for t in range(7):
        assert pick_reference(t, s) == 7


def test_pick_reference_rejects_empty_t0():
    s = TimestepSchedule(t0=[], t1=[0], t2=[1])
    with pytest.raises(ValueError):
        pick_reference(0, s)


def test_update_promotes_and_refills():
    s = TimestepSchedule(t0=[0], t1=[1], t2=[2, 3, 4], window=1)
    promoted = schedule_update(s)
    assert promoted == [1]
    assert s.t0 == [0, 1] and s.t1 == [2] and s.t2 == [3, 4]


def test_update_reaches_terminal():
    s = TimestepSchedule(t0=[0, 1], t1=[2], t2=[], window=1)
    assert schedule_update(s) == [2]
    assert s.t0 == [0, 1, 2] and s.terminal
    assert schedule_update(s) == []  # no-op once terminal


def test_initial_partition():
    s = TimestepSchedule.initial(6, window=2, update_interval=10)
    assert s.t0 == [0] and s.t1 == [1, 2] and s.t2 == [3, 4, 5]
    assert s.update_interval == 10


def test_overlapping_partition_rejected():
    with pytest.raises(ValueError):
        TimestepSchedule(t0=[0, 1], t1=[1], t2=[2])
    with pytest.raises(ValueError):
        TimestepSchedule(t0=[0], t1=[2], t2=[4])  # not contiguous 0..T-1


def test_fuzz_partition_invariants_and_update_counts():
    rng = np.random.default_rng(99)
    for _ in range(100):
        n = int(rng.integers(2, 40))
        window = int(rng.integers(1, 5))
        # random partition with nonempty t0 and t1
        perm = rng.permutation(n)
        k0 = int(rng.integers(1, n))
        k1 = int(rng.integers(1, max(2, n - k0 + 1)))
        t0 = perm[:k0]
        t1 = perm[k0:k0 + k1]
        t2 = perm[k0 + k1:]
        s = TimestepSchedule(t0=list(t0), t1=list(t1), t2=list(t2), window=window)

        drain_expected = math.ceil(len(s.t2) / window)
        terminal_expected = s.updates_to_terminal()
        all_ts = set(range(n))
        drained_at = 0 if not s.t2 else None
        updates = 0
        prev_t0_size = len(s.t0)
        while not s.terminal:
            schedule_update(s)
            updates += 1
            s.validate()
            assert set(s.t0) | set(s.t1) | set(s.t2) == all_ts
            assert len(s.t0) >= prev_t0_size
            prev_t0_size = len(s.t0)
            if drained_at is None and not s.t2:
                drained_at = updates
            assert updates < 2 * n + 2  # safety against livelock

        assert drained_at == drain_expected
        assert updates == terminal_expected
