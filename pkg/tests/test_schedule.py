import pytest

from sparsekit.schedule import LrSchedule, RewindWindow, lr_base, lr_rewound
from sparsekit.tensor import ContractError


def test_warmup_start_is_zero():
    s = LrSchedule(base_lr=1.0, warmup_steps=10, total_steps=100)
    assert lr_base(s, 0) == 0.0


def test_warmup_end_is_base():
    s = LrSchedule(base_lr=0.5, warmup_steps=10, total_steps=100)
    assert lr_base(s, 10) == 0.5


def test_linear_decay():
    s = LrSchedule(base_lr=1.0, warmup_steps=0, total_steps=100)
    assert lr_base(s, 25) == pytest.approx(0.75)
    assert lr_base(s, 100) == 0.0


def test_lr_base_out_of_range():
    s = LrSchedule(base_lr=1.0, warmup_steps=0, total_steps=100)
    with pytest.raises(ContractError):
        lr_base(s, 101)
    with pytest.raises(ContractError):
        lr_base(s, -1)


def test_rewound_sawtooth():
    s = LrSchedule(1.0, 0, 100, RewindWindow(0, 10, 50))
    assert lr_rewound(s, 15) == pytest.approx(lr_base(s, 5))
    assert lr_rewound(s, 15) == pytest.approx(0.95)


def test_rewound_passthrough_after_window():
    s = LrSchedule(1.0, 0, 100, RewindWindow(0, 10, 50))
    assert lr_rewound(s, 60) == pytest.approx(0.40)
    for t in range(51, 101):
        assert lr_rewound(s, t) == lr_base(s, t)


def test_rewind_points_equal_start_value():
    s = LrSchedule(1.0, 0, 100, RewindWindow(0, 10, 50))
    for k in range(6):
        assert lr_rewound(s, k * 10) == lr_base(s, 0)


def test_rewound_equals_base_without_rewind():
    s = LrSchedule(1.0, 5, 100)
    for t in range(101):
        assert lr_rewound(s, t) == lr_base(s, t)


def test_window_nonincreasing_and_bounded():
    s = LrSchedule(1.0, 10, 100, RewindWindow(10, 10, 50))
    for start in range(10, 50, 10):
        window = [lr_rewound(s, t) for t in range(start, min(start + 10, 51))]
        assert all(b <= a for a, b in zip(window, window[1:]))
        assert window[0] == lr_base(s, 10)
    for t in range(101):
        assert 0.0 <= lr_rewound(s, t) <= 1.0


def test_schedule_invariants():
    with pytest.raises(ContractError):
        LrSchedule(0.0, 0, 100)
    with pytest.raises(ContractError):
        LrSchedule(1.0, 101, 100)
    with pytest.raises(ContractError):
        LrSchedule(1.0, 0, 100, RewindWindow(50, 10, 40))
    with pytest.raises(ContractError):
        LrSchedule(1.0, 0, 100, RewindWindow(0, 0, 50))
