"""Right-continuous step functions on [0, infinity).

Every curve produced by this package (cumulative hazards, survival curves,
cumulative incidence curves) is piecewise constant with jumps at observed
event times, so a single carrier type suffices.
"""
from __future__ import annotations

import numpy as np


class StepFunction:
    """Piecewise-constant, right-continuous function.

    The function equals ``initial_value`` on ``[0, jump_times[0])`` and
    ``values[k]`` on ``[jump_times[k], jump_times[k+1])``.  Evaluation at a
    point resolves to the value at the largest jump time <= t.

    Parameters
    ----------
    jump_times : 1-d array
        Strictly increasing jump locations.
    values : 1-d array
        Function value on and after each jump time.
    initial_value : float
        Value on [0, jump_times[0]).
    """

    __slots__ = ("jump_times", "values", "initial_value")

    def __init__(self, jump_times, values, initial_value=0.0):
        jump_times = np.atleast_1d(np.asarray(jump_times, dtype=float))
        values = np.atleast_1d(np.asarray(values, dtype=float))
        if jump_times.ndim != 1 or values.shape != jump_times.shape:
            raise ValueError("jump_times and values must be 1-d arrays of equal length")
        if jump_times.size > 1 and np.any(np.diff(jump_times) <= 0):
            raise ValueError("jump_times must be strictly increasing")
        jump_times.flags.writeable = False
        values.flags.writeable = False
        self.jump_times = jump_times
        self.values = values
        self.initial_value = float(initial_value)

    @classmethod
    def from_increments(cls, jump_times, increments, initial_value=0.0):
        """Build the cumulative function whose jump at jump_times[k] is increments[k]."""
        increments = np.asarray(increments, dtype=float)
        if increments.size == 0:
            return cls.constant(initial_value)
        return cls(jump_times, initial_value + np.cumsum(increments), initial_value)

    @classmethod
    def constant(cls, value):
        """Function identically equal to ``value`` (no jumps)."""
        out = cls.__new__(cls)
        empty = np.empty(0, dtype=float)
        empty.flags.writeable = False
        out.jump_times = empty
        out.values = empty
        out.initial_value = float(value)
        return out

    def _eval(self, t, side):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_times, t, side=side) - 1
        padded = np.concatenate(([self.initial_value], self.values))
        return padded[idx + 1]

    def __call__(self, t):
        """Value at t (right-continuous)."""
        out = self._eval(t, side="right")
        return float(out) if np.ndim(t) == 0 else out

    def left_limit(self, t):
        """Value just before t, i.e. f(t-)."""
        out = self._eval(t, side="left")
        return float(out) if np.ndim(t) == 0 else out

    def jump(self, t):
        """Jump size f(t) - f(t-); exactly 0 off the stored jump times."""
        t_arr = np.asarray(t, dtype=float)
        if self.jump_times.size == 0:
            out = np.zeros_like(t_arr)
        else:
            pos = np.searchsorted(self.jump_times, t_arr)
            hit = (pos < self.jump_times.size) & (
                self.jump_times[np.minimum(pos, self.jump_times.size - 1)] == t_arr
            )
            out = np.where(hit, self._eval(t_arr, "right") - self._eval(t_arr, "left"), 0.0)
        return float(out) if np.ndim(t) == 0 else out

    @property
    def final_value(self):
        """Value from the last jump time onward."""
        return float(self.values[-1]) if self.values.size else self.initial_value

    def shifted(self, offset):
        """New step function with ``offset`` added to every value."""
        if self.values.size == 0:
            return StepFunction.constant(self.initial_value + offset)
        return StepFunction(self.jump_times, self.values + offset, self.initial_value + offset)

    def clipped(self, lo=0.0, hi=1.0):
        """Values clipped to [lo, hi]; intended for display only."""
        if self.values.size == 0:
            return StepFunction.constant(min(max(self.initial_value, lo), hi))
        return StepFunction(
            self.jump_times,
            np.clip(self.values, lo, hi),
            min(max(self.initial_value, lo), hi),
        )

    def __eq__(self, other):
        if not isinstance(other, StepFunction):
            return NotImplemented
        return (
            self.initial_value == other.initial_value
            and np.array_equal(self.jump_times, other.jump_times)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return (
            f"StepFunction({self.jump_times.size} jumps, initial={self.initial_value:g}, "
            f"final={self.final_value:g})"
        )
