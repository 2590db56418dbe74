"""Data model for right-censored competing-risks samples.

Event codes follow the convention 0 = censored, 1..J = cause of failure.
Subject weights default to 1 and carry bootstrap reweighting; every
risk-set quantity in the package is a weighted sum, so reweighted analyses
only require swapping the weight vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TiedEventTimes


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: follow-up time, event code (0 = censored), covariates, weight."""

    time: float
    event: int
    covariates: tuple = ()
    weight: float = 1.0


class SurvivalDataset:
    """Right-censored competing-risks sample backed by numpy arrays.

    Parameters
    ----------
    time : (n,) array
        Positive, finite follow-up times.
    event : (n,) int array
        0 for censored, 1..num_causes for the failing cause.
    covariates : (n, d) array, optional
        Covariate matrix; d may be 0.
    weights : (n,) array, optional
        Positive subject weights, default all 1.
    num_causes : int, optional
        Number of competing causes J; defaults to max(event) (at least 1).

    The arrays are frozen after construction; reweighted views share the
    time/event/covariate arrays (see :meth:`with_weights`).
    """

    def __init__(self, time, event, covariates=None, weights=None, num_causes=None):
        time = np.ascontiguousarray(time, dtype=float)
        event = np.ascontiguousarray(event, dtype=np.int64)
        n = time.shape[0]
        if event.shape != (n,):
            raise ValueError("time and event must be 1-d arrays of equal length")
        if covariates is None:
            covariates = np.empty((n, 0))
        covariates = np.ascontiguousarray(covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        if covariates.shape[0] != n:
            raise ValueError("covariates must have one row per subject")
        if weights is None:
            weights = np.ones(n)
        weights = np.ascontiguousarray(weights, dtype=float)
        if weights.shape != (n,):
            raise ValueError("weights must be a 1-d array of length n")

        if not np.all(np.isfinite(time)) or np.any(time <= 0):
            raise ValueError("all follow-up times must be finite and > 0")
        if np.any(event < 0):
            raise ValueError("event codes must be >= 0 (0 = censored)")
        if not np.all(np.isfinite(covariates)):
            raise ValueError("covariates must be finite")
        if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and > 0")

        max_code = int(event.max()) if n else 0
        if num_causes is None:
            num_causes = max(max_code, 1)
        num_causes = int(num_causes)
        if num_causes < 1:
            raise ValueError("num_causes must be a positive integer")
        if max_code > num_causes:
            raise ValueError(f"event code {max_code} exceeds num_causes={num_causes}")

        for arr in (time, event, covariates, weights):
            arr.flags.writeable = False
        self.time = time
        self.event = event
        self.covariates = covariates
        self.weights = weights
        self.num_causes = num_causes

    @property
    def n(self):
        return self.time.shape[0]

    def __len__(self):
        return self.n

    @property
    def covariate_dim(self):
        return self.covariates.shape[1]

    @property
    def subjects(self):
        """Subjects in input order as :class:`SubjectRecord` tuples."""
        return [
            SubjectRecord(float(t), int(e), tuple(z), float(w))
            for t, e, z, w in zip(self.time, self.event, self.covariates, self.weights)
        ]

    @classmethod
    def from_subjects(cls, records, num_causes=None):
        time = [r.time for r in records]
        event = [r.event for r in records]
        covs = [r.covariates for r in records]
        weights = [r.weight for r in records]
        d = len(covs[0]) if covs else 0
        if any(len(c) != d for c in covs):
            raise ValueError("all covariate vectors must have the same length")
        return cls(time, event, np.asarray(covs, dtype=float).reshape(len(records), d),
                   weights, num_causes=num_causes)

    def with_weights(self, weights):
        """Reweighted view sharing times, events and covariates."""
        return SurvivalDataset(self.time, self.event, self.covariates, weights,
                               num_causes=self.num_causes)

    def __repr__(self):
        n_events = int(np.count_nonzero(self.event))
        return (
            f"SurvivalDataset(n={self.n}, causes={self.num_causes}, "
            f"d={self.covariate_dim}, events={n_events})"
        )


@dataclass(frozen=True)
class EventIndex:
    """Ordered distinct event times with the failing subject at each one.

    ``times[k]`` is the (k+1)-th ordered event time, ``failer[k]`` the input
    index of the subject failing there, ``cause[k]`` its event code.
    """

    times: np.ndarray
    failer: np.ndarray
    cause: np.ndarray

    def __post_init__(self):
        for arr in (self.times, self.failer, self.cause):
            arr.flags.writeable = False

    def __len__(self):
        return self.times.shape[0]

    def count(self, t):
        """K(t): number of event times in [0, t]."""
        out = np.searchsorted(self.times, t, side="right")
        return int(out) if np.ndim(t) == 0 else out


def build_event_index(data):
    """Order the uncensored subjects by failure time.

    Raises
    ------
    TiedEventTimes
        If two uncensored subjects share an identical time.  Ties must be
        resolved upstream (see :func:`resolve_ties`).
    """
    rows = np.flatnonzero(data.event > 0)
    order = rows[np.argsort(data.time[rows], kind="stable")]
    times = data.time[order]
    if times.size > 1:
        dup = np.flatnonzero(np.diff(times) == 0)
        if dup.size:
            raise TiedEventTimes(times[dup])
    return EventIndex(times=times, failer=order, cause=data.event[order])


def risk_sum(data, theta, t):
    """Weighted at-risk sum: sum_i w_i * 1{X_i >= t} * theta_i.

    The subject failing (or censored) exactly at t counts as at risk.
    An empty risk set returns 0; callers must guard divisions.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (data.n,):
        raise ValueError("theta must have one entry per subject")
    at_risk = data.time >= t
    return float(np.sum(data.weights[at_risk] * theta[at_risk]))


@dataclass(frozen=True)
class TieReport:
    """What the jitter policy did to a dataset."""

    n_groups: int
    n_adjusted: int
    delta: float
    tied_times: tuple

    @property
    def any(self):
        return self.n_groups > 0

    def describe(self):
        if not self.any:
            return "no tied event times"
        shown = ", ".join(f"{t:g}" for t in self.tied_times[:8])
        if len(self.tied_times) > 8:
            shown += ", ..."
        return (
            f"broke {self.n_groups} tied time group(s) ({self.n_adjusted} subjects "
            f"adjusted) with rank offsets of {self.delta:.3g} at t = {shown}"
        )


def resolve_ties(data, policy="jitter"):
    """Make event times unique so the event index is well defined.

    Policy 'reject' raises :class:`TiedEventTimes` whenever two uncensored
    subjects share a time.  Policy 'jitter' (default) adds deterministic
    rank-scaled offsets of magnitude 1e-9 * median(time) inside each tied
    group that contains at least two events.  Within a group the events keep
    their input order and come first; censored subjects at the same time are
    pushed after the last event so they stay at risk at every event time of
    the group, matching the Y_i(t) = 1{X_i >= t} convention.

    Returns
    -------
    (SurvivalDataset, TieReport)
        The (possibly adjusted) dataset and a report of what was changed.
    """
    if policy not in ("reject", "jitter"):
        raise ValueError(f"unknown tie policy {policy!r}")

    time = data.time
    event = data.event
    uniq, inverse, counts = np.unique(time, return_inverse=True, return_counts=True)

    tied_event_times = []
    adjust_groups = []
    for g in np.flatnonzero(counts > 1):
        members = np.flatnonzero(inverse == g)
        n_events = int(np.count_nonzero(event[members] > 0))
        if n_events >= 2:
            tied_event_times.append(float(uniq[g]))
            adjust_groups.append(members)

    if not adjust_groups:
        return data, TieReport(0, 0, 0.0, ())
    if policy == "reject":
        raise TiedEventTimes(tied_event_times)

    delta = 1e-9 * float(np.median(time))
    gaps = np.diff(uniq)
    if gaps.size:
        max_group = max(len(m) for m in adjust_groups)
        delta = min(delta, float(gaps.min()) / (max_group + 1))

    new_time = np.array(time, dtype=float)
    n_adjusted = 0
    for members in adjust_groups:
        events_first = np.concatenate(
            [members[event[members] > 0], members[event[members] == 0]]
        )
        offsets = delta * np.arange(len(events_first))
        new_time[events_first] = time[events_first] + offsets
        n_adjusted += len(events_first)

    adjusted = SurvivalDataset(new_time, event, data.covariates, data.weights,
                               num_causes=data.num_causes)
    report = TieReport(len(adjust_groups), n_adjusted, delta, tuple(tied_event_times))
    return adjusted, report
