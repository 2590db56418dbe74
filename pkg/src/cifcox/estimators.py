"""Survival and cumulative incidence estimators under cause-specific Cox models.

Three estimators of the conditional cumulative incidence F_j(t|z) are
provided.  Methods 1 and 2 are the classical exponential and product-integral
constructions; Method 3 builds the curve from per-event factors so that the
incidence summed over causes reaches exactly 1 at the last event time whenever
follow-up ends in an event (in particular for uncensored data).

All curves are step functions jumping only at observed event times.  The
per-cause curves of one method share the full event-time grid so they can be
summed pointwise into the total incidence curve.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .cox import linear_predictor
from .data import build_event_index
from .errors import MixedMethods, NegativePrefix
from .step import StepFunction

#: cause code used for the summed-over-causes curve (never a real cause;
#: real causes are 1..J and 0 marks censoring in event codes)
TOTAL = 0

_PREFIX_FLOOR = -1e-12


class Method(enum.IntEnum):
    M1 = 1
    M2 = 2
    M3 = 3


@dataclass(frozen=True)
class CifEstimate:
    """One estimated cumulative incidence curve.

    ``cause`` is the cause code in 1..J, or :data:`TOTAL` for the sum over
    causes.  ``curve`` starts at 0 and is nondecreasing.
    """

    method: Method
    cause: int
    z: np.ndarray
    curve: StepFunction


class EventGrid:
    """Event-time quantities that do not depend on weights or coefficients.

    Shared by the public estimators and the batched bootstrap engine:
    the sort order of subjects, the position of each event's risk set in
    that order, and the failing subject of each event.
    """

    def __init__(self, data):
        self.data = data
        self.index = build_event_index(data)
        order = np.argsort(data.time, kind="stable")
        self.order = order
        sorted_time = data.time[order]
        # risk set of event k starts at the first sorted subject with X >= T_k
        self.risk_start = np.searchsorted(sorted_time, self.index.times, side="left")
        inv = np.empty(data.n, dtype=np.int64)
        inv[order] = np.arange(data.n)
        self.failer_pos = inv[self.index.failer]
        self.cause_ix = self.index.cause - 1          # 0-based cause per event
        self.n_events = self.index.times.shape[0]

    def sort(self, per_subject):
        """Reorder a (..., n) per-subject array into time-sorted order."""
        return np.asarray(per_subject, dtype=float)[..., self.order]


def _suffix_sum(a):
    return np.flip(np.cumsum(np.flip(a, -1), -1), -1)


def cif_values_batch(grid, thetas_sorted, theta_z, w_sorted):
    """Evaluate all three methods on a batch of (weights, coefficients).

    Parameters
    ----------
    grid : EventGrid
    thetas_sorted : (J, B, n)
        Relative risks exp(beta_j' Z_i) of every subject, time-sorted order.
    theta_z : (J, B)
        Relative risks exp(beta_j' z) at the evaluation covariates.
    w_sorted : (B, n)
        Subject weights in time-sorted order.

    Returns
    -------
    (F1, F2, F3) each of shape (J, B, K): cumulative incidence values at the
    event times of the grid.
    """
    J = thetas_sorted.shape[0]
    B, n = w_sorted.shape
    K = grid.n_events
    if K == 0:
        zero = np.zeros((J, B, 0))
        return zero, zero.copy(), zero.copy()

    cause_ix = grid.cause_ix
    w_fail = w_sorted[:, grid.failer_pos]                            # (B, K)

    # weighted risk sums A_j(T_k) and per-cause baseline jumps w_fail / A_j
    risk = np.empty((J, B, K))
    for j in range(J):
        risk[j] = _suffix_sum(w_sorted * thetas_sorted[j])[:, grid.risk_start]
    is_cause = cause_ix[None, :] == np.arange(J)[:, None]            # (J, K)
    d_base = np.where(is_cause[:, None, :], w_fail[None] / risk, 0.0)
    d_lam = theta_z[:, :, None] * d_base                             # (J, B, K)
    d_tot = d_lam.sum(axis=0)                                        # (B, K)

    # method 1: exp(-total cumulative hazard just before t) d Lambda_j(t)
    cum_tot = np.cumsum(d_tot, axis=1)
    pref1 = np.exp(-(cum_tot - d_tot))
    f1 = np.cumsum(pref1[None] * d_lam, axis=2)

    # method 2: positive-part product integral; a clamped factor zeroes
    # the survival prefix from that event onward
    factors = np.maximum(1.0 - d_tot, 0.0)
    surv2 = np.cumprod(factors, axis=1)
    pref2 = np.concatenate([np.ones((B, 1)), surv2[:, :-1]], axis=1)
    f2 = np.cumsum(pref2[None] * d_lam, axis=2)

    # method 3: per-event factors for the failing cause; the exponent uses the
    # failer's own weighted mass, so the base hits 0 exactly when the failer
    # is the whole remaining risk set
    theta_fail = thetas_sorted[cause_ix, :, grid.failer_pos].T       # (B, K)
    m_fail = w_fail * theta_fail
    risk_fail = risk[cause_ix, :, np.arange(K)].T                    # (B, K)
    base = np.maximum(1.0 - m_fail / risk_fail, 0.0)
    expo = theta_z[cause_ix].T / m_fail
    gamma = 1.0 - base ** expo                                       # (B, K)
    surv3 = np.cumprod(1.0 - gamma, axis=1)
    pref3 = np.concatenate([np.ones((B, 1)), surv3[:, :-1]], axis=1)
    if pref3.min() < _PREFIX_FLOOR:
        raise NegativePrefix(
            f"running product prefix reached {pref3.min():.3e}; "
            "tied event times or invalid weights upstream"
        )
    np.maximum(pref3, 0.0, out=pref3)
    f3 = np.cumsum((pref3 * gamma)[None] * (is_cause[:, None, :]), axis=2)

    return f1, f2, f3


def _single_eval(data, fits, z):
    """All three methods at one covariate vector; returns (grid, values (3,J,K))."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape[0] != data.covariate_dim:
        raise ValueError(f"z has length {z.shape[0]}, expected {data.covariate_dim}")
    if len(fits) != data.num_causes:
        raise ValueError(f"need one fit per cause (J={data.num_causes})")
    for j, fit in enumerate(fits, start=1):
        if fit.cause != j:
            raise ValueError("fits must be ordered by cause 1..J")
    grid = EventGrid(data)
    J = data.num_causes
    thetas = np.empty((J, 1, data.n))
    theta_z = np.empty((J, 1))
    z_sorted = data.covariates[grid.order]
    for j, fit in enumerate(fits):
        thetas[j, 0] = np.exp(z_sorted @ fit.beta)
        theta_z[j, 0] = linear_predictor(fit, z)
    w_sorted = grid.sort(data.weights)[None, :]
    f1, f2, f3 = cif_values_batch(grid, thetas, theta_z, w_sorted)
    return grid, np.stack([f1[:, 0, :], f2[:, 0, :], f3[:, 0, :]])


def breslow_cumhaz(data, fit):
    """Baseline cumulative hazard for the fit's cause.

    Jumps w_I(k) / A_j(T_k) at each event time of the cause, where A_j is the
    risk-weighted sum of relative risks; identically 0 with no such events.
    """
    grid = EventGrid(data)
    theta = np.exp(data.covariates[grid.order] @ fit.beta)
    w_sorted = grid.sort(data.weights)
    if grid.n_events == 0:
        return StepFunction.constant(0.0)
    risk = _suffix_sum(w_sorted * theta)[grid.risk_start]
    mask = grid.index.cause == fit.cause
    jumps = w_sorted[grid.failer_pos[mask]] / risk[mask]
    return StepFunction.from_increments(grid.index.times[mask], jumps)


def _require_single_cause(data):
    if data.num_causes != 1:
        raise ValueError("single-event survival estimators require num_causes == 1")


def survival_m1(data, fit, z):
    """Exponential survival estimator exp(-theta(z) * baseline cumulative hazard)."""
    _require_single_cause(data)
    cum = breslow_cumhaz(data, fit)
    theta = linear_predictor(fit, z)
    if cum.jump_times.size == 0:
        return StepFunction.constant(1.0)
    return StepFunction(cum.jump_times, np.exp(-theta * cum.values), 1.0)


def survival_m2(data, fit, z):
    """Product-integral survival estimator with the positive-part fix.

    Once a factor 1 - theta(z) * dLambda_0 is nonpositive the curve is 0 from
    that event time on.
    """
    _require_single_cause(data)
    grid, values = _single_eval(data, [fit], z)
    if grid.n_events == 0:
        return StepFunction.constant(1.0)
    return StepFunction(grid.index.times, 1.0 - values[1, 0], 1.0)


def survival_m3(data, fit, z):
    """Survival estimator from per-event factors alpha_k raised to theta(z).

    Like the Kaplan-Meier estimator, drops to exactly 0 when the last
    follow-up time is an event time.
    """
    _require_single_cause(data)
    grid, values = _single_eval(data, [fit], z)
    if grid.n_events == 0:
        return StepFunction.constant(1.0)
    return StepFunction(grid.index.times, 1.0 - values[2, 0], 1.0)


def _wrap(method, data, grid, values, z):
    z = np.atleast_1d(np.asarray(z, dtype=float))
    out = []
    for j in range(data.num_causes):
        if grid is None or grid.n_events == 0:
            curve = StepFunction.constant(0.0)
        else:
            curve = StepFunction(grid.index.times, values[method - 1, j], 0.0)
        out.append(CifEstimate(method=Method(method), cause=j + 1, z=z, curve=curve))
    return out


def cif_m1(data, fits, z):
    """Cumulative incidence per cause, exponential-survival weighting."""
    grid, values = _single_eval(data, fits, z)
    return _wrap(1, data, grid, values, z)


def cif_m2(data, fits, z):
    """Cumulative incidence per cause, positive-part product-integral weighting."""
    grid, values = _single_eval(data, fits, z)
    return _wrap(2, data, grid, values, z)


def cif_m3(data, fits, z):
    """Cumulative incidence per cause from per-event factors.

    Summed over causes, the curve equals exactly 1 at the last event time
    whenever the last follow-up time is an event (e.g. uncensored data).
    """
    grid, values = _single_eval(data, fits, z)
    return _wrap(3, data, grid, values, z)


def estimate_cifs(data, fits, z, methods=(1, 2, 3)):
    """Per-cause estimates for several methods in one pass.

    Returns a dict {method: [CifEstimate per cause]} sharing one event grid.
    """
    grid, values = _single_eval(data, fits, z)
    return {Method(m): _wrap(int(m), data, grid, values, z) for m in methods}


def total_cif(estimates):
    """Pointwise sum of per-cause estimates sharing method, z, and grid."""
    if not estimates:
        raise MixedMethods("no estimates to sum")
    first = estimates[0]
    for est in estimates[1:]:
        if est.method != first.method:
            raise MixedMethods("estimates mix methods")
        if not np.array_equal(est.z, first.z):
            raise MixedMethods("estimates mix evaluation covariates")
        if not np.array_equal(est.curve.jump_times, first.curve.jump_times):
            raise MixedMethods("estimates mix jump-time grids")
    if first.curve.jump_times.size == 0:
        curve = StepFunction.constant(sum(e.curve.initial_value for e in estimates))
    else:
        total = np.sum([e.curve.values for e in estimates], axis=0)
        curve = StepFunction(first.curve.jump_times, total,
                             sum(e.curve.initial_value for e in estimates))
    return CifEstimate(method=first.method, cause=TOTAL, z=first.z, curve=curve)
