"""Cause-specific Cox regression via Newton-Raphson on the partial likelihood.

Events of competing causes are treated as censoring.  All risk-set sums are
weighted, so bootstrap reweighting amounts to refitting with a different
weight vector.  The solver is written to operate on a whole batch of weight
vectors at once; the public single-fit entry point is the batch of size one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoEventsForCause

DEFAULT_SCORE_TOL = 1e-9
DEFAULT_LOGLIK_RTOL = 1e-12
DEFAULT_MAX_ITER = 100
DEFAULT_BETA_CAP = 50.0
DEFAULT_MAX_HALVINGS = 20


@dataclass(frozen=True)
class CoxFit:
    """Maximizer of one cause-specific partial likelihood.

    ``hessian`` is the Hessian of the log partial likelihood at the optimum
    (the negative observed information).  ``degenerate`` marks designs where
    the coefficient is not identifiable (no covariates that vary, or no
    events when produced by :func:`fit_all_causes`); beta is 0 there.
    """

    cause: int
    beta: np.ndarray
    loglik: float
    score_norm_at_opt: float
    hessian: np.ndarray
    iterations: int
    converged: bool
    degenerate: bool = False
    message: str = ""


def linear_predictor(fit, z):
    """Relative risk exp(beta' z) for a covariate vector z."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != fit.beta.shape:
        raise ValueError(f"z has length {z.shape[0]}, expected {fit.beta.shape[0]}")
    return float(np.exp(fit.beta @ z))


def _suffix_sum(a, axis):
    """Cumulative sum from the end, so out[..., i] = sum(a[..., i:])."""
    return np.flip(np.cumsum(np.flip(a, axis), axis=axis), axis)


class CauseLayout:
    """Time-sorted views of a dataset for one cause's partial likelihood.

    Depends only on times, events and covariates, so a single layout is
    reused across bootstrap refits (which change only the weights).
    """

    def __init__(self, data, cause):
        if not 1 <= cause <= data.num_causes:
            raise ValueError(f"cause must be in 1..{data.num_causes}, got {cause}")
        order = np.argsort(data.time, kind="stable")
        self.cause = int(cause)
        self.order = order
        self.z = data.covariates[order]
        self.n, self.d = self.z.shape
        self.event_rows = np.flatnonzero(data.event[order] == cause)
        # z z' outer products, shared by every Hessian evaluation
        self._zz = self.z[:, :, None] * self.z[:, None, :]

    def sort_weights(self, weights):
        """Reorder a (..., n) weight array into time-sorted order."""
        return np.asarray(weights, dtype=float)[..., self.order]


def _pl_batch(layout, beta, w_sorted, want_derivs=True):
    """Weighted log partial likelihood, score and Hessian for a batch.

    Parameters
    ----------
    beta : (B, d)
    w_sorted : (B, n) weights in time-sorted order

    Returns
    -------
    ll (B,), score (B, d), hess (B, d, d); the latter two are None when
    ``want_derivs`` is false.
    """
    z = layout.z
    e = layout.event_rows
    eta = beta @ z.T                                   # (B, n)
    wt = w_sorted * np.exp(eta)
    s0 = _suffix_sum(wt, axis=1)
    we = w_sorted[:, e]
    ll = np.sum(we * (eta[:, e] - np.log(s0[:, e])), axis=1)
    if not want_derivs:
        return ll, None, None
    s1 = _suffix_sum(wt[:, :, None] * z, axis=1)       # (B, n, d)
    zbar = s1[:, e, :] / s0[:, e, None]
    score = np.einsum("bk,bkd->bd", we, z[e] - zbar)
    s2 = _suffix_sum(wt[:, :, None, None] * layout._zz, axis=1)
    v = s2[:, e] / s0[:, e, None, None] - zbar[:, :, :, None] * zbar[:, :, None, :]
    hess = -np.einsum("bk,bkij->bij", we, v)
    return ll, score, hess


def _newton_step(hess, score):
    """Solve -H delta = score per batch row, falling back to pinv on singular H."""
    try:
        return np.linalg.solve(-hess, score[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.empty_like(score)
        for i in range(score.shape[0]):
            out[i] = np.linalg.pinv(-hess[i]) @ score[i]
        return out


@dataclass
class BatchFitResult:
    beta: np.ndarray          # (B, d)
    loglik: np.ndarray        # (B,)
    score: np.ndarray         # (B, d)
    hessian: np.ndarray       # (B, d, d)
    iterations: np.ndarray    # (B,) int
    converged: np.ndarray     # (B,) bool
    capped: np.ndarray        # (B,) bool, coefficient blow-up detected


def newton_batch(layout, w_sorted, init=None, *, score_tol=DEFAULT_SCORE_TOL,
                 loglik_rtol=DEFAULT_LOGLIK_RTOL, max_iter=DEFAULT_MAX_ITER,
                 beta_cap=DEFAULT_BETA_CAP, max_halvings=DEFAULT_MAX_HALVINGS):
    """Newton-Raphson with step-halving over a batch of weight vectors.

    A row converges when the score max-norm drops to ``score_tol`` or the
    relative log-likelihood change drops to ``loglik_rtol``.  A row whose
    coefficient max-norm exceeds ``beta_cap`` is flagged as capped (monotone
    likelihood) and frozen; it reports converged=False.
    """
    B = w_sorted.shape[0]
    d = layout.d
    if init is None:
        beta = np.zeros((B, d))
    else:
        beta = np.array(np.broadcast_to(np.asarray(init, dtype=float), (B, d)), dtype=float)

    ll, score, hess = _pl_batch(layout, beta, w_sorted)
    iterations = np.zeros(B, dtype=int)
    capped = np.zeros(B, dtype=bool)
    if d == 0:
        return BatchFitResult(beta, ll, score, hess, iterations,
                              np.ones(B, dtype=bool), capped)
    converged = np.max(np.abs(score), axis=1) <= score_tol

    for _ in range(max_iter):
        active = ~(converged | capped)
        if not active.any():
            break
        rows = np.flatnonzero(active)
        w_a = w_sorted[rows]
        step = _newton_step(hess[rows], score[rows])
        cur_ll = ll[rows]
        trial = beta[rows] + step
        trial_ll, _, _ = _pl_batch(layout, trial, w_a, want_derivs=False)
        for _h in range(max_halvings):
            worse = ~(trial_ll >= cur_ll - 1e-13 * (1.0 + np.abs(cur_ll)))
            worse &= np.isfinite(cur_ll)
            if not worse.any():
                break
            step[worse] *= 0.5
            trial[worse] = beta[rows[worse]] + step[worse]
            trial_ll[worse], _, _ = _pl_batch(layout, trial[worse], w_a[worse],
                                              want_derivs=False)
        beta[rows] = trial
        new_ll, new_score, new_hess = _pl_batch(layout, trial, w_a)
        iterations[rows] += 1

        over = np.max(np.abs(trial), axis=1) > beta_cap
        score_ok = np.max(np.abs(new_score), axis=1) <= score_tol
        ll_ok = np.abs(new_ll - cur_ll) <= loglik_rtol * np.maximum(1.0, np.abs(new_ll))
        capped[rows[over]] = True
        converged[rows[(score_ok | ll_ok) & ~over]] = True
        ll[rows], score[rows], hess[rows] = new_ll, new_score, new_hess

    return BatchFitResult(beta, ll, score, hess, iterations, converged, capped)


def _is_degenerate_design(covariates):
    """True when no covariate column varies across subjects (d >= 1)."""
    d = covariates.shape[1]
    return d >= 1 and bool(np.all(covariates.max(axis=0) == covariates.min(axis=0)))


def fit_cause_specific(data, cause, init=None, *, score_tol=DEFAULT_SCORE_TOL,
                       loglik_rtol=DEFAULT_LOGLIK_RTOL, max_iter=DEFAULT_MAX_ITER,
                       beta_cap=DEFAULT_BETA_CAP):
    """Maximize the weighted partial likelihood for one cause.

    Parameters
    ----------
    data : SurvivalDataset
    cause : int in 1..J
    init : (d,) array, optional
        Starting value; defaults to zero.

    Raises
    ------
    NoEventsForCause
        If the dataset contains no events of the requested cause.

    Nonconvergence (iteration cap or coefficient blow-up from a monotone
    likelihood) is reported through converged=False and ``message``, never
    silently and never as an exception.
    """
    layout = CauseLayout(data, cause)
    if layout.event_rows.size == 0:
        raise NoEventsForCause(cause)
    w_sorted = layout.sort_weights(data.weights)[None, :]

    if _is_degenerate_design(data.covariates):
        beta0 = np.zeros((1, layout.d))
        ll, score, hess = _pl_batch(layout, beta0, w_sorted)
        return CoxFit(cause=cause, beta=beta0[0], loglik=float(ll[0]),
                      score_norm_at_opt=float(np.max(np.abs(score[0]), initial=0.0)),
                      hessian=hess[0], iterations=0, converged=True, degenerate=True,
                      message="constant covariates; beta fixed at 0")

    res = newton_batch(layout, w_sorted, init=init, score_tol=score_tol,
                       loglik_rtol=loglik_rtol, max_iter=max_iter, beta_cap=beta_cap)
    converged = bool(res.converged[0]) and not bool(res.capped[0])
    if res.capped[0]:
        message = (f"coefficient max-norm exceeded {beta_cap:g}; "
                   "likely monotone partial likelihood (perfect separation in time order)")
    elif not converged:
        message = f"no convergence within {max_iter} iterations"
    else:
        message = ""
    return CoxFit(cause=cause, beta=res.beta[0], loglik=float(res.loglik[0]),
                  score_norm_at_opt=float(np.max(np.abs(res.score[0]), initial=0.0)),
                  hessian=res.hessian[0], iterations=int(res.iterations[0]),
                  converged=converged, message=message)


def _empty_cause_fit(data, cause):
    d = data.covariate_dim
    return CoxFit(cause=cause, beta=np.zeros(d), loglik=0.0, score_norm_at_opt=0.0,
                  hessian=np.zeros((d, d)), iterations=0, converged=True,
                  degenerate=True, message=f"no events of cause {cause}; beta fixed at 0")


def fit_all_causes(data, init=None, *, on_no_events="degenerate", **kwargs):
    """Fit every cause 1..J, returning the fits in cause order.

    With ``on_no_events='degenerate'`` (default) a cause without events gets
    a degenerate zero fit, so downstream incidence curves are identically 0
    for that cause.  Pass 'raise' to surface :class:`NoEventsForCause`.
    """
    fits = []
    for cause in range(1, data.num_causes + 1):
        try:
            fits.append(fit_cause_specific(data, cause, init=init, **kwargs))
        except NoEventsForCause:
            if on_no_events != "degenerate":
                raise
            fits.append(_empty_cause_fit(data, cause))
    return fits
