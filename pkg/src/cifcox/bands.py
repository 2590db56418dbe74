"""Weighted-bootstrap fixed-width simultaneous confidence bands.

Each bootstrap replication draws Exp(1) subject weights normalized to mean 1,
refits every cause-specific Cox model under those weights, recomputes the
incidence curves, and records the largest absolute deviation from the
original curve over the original event times.  The band half-width is an
upper empirical quantile of those sup deviations, so the band has a fixed
width over the whole follow-up interval.

One set of weight draws serves every (method, cause) pair: the expensive part
is the per-draw refit, and the per-pair sups are read off the same refits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cox import CauseLayout, linear_predictor, newton_batch
from .errors import BootstrapFitFailure
from .estimators import EventGrid, Method, cif_values_batch
from .step import StepFunction

REDRAW_FRACTION = 0.05


def draw_weights(n, rng=None):
    """Exp(1) bootstrap weights normalized to mean exactly 1.

    ``rng`` is a numpy Generator or anything accepted by
    ``np.random.default_rng``; a fixed seed reproduces the vector.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng)
    w = rng.exponential(1.0, size=n)
    return w / w.mean()


@dataclass(frozen=True)
class BandResult:
    """Fixed-width simultaneous band for one (method, cause) curve.

    The band is [center - half_width, center + half_width] pointwise; it is
    clipped to [0, 1] only for display, never when assessing coverage.
    """

    method: Method
    cause: int
    z: np.ndarray
    half_width: float
    center: StepFunction
    level: float
    replications: int
    n_failed: int = 0
    n_redrawn: int = 0

    @property
    def lower(self):
        return self.center.shifted(-self.half_width)

    @property
    def upper(self):
        return self.center.shifted(self.half_width)

    def covers(self, times, truth):
        """True when ``truth`` lies inside the band at every time point."""
        truth = np.asarray(truth, dtype=float)
        return bool(np.all(np.abs(self.center(times) - truth) <= self.half_width))


def ceiling_rank_quantile(values, level):
    """The ceil(level * B)-th order statistic of ``values``."""
    values = np.sort(np.asarray(values, dtype=float))
    if values.size == 0:
        raise ValueError("no values to take a quantile of")
    rank = min(max(math.ceil(level * values.size), 1), values.size)
    return float(values[rank - 1])


class BootstrapEngine:
    """Batched weighted-bootstrap machinery for one dataset.

    Precomputes the event grid and per-cause layouts once; each call to
    :meth:`sup_deviations` runs B replications in vectorized batches.
    """

    def __init__(self, data, fits):
        self.data = data
        self.fits = fits
        self.grid = EventGrid(data)
        self.layouts = [CauseLayout(data, j + 1) for j in range(data.num_causes)]
        self._z_sorted = data.covariates[self.grid.order]

    def _thetas(self, betas):
        """(J, B, n) relative risks in sorted order from (J, B, d) coefficients."""
        return np.exp(np.einsum("jbd,nd->jbn", betas, self._z_sorted))

    def curve_values(self, z, weights=None, betas=None):
        """(3, J, K) incidence values at the event times for one weight vector."""
        J = self.data.num_causes
        w = self.data.weights if weights is None else np.asarray(weights, dtype=float)
        if betas is None:
            betas = np.stack([f.beta for f in self.fits])
        betas = betas.reshape(J, 1, -1)
        theta_z = np.exp(betas @ np.atleast_1d(np.asarray(z, dtype=float)))
        f1, f2, f3 = cif_values_batch(self.grid, self._thetas(betas), theta_z,
                                      self.grid.sort(w)[None, :])
        return np.stack([f1[:, 0], f2[:, 0], f3[:, 0]])

    def _refit(self, W):
        """Refit every cause for a (B, n) weight block; returns betas, ok mask."""
        B = W.shape[0]
        J = self.data.num_causes
        d = self.data.covariate_dim
        betas = np.zeros((J, B, d))
        ok = np.ones(B, dtype=bool)
        for j, (fit, layout) in enumerate(zip(self.fits, self.layouts)):
            if fit.degenerate or d == 0:
                betas[j] = fit.beta
                continue
            res = newton_batch(layout, layout.sort_weights(W), init=fit.beta)
            betas[j] = res.beta
            ok &= res.converged & ~res.capped
        return betas, ok

    def sup_deviations(self, z, B, seed, redraw_fraction=REDRAW_FRACTION):
        """Sup |bootstrap curve - original curve| per (method, cause).

        Replications whose refit diverges are redrawn from spare RNG streams,
        up to ``redraw_fraction * B`` extra draws; replications still failing
        afterwards are dropped and counted.

        Returns
        -------
        sups : (3, J, B_eff) array
        n_failed : int -- replications dropped after the redraw budget
        n_redrawn : int -- spare draws consumed
        """
        z = np.atleast_1d(np.asarray(z, dtype=float))
        n = self.data.n
        J = self.data.num_causes
        n_spare = math.ceil(redraw_fraction * B)
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        streams = ss.spawn(B + n_spare)

        W = np.empty((B, n))
        for m in range(B):
            W[m] = draw_weights(n, np.random.default_rng(streams[m]))

        betas, ok = self._refit(W)
        n_redrawn = 0
        next_spare = B
        while not ok.all() and next_spare < B + n_spare:
            bad = np.flatnonzero(~ok)
            take = min(bad.size, B + n_spare - next_spare)
            rows = bad[:take]
            for r in rows:
                W[r] = draw_weights(n, np.random.default_rng(streams[next_spare]))
                next_spare += 1
                n_redrawn += 1
            new_betas, new_ok = self._refit(W[rows])
            betas[:, rows] = new_betas
            ok[rows] = new_ok
        n_failed = int(np.count_nonzero(~ok))

        keep = np.flatnonzero(ok)
        orig = self.curve_values(z)                                   # (3, J, K)
        theta_z = np.exp(np.einsum("jbd,d->jb", betas[:, keep], z))
        f1, f2, f3 = cif_values_batch(self.grid, self._thetas(betas[:, keep]),
                                      theta_z, self.grid.sort(W[keep]))
        boot = np.stack([f1, f2, f3])                                 # (3, J, B_eff, K)
        if self.grid.n_events:
            sups = np.max(np.abs(boot - orig[:, :, None, :]), axis=3)
        else:
            sups = np.zeros((3, J, keep.size))
        return sups, n_failed, n_redrawn


def band_critical_value(data, method, cause, z, B=1000, level=0.95, seed=None,
                        fits=None):
    """Fixed-width simultaneous band for one (method, cause) incidence curve.

    Parameters
    ----------
    data : SurvivalDataset
    method : 1, 2 or 3
    cause : int in 1..J
    z : covariate vector at which curves are evaluated
    B : number of bootstrap replications
    level : band level (default 0.95)
    seed : int or numpy SeedSequence; fixes the weight draws
    fits : optional pre-computed fits (one per cause)

    The half-width is the ceiling-rank empirical ``level``-quantile of the
    sup deviations.  Identical seed and B give an identical half-width.
    """
    from .cox import fit_all_causes

    if not 1 <= cause <= data.num_causes:
        raise ValueError(f"cause must be in 1..{data.num_causes}")
    method = Method(method)
    if B < 1:
        raise ValueError("B must be >= 1")
    if fits is None:
        fits = fit_all_causes(data)
    engine = BootstrapEngine(data, fits)
    sups, n_failed, n_redrawn = engine.sup_deviations(z, B, seed)
    per_pair = sups[method - 1, cause - 1]
    if per_pair.size == 0:
        raise BootstrapFitFailure("every bootstrap replication diverged")
    half_width = ceiling_rank_quantile(per_pair, level)
    values = engine.curve_values(z)[method - 1, cause - 1]
    if engine.grid.n_events:
        center = StepFunction(engine.grid.index.times, values, 0.0)
    else:
        center = StepFunction.constant(0.0)
    return BandResult(method=method, cause=cause, z=np.atleast_1d(np.asarray(z, float)),
                      half_width=half_width, center=center, level=level,
                      replications=B, n_failed=n_failed, n_redrawn=n_redrawn)
