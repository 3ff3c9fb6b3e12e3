"""Worst-violation search by iterative weight escalation.

Each round refits the certifier after adding ``xi`` to the multiplier of
every sample that has the target outcome but the other sensitive value.
Regions without a violation then become cheaper to exclude, and the
certificate shrinks toward the most severely treated sub-population.  The
loop stops once the certificate's weighted mass falls to the floor; the
last certificate above the floor is reported.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .certify import (
    Certificate,
    CertifierModel,
    SampleDivergenceError,
    SplitContext,
    delta_from_indicator,
    fit_certifier,
    gamma_from_indicator,
    prepare_split,
    reduction_labels,
)
from .core import AuditConfig, AuditDataset, AuditError, check_weights, disparate_treatment
from .core import subgroup_profile

log = logging.getLogger(__name__)


class FloorTooHighError(AuditError):
    pass


@dataclass
class TraceEntry:
    t: int
    delta_hat: float  # train split
    alpha_hat: float  # train split; drives termination
    delta_hat_test: float
    alpha_hat_test: float
    note: str = ""

    def as_row(self) -> tuple:
        return (self.t, self.delta_hat, self.alpha_hat)


@dataclass
class ViolationReport:
    delta_m: float
    alpha: float
    certificate: Certificate
    trace: list
    profile: object
    dt_g: float
    reported_iteration: int
    floor_crossed: bool
    subgroup_mask: np.ndarray = field(repr=False, default=None)


def wva_alpha_hat(dataset: AuditDataset, weights, c, target_y: int) -> float:
    """Weighted fraction of samples with c(x)=1 and Y=target_y."""
    u = check_weights(weights, len(dataset))
    c = np.asarray(c)
    return float(u[(c == 1) & (dataset.y == target_y)].sum() / u.sum())


def escalation_mask(dataset: AuditDataset, target_y: int, target_s: int = 1) -> np.ndarray:
    """Samples whose multiplier grows: target outcome, other sensitive value.

    For (target_y, target_s) = (+1, +1) these are exactly the samples with
    s_i != y_i and y_i = +1.
    """
    return (dataset.y == target_y) & (dataset.s != target_s)


def _safe_delta(dataset, u, c, target_y, target_s):
    try:
        return delta_from_indicator(dataset, u, c, target_y, target_s)
    except SampleDivergenceError:
        return float("nan")


def wva_run(train: AuditDataset, test: AuditDataset, config: AuditConfig, target_y: int,
            target_s: int, scheme, propensity=None, context: SplitContext | None = None,
            lambda_reg=None, bandwidth=None) -> ViolationReport:
    lam = config.lambda_reg if lambda_reg is None else lambda_reg
    ctx = context or prepare_split(train, test, config, target_s, scheme, propensity, lam, bandwidth)
    labels = reduction_labels(train, target_y, target_s)
    mult = np.ones(len(train))
    bump = escalation_mask(train, target_y, target_s)
    rng = np.random.default_rng(int(config.seed))

    trace = []
    best = None  # (t, model, c_test)
    crossed = False
    init = None
    for t in range(1, config.max_iterations + 1):
        model = fit_certifier(train, ctx.u_train, labels, ctx.fmap, lam, per_sample_multipliers=mult,
                              loss=config.loss, tie_band_tau=config.tie_band_tau,
                              Z=ctx.Z_train, init=init)
        init = model.theta
        c_tr = model.indicator(Z=ctx.Z_train, rng=rng)
        c_te = model.indicator(Z=ctx.Z_test, rng=rng)
        # mass is measured under the base weights; multipliers only steer the fit
        a_tr = wva_alpha_hat(train, ctx.u_train, c_tr, target_y)
        a_te = wva_alpha_hat(test, ctx.u_test, c_te, target_y)
        d_tr = _safe_delta(train, ctx.u_train, c_tr, target_y, target_s)
        d_te = _safe_delta(test, ctx.u_test, c_te, target_y, target_s)
        note = "" if np.isfinite(d_te) else "empty sensitive cell on test"
        trace.append(TraceEntry(t, d_tr, a_tr, d_te, a_te, note))
        log.debug("wva t=%d alpha=%.4f delta_train=%.4f delta_test=%.4f", t, a_tr, d_tr, d_te)
        if a_tr <= config.alpha_floor:
            if t == 1:
                raise FloorTooHighError(
                    f"floor too high: first certificate has mass {a_tr:.4f} <= alpha_floor "
                    f"{config.alpha_floor}; use a smaller alpha"
                )
            crossed = True
            break
        if np.isfinite(d_te):
            best = (t, model, c_te)
        mult = mult + config.xi * bump
    if best is None:
        raise SampleDivergenceError(
            "unbounded divergence in sample: every iterate above the floor has an empty "
            "sensitive cell on the test split"
        )
    t_rep, model, c_te = best
    delta_m = delta_from_indicator(test, ctx.u_test, c_te, target_y, target_s)
    gamma, mass = gamma_from_indicator(test, ctx.u_test, c_te, target_y, target_s)
    cert = Certificate(model, target_y, target_s, gamma, mass)
    g = c_te == 1
    try:
        dt_g = disparate_treatment(test, ctx.u_test, g, s=target_s, outcome=target_y)
    except AuditError:
        dt_g = float("nan")
    return ViolationReport(
        delta_m=delta_m,
        alpha=mass,
        certificate=cert,
        trace=trace,
        profile=subgroup_profile(test, g),
        dt_g=dt_g,
        reported_iteration=t_rep,
        floor_crossed=crossed,
        subgroup_mask=g,
    )
