"""Command implementations shared by the HTTP service and the CLI.

Each handler is a pure function from a request body to a Report.  Usage
errors (malformed files, dimension mismatches) raise UsageError; negative
analysis outcomes are reported in the verdict, never raised.  Reports are
deterministic for a fixed seed: the timing block counts work units rather
than quoting wall-clock time.
"""

from __future__ import annotations

import io

import numpy as np

from .. import controller, modelfile, simulator, small_gain, sprocedure
from ..model import NotMonotoneError, UnboundedDerivativeError
from ..positive_lti import certify_positive_lti
from ..separable_metric import (
    alternate_kinds,
    certify_network,
    local_metric_along_trajectory,
    pointwise_lmi_audit,
)
from .schemas import (
    AuditRequest,
    CheckPositiveRequest,
    MetricRequest,
    Report,
    SimulateRequest,
    SmallGainRequest,
    SProcedureRequest,
    SynthesizeRequest,
    VirtualRequest,
)


class UsageError(ValueError):
    """Bad input from the caller; maps to exit 1 / HTTP 400."""


def _vec(a) -> list:
    return [float(v) for v in np.asarray(a).ravel()]


def _mat(a) -> list:
    return [[float(v) for v in row] for row in np.asarray(a)]


def _load_model(text: str) -> modelfile.ModelDocument:
    try:
        return modelfile.parse_model(text, where="model")
    except modelfile.ParseError as exc:
        raise UsageError(str(exc)) from None


def _metric_certificate(cert) -> dict:
    pr = cert.provenance
    out = {
        "kind": cert.kind,
        "weights": _vec(cert.weights),
        "rate": float(cert.rate),
        "scope": cert.scope,
        "margins": {"sum": float(pr.margin_sum), "max": float(pr.margin_max)},
    }
    alts = {
        k: {"weights": _vec(c.weights), "rate": float(c.rate)}
        for k, c in alternate_kinds(cert).items()
    }
    if alts:
        out["alternates"] = alts
    return out


def _metric_provenance(cert) -> dict:
    pr = cert.provenance
    out = {
        "comparison": _mat(pr.comparison),
        "p": _vec(pr.p),
        "q": _vec(pr.q),
        "flags": list(pr.flags),
    }
    if pr.want_rate is not None:
        out["want_rate"] = float(pr.want_rate)
        out["want_rate_satisfied"] = bool(pr.want_rate_satisfied)
    if pr.tube is not None:
        out["tube"] = {"x0": _vec(pr.tube[0]), "radius": float(pr.tube[1])}
    return out


def _rate_shortfall(cert):
    """Detail string when a requested rate was not certified, else None."""
    pr = cert.provenance
    if pr.want_rate is not None and not pr.want_rate_satisfied:
        return (f"certified rate {cert.rate:.6g} is below the requested "
                f"{pr.want_rate:.6g}")
    return None


def check_positive(req: CheckPositiveRequest) -> Report:
    try:
        a = np.array(req.matrix, dtype=float)
        cert = certify_positive_lti(a)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    timing = {"work": {"matrix_dim": int(a.shape[0])}}
    if cert is None:
        return Report(command="check-positive", verdict="not_certified",
                      reason="not_hurwitz", timing=timing)
    return Report(
        command="check-positive",
        verdict="certified",
        certificate={
            "kind": "diagonal_quadratic",
            "p": _vec(cert.p),
            "q": _vec(cert.q),
            "d": _vec(cert.d),
            "rate": float(cert.decay),
        },
        provenance={"comparison": _mat(a)},
        timing=timing,
    )


def metric(req: MetricRequest) -> Report:
    doc = _load_model(req.model)
    m = doc.model
    if req.tube_radius is not None:
        x0 = np.array(req.x0, dtype=float) if req.x0 is not None \
            else 0.5 * (m.box_lo + m.box_hi)
        if x0.shape != (m.n,):
            raise UsageError(f"x0 must have {m.n} coordinates")
        try:
            cert = local_metric_along_trajectory(m, x0, req.tube_radius,
                                                 want_rate=req.rate)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    else:
        cert = certify_network(m, want_rate=req.rate)
    timing = {"work": {"nodes": m.n, "audit_samples": 0}}
    if not cert:
        return Report(command="metric", verdict="not_certified",
                      reason=cert.reason, detail=cert.detail or None,
                      seed=req.seed, timing=timing)
    report = Report(
        command="metric",
        verdict="certified",
        certificate=_metric_certificate(cert),
        provenance=_metric_provenance(cert),
        timing=timing,
        seed=req.seed,
    )
    shortfall = _rate_shortfall(cert)
    if shortfall:
        report = report.model_copy(update={
            "verdict": "not_certified", "reason": "rate_not_met",
            "detail": shortfall,
        })
    if cert.scope != "global_box":
        # the box-sampling audit has no business outside the tube
        return report
    audit = pointwise_lmi_audit(m, cert, samples=req.audit_samples, seed=req.seed)
    report.timing["work"]["audit_samples"] = audit.samples
    report.provenance["audit"] = {
        "max_eig": float(audit.max_eig),
        "samples": audit.samples,
        "sound": bool(audit.sound),
    }
    if not audit.sound:
        return report.model_copy(update={
            "verdict": "not_certified",
            "reason": "audit_failed",
            "detail": f"sampled LMI eigenvalue {audit.max_eig:.6g} > 1e-9",
        })
    return report


def small_gain_cmd(req: SmallGainRequest) -> Report:
    if (req.alpha is None) == (req.model is None):
        raise UsageError("provide either a gain matrix or a model, not both")
    provenance: dict = {}
    work = {"samples": 0}
    if req.alpha is not None:
        try:
            gm = small_gain.GainMatrix(np.array(req.alpha, dtype=float))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    else:
        doc = _load_model(req.model)
        weights = 1.0 if req.weights is None else np.array(req.weights, dtype=float)
        try:
            gm = small_gain.audit_gains(doc.model, weights,
                                        samples=req.samples, seed=req.seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        work["samples"] = req.samples
        if not gm:
            return Report(command="small-gain", verdict="not_certified",
                          reason=gm.reason, detail=gm.detail or None,
                          seed=req.seed, timing={"work": work})
    provenance["alpha"] = _mat(np.asarray(gm))
    if gm.provenance:
        provenance["gain_audit"] = {
            k: (list(v) if isinstance(v, (list, tuple)) else v)
            for k, v in gm.provenance.items()
        }
    w = small_gain.compose(gm)
    if not w:
        return Report(command="small-gain", verdict="not_certified",
                      reason=w.reason, detail=w.detail or None,
                      provenance=provenance, seed=req.seed,
                      timing={"work": work})
    return Report(
        command="small-gain",
        verdict="certified",
        certificate={
            "kind": "composite_storage",
            "p": _vec(w.p),
            "q": _vec(w.q),
            "rate": float(w.decay),
            "margins": {"p": float(w.margin_p), "q": float(w.margin_q)},
        },
        provenance=provenance,
        seed=req.seed,
        timing={"work": work},
    )


def sprocedure_cmd(req: SProcedureRequest) -> Report:
    doc = _load_model(req.model)
    m = doc.model
    if doc.uncertainty is not None:
        H = doc.uncertainty.H
        psi = doc.uncertainty.psi if req.psi is None else req.psi
    else:
        if req.psi not in (None, 0.0):
            raise UsageError(
                "psi > 0 needs an [uncertainty] section in the model file for H"
            )
        H, psi = np.zeros((m.n, m.n)), 0.0
    try:
        u = sprocedure.UncertainCoupling(H=H, psi=psi)
        res = sprocedure.certify_uncertain(m, u, req.rate)
    except NotMonotoneError as exc:
        return Report(command="sprocedure", verdict="not_certified",
                      reason="not_monotone", detail=str(exc),
                      seed=req.seed, timing={"work": {"nodes": m.n}})
    except UnboundedDerivativeError as exc:
        return Report(command="sprocedure", verdict="not_certified",
                      reason="no_finite_sup", detail=str(exc),
                      seed=req.seed, timing={"work": {"nodes": m.n}})
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    timing = {"work": {"nodes": m.n, "lmi_dim": 2 * m.n}}
    if isinstance(res, sprocedure.SProcInfeasible):
        return Report(command="sprocedure", verdict="not_certified",
                      reason=res.reason, detail=res.detail or None,
                      seed=req.seed, timing=timing)
    return Report(
        command="sprocedure",
        verdict="certified",
        certificate={
            "kind": "diagonal_quadratic",
            "d": _vec(res.d),
            "theta": float(res.theta),
            "rate": float(res.rate),
            "lmi_margin": float(res.lmi_margin),
        },
        provenance={
            "comparison": _mat(res.comparison),
            "psi": float(psi),
            "H": _mat(H),
            "flags": list(res.flags),
        },
        seed=req.seed,
        timing=timing,
    )


def _traj_csv(traj) -> str:
    buf = io.StringIO()
    simulator.trajectory_to_csv(traj, buf)
    return buf.getvalue()


def simulate(req: SimulateRequest) -> Report:
    doc = _load_model(req.model)
    m = doc.model
    x0 = np.array(req.x0, dtype=float) if req.x0 is not None \
        else 0.5 * (m.box_lo + m.box_hi)
    try:
        traj = simulator.integrate(m, x0, h=req.h)
    except simulator.SimulationError as exc:
        raise UsageError(str(exc)) from None
    return Report(
        command="simulate",
        verdict="completed",
        provenance={
            "warnings": list(traj.warnings),
            "audit_error": float(traj.audit_error),
            "x0": _vec(x0),
            "step": float(traj.step),
        },
        timing={"work": {"steps": int(traj.times.shape[0] - 1)}},
        seed=req.seed,
        csv=_traj_csv(traj),
    )


def synthesize(req: SynthesizeRequest) -> Report:
    doc = _load_model(req.model)
    m = doc.model
    if m.input_matrix is None:
        raise UsageError("synthesis needs an [input] section in the model file")
    try:
        times, xstar, ustar = modelfile.parse_target_csv(req.target, where="target")
    except modelfile.ParseError as exc:
        raise UsageError(str(exc)) from None
    if xstar.shape[1] != m.n:
        raise UsageError(
            f"target has {xstar.shape[1]} state columns but the model has {m.n} nodes"
        )
    if ustar is not None and ustar.shape[1] != m.input_matrix.shape[1]:
        raise UsageError(
            f"target has {ustar.shape[1]} input columns but the model has "
            f"{m.input_matrix.shape[1]} channels"
        )
    cert = certify_network(m, want_rate=req.rate)
    if not cert:
        return Report(command="synthesize", verdict="not_certified",
                      reason=cert.reason, detail=cert.detail or None,
                      seed=req.seed, timing={"work": {"steps": 0}})
    shortfall = _rate_shortfall(cert)
    if shortfall:
        return Report(command="synthesize", verdict="not_certified",
                      reason="rate_not_met", detail=shortfall,
                      certificate=_metric_certificate(cert),
                      seed=req.seed, timing={"work": {"steps": 0}})
    cc = controller.build_coordinates(cert)
    x0 = np.array(req.x0, dtype=float) if req.x0 is not None \
        else 0.5 * (m.box_lo + m.box_hi)
    span = (float(times[0]), float(times[-1]))
    try:
        traj = controller.track(m, cc, x0, times, xstar, ustar,
                                h=req.h, t_span=span)
    except controller.UncontrollableDirection as exc:
        return Report(command="synthesize", verdict="not_certified",
                      reason="uncontrollable_direction", detail=str(exc),
                      seed=req.seed, timing={"work": {"steps": 0}})
    except (simulator.SimulationError, controller.ControllerError) as exc:
        raise UsageError(str(exc)) from None

    zs = cc.z_of_x(np.stack([np.interp(traj.times, times, xstar[:, j])
                             for j in range(m.n)], axis=1))
    v = np.sum((cc.z_of_x(traj.states) - zs) ** 2, axis=1)
    buf = io.StringIO()
    buf.write("t," + ",".join(f"x{i+1}" for i in range(m.n)) + ",V\n")
    for k in range(traj.times.shape[0]):
        row = [f"{traj.times[k]:.12g}"] + [f"{x:.12g}" for x in traj.states[k]]
        row.append(f"{v[k]:.12g}")
        buf.write(",".join(row) + "\n")
    return Report(
        command="synthesize",
        verdict="certified",
        certificate=_metric_certificate(cert),
        provenance={
            "x0": _vec(x0),
            "V_initial": float(v[0]),
            "V_final": float(v[-1]),
            "rate": float(cert.rate),
            "warnings": list(traj.warnings),
        },
        timing={"work": {"steps": int(traj.times.shape[0] - 1)}},
        seed=req.seed,
        csv=buf.getvalue(),
    )


def virtual(req: VirtualRequest) -> Report:
    try:
        fs = modelfile.parse_factored(req.factored, where="factored")
    except modelfile.ParseError as exc:
        raise UsageError(str(exc)) from None
    rep = simulator.virtual_system_certify(fs, x0_samples=req.samples,
                                           seed=req.seed)
    timing = {"work": {"samples": rep.sample_count}}
    provenance = {
        "max_y_deviation": float(rep.max_y_deviation),
        "sample_count": rep.sample_count,
        "step": float(rep.step),
    }
    if not rep.certified:
        kind, detail = rep.failure
        return Report(command="virtual", verdict="not_certified", reason=kind,
                      detail=detail, provenance=provenance, seed=req.seed,
                      timing=timing)
    return Report(
        command="virtual",
        verdict="certified",
        certificate={
            "kind": "per_sample_diagonal",
            "samples": [
                {"x0": _vec(s.x0), "weights": _vec(s.weights),
                 "rate": float(s.decay)}
                for s in rep.samples
            ],
        },
        provenance=provenance,
        seed=req.seed,
        timing=timing,
    )


def audit(req: AuditRequest) -> Report:
    doc = _load_model(req.model)
    m = doc.model
    cert = certify_network(m, want_rate=req.rate)
    if not cert:
        return Report(command="audit", verdict="not_certified",
                      reason=cert.reason, detail=cert.detail or None,
                      seed=req.seed, timing={"work": {"samples": 0}})
    rep = pointwise_lmi_audit(m, cert, samples=req.samples, seed=req.seed,
                              rate=req.rate)
    x, t = rep.worst_point
    sound = rep.sound and not _rate_shortfall(cert)
    report = Report(
        command="audit",
        verdict="certified" if sound else "not_certified",
        certificate=_metric_certificate(cert),
        provenance={
            "audit": {
                "max_eig": float(rep.max_eig),
                "samples": rep.samples,
                "rate": float(rep.rate),
                "worst_point": {"x": _vec(x), "t": float(t)},
                "sound": bool(rep.sound),
            }
        },
        seed=req.seed,
        timing={"work": {"samples": rep.samples}},
    )
    shortfall = _rate_shortfall(cert)
    if shortfall:
        return report.model_copy(update={"reason": "rate_not_met",
                                         "detail": shortfall})
    if not rep.sound:
        return report.model_copy(update={
            "reason": "audit_failed",
            "detail": f"sampled LMI eigenvalue {rep.max_eig:.6g} > 1e-9",
        })
    return report
