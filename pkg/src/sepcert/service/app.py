"""HTTP front end: one POST route per command, JSON in and out.

Handler usage errors surface as 400 with a detail string; negative verdicts
are ordinary 200 responses whose report says not_certified.
"""

from fastapi import FastAPI, HTTPException

from . import handlers
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


def create_app() -> FastAPI:
    app = FastAPI(title="separable contraction certificates")

    @app.get("/health")
    def health():
        return {"status": "ok"}

    def run(fn, req) -> Report:
        try:
            return fn(req)
        except handlers.UsageError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None

    @app.post("/check-positive", response_model=Report)
    def check_positive(req: CheckPositiveRequest):
        return run(handlers.check_positive, req)

    @app.post("/metric", response_model=Report)
    def metric(req: MetricRequest):
        return run(handlers.metric, req)

    @app.post("/small-gain", response_model=Report)
    def small_gain(req: SmallGainRequest):
        return run(handlers.small_gain_cmd, req)

    @app.post("/sprocedure", response_model=Report)
    def sprocedure(req: SProcedureRequest):
        return run(handlers.sprocedure_cmd, req)

    @app.post("/simulate", response_model=Report)
    def simulate(req: SimulateRequest):
        return run(handlers.simulate, req)

    @app.post("/synthesize", response_model=Report)
    def synthesize(req: SynthesizeRequest):
        return run(handlers.synthesize, req)

    @app.post("/virtual", response_model=Report)
    def virtual(req: VirtualRequest):
        return run(handlers.virtual, req)

    @app.post("/audit", response_model=Report)
    def audit(req: AuditRequest):
        return run(handlers.audit, req)

    return app


app = create_app()
