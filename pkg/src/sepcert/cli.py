"""Command line front end.

Runs the service handlers in process by default; --server URL sends the same
request to a running HTTP instance instead.  Exit codes: 0 when certified or
completed, 2 when analysis says no, 1 for usage and I/O problems.  All stdout
output is a pure function of the inputs and --seed; wall-clock time goes to
stderr so runs stay byte-for-byte reproducible.
"""

import argparse
import json
import sys
import time

from .modelfile import ParseError, parse_matrix
from .service import handlers
from .service.handlers import UsageError
from .service.schemas import (
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

_ROUTES = {
    "check-positive": handlers.check_positive,
    "metric": handlers.metric,
    "small-gain": handlers.small_gain_cmd,
    "sprocedure": handlers.sprocedure_cmd,
    "simulate": handlers.simulate,
    "synthesize": handlers.synthesize,
    "virtual": handlers.virtual,
    "audit": handlers.audit,
}


def _read(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None


def _floats(text: str) -> list:
    try:
        return [float(s) for s in text.split(",")]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _matrix_rows(text: str, where: str) -> list:
    return [[float(v) for v in row] for row in parse_matrix(text, where)]


def _looks_like_model(text: str) -> bool:
    for line in text.splitlines():
        body = line.split("#", 1)[0].strip()
        if body:
            return body.startswith("[")
    return False


def _fmt(v: float) -> str:
    return f"{float(v):.9g}"


def _render(report: Report, wrote: str = None) -> str:
    head = f"{report.command}: {report.verdict}"
    if report.reason:
        head += f" [{report.reason}]"
    lines = [head]
    if report.detail:
        lines.append(f"  {report.detail}")
    c = report.certificate or {}
    if "kind" in c:
        lines.append(f"  kind: {c['kind']}")
    for key in ("rate", "theta", "lmi_margin"):
        if key in c:
            lines.append(f"  {key}: {_fmt(c[key])}")
    for key in ("weights", "d", "p", "q"):
        if key in c:
            lines.append(f"  {key}: [{', '.join(_fmt(v) for v in c[key])}]")
    if isinstance(c.get("samples"), list):
        lines.append(f"  per-sample certificates: {len(c['samples'])}")
    pr = report.provenance or {}
    if "audit" in pr:
        a = pr["audit"]
        lines.append(f"  audit: max_eig {_fmt(a['max_eig'])}"
                     f" over {a['samples']} samples")
    if "audit_error" in pr:
        lines.append(f"  integration audit error: {_fmt(pr['audit_error'])}")
    if "max_y_deviation" in pr:
        lines.append(f"  max output deviation: {_fmt(pr['max_y_deviation'])}")
    if "V_initial" in pr:
        lines.append(f"  V: {_fmt(pr['V_initial'])} -> {_fmt(pr['V_final'])}")
    for w in pr.get("warnings", ()):
        lines.append(f"  warning: {w}")
    if report.csv is not None:
        rows = report.csv.count("\n") - 1
        if wrote:
            lines.append(f"  wrote {wrote} ({rows} rows)")
        else:
            lines.append(f"  trajectory rows: {rows} (use --out to save)")
    return "\n".join(lines) + "\n"


def _post(server: str, command: str, payload: dict) -> Report:
    import httpx

    url = server.rstrip("/") + "/" + command
    try:
        resp = httpx.post(url, json=payload, timeout=600.0)
    except httpx.HTTPError as exc:
        raise UsageError(f"cannot reach {url}: {exc}") from None
    if resp.status_code == 400:
        raise UsageError(resp.json().get("detail", "bad request"))
    if resp.status_code != 200:
        raise UsageError(f"{url} returned HTTP {resp.status_code}")
    return Report.model_validate(resp.json())


def _build_request(args):
    cmd = args.command
    if cmd == "check-positive":
        return CheckPositiveRequest(
            matrix=_matrix_rows(_read(args.file), args.file))
    if cmd == "metric":
        return MetricRequest(
            model=_read(args.file), rate=args.rate,
            audit_samples=args.audit_samples, seed=args.seed,
            tube_radius=args.tube_radius,
            x0=None if args.x0 is None else _floats(args.x0))
    if cmd == "small-gain":
        text = _read(args.file)
        if _looks_like_model(text):
            return SmallGainRequest(
                model=text, samples=args.samples, seed=args.seed,
                weights=None if args.weights is None else _floats(args.weights))
        if args.weights is not None:
            raise UsageError("--weights applies only to model files")
        return SmallGainRequest(alpha=_matrix_rows(text, args.file),
                                samples=args.samples, seed=args.seed)
    if cmd == "sprocedure":
        return SProcedureRequest(model=_read(args.file), rate=args.rate,
                                 psi=args.psi, seed=args.seed)
    if cmd == "simulate":
        return SimulateRequest(
            model=_read(args.file), h=args.step, seed=args.seed,
            x0=None if args.x0 is None else _floats(args.x0))
    if cmd == "synthesize":
        return SynthesizeRequest(
            model=_read(args.file), target=_read(args.target),
            rate=args.rate, h=args.step, seed=args.seed,
            x0=None if args.x0 is None else _floats(args.x0))
    if cmd == "virtual":
        return VirtualRequest(factored=_read(args.file),
                              samples=args.samples, seed=args.seed)
    if cmd == "audit":
        return AuditRequest(model=_read(args.file), rate=args.rate,
                            samples=args.samples, seed=args.seed)
    raise UsageError(f"unknown command {cmd!r}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sepcert",
                description="separable contraction certificates for "
                            "monotone networked systems")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, rate=False, samples=None, x0=False, out=False):
        sp.add_argument("--json", metavar="PATH",
                        help="write the full JSON report here")
        sp.add_argument("--server", metavar="URL",
                        help="send the request to a running HTTP service")
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        if rate:
            sp.add_argument("--rate", type=float, default=None,
                            help="required contraction rate")
        if samples is not None:
            sp.add_argument("--samples", type=int, default=samples)
        if x0:
            sp.add_argument("--x0", metavar="V1,V2,...",
                            help="initial state (default: box midpoint)")
        if out:
            sp.add_argument("--out", metavar="CSV",
                            help="write the trajectory CSV here")

    sp = sub.add_parser("check-positive",
                        help="Hurwitz certificate for a Metzler matrix")
    sp.add_argument("file", help="whitespace-separated matrix file")
    common(sp, seed=False)

    sp = sub.add_parser("metric", help="diagonal contraction metric for a model")
    sp.add_argument("file", help="model file")
    sp.add_argument("--audit-samples", type=int, default=10000)
    sp.add_argument("--tube-radius", type=float, default=None,
                    help="certify locally in a tube around a trajectory")
    common(sp, rate=True, x0=True)

    sp = sub.add_parser("small-gain",
                        help="composite storage weights from a gain matrix "
                             "or a model")
    sp.add_argument("file", help="gain matrix file or model file")
    sp.add_argument("--weights", metavar="W1,W2,...",
                    help="per-node storage weights for gain measurement")
    common(sp, samples=10000)

    sp = sub.add_parser("sprocedure",
                        help="robust certificate under norm-bounded coupling "
                             "uncertainty")
    sp.add_argument("file", help="model file with an [uncertainty] section")
    sp.add_argument("--psi", type=float, default=None,
                    help="override the uncertainty magnitude")
    common(sp, rate=True)
    sp.set_defaults(rate=0.0)

    sp = sub.add_parser("simulate", help="integrate the model")
    sp.add_argument("file", help="model file")
    sp.add_argument("--step", type=float, default=1e-3)
    common(sp, x0=True, out=True)

    sp = sub.add_parser("synthesize",
                        help="certify and track a target trajectory")
    sp.add_argument("file", help="model file with an [input] section")
    sp.add_argument("target", help="target CSV (t,x1..xn[,u1..uk])")
    sp.add_argument("--step", type=float, default=1e-3)
    common(sp, rate=True, x0=True, out=True)

    sp = sub.add_parser("virtual",
                        help="certify a factored system via its virtual "
                             "linear form")
    sp.add_argument("file", help="factored system file")
    common(sp, samples=5)

    sp = sub.add_parser("audit",
                        help="certify, then sample-check the metric LMI")
    sp.add_argument("file", help="model file")
    common(sp, rate=True, samples=10000)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    t0 = time.perf_counter()
    try:
        req = _build_request(args)
        if args.server:
            report = _post(args.server, args.command,
                           req.model_dump(exclude_none=True))
        else:
            report = _ROUTES[args.command](req)
    except (UsageError, ParseError) as exc:
        print(f"sepcert: error: {exc}", file=sys.stderr)
        return 1
    finally:
        print(f"elapsed: {time.perf_counter() - t0:.3f}s", file=sys.stderr)

    wrote = None
    out = getattr(args, "out", None)
    if out and report.csv is not None:
        try:
            with open(out, "w", encoding="utf-8") as fh:
                fh.write(report.csv)
        except OSError as exc:
            print(f"sepcert: error: cannot write {out}: {exc}", file=sys.stderr)
            return 1
        wrote = out
    if args.json:
        payload = report.model_dump(exclude_none=True)
        if wrote:
            payload.pop("csv", None)
        try:
            with open(args.json, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, sort_keys=True, indent=2)
                fh.write("\n")
        except OSError as exc:
            print(f"sepcert: error: cannot write {args.json}: {exc}",
                  file=sys.stderr)
            return 1

    sys.stdout.write(_render(report, wrote))
    return 0 if report.verdict in ("certified", "completed") else 2


if __name__ == "__main__":
    sys.exit(main())
