"""Plain-text input formats: network models, matrices, targets, factored systems.

A model file is line-oriented with bracketed section headers; `#` starts a
comment anywhere.  Sections:

    [nodes]               name lo hi expression   (one line per node)
    [coupling]            i j value triplets, 0-based; first piece
    [coupling t=T]        later pieces of a time-tabulated schedule
    [input]               i j value triplets (node i, input channel j)
    [horizon]             t0 tf
    [uncertainty]         "psi value" plus i j value triplets for H

[nodes] and [horizon] are required.  Unknown sections and malformed lines
are rejected with their line number.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .expr import Interval
from .model import CouplingSchedule, NetworkModel, NodeSpec
from .simulator import FactoredSystem
from .sprocedure import UncertainCoupling


class ParseError(ValueError):
    pass


_SECTION = re.compile(r"^\[([a-z_]+)(?:\s+t=([^\]\s]+))?\]$")


def _clean_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _sections(text: str, where: str):
    """Split into (name, t_value, lineno, [(lineno, line), ...]) groups."""
    out = []
    current = None
    for lineno, line in _clean_lines(text):
        m = _SECTION.match(line)
        if m:
            name, tval = m.group(1), m.group(2)
            if tval is not None:
                try:
                    tval = float(tval)
                except ValueError:
                    raise ParseError(f"{where}:{lineno}: bad section time {m.group(2)!r}")
            current = (name, tval, lineno, [])
            out.append(current)
        elif line.startswith("["):
            raise ParseError(f"{where}:{lineno}: malformed section header {line!r}")
        else:
            if current is None:
                raise ParseError(f"{where}:{lineno}: content before any section header")
            current[3].append((lineno, line))
    return out


def _float(tok: str, where: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"{where}:{lineno}: expected a number, got {tok!r}") from None


def _int(tok: str, where: str, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"{where}:{lineno}: expected an integer index, got {tok!r}") from None


def _triplets(body, n_rows, n_cols, where, what):
    mat = np.zeros((n_rows, n_cols))
    seen = set()
    for lineno, line in body:
        toks = line.split()
        if len(toks) != 3:
            raise ParseError(f"{where}:{lineno}: {what} lines are 'i j value', got {line!r}")
        i = _int(toks[0], where, lineno)
        j = _int(toks[1], where, lineno)
        if not (0 <= i < n_rows and 0 <= j < n_cols):
            raise ParseError(
                f"{where}:{lineno}: index ({i},{j}) outside {n_rows}x{n_cols} {what}"
            )
        if (i, j) in seen:
            raise ParseError(f"{where}:{lineno}: duplicate {what} entry ({i},{j})")
        seen.add((i, j))
        mat[i, j] = _float(toks[2], where, lineno)
    return mat


@dataclass(frozen=True)
class ModelDocument:
    """A parsed model file: the network plus optional uncertainty block."""

    model: NetworkModel
    uncertainty: UncertainCoupling | None = None


def parse_model(text: str, where: str = "<model>") -> ModelDocument:
    groups = _sections(text, where)
    known = {"nodes", "coupling", "input", "horizon", "uncertainty"}
    seen_plain = set()
    for name, tval, lineno, _ in groups:
        if name not in known:
            raise ParseError(f"{where}:{lineno}: unknown section [{name}]")
        if tval is not None and name != "coupling":
            raise ParseError(f"{where}:{lineno}: only [coupling] sections take t=")
        if tval is None:
            if name in seen_plain:
                raise ParseError(f"{where}:{lineno}: duplicate section [{name}]")
            seen_plain.add(name)

    by_name = {name: (lineno, body) for name, tval, lineno, body in groups
               if tval is None}
    if "nodes" not in by_name:
        raise ParseError(f"{where}: missing required section [nodes]")
    if "horizon" not in by_name:
        raise ParseError(f"{where}: missing required section [horizon]")

    nodes = []
    for lineno, line in by_name["nodes"][1]:
        toks = line.split(None, 3)
        if len(toks) != 4:
            raise ParseError(
                f"{where}:{lineno}: node lines are 'name lo hi expression', got {line!r}"
            )
        name, lo, hi, source = toks
        try:
            nodes.append(NodeSpec.from_source(
                name, source, _float(lo, where, lineno), _float(hi, where, lineno)))
        except ParseError:
            raise
        except ValueError as exc:
            raise ParseError(f"{where}:{lineno}: {exc}") from None
    if not nodes:
        raise ParseError(f"{where}: [nodes] section is empty")
    n = len(nodes)

    h_lineno, h_body = by_name["horizon"]
    if len(h_body) != 1 or len(h_body[0][1].split()) != 2:
        raise ParseError(f"{where}:{h_lineno}: [horizon] needs exactly one 't0 tf' line")
    lineno, line = h_body[0]
    t0, tf = (_float(t, where, lineno) for t in line.split())

    pieces = [(name, tval, lineno, body)
              for name, tval, lineno, body in groups if name == "coupling"]
    if not pieces:
        coupling = CouplingSchedule.constant(np.zeros((n, n)))
    else:
        if pieces[0][1] is not None:
            raise ParseError(
                f"{where}:{pieces[0][2]}: the first [coupling] section must be "
                "untimed; it starts at the horizon"
            )
        times = [t0]
        mats = [_triplets(pieces[0][3], n, n, where, "coupling")]
        for name, tval, lineno, body in pieces[1:]:
            if tval is None:
                raise ParseError(f"{where}:{lineno}: duplicate section [coupling]")
            if tval <= times[-1]:
                raise ParseError(
                    f"{where}:{lineno}: coupling times must increase, "
                    f"got t={tval} after t={times[-1]}"
                )
            times.append(tval)
            mats.append(_triplets(body, n, n, where, "coupling"))
        coupling = CouplingSchedule(np.array(times), np.array(mats))

    input_matrix = None
    if "input" in by_name:
        _, body = by_name["input"]
        cols = 0
        for lineno, line in body:
            toks = line.split()
            if len(toks) == 3:
                cols = max(cols, _int(toks[1], where, lineno) + 1)
        if not body:
            raise ParseError(f"{where}: [input] section is empty")
        input_matrix = _triplets(body, n, cols, where, "input")

    uncertainty = None
    if "uncertainty" in by_name:
        u_lineno, body = by_name["uncertainty"]
        psi = None
        triplet_lines = []
        for lineno, line in body:
            toks = line.split()
            if toks[0] == "psi":
                if len(toks) != 2:
                    raise ParseError(f"{where}:{lineno}: psi lines are 'psi value'")
                if psi is not None:
                    raise ParseError(f"{where}:{lineno}: duplicate psi")
                psi = _float(toks[1], where, lineno)
            elif len(toks) == 3:
                triplet_lines.append((lineno, line))
            else:
                raise ParseError(
                    f"{where}:{lineno}: [uncertainty] lines are 'psi value' or "
                    f"'i j value', got {line!r}"
                )
        if psi is None:
            raise ParseError(f"{where}:{u_lineno}: [uncertainty] requires a psi line")
        H = _triplets(triplet_lines, n, n, where, "uncertainty")
        try:
            uncertainty = UncertainCoupling(H=H, psi=psi)
        except ValueError as exc:
            raise ParseError(f"{where}:{u_lineno}: {exc}") from None

    try:
        model = NetworkModel(nodes=tuple(nodes), coupling=coupling,
                             horizon=(t0, tf), input_matrix=input_matrix)
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from None
    return ModelDocument(model=model, uncertainty=uncertainty)


def load_model(path) -> ModelDocument:
    with open(path) as fh:
        return parse_model(fh.read(), where=str(path))


def parse_matrix(text: str, where: str = "<matrix>") -> np.ndarray:
    """Whitespace-separated numeric rows; all rows the same length."""
    rows = []
    width = None
    for lineno, line in _clean_lines(text):
        vals = [_float(t, where, lineno) for t in line.split()]
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise ParseError(
                f"{where}:{lineno}: row has {len(vals)} entries, expected {width}"
            )
        rows.append(vals)
    if not rows:
        raise ParseError(f"{where}: no matrix rows found")
    return np.array(rows)


def load_matrix(path) -> np.ndarray:
    with open(path) as fh:
        return parse_matrix(fh.read(), where=str(path))


def parse_target_csv(text: str, where: str = "<target>"):
    """Trajectory CSV 't,x1..xn[,u1..uk]' -> (times, states, inputs|None)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError(f"{where}: empty trajectory file")
    header = [h.strip() for h in lines[0].split(",")]
    n = sum(1 for h in header if re.fullmatch(r"x\d+", h))
    k = sum(1 for h in header if re.fullmatch(r"u\d+", h))
    expect = ["t"] + [f"x{i}" for i in range(1, n + 1)] + [f"u{i}" for i in range(1, k + 1)]
    if header != expect or n == 0:
        raise ParseError(f"{where}:1: header must be t,x1..xn[,u1..uk], got {lines[0]!r}")
    data = []
    for lineno, line in enumerate(lines[1:], start=2):
        toks = line.split(",")
        if len(toks) != len(header):
            raise ParseError(
                f"{where}:{lineno}: row has {len(toks)} fields, expected {len(header)}"
            )
        data.append([_float(t.strip(), where, lineno) for t in toks])
    arr = np.array(data)
    times = arr[:, 0]
    if times.shape[0] < 2 or np.any(np.diff(times) <= 0):
        raise ParseError(f"{where}: trajectory times must strictly increase")
    states = arr[:, 1:1 + n]
    inputs = arr[:, 1 + n:] if k else None
    return times, states, inputs


def load_target_csv(path):
    with open(path) as fh:
        return parse_target_csv(fh.read(), where=str(path))


def parse_factored(text: str, where: str = "<factored>") -> FactoredSystem:
    """Sections [box] (lo hi per node), [horizon], [entries] (i j expression)."""
    groups = _sections(text, where)
    by_name = {}
    for name, tval, lineno, body in groups:
        if name not in {"box", "horizon", "entries"}:
            raise ParseError(f"{where}:{lineno}: unknown section [{name}]")
        if tval is not None:
            raise ParseError(f"{where}:{lineno}: [{name}] does not take t=")
        if name in by_name:
            raise ParseError(f"{where}:{lineno}: duplicate section [{name}]")
        by_name[name] = (lineno, body)
    for req in ("box", "horizon", "entries"):
        if req not in by_name:
            raise ParseError(f"{where}: missing required section [{req}]")

    box = []
    for lineno, line in by_name["box"][1]:
        toks = line.split()
        if len(toks) != 2:
            raise ParseError(f"{where}:{lineno}: box lines are 'lo hi', got {line!r}")
        box.append(Interval(_float(toks[0], where, lineno), _float(toks[1], where, lineno)))
    if not box:
        raise ParseError(f"{where}: [box] section is empty")
    n = len(box)

    h_lineno, h_body = by_name["horizon"]
    if len(h_body) != 1 or len(h_body[0][1].split()) != 2:
        raise ParseError(f"{where}:{h_lineno}: [horizon] needs exactly one 't0 tf' line")
    lineno, line = h_body[0]
    t0, tf = (_float(t, where, lineno) for t in line.split())

    entries = [["0"] * n for _ in range(n)]
    seen = set()
    for lineno, line in by_name["entries"][1]:
        toks = line.split(None, 2)
        if len(toks) != 3:
            raise ParseError(
                f"{where}:{lineno}: entry lines are 'i j expression', got {line!r}"
            )
        i = _int(toks[0], where, lineno)
        j = _int(toks[1], where, lineno)
        if not (0 <= i < n and 0 <= j < n):
            raise ParseError(f"{where}:{lineno}: index ({i},{j}) outside {n}x{n} matrix")
        if (i, j) in seen:
            raise ParseError(f"{where}:{lineno}: duplicate entry ({i},{j})")
        seen.add((i, j))
        entries[i][j] = toks[2]

    try:
        return FactoredSystem(entries, box, (t0, tf))
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from None


def load_factored(path) -> FactoredSystem:
    with open(path) as fh:
        return parse_factored(fh.read(), where=str(path))
