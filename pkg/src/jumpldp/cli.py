"""Command-line front end.

Every subcommand writes one table. CSV output prints the rows followed by
``# key=value`` lines for scalar summaries; JSON output wraps the same data
as ``{"meta": ..., "rows": [...], "summary": ...}``. Floats are printed with
17 significant digits so they round-trip.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import exactdist, network, pathlab, ratefn, simulator
from .errors import JumpLDPError, NumericError, ValidationError
from .experiments import (
    BUILTINS,
    BuiltinModel,
    as_model,
    divergence_probe,
    escape_event_study,
    get_builtin,
    ldp_marginal_study,
    minimize_endpoint_action,
    threshold_event,
)
from .network import ScaledState
from .paths import MacroPath, fmt

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


@dataclass
class Table:
    columns: list
    rows: list  # lists of cells
    meta: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


# ---------------------------------------------------------------- rendering


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return fmt(float(x))
    if isinstance(x, (list, tuple, np.ndarray)):
        return ";".join(_cell(c) for c in x)
    if isinstance(x, dict):
        return json.dumps(_plain(x), sort_keys=True)
    return str(x)


def _plain(x):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats as strings."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_plain(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else fmt(x)
    if isinstance(x, str):
        return x
    if x is None:
        return None
    return str(x)


def _from_text(c: str):
    """Cells that arrive preformatted become numbers again in JSON."""
    for conv in (int, float):
        try:
            return conv(c)
        except ValueError:
            pass
    return c


def render(table: Table, form: str) -> str:
    if form == "json":
        rows = [
            {c: _from_text(v) if isinstance(v, str) else v for c, v in zip(table.columns, r)} for r in table.rows
        ]
        doc = {"meta": _plain(table.meta), "rows": _plain(rows), "summary": _plain(table.summary)}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for r in table.rows:
        w.writerow([_cell(c) for c in r])
    for k in sorted(table.summary):
        v = table.summary[k]
        text = json.dumps(_plain(v), sort_keys=True) if isinstance(v, (dict, list, tuple)) else _cell(v)
        buf.write(f"# {k}={text}\n")
    return buf.getvalue()


def _dict_rows(rows: Sequence[dict]) -> tuple[list, list]:
    cols: list = []
    for r in rows:
        for c in r:
            if c not in cols:
                cols.append(c)
    return cols, [[r.get(c) for c in cols] for r in rows]


def _path_table(z: MacroPath, meta: dict, summary: Optional[dict] = None) -> Table:
    cols = ["t"] + [f"x_{i + 1}" for i in range(z.dim)]
    rows = [[t] + list(p) for t, p in zip(z.times, z.points)]
    return Table(cols, rows, meta, summary or {})


# ---------------------------------------------------------------- argument helpers


def _vec(text: str) -> np.ndarray:
    try:
        return np.array([float(c) for c in text.split(",")], dtype=float)
    except ValueError:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list:
    try:
        return [int(c) for c in text.split(",")]
    except ValueError:
        raise ValidationError(f"expected comma-separated integers, got {text!r}") from None


def _points(text: str) -> np.ndarray:
    return np.array([_vec(p) for p in text.split(";") if p.strip()])


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None


def _model(args) -> BuiltinModel:
    """Builtin id or a JSON model file; ``--x0`` overrides the start."""
    x0 = _vec(args.x0) if getattr(args, "x0", None) else None
    if args.model in BUILTINS:
        m = get_builtin(args.model)
    else:
        if not os.path.exists(args.model):
            raise ValidationError(f"{args.model!r} is neither a builtin ({', '.join(sorted(BUILTINS))}) nor a file")
        net = network.parse_model(_read(args.model))
        if x0 is None:
            x0 = np.zeros(net.dim)
        m = as_model(net, x0)
        x0 = None
    if getattr(args, "cover", None):
        cov = pathlab.parse_cover(_read(args.cover))
        m = BuiltinModel(m.id, m.description, m.net, m.x0, m.start_counts, cov, m.sample_lo, m.sample_hi, m.line)
    return as_model(m, x0) if x0 is not None else m


def _cover(m: BuiltinModel) -> pathlab.Cover:
    if m.cover is None:
        raise ValidationError(f"model {m.id} has no cover; pass --cover")
    return m.cover


def _region(m: BuiltinModel, idx: int) -> pathlab.CoverRegion:
    regs = _cover(m).regions
    if not 0 <= idx < len(regs):
        raise ValidationError(f"region index must be in [0, {len(regs) - 1}]")
    return regs[idx]


def _grid(m: BuiltinModel, args) -> np.ndarray:
    if args.grid:
        return _points(args.grid)
    n = args.grid_n
    if m.line is not None:
        base, direction, s_max = m.line
        s = np.linspace(0.0, s_max, n)
        return np.asarray(base, float) + s[:, None] * np.asarray(direction, float)
    if not m.sample_lo:
        raise ValidationError("user models need an explicit --grid")
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(m.sample_lo, m.sample_hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))


def _macro_path(args) -> MacroPath:
    return MacroPath.from_csv(_read(args.path))


def _start(m: BuiltinModel, v: int, args) -> ScaledState:
    return ScaledState.from_x(v, _vec(args.x0)) if getattr(args, "x0", None) else m.start(v)


# ---------------------------------------------------------------- handlers


def cmd_list_models(args) -> Table:
    rows = []
    for k in sorted(BUILTINS):
        m = BUILTINS[k]
        rows.append([m.id, m.net.dim, m.net.n_reactions, list(m.x0), m.cover is not None, m.description])
    return Table(["id", "dim", "reactions", "x0", "has_cover", "description"], rows)


def cmd_simulate(args, with_flux: bool = False) -> Table:
    m = _model(args)
    s = _start(m, args.v, args)
    path = simulator.ssa_simulate(m.net, args.v, s, args.t_max, args.seed, args.max_jumps)
    meta = {"model": m.id, "v": args.v, "x0": list(s.x), "t_max": args.t_max, "seed": args.seed}
    return Table(path.header(with_flux), path.to_rows(with_flux), meta, {"jumps": path.n_jumps})


def cmd_flux_simulate(args) -> Table:
    return cmd_simulate(args, with_flux=True)


def cmd_exact(args) -> Table:
    m = _model(args)
    s = _start(m, args.v, args)
    chain = exactdist.build_chain(m.net, args.v, s, args.cap)
    dist = exactdist.transient_distribution(chain, args.t, args.tol)
    d = m.net.dim
    rows = [[i] + list(x) + [p] for i, (x, p) in enumerate(zip(chain.x, dist.probs))]
    if chain.truncated:
        rows.append(["sink"] + [None] * d + [dist.sink])
    meta = {"model": m.id, "v": args.v, "x0": list(s.x), "t": args.t, "cap": args.cap, "tol": args.tol}
    summary = {"states": chain.n_live, "truncated": chain.truncated, "sink": dist.sink, "total": dist.total()}
    return Table(["state_index"] + [f"x_{i + 1}" for i in range(d)] + ["prob"], rows, meta, summary)


def cmd_rate(args) -> Table:
    m = _model(args)
    x, y = _vec(args.x), _vec(args.y)
    res = ratefn.lagrangian(m.net, x, y, args.tol)
    R, d = m.net.n_reactions, m.net.dim
    mu = res.mu_star if res.mu_star is not None else [None] * R
    cols = ["value", "feasible"] + [f"theta_{i + 1}" for i in range(d)] + [f"mu_{r + 1}" for r in range(R)]
    row = [res.value, res.feasible] + list(res.theta_star) + list(mu)
    return Table(cols, [row], {"model": m.id, "x": list(x), "y": list(y)}, {"newton_iters": res.newton_iters})


def _action_table(rep: ratefn.ActionReport, z: MacroPath, meta: dict) -> Table:
    rows = [[i, z.times[i], z.times[i + 1], v] for i, v in enumerate(rep.per_segment)]
    return Table(["segment", "t0", "t1", "value"], rows, meta, {"value": rep.value, **rep.flags})


def cmd_action(args) -> Table:
    m = _model(args)
    z = _macro_path(args)
    rep = ratefn.path_action(m.net, z, args.quad, args.tol)
    return _action_table(rep, z, {"model": m.id, "path": args.path, "quad": args.quad})


def cmd_flux_action(args) -> Table:
    m = _model(args)
    z = _macro_path(args)
    w = MacroPath.from_csv(_read(args.flux)) if args.flux else ratefn.InducedFlux(m.net, z)
    rep = ratefn.flux_action(m.net, z, w, args.quad, args.tol)
    meta = {"model": m.id, "path": args.path, "flux": args.flux or "induced", "quad": args.quad}
    return _action_table(rep, z, meta)


def cmd_fluid(args) -> Table:
    m = _model(args)
    x0 = _vec(args.x0) if args.x0 else np.asarray(m.x0, float)
    z = network.fluid_limit(m.net, x0, args.t_max, args.steps)
    return _path_table(z, {"model": m.id, "x0": list(x0), "t_max": args.t_max, "steps": args.steps})


def _shift(args):
    m = _model(args)
    z = _macro_path(args)
    cov = _cover(m)
    plan, zd = pathlab.build_shifted_path(z, cov, args.delta, args.resolution)
    return m, z, cov, plan, zd


def cmd_shift_path(args) -> Table:
    m, _, _, plan, zd = _shift(args)
    return _path_table(zd, {"model": m.id, "path": args.path, "delta": args.delta}, plan.to_dict())


def cmd_verify_breakup(args) -> Table:
    m, z, cov, plan, zd = _shift(args)
    rep = pathlab.verify_breakup(z, zd, plan, cov)
    d = rep.to_dict()
    checks = d.pop("shift_checks")
    cols, rows = _dict_rows(checks)
    return Table(cols or ["check"], rows, {"model": m.id, "path": args.path, "delta": args.delta}, d)


def cmd_audit(args) -> Table:
    m = _model(args)
    meta = {"model": m.id, "audit": args.audit}
    kind = args.audit
    if kind == "convergence":
        rep = network.audit_rate_convergence(m.net, _ints(args.v), _grid(m, args))
        cols, rows = _dict_rows(rep.rows())
        return Table(cols, rows, meta, {"monotone": rep.monotone})
    if kind == "aleph":
        g = _grid(m, args)
        rows = [[v, network.audit_aleph(m.net, v, g)] for v in _ints(args.v)]
        return Table(["v", "aleph"], rows, meta)
    region = _region(m, args.region)
    meta["region"] = args.region
    if kind == "decay":
        alphas = tuple(_vec(args.alphas))
        rep = pathlab.decay_exponent(m.net, args.reaction, region, alphas=alphas)
        rows = [[r["rho"], r["inf_log_rate"], r["samples"]] + [r["scaled"][str(a)] for a in alphas] for r in rep.rows]
        cols = ["rho", "inf_log_rate", "samples"] + [f"scaled_{a}" for a in alphas]
        summary = {"alpha_hat": rep.alpha_hat, **{f"holds_{a}": v for a, v in rep.condition.items()}}
        return Table(cols, rows, {**meta, "reaction": args.reaction}, summary)
    if kind == "fast":
        rep = pathlab.fast_set(m.net, region)
        cols, rows = _dict_rows(rep.rows)
        return Table(cols, rows, meta, {"fast": list(rep.fast), "limits": rep.limits})
    if kind == "cone":
        fast = pathlab.fast_set(m.net, region).fast
        x = _vec(args.point) if args.point else np.asarray(m.x0, float)
        d = pathlab.cone_obstruction(m.net, region, x, fast).to_dict()
        return Table(["key", "value"], [[k, d[k]] for k in sorted(d)], {**meta, "x": list(x)})
    # escape-seq
    ladder = [_start(m, v, args) for v in _ints(args.v)]
    rep = pathlab.escape_sequence_audit(m.net, region, _cover(m), ladder)
    d = rep.to_dict()
    cols, rows = _dict_rows([{"part": "prefix", **r} for r in d.pop("prefix_rows")] + [{"part": "integral", **r} for r in d.pop("integral_rows")])
    return Table(cols, rows, meta, d)


def _study_table(res) -> Table:
    cols, rows = _dict_rows(res.rows)
    summary = dict(res.summary)
    summary["passed"] = res.passed
    return Table(cols, rows, {"study": res.kind, **res.params}, summary)


def cmd_study(args) -> Table:
    kind = args.study
    m = _model(args)
    if kind == "marginal":
        pred = threshold_event(args.delta, args.coord)
        res = ldp_marginal_study(
            m, pred, args.t, _ints(args.v), args.mode, trials=args.trials, seed=args.seed,
            cap_factor=args.cap_factor, expected=args.expected, jobs=args.jobs,
        )
        t = _study_table(res)
        t.meta.update(delta=args.delta, coord=args.coord)
        return t
    if kind == "minimize":
        x0 = _vec(args.x0) if args.x0 else np.asarray(m.x0, float)
        r = minimize_endpoint_action(m, x0, _vec(args.target), args.t, args.grid_n, args.quad, args.max_iter)
        meta = {"study": "minimize", "model": m.id, "x0": list(x0), "target": list(_vec(args.target)), "T": args.t, "grid_n": args.grid_n}
        return _path_table(r.path, meta, r.to_dict())
    if kind == "diverge":
        z = _macro_path(args) if args.path else MacroPath.linear(np.asarray(m.x0, float) * 0.0, np.ones(m.net.dim), args.t)
        eps = [2.0**-k for k in range(args.eps_from, args.eps_to + 1)]
        res = divergence_probe(m, z, eps, k_model=args.k_model, quad=args.quad)
        return _study_table(res)
    res = escape_event_study(m, args.region, _ints(args.v), args.delta, args.mode, args.trials, args.seed, args.jobs)
    return _study_table(res)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="output format (default csv)")
    common.add_argument("--output", "-o", help="write to this file instead of stdout")
    common.add_argument("--jobs", type=int, default=None, help="worker cap (default: logical CPUs)")

    def model_opts(p, x0_help="initial point, comma separated (default: the model's start)"):
        p.add_argument("--model", required=True, help="builtin id (see list-models) or a JSON model file")
        p.add_argument("--cover", help="JSON cover file (builtins have their own)")
        p.add_argument("--x0", help=x0_help)

    root = _Parser(prog="jumpldp", description="Large-deviation toolkit for density-scaled jump processes.")
    sub = root.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("list-models", parents=[common], help="list builtin models")

    for name, hlp in (("simulate", "exact jump-process trajectory"), ("flux-simulate", "trajectory with scaled reaction counters")):
        p = sub.add_parser(name, parents=[common], help=hlp)
        model_opts(p)
        p.add_argument("--v", type=int, required=True, help="volume")
        p.add_argument("--t-max", type=float, default=1.0, help="horizon (default 1)")
        p.add_argument("--seed", type=int, default=0, help="seed (default 0)")
        p.add_argument("--max-jumps", type=int, default=simulator.MAX_JUMPS, help="jump cap")

    p = sub.add_parser("exact", parents=[common], help="transient distribution by uniformization")
    model_opts(p)
    p.add_argument("--v", type=int, required=True)
    p.add_argument("--t", type=float, default=1.0, help="time (default 1)")
    p.add_argument("--cap", type=int, default=100_000, help="state cap (default 100000)")
    p.add_argument("--tol", type=float, default=1e-12, help="Poisson tail tolerance (default 1e-12)")

    p = sub.add_parser("rate", parents=[common], help="Lagrangian l(x, y)")
    model_opts(p)
    p.add_argument("--x", required=True, help="state")
    p.add_argument("--y", required=True, help="velocity")
    p.add_argument("--tol", type=float, default=1e-10, help="Newton tolerance (default 1e-10)")

    for name, hlp in (("action", "action of a path CSV"), ("flux-action", "flux action of a path and flux")):
        p = sub.add_parser(name, parents=[common], help=hlp)
        model_opts(p)
        p.add_argument("--path", required=True, help="path CSV t,x_1,...")
        if name == "flux-action":
            p.add_argument("--flux", help="flux CSV t,w_1,... (default: the optimal flux of the path)")
        p.add_argument("--quad", type=int, default=8, help="Gauss-Legendre points (default 8)")
        p.add_argument("--tol", type=float, default=1e-10 if name == "action" else 1e-8)

    p = sub.add_parser("fluid", parents=[common], help="fluid-limit ODE solution")
    model_opts(p)
    p.add_argument("--t-max", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=1000)

    for name, hlp in (("shift-path", "boundary-avoiding shifted path"), ("verify-breakup", "check the shifted-path guarantees")):
        p = sub.add_parser(name, parents=[common], help=hlp)
        model_opts(p)
        p.add_argument("--path", required=True)
        p.add_argument("--delta", type=float, required=True)
        p.add_argument("--resolution", type=int, default=1024, help="modulus grid (default 1024)")

    p = sub.add_parser("audit", parents=[common], help="assumption audits")
    p.add_argument("audit", choices=("convergence", "aleph", "decay", "fast", "cone", "escape-seq"))
    model_opts(p)
    p.add_argument("--v", default="10,100,1000,10000", help="volume ladder (default 10,100,1000,10000)")
    p.add_argument("--grid", help="points 'x,y;x,y;...' (default: the model's sample box)")
    p.add_argument("--grid-n", type=int, default=11, help="points per axis of the default grid")
    p.add_argument("--region", type=int, default=0, help="cover region index (default 0)")
    p.add_argument("--reaction", type=int, default=0, help="reaction index for decay (default 0)")
    p.add_argument("--alphas", default="0.25,0.5,0.9")
    p.add_argument("--point", help="state for the cone check (default: x0)")

    p = sub.add_parser("study", parents=[common], help="end-to-end studies")
    p.add_argument("study", choices=("marginal", "minimize", "diverge", "escape-event"))
    model_opts(p)
    p.add_argument("--v", default="50,100,200,400", help="volume ladder")
    p.add_argument("--t", type=float, default=1.0, help="time or horizon T (default 1)")
    p.add_argument("--delta", type=float, default=0.5, help="threshold or escape scale (default 0.5)")
    p.add_argument("--coord", type=int, default=0, help="coordinate of the threshold event")
    p.add_argument("--mode", choices=("exact", "mc"), default="exact")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cap-factor", type=int, default=20, help="state cap per unit volume (default 20)")
    p.add_argument("--expected", type=float, help="expected limit for pass/fail")
    p.add_argument("--target", default="0.5", help="pinned endpoint for minimize")
    p.add_argument("--grid-n", type=int, default=100)
    p.add_argument("--quad", type=int, default=8)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--path", help="path CSV for diverge (default z(t) = t)")
    p.add_argument("--eps-from", type=int, default=4, help="first k of eps = 2^-k (default 4)")
    p.add_argument("--eps-to", type=int, default=12, help="last k (default 12)")
    p.add_argument("--k-model", type=float, default=1.0)
    p.add_argument("--region", type=int, default=0)
    return root


HANDLERS = {
    "list-models": cmd_list_models,
    "simulate": cmd_simulate,
    "flux-simulate": cmd_flux_simulate,
    "exact": cmd_exact,
    "rate": cmd_rate,
    "action": cmd_action,
    "flux-action": cmd_flux_action,
    "fluid": cmd_fluid,
    "shift-path": cmd_shift_path,
    "verify-breakup": cmd_verify_breakup,
    "audit": cmd_audit,
    "study": cmd_study,
}


def run(argv: Optional[Sequence[str]] = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        text = render(HANDLERS[args.command](args), args.format)
        if args.output:
            with open(args.output, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        else:
            stdout.write(text)
        return EXIT_OK
    except NumericError as exc:
        print(f"jumpldp: numerical failure: {exc}", file=stderr)
        return EXIT_NUMERIC
    except (JumpLDPError, OSError) as exc:
        print(f"jumpldp: error: {exc}", file=stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
