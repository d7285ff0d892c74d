"""Command-line front end: ``csbp <command> --config cfg.json [--out dir]``.

Every command reads one JSON config (schema in ``CONFIG_SCHEMA`` and the
README), writes its CSV or JSON artifact into ``--out`` together with a
``<command>.meta.json`` sidecar echoing the effective config, and exits with
0 on pass, 2 on inconclusive and 1 on fail or error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .exponent import AtomicExponent, ExponentFlow, backend_for
from .gml import MittagLefflerLaw, SelfSimilarFamily, gml_cdf_flagged, gml_pdf_flagged
from .mechanism import (Atomic, BranchingMechanism, greys_check, load_mechanism,
                        mechanism_from_json, rates_table, rv_index_estimate)
from .measures import MeasureView, invert_mass_cdf
from .scaling import check_funthm, check_limCSBP, check_main1_converse, check_ssCSBP
from .simulate import sample_conditional, sample_csbp

EXIT_PASS, EXIT_FAIL, EXIT_INCONCLUSIVE = 0, 1, 2

_NUM_LIST = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_ATOMS = {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                     "minItems": 2, "maxItems": 2}, "minItems": 1}
_FAMILY = {"type": "object", "properties": {"beta": {"type": "number"}, "gamma": {"type": "number"},
                                            "rho": {"type": "number"}},
           "required": ["gamma"], "additionalProperties": False}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "mechanism": {"oneOf": [{"type": "string"}, {"type": "object"}]},
        "family": _FAMILY,
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "solve": {"type": "object", "properties": {
            "t": _NUM_LIST, "q": _NUM_LIST,
            "method": {"enum": ["auto", "closed_form", "euler"]},
            "N": {"type": "integer", "minimum": 1}}, "additionalProperties": False},
        "selfsim": {"type": "object", "properties": {
            "gamma": {"type": "number"}, "rho": {"type": "number"},
            "scale": {"type": "number", "exclusiveMinimum": 0}, "x": _NUM_LIST},
            "additionalProperties": False},
        "simulate": {"type": "object", "properties": {
            "t": {"type": "number"}, "x": {"type": "number"},
            "n": {"type": "integer", "minimum": 1},
            "conditional": {"type": "boolean"}, "raw": {"type": "boolean"}},
            "additionalProperties": False},
        "limit_check": {"type": "object", "properties": {
            "theorem": {"enum": ["limCSBP", "main1_converse", "funthm", "ssCSBP"]},
            "grid": _NUM_LIST, "q_grid": _NUM_LIST, "z_grid": _NUM_LIST,
            "nu0": _ATOMS, "t0": {"type": "number"}, "t": {"type": "number"},
            "x": {"type": "number"}, "n": {"type": "integer", "minimum": 1}},
            "required": ["theorem"], "additionalProperties": False},
        "invert": {"type": "object", "properties": {
            "t": {"type": "number"}, "x": _NUM_LIST, "nu0": _ATOMS,
            "order": {"type": "integer", "minimum": 2}}, "additionalProperties": False},
    },
    "additionalProperties": False,
}


def fmt(v) -> str:
    """17 significant digits so that golden files are byte-comparable."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return float(fmt(v)) if math.isfinite(v) else fmt(v)
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


class Context:
    def __init__(self, cfg: dict, out: Path, command: str):
        self.cfg = cfg
        self.out = out
        self.command = command

    @property
    def section(self) -> dict:
        return self.cfg.get(self.command.replace("-", "_"), {})

    @property
    def seed(self) -> int:
        return int(self.cfg.get("seed", 1))

    @property
    def threads(self) -> int:
        return int(self.cfg.get("threads", 1))

    def mechanism(self) -> BranchingMechanism:
        spec = self.cfg.get("mechanism")
        if spec is None:
            fam = self.cfg.get("family")
            if fam is None:
                raise ValueError("config needs a 'mechanism' or a 'family'")
            return BranchingMechanism.power(fam["gamma"], fam.get("beta", 1.0))
        if isinstance(spec, str):
            return load_mechanism(spec)
        return mechanism_from_json(spec)

    def source(self):
        fam = self.cfg.get("family")
        if fam is not None:
            return SelfSimilarFamily(fam.get("beta", 1.0), fam["gamma"], fam.get("rho", 1.0))
        return self.mechanism()

    def path(self, suffix: str) -> Path:
        return self.out / f"{self.command}{suffix}"


def cmd_mechanism(ctx: Context) -> int:
    mech = ctx.mechanism()
    grey = greys_check(mech, quad_tol=ctx.cfg.get("tol", 1e-10))
    try:
        gamma_hat = rv_index_estimate(mech)
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        gamma_hat = None
        print(f"index estimate unavailable: {exc}", file=sys.stderr)
    report = {
        "criticality": mech.criticality.value,
        "grey": grey.verdict.value,
        "grey_integral": grey.integral,
        "gamma_hat": gamma_hat,
        "rates": rates_table(mech),
        "mechanism": mech.to_json(),
    }
    write_json(ctx.path(".json"), report)
    return EXIT_INCONCLUSIVE if grey.verdict.value == "inconclusive" else EXIT_PASS


def cmd_solve(ctx: Context) -> int:
    sec = ctx.section
    mech = ctx.mechanism()
    backend = backend_for(mech, sec.get("method", "auto"), sec.get("N", 10000),
                          ctx.cfg.get("tol", 1e-10))
    flow = ExponentFlow(backend)
    ts = sec.get("t", [0.5, 1.0, 2.0])
    qs = sec.get("q", [0.1, 1.0, 10.0])
    rows = []
    for t in ts:
        for q in qs:
            rows.append((float(t), float(q), float(flow.phi(t, q)), float(flow.dq_phi(t, q)), backend.method))
    write_csv(ctx.path(".csv"), ["t", "q", "phi", "dq_phi", "method"], rows)
    return EXIT_PASS


def cmd_selfsim(ctx: Context) -> int:
    sec = ctx.section
    fam = ctx.cfg.get("family", {})
    law = MittagLefflerLaw(sec.get("gamma", fam.get("gamma", 2.0)), sec.get("rho", fam.get("rho", 1.0)),
                           sec.get("scale", 1.0))
    xs = sec.get("x", list(np.linspace(0.0, 20.0, 41)))
    rows, worst = [], EXIT_PASS
    for x in xs:
        f, flag = gml_cdf_flagged(law, float(x))
        if x > 0:
            d, dflag = gml_pdf_flagged(law, float(x))
        else:
            # the density behaves like x^(rho-1) / (Gamma(rho) scale^rho) at the origin
            d, dflag = (1.0 / law.scale if law.rho == 1.0 else math.inf), "exact"
        if "degraded" in (flag, dflag):
            flag, worst = "degraded", EXIT_INCONCLUSIVE
        rows.append((float(x), float(f), float(d), flag))
    write_csv(ctx.path(".csv"), ["x", "cdf", "pdf", "accuracy_flag"], rows)
    return worst


def cmd_simulate(ctx: Context) -> int:
    sec = ctx.section
    sampler = sample_conditional if sec.get("conditional", False) else sample_csbp
    ens = sampler(ctx.source(), sec.get("t", 1.0), sec.get("x", 1.0), sec.get("n", 100000),
                  ctx.seed, ctx.threads)
    write_json(ctx.path(".json"), ens.summary())
    if sec.get("raw", False):
        write_csv(ctx.path(".csv"), ["sample"], ([float(v)] for v in ens.samples))
    return EXIT_PASS


def cmd_limit_check(ctx: Context) -> int:
    sec = ctx.section
    theorem = sec["theorem"]
    tol = ctx.cfg.get("tol")
    kw = {}
    if "q_grid" in sec:
        kw["q_grid"] = sec["q_grid"]
    if theorem == "limCSBP":
        rep = check_limCSBP(ctx.source(), t_grid=sec.get("grid", [1.0, 10.0, 100.0]), z_grid=sec.get("z_grid"),
                            n=sec.get("n", 100000), seed=ctx.seed, x=sec.get("x", 1.0),
                            threads=ctx.threads, **({"threshold": tol} if tol else {}))
    else:
        if tol:
            kw["tol"] = tol
        grid = sec.get("grid", [1e2, 1e3, 1e4])
        if theorem == "main1_converse":
            nu0 = sec.get("nu0")
            rep = check_main1_converse(ctx.source(), Atomic(tuple(map(tuple, nu0))) if nu0 else None,
                                       t0=sec.get("t0", 1.0), s_grid=grid, **kw)
        elif theorem == "funthm":
            rep = check_funthm(ctx.source(), t_grid=grid, **kw)
        else:
            rep = check_ssCSBP(ctx.source(), t=sec.get("t", 1.0), s_grid=grid, **kw)
    write_json(ctx.path(".json"), rep.to_json())
    return {"pass": EXIT_PASS, "fail": EXIT_FAIL}.get(rep.verdict, EXIT_INCONCLUSIVE)


def cmd_invert(ctx: Context) -> int:
    sec = ctx.section
    mech = ctx.mechanism()
    nu0 = sec.get("nu0")
    flow = ExponentFlow(backend_for(mech, quad_tol=ctx.cfg.get("tol", 1e-10)))
    if nu0:
        flow = ExponentFlow(flow.backend, AtomicExponent(Atomic(tuple(map(tuple, nu0)))))
    view = MeasureView(flow, sec.get("t", 1.0), sec.get("order"))
    xs = sec.get("x", list(np.logspace(-2.0, 2.0, 9)))
    points = invert_mass_cdf(view, xs)
    write_csv(ctx.path(".csv"), ["x", "mass_cdf", "flag"], [(p.x, p.mass_cdf, p.flag) for p in points])
    unstable = sum(p.flag == "unstable" for p in points)
    write_json(ctx.path(".diagnostics.json"), {
        "total_number": view.total, "first_moment": view.first_moment,
        "inversion_order": view.inversion_order, "multiprecision": view.multiprecision,
        "unstable_points": unstable})
    return EXIT_INCONCLUSIVE if unstable else EXIT_PASS


COMMANDS = {
    "mechanism": cmd_mechanism,
    "solve": cmd_solve,
    "selfsim": cmd_selfsim,
    "simulate": cmd_simulate,
    "limit-check": cmd_limit_check,
    "invert": cmd_invert,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="csbp", description="Critical CSBP and coagulation toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="JSON experiment config")
        sp.add_argument("--out", type=Path, default=Path("."), help="output directory")
        sp.add_argument("--seed", type=int, help="RNG seed (overrides config)")
        sp.add_argument("--threads", type=int, help="worker threads (overrides config)")
        sp.add_argument("--tol", type=float, help="tolerance (overrides config)")
    return p


def load_config(args) -> dict:
    cfg = json.loads(args.config.read_text()) if args.config else {}
    for key in ("seed", "threads", "tol"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
    jsonschema.validate(cfg, CONFIG_SCHEMA)
    if not 0 <= cfg.get("seed", 1) < 2 ** 64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        ctx = Context(cfg, args.out, args.command)
        code = COMMANDS[args.command](ctx)
        write_json(ctx.path(".meta.json"), {"command": args.command, "version": __version__,
                                            "config": cfg, "exit_code": code})
        return code
    except (ValueError, RuntimeError, ArithmeticError, OSError, KeyError, jsonschema.ValidationError) as exc:
        msg = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
        print(f"csbp {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
