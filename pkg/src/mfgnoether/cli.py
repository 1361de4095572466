"""Command line front end: ``solve``, ``verify``, ``normalize`` and ``report``.

Exit codes: 0 success, 1 configuration error, 2 Picard iteration did not
converge, 3 numerical failure, 4 a verification check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigError, DomainError, NumericalFailure
from .grid import AnalyticField, GridSpec, read_field_csv, write_field_csv
from .model import (CouplingSpec, HamiltonianSpec, ProblemSpec, induced_coupling,
                    normalize_hamiltonian)
from .noether import (catalog_conservation_laws, conserved_integral, divergence_residual,
                      noether_identity_defect, variational_checks, write_series_csv)
from .solver import PicardConfig, SolutionPair, pde_residuals, solve_picard
from .symmetry import (PASS_TOL, WITNESS_TOL, FlowRequest, catalog_generators,
                       determining_residuals, determining_scales, group_flow, sample_jets,
                       variational_defect)

logger = logging.getLogger("mfgnoether")

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_NUMERICAL, EXIT_CHECK_FAILED = range(5)
SUITES = ("symmetries", "variational", "conservation", "noether-identity", "flows")
DEFAULT_SEED = 42

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_TABLE_FILE = {"type": "object", "required": ["kind", "path"],
               "properties": {"kind": {"const": "table"}, "path": {"type": "string"}}}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["domain", "epsilon", "hamiltonian", "coupling"],
    "additionalProperties": False,
    "properties": {
        "domain": {
            "type": "object",
            "required": ["length", "num_cells", "horizon", "num_steps"],
            "additionalProperties": False,
            "properties": {"length": _POS, "num_cells": {"type": "integer", "minimum": 8},
                           "horizon": _POS, "num_steps": {"type": "integer", "minimum": 2}},
        },
        "epsilon": _POS,
        "hamiltonian": {
            "type": "object",
            "required": ["family"],
            "additionalProperties": False,
            "properties": {"family": {"enum": ["quadratic", "cubic", "power", "exponential"]},
                           "p": _NUM, "k": _NUM, "h": _NUM, "h2": _NUM, "h1": _NUM,
                           "h0": _NUM, "q": _NUM},
        },
        "coupling": {
            "type": "object",
            "required": ["family"],
            "additionalProperties": False,
            "properties": {"family": {"enum": ["log", "power", "table"]},
                           "alpha": _NUM, "gamma": _NUM, "m_min": _POS,
                           "path": {"type": "string"},
                           "interpolation": {"enum": ["cubic", "pchip"]}},
        },
        "initial_density": {
            "oneOf": [
                {"type": "object", "required": ["kind"], "additionalProperties": False,
                 "properties": {"kind": {"const": "uniform"}}},
                {"type": "object", "required": ["kind"], "additionalProperties": False,
                 "properties": {"kind": {"const": "cosine"}, "amplitude": _NUM,
                                "wavenumber": {"type": "integer", "minimum": 1},
                                "phase": _NUM}},
                _TABLE_FILE,
            ]
        },
        "terminal_cost": {
            "oneOf": [
                {"type": "object", "required": ["kind"], "additionalProperties": False,
                 "properties": {"kind": {"const": "zero"}}},
                _TABLE_FILE,
            ]
        },
        "picard": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"damping": _POS, "tolerance": _POS,
                           "max_iter": {"type": "integer", "minimum": 1},
                           "stability_safety": _POS},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"directory": {"type": "string"},
                           "formats": {"type": "array", "items": {"enum": ["csv", "json"]}}},
        },
        "seed": {"type": "integer"},
    },
}

# drifts below this are roundoff; coarse grids are pre-asymptotic, so demand only clear decay
ROUNDOFF_FLOOR = 1e-11
MIN_DRIFT_RATIO = 1.5


@dataclass(frozen=True)
class RunConfig:
    spec: ProblemSpec
    grid: GridSpec
    picard: PicardConfig
    out_dir: Path
    formats: tuple[str, ...]
    seed: int
    raw: dict


# -- config loading -------------------------------------------------------------------


def _load_json(text: str, source: str) -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: malformed JSON at line {exc.lineno}, "
                          f"column {exc.colno}: {exc.msg}") from None


def _read_xy_table(path: Path) -> tuple[np.ndarray, np.ndarray]:
    if not path.is_file():
        raise ConfigError(f"referenced file not found: {path}")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"{path}: cannot parse two-column CSV ({exc})") from None
    if data.shape[1] < 2 or len(data) < 2:
        raise ConfigError(f"{path}: expected a header and at least two rows of x,value")
    return data[:, 0], data[:, 1]


def _periodic_table(path: Path, length: float):
    xs, vs = _read_xy_table(path)
    return lambda x: np.interp(np.asarray(x, float), xs, vs, period=length)


def _hamiltonian_from_block(block: dict) -> HamiltonianSpec:
    kw = {k: v for k, v in block.items() if k != "family"}
    return HamiltonianSpec(block["family"], **kw)


def _coupling_from_block(block: dict, base: Path) -> CouplingSpec:
    fam = block["family"]
    if fam == "power" and "gamma" not in block:
        raise ConfigError("power coupling needs gamma")
    if fam != "power" and "gamma" in block:
        raise ConfigError("gamma is only meaningful for a power coupling")
    if fam == "table":
        if "path" not in block:
            raise ConfigError("table coupling needs a path")
        ms, fs = _read_xy_table(base / block["path"])
        return CouplingSpec("table", table=(tuple(ms), tuple(fs)),
                            interpolation=block.get("interpolation", "cubic"),
                            m_min=float(ms[0]))
    if "path" in block:
        raise ConfigError("path is only meaningful for a table coupling")
    kw = {k: block[k] for k in ("alpha", "gamma", "m_min") if k in block}
    return CouplingSpec(fam, **kw)


def _initial_density(block: dict | None, length: float, base: Path):
    kind = (block or {"kind": "uniform"})["kind"]
    if kind == "uniform":
        return None
    if kind == "cosine":
        amp, n, ph = block.get("amplitude", 0.5), block.get("wavenumber", 1), block.get("phase", 0.0)
        if abs(amp) >= 1:
            raise ConfigError("cosine amplitude must be below 1 to keep the density positive")
        return lambda x: (1 + amp * np.cos(2 * np.pi * n * np.asarray(x) / length + ph)) / length
    table = _periodic_table(base / block["path"], length)

    def renormalized(x):
        # tabulated densities are rescaled to unit mass on the grid they are sampled on
        v = table(x)
        return v / (np.sum(v) * (length / len(np.atleast_1d(x))))
    return renormalized


def build_config(raw: dict, base: Path = Path("."), seed: int | None = None,
                 out: str | None = None) -> RunConfig:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {loc}: {exc.message}") from None
    d = raw["domain"]
    try:
        grid = GridSpec(d["length"], d["num_cells"], d["horizon"], d["num_steps"])
        tc = raw.get("terminal_cost", {"kind": "zero"})
        terminal = (None if tc["kind"] == "zero"
                    else _periodic_table(base / tc["path"], d["length"]))
        spec = ProblemSpec(
            _hamiltonian_from_block(raw["hamiltonian"]),
            _coupling_from_block(raw["coupling"], base),
            raw["epsilon"], horizon=d["horizon"], terminal_cost=terminal,
            initial_density=_initial_density(raw.get("initial_density"), d["length"], base),
        )
        picard = PicardConfig(**raw.get("picard", {}))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    output = raw.get("output", {})
    out_dir = Path(out) if out else base / output.get("directory", "out")
    cfg_seed = raw.get("seed", DEFAULT_SEED) if seed is None else seed
    return RunConfig(spec, grid, picard, out_dir, tuple(output.get("formats", ["csv", "json"])),
                     cfg_seed, raw)


def load_config(path: str, seed: int | None = None, out: str | None = None) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return build_config(_load_json(p.read_text(), str(p)), p.parent, seed, out)


# -- helpers ---------------------------------------------------------------------------


def _dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _canonical_spec(spec: ProblemSpec) -> tuple[ProblemSpec, dict | None]:
    """The normalized problem used by the jet-sampling suites."""
    if spec.hamiltonian.is_canonical:
        return spec, None
    ham, rec = normalize_hamiltonian(spec.hamiltonian)
    cpl = induced_coupling(spec.coupling, rec)
    return (ProblemSpec(ham, cpl, spec.epsilon, spec.horizon), rec.to_dict())


def _solve(cfg: RunConfig, grid: GridSpec):
    pair, report = solve_picard(cfg.spec, grid, cfg.picard)
    return pair, report


def _load_solution(cfg: RunConfig) -> SolutionPair | None:
    u_path, m_path = cfg.out_dir / "u.csv", cfg.out_dir / "m.csv"
    if not (u_path.is_file() and m_path.is_file()):
        return None
    return SolutionPair(read_field_csv(u_path, "value", cfg.grid),
                        read_field_csv(m_path, "density", cfg.grid))


def _write_solution(cfg: RunConfig, pair: SolutionPair, report) -> None:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    if "csv" in cfg.formats:
        write_field_csv(pair.u, cfg.out_dir / "u.csv")
        write_field_csv(pair.m, cfg.out_dir / "m.csv")
    if "json" in cfg.formats:
        (cfg.out_dir / "report.json").write_text(report.to_json() + "\n")


# -- suites ----------------------------------------------------------------------------


def _item(name: str, passed: bool, **values) -> dict:
    return {"item": name, "pass": bool(passed), **{k: _num(v) for k, v in values.items()}}


def _num(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def suite_symmetries(cfg: RunConfig, rng: np.random.Generator, n_jets: int = 1000) -> list[dict]:
    spec, _ = _canonical_spec(cfg.spec)
    jet = sample_jets(rng, n_jets, spec)
    items = []
    for g in catalog_generators(spec):
        E1, E2 = determining_residuals(g, jet, spec)
        S1, S2 = determining_scales(g, jet, spec)
        e1, e2 = float(np.max(np.abs(E1))), float(np.max(np.abs(E2)))
        rel = float(max(np.max(np.abs(E1) / np.maximum(S1, 1.0)),
                        np.max(np.abs(E2) / np.maximum(S2, 1.0))))
        items.append(_item(g.name, rel <= PASS_TOL, max_abs_E1=e1, max_abs_E2=e2,
                           max_scaled=rel, coefficients=g.display()))
    return items


def suite_variational(cfg: RunConfig, rng: np.random.Generator, n_jets: int = 1000
                      ) -> list[dict]:
    spec, _ = _canonical_spec(cfg.spec)
    jet = sample_jets(rng, n_jets, spec)
    items = []
    for chk in variational_checks(spec):
        d = float(np.max(np.abs(variational_defect(chk.generator, chk.V_t, chk.V_x, jet, spec))))
        ok = d <= PASS_TOL if chk.expect_zero else d > WITNESS_TOL
        items.append(_item(chk.label, ok, max_defect=d,
                           expected="zero" if chk.expect_zero else "nonzero",
                           V_t=str(chk.V_t), V_x=str(chk.V_x)))
    return items


def _field_for(spec: ProblemSpec, rng: np.random.Generator) -> AnalyticField:
    ham = spec.hamiltonian
    slope = 1.0 if ham.family == "power" else None
    return AnalyticField.random(rng, amplitude=0.05, max_wavenumber=2, slope=slope)


def suite_noether_identity(cfg: RunConfig, rng: np.random.Generator, n_points: int = 100
                           ) -> list[dict]:
    spec, _ = _canonical_spec(cfg.spec)
    items = []
    for chk in variational_checks(spec):
        if not chk.expect_zero:
            continue
        fld = _field_for(spec, rng)
        t = rng.uniform(-1, 1, n_points)
        x = rng.uniform(0, fld.length, n_points)
        d = float(np.max(np.abs(noether_identity_defect(chk.generator, chk.V_t, chk.V_x,
                                                         fld, t, x, spec))))
        items.append(_item(f"identity:{chk.label}", d <= 1e-9, max_defect=d))
    jet = sample_jets(rng, 200, spec)
    for law in catalog_conservation_laws(spec):
        (a, b), (c, e) = law.current(jet, spec), law.assembled(jet, spec)
        err = float(max(np.max(np.abs(a - c)), np.max(np.abs(b - e))))
        items.append(_item(f"assembly:{law.id}", err <= 1e-12, max_abs_difference=err))
    return items


def _solutions(cfg: RunConfig, solve_first: bool, levels: int):
    """Base solution (stored or freshly solved) followed by refined ones."""
    pair = None if solve_first else _load_solution(cfg)
    if pair is None:
        if not solve_first:
            raise ConfigError(f"no solution in {cfg.out_dir}; run solve or pass --solve-first")
        pair, report = _solve(cfg, cfg.grid)
        _write_solution(cfg, pair, report)
    out = [(cfg.grid, pair)]
    grid = cfg.grid
    for _ in range(levels):
        grid = grid.refined()
        out.append((grid, _solve(cfg, grid)[0]))
    return out


def suite_conservation(cfg: RunConfig, solve_first: bool, levels: int) -> list[dict]:
    spec = cfg.spec
    if not spec.hamiltonian.is_canonical:
        raise ConfigError("conservation checks on solutions need a canonical Hamiltonian")
    sols = _solutions(cfg, solve_first, levels)
    items, series = [], []
    for law in catalog_conservation_laws(spec):
        drifts, resid = [], []
        for k, (grid, pair) in enumerate(sols):
            ser = conserved_integral(law, pair, spec, grid)
            if k == 0:
                series.append(ser)
            drifts.append(ser.drift)
            resid.append(divergence_residual(law, pair, spec, grid)[1])
        floor = ROUNDOFF_FLOOR
        ok_drift = all(a <= floor or a / max(b, 1e-300) >= MIN_DRIFT_RATIO for a, b in zip(drifts, drifts[1:]))
        ok_resid = all(a <= floor or b < a for a, b in zip(resid, resid[1:]))
        if levels == 0:
            ok_drift, ok_resid = drifts[0] <= floor, resid[0] <= floor
        items.append(_item(law.id, ok_drift and ok_resid, drifts=drifts,
                           divergence_residuals=resid))
    write_series_csv(series, cfg.out_dir / "conserved.csv")
    return items


def suite_flows(cfg: RunConfig, rng: np.random.Generator, solve_first: bool,
                n_points: int = 50) -> list[dict]:
    spec, _ = _canonical_spec(cfg.spec)
    items = []
    t = rng.uniform(-1, 1, n_points)
    pts = (t, rng.uniform(-2, 2, n_points), rng.uniform(-2, 2, n_points),
           rng.uniform(0.1, 3, n_points))
    for g in catalog_generators(spec):
        a, b = rng.uniform(-0.3, 0.3, 2)
        two = group_flow(FlowRequest(g, a, group_flow(FlowRequest(g, b, pts))))
        one = group_flow(FlowRequest(g, a + b, pts))
        back = group_flow(FlowRequest(g, -a, group_flow(FlowRequest(g, a, pts))))
        err = float(max(np.max(np.abs(p - q)) for p, q in zip(two, one)))
        inv = float(max(np.max(np.abs(p - q)) for p, q in zip(back, pts)))
        items.append(_item(f"group-law:{g.name}", max(err, inv) <= 1e-10,
                           composition_error=err, inverse_error=inv))
    pair = _load_solution(cfg) if not solve_first else None
    if pair is None and solve_first:
        pair, report = _solve(cfg, cfg.grid)
        _write_solution(cfg, pair, report)
    if pair is not None and spec is cfg.spec:
        base = [f.sup() for f in pde_residuals(pair, spec, cfg.grid)]
        for g in catalog_generators(spec):
            if g.name not in ("X2", "X3", "X_f", "Xc"):
                continue
            new = group_flow(FlowRequest(g, 0.1, pair))
            tr = [f.sup() for f in pde_residuals(new, spec, new.grid)]
            ratio = max(x / max(y, 1e-300) for x, y in zip(tr, base))
            items.append(_item(f"covariance:{g.name}", ratio <= 5.0, ratio=ratio,
                               original=base, transformed=tr))
    return items


# -- commands ---------------------------------------------------------------------------


def cmd_solve(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    pair, report = _solve(cfg, cfg.grid)
    _write_solution(cfg, pair, report)
    print(f"iterations={report.iterations} update={report.final_update_norm:.3e} "
          f"converged={report.converged}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_verify(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    rng = np.random.default_rng(cfg.seed)
    what = args.what
    if what == "symmetries":
        items = suite_symmetries(cfg, rng)
    elif what == "variational":
        items = suite_variational(cfg, rng)
    elif what == "noether-identity":
        items = suite_noether_identity(cfg, rng)
    elif what == "conservation":
        items = suite_conservation(cfg, args.solve_first, args.refine)
    else:
        items = suite_flows(cfg, rng, args.solve_first)
    _, record = _canonical_spec(cfg.spec)
    passed = all(it["pass"] for it in items)
    doc = {"suite": what, "seed": cfg.seed, "pass": passed, "items": items}
    if record is not None:
        doc["normalization_record"] = record
    _dump(doc, cfg.out_dir / f"verify_{what}.json")
    for it in items:
        print(f"{'PASS' if it['pass'] else 'FAIL'}  {it['item']}")
    if not passed:
        failed = ", ".join(it["item"] for it in items if not it["pass"])
        print(f"failed checks: {failed}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _infer_family(d: dict) -> str:
    if "family" in d:
        return d["family"]
    if "k" in d:
        return "exponential"
    p = d.get("p")
    if p is None:
        raise ConfigError("cannot infer the Hamiltonian family: give 'family', 'p' or 'k'")
    return {2: "quadratic", 3: "cubic"}.get(p, "power")


def normalize_document(d: dict) -> dict:
    if not isinstance(d, dict):
        raise ConfigError("expected a JSON object with Hamiltonian coefficients")
    fam = _infer_family(d)
    kw = {k: d[k] for k in ("p", "k", "h", "h2", "h1", "h0", "q") if k in d}
    if fam in ("quadratic", "cubic"):
        kw.pop("p", None)
    if fam == "quadratic" and "h2" in kw:
        raise ConfigError("quadratic Hamiltonians take h, h1, h0")
    if kw.get("h", None) == 0:
        raise ConfigError("leading coefficient h must be nonzero")
    try:
        raw = HamiltonianSpec(fam, **kw)
        ham, rec = normalize_hamiltonian(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return {"canonical": ham.to_dict(), "record": rec.to_dict(), "identity": rec.is_identity}


def cmd_normalize(args) -> int:
    d = _load_json(sys.stdin.read(), "<stdin>")
    print(json.dumps(normalize_document(d), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    summary: dict = {}
    rep = cfg.out_dir / "report.json"
    if rep.is_file():
        summary["solve"] = json.loads(rep.read_text())
    for what in SUITES:
        p = cfg.out_dir / f"verify_{what}.json"
        if p.is_file():
            doc = json.loads(p.read_text())
            summary[what] = {"pass": doc["pass"],
                             "failed": [it["item"] for it in doc["items"] if not it["pass"]]}
    pair = _load_solution(cfg)
    if pair is not None and cfg.spec.hamiltonian.is_canonical:
        series = [conserved_integral(law, pair, cfg.spec, cfg.grid)
                  for law in catalog_conservation_laws(cfg.spec)]
        write_series_csv(series, cfg.out_dir / "conserved.csv")
        summary["conserved_drift"] = {s.law_id: s.drift for s in series}
    if not summary:
        raise ConfigError(f"nothing to report in {cfg.out_dir}")
    _dump(summary, cfg.out_dir / "summary.json")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfgnoether", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help=f"RNG seed (default {DEFAULT_SEED})")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")

    common(sub.add_parser("solve", help="run the Picard solver"))
    v = sub.add_parser("verify", help="run a verification suite")
    common(v)
    v.add_argument("--what", choices=SUITES, required=True)
    v.add_argument("--solve-first", action="store_true", help="solve before checking solutions")
    v.add_argument("--refine", type=int, default=1, help="refinement levels for conservation")
    sub.add_parser("normalize", help="canonicalize a Hamiltonian read as JSON from stdin")
    common(sub.add_parser("report", help="summarize outputs and write conserved.csv"))
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"solve": cmd_solve, "verify": cmd_verify, "normalize": cmd_normalize,
                "report": cmd_report}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, DomainError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
