"""Batch front end: model validation, discretization, solving, evaluation,
rate tables and full n-ladder sweeps.

Every verb writes a flat CSV report plus ``manifest.json`` into ``--out``.
Rows carry the model digest, grid digest, seed and package version, floats
are written with ``repr`` and nothing time-dependent is recorded, so reruns
with the same configuration are byte-identical.  The exit code is 0 exactly
when every requested stage succeeded.

Ladder entries are per-axis resolutions; the grid cardinality is
``n = resolution ** dim``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .model import ModelError, load_model, model_from_spec, validate_model
from .policy import (
    InfeasibleError,
    choose_eps,
    dual_bound_K,
    load_extended_policy,
    perturbed_solve,
    solve_finite,
)
from .quantize import build_finite_model, build_grid
from .rates import (
    GridTooCoarse,
    RateConstants,
    average_eps_curves,
    average_value_bound,
    discounted_value_bound,
    grid_threshold_average,
    grid_threshold_discounted,
    policy_eval_bound,
)

__all__ = ["ConfigError", "ExperimentConfig", "run_sweep", "main"]

VERBS = ("validate", "discretize", "solve", "extend", "evaluate", "rates", "sweep", "apply")
STAGES = {
    "discretize": ("discretize",),
    "solve": ("discretize", "solve"),
    "extend": ("discretize", "solve", "extend"),
    "evaluate": ("discretize", "solve", "extend", "evaluate"),
    "sweep": ("discretize", "solve", "extend", "evaluate", "rates"),
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    """Settings shared by all verbs.

    ``eps`` is ``fixed:<v>``, ``kappa:<v>`` (tightening ``kappa / (3K)``)
    or ``escalate`` (walk the ladder until the extended policy is feasible
    with positive margins; ``kappa`` then defaults to ``0.1 sup|c|``).
    """

    model: str | None = None
    criterion: str = "discounted"
    ladder: tuple = ()
    eps: str = "fixed:0"
    kappa: float | None = None
    seed: int | None = None
    horizon: int = 60
    replications: int = 2000
    burn_in: int = 0
    confidence: float = 0.99
    method: str = "auto"
    jobs: int = 1
    out: str | None = None
    policy: str | None = None
    states: str | None = None

    def eps_mode(self):
        mode, _, val = self.eps.partition(":")
        if mode == "escalate" and not val:
            return mode, None
        if mode in ("fixed", "kappa") and val:
            try:
                v = float(val)
            except ValueError:
                raise ConfigError(f"bad eps value {val!r}") from None
            if not math.isfinite(v) or v < 0 or (mode == "kappa" and v == 0):
                raise ConfigError(f"bad eps value {val!r}")
            return mode, v
        raise ConfigError(f"eps must be fixed:<v>, kappa:<v> or escalate, got {self.eps!r}")

    def check(self, verb: str) -> None:
        if self.out is None:
            raise ConfigError("--out is required")
        if verb == "apply":
            if self.policy is None or self.states is None:
                raise ConfigError("apply needs --policy and --states")
            return
        if self.model is None:
            raise ConfigError("--model is required")
        if verb == "validate":
            if self.seed is None:
                raise ConfigError("--seed is required (no implicit entropy)")
            return
        if not self.ladder:
            raise ConfigError("the n-ladder is empty")
        lad = list(self.ladder)
        if any(not isinstance(r, int) or isinstance(r, bool) or r < 1 for r in lad):
            raise ConfigError("ladder entries must be positive integers")
        if any(b <= a for a, b in zip(lad, lad[1:])):
            raise ConfigError("the n-ladder must be strictly increasing")
        if verb == "rates":
            return
        if self.seed is None:
            raise ConfigError("--seed is required (no implicit entropy)")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.criterion not in ("discounted", "average"):
            raise ConfigError(f"unknown criterion {self.criterion!r}")
        if self.method not in ("auto", "lp", "dual"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be positive")
        self.eps_mode()


def _parse_ladder(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(text)
    items = [t.strip() for t in str(text).split(",") if t.strip()]
    try:
        return tuple(int(t) for t in items)
    except ValueError:
        raise ConfigError(f"bad ladder {text!r}") from None


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Reporter:
    """Single writer for one CSV report and the manifest."""

    def __init__(self, out: str, name: str, columns: list):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.name = name
        self.columns = list(columns)
        self.rows: list = []
        self.files: list = []

    def add(self, row: dict) -> None:
        unknown = set(row) - set(self.columns)
        if unknown:
            raise KeyError(f"unknown report columns {sorted(unknown)}")
        self.rows.append(row)

    def write_text(self, fname: str, text: str) -> None:
        (self.dir / fname).write_text(text)
        self.files.append(fname)

    def write_csv(self, fname: str | None = None, columns=None, rows=None) -> None:
        columns = columns or self.columns
        rows = self.rows if rows is None else rows
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])
        self.write_text(fname or f"{self.name}.csv", buf.getvalue())

    def manifest(self, payload: dict) -> None:
        payload = dict(payload, files=sorted(self.files + ["manifest.json"]), version=__version__)
        text = json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n"
        (self.dir / "manifest.json").write_text(text)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def _load_model(ref: str):
    if os.path.exists(ref):
        return load_model(ref)
    try:
        return model_from_spec({"family": ref})
    except ModelError:
        raise ConfigError(f"model {ref!r} is neither a file nor a builtin family") from None


def _rate_constants(model, grid=None):
    try:
        return RateConstants.from_model(model, None if grid is None else grid.alpha_cov)
    except ValueError:
        return None


def _resolve_eps(cfg: ExperimentConfig, model):
    """Return ``(eps, kappa, notes)`` for the configured tightening policy."""
    mode, val = cfg.eps_mode()
    slack = model.regularity.alpha_slater
    sup_c = model.sup_norms()[0]
    if mode == "fixed":
        return val, cfg.kappa, []
    kappa = val if mode == "kappa" else (cfg.kappa if cfg.kappa is not None else 0.1 * sup_c)
    if slack is None:
        raise ConfigError("kappa-based tightening needs a declared Slater slack")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        eps, _ = choose_eps(kappa, sup_c, slack, cfg.criterion)
    return eps, kappa, [str(w.message) for w in caught]


def _sweep_columns(q: int) -> list:
    cols = ["model_digest", "grid_digest", "seed", "version", "criterion", "resolution", "n",
            "status", "error", "eps", "row_defect", "alpha_min_finite",
            "value", "dual_value", "duality_gap"]
    cols += [f"finite_d{l + 1}" for l in range(q)]
    cols += ["value_eps"] + [f"finite_eps_d{l + 1}" for l in range(q)]
    cols += ["mc_value", "mc_value_hw", "mc_bias"]
    for l in range(q):
        cols += [f"mc_d{l + 1}", f"mc_d{l + 1}_hw", f"margin_d{l + 1}"]
    cols += ["feasible", "value_bound", "eval_bound_c"] + [f"eval_bound_d{l + 1}" for l in range(q)]
    cols += ["within_kappa"]
    return cols


def _dual_value(sol, fm, criterion):
    if sol.dual is None:
        return None
    if criterion == "discounted":
        return sol.dual.objective
    return sol.dual.objective(fm.k)


def _run_resolution(model, cfg: ExperimentConfig, r: int, stages, eps: float, K_bound):
    """Run the requested stages at one resolution; never raises."""
    row = {"model_digest": model.digest(), "seed": cfg.seed, "version": __version__,
           "criterion": cfg.criterion, "resolution": r, "n": r ** model.dim, "eps": eps,
           "status": "ok"}
    art = {"notes": []}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            grid = build_grid(model.space, (r,) * model.dim)
            row["grid_digest"] = grid.digest()
            fm = build_finite_model(model, grid)
            row["row_defect"] = fm.row_defect
            row["alpha_min_finite"] = fm.alpha_min
            art["fm"] = fm
            if "solve" in stages:
                sol = solve_finite(fm, cfg.criterion, cfg.method, K_bound)
                row["value"] = sol.value
                dv = _dual_value(sol, fm, cfg.criterion)
                row["dual_value"] = dv
                row["duality_gap"] = None if dv is None else sol.value - dv
                for l, v in enumerate(sol.constraint_values):
                    row[f"finite_d{l + 1}"] = v
                ext, rep = perturbed_solve(model, grid, eps, cfg.criterion, fm=fm,
                                           method=cfg.method)
                row["value_eps"] = rep.value
                for l, v in enumerate(rep.finite_constraints):
                    row[f"finite_eps_d{l + 1}"] = v
                art["policy"] = ext
            if "evaluate" in stages:
                from .evaluate import mc_eval_original

                ev = mc_eval_original(model, art["policy"], cfg.criterion, cfg.horizon,
                                      cfg.replications, cfg.burn_in, seed=[cfg.seed, r],
                                      confidence=cfg.confidence)
                row["mc_value"] = ev.value
                row["mc_value_hw"] = ev.value_hw
                row["mc_bias"] = ev.bias_bound
                for l in range(model.q):
                    row[f"mc_d{l + 1}"] = ev.constraints[l]
                    row[f"mc_d{l + 1}_hw"] = ev.constraints_hw[l]
                    row[f"margin_d{l + 1}"] = (model.k[l] - ev.constraints[l]
                                               - ev.constraints_hw[l] - ev.constraints_bias[l])
                row["feasible"] = bool(np.all(ev.feasible))
                art["evaluation"] = ev
            if "rates" in stages:
                _rate_columns(model, grid, cfg.criterion, row)
        except (InfeasibleError, ValueError, np.linalg.LinAlgError, RuntimeError) as exc:
            row["status"] = "error"
            row["error"] = f"{type(exc).__name__}: {exc}"
    art["notes"] = sorted({str(w.message) for w in caught})
    return row, art


def _rate_columns(model, grid, criterion, row) -> None:
    rc = _rate_constants(model, grid)
    if rc is None:
        return
    n = grid.n
    if criterion == "discounted":
        try:
            row["value_bound"] = discounted_value_bound(n, rc)
        except ValueError:
            row["value_bound"] = None
    else:
        try:
            row["value_bound"] = average_value_bound(n, rc)
        except GridTooCoarse:
            row["value_bound"] = None
    row["eval_bound_c"] = policy_eval_bound(n, rc, rc.K_c, rc.sup_c)
    for l in range(model.q):
        row[f"eval_bound_d{l + 1}"] = policy_eval_bound(n, rc, rc.K_l[l], rc.sup_d[l])


def _verdict(rows, kappa):
    """Classify the finest evaluated resolution; fills ``within_kappa``."""
    solved = [r for r in rows if r.get("status") == "ok" and r.get("value") is not None]
    if not solved:
        return "no-solution"
    ref = solved[-1]["value"]
    for r in rows:
        if r.get("mc_value") is not None and kappa is not None:
            slack = kappa + r["mc_value_hw"] + (r.get("mc_bias") or 0.0)
            r["within_kappa"] = abs(r["mc_value"] - ref) <= slack
    evaluated = [r for r in solved if r.get("feasible") is not None]
    if not evaluated:
        return "not-evaluated"
    last = evaluated[-1]
    if not last["feasible"]:
        return "infeasible"
    if kappa is None:
        return "feasible"
    return "feasible-and-within-kappa" if last.get("within_kappa") else "feasible-not-within-kappa"


def run_sweep(cfg: ExperimentConfig, verb: str = "sweep") -> int:
    """Run a ladder pipeline and write ``<verb>.csv`` and ``manifest.json``.

    Returns the process exit code.
    """
    cfg.check(verb)
    stages = STAGES[verb]
    model = _load_model(cfg.model)
    eps, kappa, notes = (0.0, cfg.kappa, [])
    if "solve" in stages:
        eps, kappa, notes = _resolve_eps(cfg, model)
    slack = model.regularity.alpha_slater
    K_bound = dual_bound_K(model.sup_norms()[0], slack) if slack is not None else None
    mode = cfg.eps_mode()[0]

    rep = Reporter(cfg.out, verb, _sweep_columns(model.q))
    results = []
    if mode == "escalate" and "evaluate" in stages:
        escalation = "exhausted"
        for r in cfg.ladder:
            row, art = _run_resolution(model, cfg, r, stages, eps, K_bound)
            results.append((row, art))
            margins = [row.get(f"margin_d{l + 1}") for l in range(model.q)]
            if row["status"] == "ok" and all(m is not None and m > 0 for m in margins):
                escalation = f"succeeded at resolution {r}"
                break
    else:
        escalation = None
        run = lambda r: _run_resolution(model, cfg, r, stages, eps, K_bound)  # noqa: E731
        if cfg.jobs > 1:
            with ThreadPoolExecutor(cfg.jobs) as pool:
                results = list(pool.map(run, cfg.ladder))
        else:
            results = [run(r) for r in cfg.ladder]

    rows = [row for row, _ in results]
    verdict = _verdict(rows, kappa) if "solve" in stages else None
    for row, art in results:
        rep.add(row)
        if row["status"] != "ok":
            continue
        if verb == "discretize":
            fname = f"finite_model_r{row['resolution']}.npz"
            art["fm"].save(rep.dir / fname)
            rep.files.append(fname)
        if "extend" in stages and "policy" in art:
            rep.write_text(f"policy_r{row['resolution']}.json", art["policy"].dumps() + "\n")
    rep.write_csv()

    failed = [r for r in rows if r["status"] != "ok"]
    if mode == "escalate" and "evaluate" in stages:
        ok = escalation != "exhausted"
    else:
        ok = not failed
    rep.manifest({
        "command": verb,
        "config": asdict(cfg),
        "model": model.spec,
        "model_digest": model.digest(),
        "eps": eps,
        "kappa": kappa,
        "escalation": escalation,
        "verdict": verdict,
        "notes": notes,
        "stages": [{"resolution": row["resolution"], "status": row["status"],
                    "error": row.get("error"), "warnings": art["notes"]} for row, art in results],
        "exit_code": 0 if ok else 1,
    })
    return 0 if ok else 1


def _run_validate(cfg: ExperimentConfig) -> int:
    cfg.check("validate")
    model = _load_model(cfg.model)
    report = validate_model(model, seed=cfg.seed)
    rep = Reporter(cfg.out, "validate", ["model_digest", "seed", "version", "check", "status",
                                          "detail"])
    for chk in report.checks:
        rep.add({"model_digest": model.digest(), "seed": cfg.seed, "version": __version__,
                 "check": chk.name, "status": chk.status, "detail": chk.detail})
    rep.write_csv()
    code = 0 if report.ok else 1
    rep.manifest({"command": "validate", "config": asdict(cfg), "model": model.spec,
                  "model_digest": model.digest(), "report": report.to_dict(), "exit_code": code})
    return code


def _run_rates(cfg: ExperimentConfig) -> int:
    cfg.check("rates")
    model = _load_model(cfg.model)
    rc = _rate_constants(model)
    if rc is None:
        raise ConfigError("model does not declare the constants needed for rates")
    rep = Reporter(cfg.out, "rates", [
        "model_digest", "version", "resolution", "n", "discounted_value_bound",
        "eval_bound_c", "eval_bound_d_max", "eps_c", "eps_max", "t_prime", "t",
        "average_value_bound"])
    for r in cfg.ladder:
        n = r ** model.dim
        row = {"model_digest": model.digest(), "version": __version__, "resolution": r, "n": n,
               "eval_bound_c": policy_eval_bound(n, rc, rc.K_c, rc.sup_c),
               "eval_bound_d_max": max((policy_eval_bound(n, rc, kl, sd)
                                        for kl, sd in zip(rc.K_l, rc.sup_d)), default=0.0)}
        try:
            row["discounted_value_bound"] = discounted_value_bound(n, rc)
        except ValueError:
            pass
        if rc.kappa_erg is not None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                cur = average_eps_curves(n, rc)
            row.update(eps_c=cur.eps_c, eps_max=cur.eps_max, t_prime=cur.t_prime, t=cur.t)
            try:
                row["average_value_bound"] = average_value_bound(n, rc)
            except GridTooCoarse:
                pass
        rep.add(row)
    rep.write_csv()
    const = {f.name: getattr(rc, f.name) for f in fields(rc) if f.name != "notes"}
    const.update(K=rc.K)
    crow = [{"name": k, "value": v if not isinstance(v, tuple) else ";".join(map(repr, v))}
            for k, v in sorted(const.items())]
    rep.write_csv("constants.csv", ["name", "value"], crow)
    thresholds = {}
    if cfg.kappa is not None:
        try:
            thresholds["discounted"] = list(grid_threshold_discounted(cfg.kappa, rc))
        except ValueError as exc:
            thresholds["discounted"] = str(exc)
        try:
            thresholds["average"] = list(grid_threshold_average(cfg.kappa, rc))
        except ValueError as exc:
            thresholds["average"] = str(exc)
    rep.manifest({"command": "rates", "config": asdict(cfg), "model": model.spec,
                  "model_digest": model.digest(), "notes": list(rc.notes),
                  "thresholds": thresholds, "exit_code": 0})
    return 0


def _read_states(path: str, dim: int) -> np.ndarray:
    text = Path(path).read_text()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    try:
        float(rows[0][0])
    except (ValueError, IndexError):
        rows = rows[1:]
    x = np.array([[float(v) for v in r] for r in rows], dtype=float).reshape(-1, dim)
    return x


def _run_apply(cfg: ExperimentConfig) -> int:
    cfg.check("apply")
    policy = load_extended_policy(Path(cfg.policy).read_text())
    x = _read_states(cfg.states, policy.grid.dim)
    probs = policy(x)
    cells = policy.cell(x)
    cols = ([f"x{i + 1}" for i in range(policy.grid.dim)] + ["cell"]
            + [f"p{a}" for a in range(policy.n_actions)] + ["grid_digest", "version"])
    rep = Reporter(cfg.out, "apply", cols)
    for xi, ci, pi in zip(x, cells, probs):
        row = {f"x{i + 1}": v for i, v in enumerate(xi)}
        row.update({f"p{a}": v for a, v in enumerate(pi)})
        row.update(cell=ci, grid_digest=policy.grid.digest(), version=__version__)
        rep.add(row)
    rep.write_csv()
    rep.manifest({"command": "apply", "config": asdict(cfg), "grid_digest": policy.grid.digest(),
                  "exit_code": 0})
    return 0


def _run_evaluate_file(cfg: ExperimentConfig) -> int:
    """Evaluate a saved extended policy on the original model."""
    from .evaluate import mc_eval_original

    if cfg.model is None or cfg.seed is None or cfg.out is None:
        raise ConfigError("evaluate --policy needs --model, --seed and --out")
    model = _load_model(cfg.model)
    policy = load_extended_policy(Path(cfg.policy).read_text())
    ev = mc_eval_original(model, policy, cfg.criterion, cfg.horizon, cfg.replications,
                          cfg.burn_in, seed=cfg.seed, confidence=cfg.confidence)
    cols = ["model_digest", "grid_digest", "seed", "version", "criterion", "quantity",
            "estimate", "half_width", "bias_bound", "level", "feasible"]
    rep = Reporter(cfg.out, "evaluate", cols)
    base = {"model_digest": model.digest(), "grid_digest": policy.grid.digest(),
            "seed": cfg.seed, "version": __version__, "criterion": cfg.criterion}
    rep.add(dict(base, quantity="c", estimate=ev.value, half_width=ev.value_hw,
                 bias_bound=ev.bias_bound))
    for l in range(model.q):
        rep.add(dict(base, quantity=f"d{l + 1}", estimate=ev.constraints[l],
                     half_width=ev.constraints_hw[l], bias_bound=ev.constraints_bias[l],
                     level=model.k[l], feasible=bool(ev.feasible[l])))
    rep.write_csv()
    rep.manifest({"command": "evaluate", "config": asdict(cfg), "model": model.spec,
                  "evaluation": ev.to_dict(), "exit_code": 0})
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # defaults are None so that unset flags do not mask the config file
    common.add_argument("--config", help="JSON file with ExperimentConfig fields")
    common.add_argument("--model", help="model spec file (JSON) or builtin family name")
    common.add_argument("--criterion", choices=("discounted", "average"))
    common.add_argument("--ladder", help="comma-separated per-axis resolutions, e.g. 16,64,256")
    common.add_argument("--eps", help="fixed:<v> | kappa:<v> | escalate")
    common.add_argument("--kappa", type=float, help="accuracy target for verdicts and thresholds")
    common.add_argument("--seed", type=int)
    common.add_argument("--horizon", type=int, help="MC horizon T")
    common.add_argument("--replications", type=int, help="MC trajectories N")
    common.add_argument("--burn-in", dest="burn_in", type=int)
    common.add_argument("--confidence", type=float)
    common.add_argument("--method", choices=("auto", "lp", "dual"))
    common.add_argument("--jobs", type=int, help="resolutions processed concurrently")
    common.add_argument("--out", help="output directory")
    common.add_argument("--policy", help="policy JSON written by `extend`")
    common.add_argument("--states", help="CSV of states, one per row")

    parser = argparse.ArgumentParser(prog="quantcmdp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"quantcmdp {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)
    helps = {
        "validate": "check model assumptions",
        "discretize": "build finite models along the ladder",
        "solve": "solve the finite models",
        "extend": "solve with tightening and write extended policies",
        "evaluate": "Monte Carlo evaluation on the original model",
        "rates": "constants table and bound curves",
        "sweep": "full pipeline with rate bounds and a verdict",
        "apply": "map states to action distributions",
    }
    for verb in VERBS:
        sub.add_parser(verb, parents=[common], help=helps[verb])
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Merge defaults, then the config file, then explicitly given flags."""
    values = {}
    if args.config:
        try:
            values = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        known = {f.name for f in fields(ExperimentConfig)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for f in fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    if "ladder" in values:
        values["ladder"] = _parse_ladder(values["ladder"])
    return ExperimentConfig(**values)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        if args.verb == "validate":
            return _run_validate(cfg)
        if args.verb == "rates":
            return _run_rates(cfg)
        if args.verb == "apply":
            return _run_apply(cfg)
        if args.verb == "evaluate" and cfg.policy is not None:
            return _run_evaluate_file(cfg)
        return run_sweep(cfg, args.verb)
    except (ConfigError, ModelError, OSError, ValueError) as exc:
        print(f"quantcmdp: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
