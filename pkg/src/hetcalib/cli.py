"""Command-line interface: fit, predict, het-test, simulate, study, oracles.

Exit codes: 0 success, 2 configuration, 3 numerical failure, 4 I/O.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import expr as ex
from .baselines import EstimatorKind, fit_variant, variant_settings
from .checks import study_checks
from .dense import dense_log_likelihood, dense_predict
from .design import DesignError, ReplicatedDesign, read_design_csv, write_design_csv
from .fit import FitSettings, settings_dict, settings_from_dict
from .inference import InferenceError
from .likelihood import ParamLayout, log_likelihood
from .models import BUILTINS, ComputerModel, ModelError, builtin_model
from .ortho import sample_points
from .predict import predict
from .simulation import (Scenario, ScenarioError, bundled_scenario, emit_tables, generate_dataset, run_study,
                         scenario_oracles)

log = logging.getLogger("hetcalib")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class StaleFitError(ConfigError):
    pass


class NumericalError(ArithmeticError):
    pass


DEFAULTS = {
    "data": None,
    "x_cols": None,
    "y_col": "y",
    "model": None,
    "q": None,
    "theta_bounds": None,
    "bounds": None,
    "estimator": "hetogp",
    "kernel": "matern52",
    "kernel_g": "matern52",
    "mc_samples": 1000,
    "mc_seed": 0,
    "starts": 5,
    "seed": 0,
    "maxiter": 500,
    "out": None,
    "summary": None,
}


def parse_ranges(text, what="bounds") -> list[list[float]]:
    """``"lo:hi,lo:hi"`` -> [[lo, hi], ...]."""
    if isinstance(text, list):
        return [[float(a), float(b)] for a, b in text]
    out = []
    for part in str(text).split(","):
        bits = part.split(":")
        if len(bits) != 2:
            raise ConfigError(f"{what}: expected lo:hi, got {part!r}")
        try:
            lo, hi = float(bits[0]), float(bits[1])
        except ValueError:
            raise ConfigError(f"{what}: cannot parse {part!r}") from None
        if not lo < hi:
            raise ConfigError(f"{what}: need lo < hi in {part!r}")
        out.append([lo, hi])
    return out


def parse_grid(text, d: int) -> np.ndarray:
    """``"lo:hi:count"`` per dimension, comma separated; product grid in d > 1."""
    axes = []
    for part in str(text).split(","):
        bits = part.split(":")
        if len(bits) != 3:
            raise ConfigError(f"grid: expected lo:hi:count, got {part!r}")
        try:
            lo, hi, k = float(bits[0]), float(bits[1]), int(bits[2])
        except ValueError:
            raise ConfigError(f"grid: cannot parse {part!r}") from None
        if k < 1:
            raise ConfigError("grid: count must be >= 1")
        axes.append(np.linspace(lo, hi, k))
    if len(axes) != d:
        raise ConfigError(f"grid has {len(axes)} dimensions, the fit has {d}")
    return np.column_stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")])


def read_points_csv(path, d: int) -> np.ndarray:
    try:
        M = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if M.shape[1] != d:
        raise ConfigError(f"{path}: {M.shape[1]} columns, the fit has d={d}")
    return M


def load_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc}") from exc
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        cfg.update(user)
        # relative data paths are taken relative to the config file
        if cfg.get("data") and not Path(cfg["data"]).is_absolute():
            cfg["data"] = str((path.parent / cfg["data"]).resolve())
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    return cfg


def resolve_model(cfg, d: int) -> ComputerModel:
    src = cfg.get("model")
    if not src:
        raise ConfigError("a model is required (built-in name or expression)")
    if src in BUILTINS:
        m = builtin_model(src)
        if cfg.get("theta_bounds") is not None:
            m = ComputerModel.from_expression(BUILTINS[src]["src"], m.d, m.q,
                                              parse_ranges(cfg["theta_bounds"], "theta-bounds"), name=src)
    else:
        if cfg.get("q") is None or cfg.get("theta_bounds") is None:
            raise ConfigError("an expression model needs q and theta-bounds")
        tb = parse_ranges(cfg["theta_bounds"], "theta-bounds")
        if len(tb) != int(cfg["q"]):
            raise ConfigError(f"theta-bounds has {len(tb)} ranges but q={cfg['q']}")
        m = ComputerModel.from_expression(src, d, int(cfg["q"]), tb)
    if m.d != d:
        raise ConfigError(f"model takes d={m.d} inputs, the data has {d}")
    return m


def load_design(cfg) -> ReplicatedDesign:
    path = cfg.get("data")
    if not path:
        raise ConfigError("a data CSV is required (--data)")
    if not Path(path).is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    schema = None
    if cfg.get("x_cols"):
        cols = cfg["x_cols"]
        cols = cols.split(",") if isinstance(cols, str) else list(cols)
        schema = {f"x{j + 1}": c.strip() for j, c in enumerate(cols)}
        schema["y"] = cfg.get("y_col") or "y"
    bounds = parse_ranges(cfg["bounds"]) if cfg.get("bounds") is not None else None
    try:
        return read_design_csv(path, schema, bounds=bounds)
    except DesignError as exc:
        raise ConfigError(str(exc)) from None


def _sha(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def data_hash(design: ReplicatedDesign) -> str:
    h = hashlib.sha256()
    for x, y in zip(design.X, design.y):
        h.update((",".join(f"{v:.17g}" for v in x) + f";{y:.17g}\n").encode())
    h.update(",".join(f"{v:.17g}" for v in design.bounds.ravel()).encode())
    return h.hexdigest()


def model_hash(model: ComputerModel, src: str) -> str:
    return _sha({"src": src, "d": model.d, "q": model.q, "theta_bounds": model.theta_bounds.tolist()})


def fit_settings(cfg) -> FitSettings:
    base = FitSettings(kernel=cfg["kernel"], kernel_g=cfg["kernel_g"], mc_samples=int(cfg["mc_samples"]),
                       mc_seed=int(cfg["mc_seed"]), starts=int(cfg["starts"]), seed=int(cfg["seed"]),
                       maxiter=int(cfg["maxiter"]))
    kind = EstimatorKind.parse(cfg["estimator"])
    if not kind.is_gp:
        raise ConfigError("fit/het-test need a GP estimator; use `study` for WLS comparisons")
    return variant_settings(kind, base)


def _float(v):
    return None if v is None or not np.isfinite(v) else float(v)


def fit_document(res, cfg, design, model) -> dict:
    lay = res.layout
    x = lay.to_vector(res.params)
    names = lay.names()
    blocks = {k: x[s].tolist() for k, s in lay.slices().items()}
    p = res.params
    doc = {
        "estimator": res.estimator,
        "log_likelihood": float(res.log_likelihood),
        "nu": float(p.nu),
        "nu_g": _float(p.nu_g),
        "omega": {"names": names, "vector": x.tolist(), "blocks": blocks},
        "natural": {"theta": p.theta.tolist(), "phi": p.phi.tolist(),
                    "phi_g": None if p.phi_g is None else p.phi_g.tolist(),
                    "g": p.g, "delta": None if p.delta is None else p.delta.tolist()},
        "at_bound": res.at_bound(),
        "optimizer": res.report.summary(),
        "settings": settings_dict(res.settings),
        "theta": [],
    }
    ci = None
    try:
        ci = res.confidence()
    except (InferenceError, ArithmeticError) as exc:
        doc["interval_error"] = str(exc)
    for j in range(model.q):
        row = {"name": f"theta{j + 1}", "estimate": float(p.theta[j])}
        if ci is not None:
            row.update(se=float(ci.se[j]), lower=float(ci.lower[j]), upper=float(ci.upper[j]))
        doc["theta"].append(row)
    if ci is not None:
        doc["interval_conditional"] = ci.conditional
        doc["information_v_block"] = res.info().v_block
    if res.heteroscedastic:
        try:
            t = res.het_test()
            doc["het_test"] = {"statistic": t.statistic, "dof": t.dof, "p_value": t.p_value,
                               "reject_at": {str(k): v for k, v in t.reject_at.items()}}
        except (InferenceError, ArithmeticError) as exc:
            doc["het_test"] = {"error": str(exc)}
    # output locations do not affect the result, so they stay out of the provenance
    pcfg = {k: v for k, v in cfg.items() if k not in ("out", "summary")}
    doc["provenance"] = {
        "config": pcfg,
        "config_hash": _sha(pcfg),
        "data_hash": data_hash(design),
        "model_hash": model_hash(model, cfg["model"]),
        "seeds": {"mc_seed": res.settings.mc_seed, "start_seed": res.settings.seed},
        "versions": {"hetcalib": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    return doc


def summary_text(doc) -> str:
    """Fixed-width table: Estimate, 95% Confidence Interval, p-value."""
    lines = [f"Estimator: {doc['estimator']}    log L = {doc['log_likelihood']:.6f}",
             f"{'':<10}{'Estimate':>12}  {'95% Confidence Interval':>28}  {'p-value':>10}"]
    p = doc.get("het_test", {}).get("p_value")
    for row in doc["theta"]:
        if "lower" in row:
            ci = f"({row['lower']:.4f}, {row['upper']:.4f})"
        else:
            ci = "unavailable"
        lines.append(f"{row['name']:<10}{row['estimate']:>12.4f}  {ci:>28}  {'':>10}")
    if "het_test" in doc:
        t = doc["het_test"]
        if "p_value" in t:
            lines.append(f"{'het-test':<10}{t['statistic']:>12.4f}  {'chi2 dof ' + str(t['dof']):>28}  "
                         f"{p:>10.3g}")
        else:
            lines.append(f"het-test unavailable: {t['error']}")
    lines.append(f"nu = {doc['nu']:.6g}" + (f"    nu_g = {doc['nu_g']:.6g}" if doc["nu_g"] is not None else ""))
    if doc["at_bound"]:
        lines.append("at bound (profiled out of the interval): " + ", ".join(doc["at_bound"]))
    return "\n".join(lines) + "\n"


def dense_check(res, design, model, rtol=1e-8):
    d = dense_log_likelihood(res.params, design, model, res.points)
    v = res.log_likelihood
    if abs(d["value"] - v) > rtol * max(1.0, abs(v)):
        raise NumericalError(f"dense check: log L {v!r} vs dense {d['value']!r}")
    pred = predict(res, design.locations)
    ell = res.state.log_lambda if res.heteroscedastic else np.zeros(design.n)
    mu, var = dense_predict(res.params, design, model, res.points, design.locations, res.state.nu_hat, ell)
    if not (np.allclose(pred.mean, mu, rtol=rtol, atol=rtol) and np.allclose(pred.total_variance, var,
                                                                          rtol=rtol, atol=rtol)):
        raise NumericalError("dense check: predictions disagree with the dense reference")
    log.info("dense check passed (log L difference %.3g)", abs(d["value"] - v))


def _write(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def _run_fit(args, need_het=False):
    cfg = load_config(args)
    design = load_design(cfg)
    model = resolve_model(cfg, design.d)
    settings = fit_settings(cfg)
    if need_het and not settings.heteroscedastic:
        raise ConfigError("the heteroscedasticity test needs a latent-noise estimator (hetgp or hetogp)")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = fit_variant(cfg["estimator"], design, model, settings)
    if getattr(args, "dense_check", False):
        dense_check(res, design, model)
    return cfg, design, model, res


def cmd_fit(args) -> int:
    cfg, design, model, res = _run_fit(args)
    doc = fit_document(res, cfg, design, model)
    text = json.dumps(doc, indent=1, sort_keys=True)
    if cfg.get("out"):
        _write(cfg["out"], text + "\n")
    else:
        print(text)
    summ = summary_text(doc)
    if cfg.get("summary"):
        _write(cfg["summary"], summ)
    sys.stderr.write(summ)
    return EXIT_OK


def cmd_het_test(args) -> int:
    cfg, design, model, res = _run_fit(args, need_het=True)
    t = res.het_test()
    out = {"statistic": t.statistic, "dof": t.dof, "p_value": t.p_value,
           "reject_at": {str(k): v for k, v in t.reject_at.items()},
           "data_hash": data_hash(design), "estimator": res.estimator}
    print(json.dumps(out, indent=1, sort_keys=True))
    return EXIT_OK


@dataclass
class LoadedFit:
    """Enough of a fit to predict: rebuilt from a saved document and its data."""

    params: object
    state: object
    design: ReplicatedDesign
    model: ComputerModel
    points: object


def load_fit(path) -> LoadedFit:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not a fit result: {exc}") from None
    try:
        prov, settings = doc["provenance"], settings_from_dict(doc["settings"])
        cfg = prov["config"]
    except KeyError as exc:
        raise ConfigError(f"{path}: missing field {exc}") from None
    design = load_design(cfg)
    if data_hash(design) != prov["data_hash"]:
        raise StaleFitError(f"{cfg['data']} changed since the fit was made (data hash mismatch)")
    model = resolve_model(cfg, design.d)
    if model_hash(model, cfg["model"]) != prov["model_hash"]:
        raise StaleFitError("model definition changed since the fit was made (model hash mismatch)")
    lay = ParamLayout(model.q, design.d, design.n, settings.heteroscedastic, settings.kernel, settings.kernel_g)
    params = lay.from_vector(np.asarray(doc["omega"]["vector"], dtype=float))
    points = sample_points(design.bounds, settings.mc_samples, settings.mc_seed) if settings.orthogonal else None
    state = log_likelihood(params, design, model, points)
    return LoadedFit(params.with_scales(state.nu_hat, state.nu_g_hat), state, design, model, points)


def cmd_predict(args) -> int:
    fit = load_fit(args.fit)
    d = fit.design.d
    if (args.grid is None) == (args.x_csv is None):
        raise ConfigError("give exactly one of --grid or --x-csv")
    if args.grid is not None:
        Xnew = parse_grid(args.grid, d)
    else:
        if not Path(args.x_csv).is_file():
            raise FileNotFoundError(f"new-input file not found: {args.x_csv}")
        Xnew = read_points_csv(args.x_csv, d)
    b = fit.design.bounds
    outside = np.any((Xnew < b[:, 0]) | (Xnew > b[:, 1]), axis=1)
    if outside.any():
        log.warning("%d of %d prediction points lie outside the design bounds", int(outside.sum()), len(Xnew))
    pred = predict(fit, Xnew)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        pred.to_csv(args.out)
    else:
        pred.to_csv(sys.stdout)
    return EXIT_OK


def load_scenario(ref) -> Scenario:
    p = Path(ref)
    if p.suffix == ".json" or p.exists():
        if not p.is_file():
            raise FileNotFoundError(f"scenario file not found: {ref}")
        try:
            return Scenario.load(p)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{ref}: invalid JSON: {exc}") from None
        except TypeError as exc:
            raise ConfigError(f"{ref}: {exc}") from None
    return bundled_scenario(ref)


def cmd_study(args) -> int:
    sc = load_scenario(args.scenario)
    ests = [e.strip() for e in args.estimators.split(",")] if args.estimators else None
    levels = [int(a) for a in args.replicates.split(",")] if args.replicates else None

    def progress(i, n):
        if args.verbose:
            sys.stderr.write(f"\r{i}/{n} replications")

    res = run_study(sc, ests, args.reps, levels, workers=args.workers, progress=progress)
    out = Path(args.out or f"study-{sc.name}")
    paths = emit_tables(res, out, tuple(args.formats.split(",")))
    checks = study_checks(res)
    report = "\n".join(c.line() for c in checks) + "\n"
    (out / "acceptance.txt").write_text(report)
    failed = sum(1 for r in res.rows if r["failed"])
    sys.stdout.write(report)
    sys.stdout.write(f"{len(res.rows)} result rows, {failed} failed fits; wrote "
                     + ", ".join(str(p) for p in paths.values()) + "\n")
    return EXIT_OK


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    if args.replication < 0:
        raise ConfigError("--replication must be >= 0")
    D = generate_dataset(sc, args.replication, args.replicates)
    out = args.out or f"{sc.name}-{args.replication}.csv"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    write_design_csv(D, out)
    sys.stderr.write(f"wrote {D.N} rows at {D.n} locations to {out}\n")
    return EXIT_OK


def cmd_oracles(args) -> int:
    sc = load_scenario(args.scenario)
    o = scenario_oracles(sc)
    print(json.dumps({"scenario": sc.name, **o.to_dict()}, indent=1))
    return EXIT_OK


def _add_fit_args(p):
    p.add_argument("--config", help="JSON file with any of the options below; flags override it")
    p.add_argument("--data", help="CSV with a header row")
    p.add_argument("--x-cols", dest="x_cols", help="comma-separated input column names (default x1, x2, ...)")
    p.add_argument("--y-col", dest="y_col", help="response column name (default y)")
    p.add_argument("--model", help=f"built-in name ({', '.join(sorted(BUILTINS))}) or an expression "
                                   "in x1.., theta1..")
    p.add_argument("--q", type=int, help="number of calibration parameters (expression models)")
    p.add_argument("--theta-bounds", dest="theta_bounds", help="lo:hi per parameter, comma separated")
    p.add_argument("--bounds", help="input box lo:hi per dimension (default: data range)")
    p.add_argument("--estimator", help="homgp, homogp, hetgp or hetogp (default hetogp)")
    p.add_argument("--kernel", choices=("matern52", "gaussian"))
    p.add_argument("--kernel-g", dest="kernel_g", choices=("matern52", "gaussian"))
    p.add_argument("--mc-samples", dest="mc_samples", type=int)
    p.add_argument("--mc-seed", dest="mc_seed", type=int)
    p.add_argument("--starts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--maxiter", type=int)
    p.add_argument("--dense-check", dest="dense_check", action="store_true", help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hetcalib", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"hetcalib {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a calibration model; JSON result on stdout or --out")
    _add_fit_args(p)
    p.add_argument("--out", help="write the JSON result here")
    p.add_argument("--summary", help="also write the text summary here")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("het-test", help="fit a latent-noise model and test for heteroscedasticity")
    _add_fit_args(p)
    p.set_defaults(func=cmd_het_test)

    p = sub.add_parser("predict", help="predictive distribution from a saved fit")
    p.add_argument("--fit", required=True, help="JSON written by `hetcalib fit`")
    p.add_argument("--grid", help="lo:hi:count per dimension, comma separated")
    p.add_argument("--x-csv", dest="x_csv", help="CSV of new inputs (header row, d columns)")
    p.add_argument("--out", help="predictions CSV (default stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="write one seeded dataset from a scenario as CSV")
    p.add_argument("scenario", help="bundled name (tuo1d, plumlee3p) or a scenario JSON file")
    p.add_argument("--replication", type=int, default=0, help="replication index (selects the seed stream)")
    p.add_argument("--replicates", type=int, help="observations per location (default: first scenario level)")
    p.add_argument("--out", help="CSV path (default <name>-<replication>.csv)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("study", help="run a simulation study")
    p.add_argument("scenario", help="bundled name (tuo1d, plumlee3p) or a scenario JSON file")
    p.add_argument("--reps", type=int, help="replications (default: from the scenario)")
    p.add_argument("--estimators", help="comma-separated subset, e.g. wls,hetogp; WLS-r uses known r")
    p.add_argument("--replicates", help="comma-separated replicate counts (default: from the scenario)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--formats", default="csv,json,markdown")
    p.add_argument("--out", help="output directory (default study-<name>)")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("oracles", help="print theta* and theta' for a scenario")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_oracles)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="hetcalib: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, ScenarioError, ModelError, DesignError, ex.ExprSyntaxError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
