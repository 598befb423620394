"""Command-line front end: reproducible simulate / estimate / spectrum / check runs.

One JSON config drives everything; command-line flags override it. Outputs
always embed the fully resolved config and the seeds actually used, so a run
directory is a self-contained audit trail.

Commands
--------
simulate   write one observation CSV per replicate plus ``manifest.json``
estimate   fit every input CSV, write one result JSON per replicate plus an
           aggregate ``summary.json`` with the sample mean / bias / sample
           std. dev. / mean estimated std. dev. per parameter
spectrum   tabulate the continuous and sampled spectral densities on a grid
check      print the identifiability precheck report as JSON

Exit codes: 0 success, 1 config problem, 2 data ingestion problem,
3 estimation failure. Failures emit a machine-readable JSON line on stderr.

Data files are CSV with header ``t,y1,...,yd``; observation times must be
equidistant within 1e-9 relative tolerance and define the sampling spacing h
unless the config provides one. Replicate i of a simulate run uses seed
``base_seed + i``; estimation uses ``estimation.seed + i`` for its optimizer.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import CarmaError, DataError
from .estimate import FitOptions, fit_qml, precheck_identifiability
from .levy import BrownianParams, NigParams, euler_simulate, sample_path
from .mcarma import echelon_family, theta_to_model
from .statespace import sample_ct_model, spectral_density_ct, spectral_density_dt

__all__ = ["main", "run_cli"]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_ESTIMATION = 3

#: paper-experiment defaults used when the config omits the field
DEFAULT_H = 1.0
DEFAULT_T = 2000.0
DEFAULT_DT = 0.01
DEFAULT_NIG = {
    "kind": "nig",
    "delta": 1.0,
    "alpha": 3.0,
    "beta": [1.0, 1.0],
    "mu": [-1.5 / np.sqrt(31.0), -1.0 / np.sqrt(31.0)],
    "Delta": [[1.25, -0.5], [-0.5, 1.0]],
}


class _CliFailure(Exception):
    """Internal: carries the exit code and the underlying error."""

    def __init__(self, code: int, error: BaseException | str):
        self.code = code
        if isinstance(error, BaseException):
            self.kind = type(error).__name__
            self.message = str(error)
        else:
            self.kind = "ConfigError"
            self.message = str(error)
        super().__init__(self.message)


def _config_error(msg: str) -> _CliFailure:
    return _CliFailure(EXIT_CONFIG, msg)


def _jsonify(obj):
    """Recursively convert dataclasses / numpy / complex into JSON-able data."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {
            f.name: _jsonify(getattr(obj, f.name))
            for f in dataclasses.fields(obj)
        }
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# config resolution


def _resolve_family(block):
    if not isinstance(block, dict):
        raise _config_error("config needs a 'family' object")
    try:
        nu = block["nu"]
        lower = block["theta_lower"]
        upper = block["theta_upper"]
    except KeyError as exc:
        raise _config_error(f"family block misses required key {exc}") from exc
    normalize = bool(block.get("normalize", True))
    sigma_fixed = block.get("sigma_fixed")
    try:
        family = echelon_family(
            nu,
            lower,
            upper,
            normalize=normalize,
            sigma_fixed=None if sigma_fixed is None else np.asarray(sigma_fixed),
        )
    except CarmaError as exc:
        raise _CliFailure(EXIT_CONFIG, exc) from exc
    resolved = {
        "nu": list(nu),
        "theta_lower": list(map(float, lower)),
        "theta_upper": list(map(float, upper)),
        "normalize": normalize,
        "sigma_fixed": sigma_fixed,
    }
    return family, resolved


def _resolve_driver(block):
    block = dict(DEFAULT_NIG if block is None else block)
    kind = str(block.get("kind", "")).lower()
    try:
        if kind == "brownian":
            driver = BrownianParams(sigma=np.asarray(block["sigma"], dtype=float))
            resolved = {"kind": "brownian", "sigma": _jsonify(driver.sigma)}
        elif kind == "nig":
            filled = {**DEFAULT_NIG, **block}
            driver = NigParams(
                mu=np.asarray(filled["mu"], dtype=float),
                alpha=float(filled["alpha"]),
                beta=np.asarray(filled["beta"], dtype=float),
                delta=float(filled["delta"]),
                Delta=np.asarray(filled["Delta"], dtype=float),
            )
            resolved = {
                "kind": "nig",
                "mu": _jsonify(driver.mu),
                "alpha": driver.alpha,
                "beta": _jsonify(driver.beta),
                "delta": driver.delta,
                "Delta": _jsonify(driver.Delta),
            }
        else:
            raise _config_error(
                f"driver kind must be 'brownian' or 'nig', got {block.get('kind')!r}"
            )
    except (KeyError, TypeError, ValueError, CarmaError) as exc:
        if isinstance(exc, _CliFailure):
            raise
        raise _CliFailure(EXIT_CONFIG, exc) from exc
    return driver, resolved


def _resolve_fit_options(block, seed_override=None, replicate=0):
    block = block or {}
    base_seed = block.get("seed", 0) if seed_override is None else seed_override
    try:
        return FitOptions(
            seed=None if base_seed is None else int(base_seed) + replicate,
            de_population=int(block.get("de_population", 15)),
            de_generations=int(block.get("de_generations", 200)),
            de_restarts=int(block.get("de_restarts", 1)),
            de_tol=float(block.get("de_tol", 0.01)),
            local_tol=float(block.get("local_tol", 1e-8)),
            s_override=(
                None if block.get("s_override") is None else int(block["s_override"])
            ),
        )
    except (TypeError, ValueError) as exc:
        raise _CliFailure(EXIT_CONFIG, exc) from exc


def _load_config(path):
    if path is None:
        raise _config_error("--config is required")
    p = Path(path)
    if not p.is_file():
        raise _config_error(f"config file not found: {p}")
    try:
        with open(p, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise _CliFailure(EXIT_CONFIG, exc) from exc
    if not isinstance(raw, dict):
        raise _config_error("config root must be a JSON object")
    return raw


def _out_dir(args, raw) -> Path:
    out = args.out or (raw.get("io") or {}).get("out_dir")
    if out is None:
        raise _config_error("no output directory: pass --out or set io.out_dir")
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# data ingestion


def _read_csv(path) -> tuple:
    """Read one observation file; returns (data L x d, h_from_times)."""
    p = Path(path)
    if not p.is_file():
        raise _CliFailure(EXIT_DATA, FileNotFoundError(f"data file not found: {p}"))
    try:
        with open(p, encoding="utf-8") as fh:
            header = fh.readline().strip()
            body = np.loadtxt(fh, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise _CliFailure(EXIT_DATA, DataError(f"cannot parse {p}: {exc}")) from exc
    cols = [c.strip() for c in header.split(",")]
    if len(cols) < 2 or cols[0].lower() != "t":
        raise _CliFailure(
            EXIT_DATA, DataError(f"{p}: header must be 't,y1,...,yd', got {header!r}")
        )
    if body.shape[0] < 2:
        raise _CliFailure(EXIT_DATA, DataError(f"{p}: need at least 2 rows"))
    if body.shape[1] != len(cols):
        raise _CliFailure(
            EXIT_DATA,
            DataError(f"{p}: header names {len(cols)} columns, rows have {body.shape[1]}"),
        )
    t = body[:, 0]
    diffs = np.diff(t)
    step = float(np.mean(diffs))
    if step <= 0 or np.max(np.abs(diffs - step)) > 1e-9 * abs(step):
        raise _CliFailure(
            EXIT_DATA,
            DataError(f"{p}: observation times are not equidistant (tol 1e-9 rel.)"),
        )
    return body[:, 1:], step


def _collect_data_files(args, raw) -> list:
    source = args.data or (raw.get("io") or {}).get("data_path")
    if source is None:
        raise _CliFailure(EXIT_DATA, DataError("no data: pass --data or set io.data_path"))
    p = Path(source)
    if p.is_dir():
        files = sorted(p.glob("*.csv"))
        if not files:
            raise _CliFailure(EXIT_DATA, DataError(f"no .csv files in directory {p}"))
        return files
    if p.suffix == ".json":
        if not p.is_file():
            raise _CliFailure(EXIT_DATA, FileNotFoundError(f"manifest not found: {p}"))
        with open(p, encoding="utf-8") as fh:
            manifest = json.load(fh)
        files = [Path(p.parent, f) for f in manifest.get("files", [])]
        if not files:
            raise _CliFailure(EXIT_DATA, DataError(f"manifest {p} lists no files"))
        return files
    if not p.is_file():
        raise _CliFailure(EXIT_DATA, FileNotFoundError(f"data file not found: {p}"))
    return [p]


# ---------------------------------------------------------------------------
# commands


def _cmd_simulate(args, raw) -> int:
    family, family_resolved = _resolve_family(raw.get("family"))
    sim = raw.get("simulation") or {}
    h = float(raw.get("h", DEFAULT_H))
    horizon = float(sim.get("T", DEFAULT_T))
    dt = float(sim.get("dt", DEFAULT_DT))
    replicates = int(sim.get("replicates", 1))
    if replicates < 1:
        raise _config_error(f"replicates must be >= 1, got {replicates}")
    stride = round(h / dt)
    if stride < 1 or abs(h - stride * dt) > 1e-9 * h:
        raise _config_error(f"h = {h} must be an integer multiple of dt = {dt}")
    theta_true = sim.get("theta_true")
    if theta_true is None:
        raise _config_error("simulation.theta_true is required for simulate")
    driver, driver_resolved = _resolve_driver(sim.get("driver"))
    x0 = sim.get("x0")
    base_seed = args.seed if args.seed is not None else sim.get("seed")
    if base_seed is None:
        base_seed = int(np.random.SeedSequence().entropy % (2**63))
    base_seed = int(base_seed)

    try:
        model = theta_to_model(family, np.asarray(theta_true, dtype=float))
    except CarmaError as exc:
        raise _CliFailure(EXIT_CONFIG, exc) from exc

    out = _out_dir(args, raw)
    d = family.d
    names = ",".join(["t"] + [f"y{i + 1}" for i in range(d)])
    files = []
    seeds = []
    for i in range(replicates):
        seed_i = base_seed + i
        path = euler_simulate(model, driver, horizon, dt, x0=x0, seed=seed_i)
        obs = sample_path(path, h)
        times = h * np.arange(1, obs.shape[0] + 1)
        fname = f"replicate_{i:03d}.csv"
        np.savetxt(
            out / fname,
            np.column_stack([times, obs]),
            delimiter=",",
            header=names,
            comments="",
            fmt="%.17g",
        )
        files.append(fname)
        seeds.append(seed_i)

    resolved = {
        "command": "simulate",
        "family": family_resolved,
        "h": h,
        "simulation": {
            "T": horizon,
            "dt": dt,
            "replicates": replicates,
            "theta_true": list(map(float, theta_true)),
            "driver": driver_resolved,
            "x0": x0,
            "seed": base_seed,
        },
    }
    manifest = {
        "config": resolved,
        "seeds": seeds,
        "files": files,
        "observations_per_replicate": int(obs.shape[0]),
        "fine_rows_per_replicate": path.states.shape[0],
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"wrote {replicates} replicate(s) and manifest.json to {out}")
    return EXIT_OK


def _fit_worker(packed):
    """Top-level worker so replicate fits can run in separate processes."""
    family_block, est_block, h_cfg, seed_override, index, csv_path = packed
    family, _ = _resolve_family(family_block)
    data, h_data = _read_csv(csv_path)
    h = float(h_cfg) if h_cfg is not None else h_data
    options = _resolve_fit_options(est_block, seed_override, replicate=index)
    try:
        result = fit_qml(family, data, h, options)
    except CarmaError as exc:
        raise _CliFailure(EXIT_ESTIMATION, exc) from exc
    cov = result.covariance
    return {
        "replicate": index,
        "file": str(csv_path),
        "h": h,
        "seed": options.seed,
        "theta_hat": _jsonify(result.theta_hat),
        "stderr": None if cov is None else _jsonify(cov.stderr),
        "ar_order": None if cov is None else cov.ar_order,
        "minus2_loglik": result.minus2_loglik,
        "converged": result.converged,
        "at_boundary": result.diagnostics.get("at_boundary"),
        "whiteness_fraction": result.diagnostics.get("whiteness_fraction"),
        "iterations": result.iterations,
        "messages": result.diagnostics.get("messages", []),
    }


def _cmd_estimate(args, raw) -> int:
    family, family_resolved = _resolve_family(raw.get("family"))
    est_block = raw.get("estimation") or {}
    files = _collect_data_files(args, raw)
    h_cfg = raw.get("h")
    out = _out_dir(args, raw)
    seed_override = args.seed

    jobs = []
    for i, f in enumerate(files):
        jobs.append((raw.get("family"), est_block, h_cfg, seed_override, i, str(f)))

    n_jobs = max(1, int(args.jobs or 1))
    if n_jobs == 1 or len(jobs) == 1:
        per_replicate = [_fit_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            per_replicate = list(pool.map(_fit_worker, jobs))

    resolved = {
        "command": "estimate",
        "family": family_resolved,
        "h": h_cfg,
        "estimation": {
            "seed": est_block.get("seed", 0) if seed_override is None else seed_override,
            "de_population": est_block.get("de_population", 15),
            "de_generations": est_block.get("de_generations", 200),
            "de_restarts": est_block.get("de_restarts", 1),
            "de_tol": est_block.get("de_tol", 0.01),
            "local_tol": est_block.get("local_tol", 1e-8),
            "s_override": est_block.get("s_override"),
            "confidence_level": est_block.get("confidence_level", 0.95),
        },
    }
    for rep in per_replicate:
        rep["config"] = resolved
        with open(out / f"estimate_{rep['replicate']:03d}.json", "w", encoding="utf-8") as fh:
            json.dump(rep, fh, indent=2)

    thetas = np.array([rep["theta_hat"] for rep in per_replicate])
    stderrs = [rep["stderr"] for rep in per_replicate if rep["stderr"] is not None]
    theta_true = (raw.get("simulation") or {}).get("theta_true")
    sample_mean = thetas.mean(axis=0)
    sample_std = (
        thetas.std(axis=0, ddof=1) if thetas.shape[0] > 1 else np.zeros(thetas.shape[1])
    )
    summary = {
        "config": resolved,
        "files": [str(f) for f in files],
        "n_replicates": len(per_replicate),
        "n_converged": int(sum(bool(r["converged"]) for r in per_replicate)),
        "theta_true": theta_true,
        "sample_mean": _jsonify(sample_mean),
        "bias": (
            None
            if theta_true is None
            else _jsonify(sample_mean - np.asarray(theta_true, dtype=float))
        ),
        "sample_std_dev": _jsonify(sample_std),
        "mean_est_std_dev": (
            _jsonify(np.mean(np.asarray(stderrs), axis=0)) if stderrs else None
        ),
        "n_with_stderr": len(stderrs),
    }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    print(f"wrote {len(per_replicate)} estimate file(s) and summary.json to {out}")
    return EXIT_OK


def _cmd_spectrum(args, raw) -> int:
    family, family_resolved = _resolve_family(raw.get("family"))
    spec_block = raw.get("spectrum") or {}
    h = float(raw.get("h", DEFAULT_H))
    theta = spec_block.get("theta", (raw.get("simulation") or {}).get("theta_true"))
    if theta is None:
        raise _config_error("spectrum.theta (or simulation.theta_true) is required")
    omega_min = float(spec_block.get("omega_min", 0.0))
    omega_max = float(spec_block.get("omega_max", np.pi / h))
    n_points = int(spec_block.get("n_points", 201))
    if n_points < 2 or omega_max <= omega_min:
        raise _config_error("spectrum grid needs omega_max > omega_min and n_points >= 2")
    try:
        model = theta_to_model(family, np.asarray(theta, dtype=float))
        dssm = sample_ct_model(model, h)
    except CarmaError as exc:
        raise _CliFailure(EXIT_CONFIG, exc) from exc

    d = family.d
    grid = np.linspace(omega_min, omega_max, n_points)
    names = ["omega"]
    for tag in ("fct", "fdt"):
        for i in range(d):
            for j in range(d):
                names += [f"{tag}_{i + 1}{j + 1}_re", f"{tag}_{i + 1}{j + 1}_im"]
    rows = np.empty((n_points, len(names)))
    for k, w in enumerate(grid):
        fct = spectral_density_ct(model, w)
        fdt = spectral_density_dt(dssm, w * h)
        row = [w]
        for mat in (fct, fdt):
            for i in range(d):
                for j in range(d):
                    row += [mat[i, j].real, mat[i, j].imag]
        rows[k] = row

    out = _out_dir(args, raw)
    np.savetxt(
        out / "spectrum.csv",
        rows,
        delimiter=",",
        header=",".join(names),
        comments="",
        fmt="%.17g",
    )
    resolved = {
        "command": "spectrum",
        "family": family_resolved,
        "h": h,
        "spectrum": {
            "theta": list(map(float, theta)),
            "omega_min": omega_min,
            "omega_max": omega_max,
            "n_points": n_points,
        },
    }
    with open(out / "spectrum_manifest.json", "w", encoding="utf-8") as fh:
        json.dump({"config": resolved, "files": ["spectrum.csv"]}, fh, indent=2)
    print(f"wrote spectrum.csv ({n_points} frequencies) to {out}")
    return EXIT_OK


def _cmd_check(args, raw) -> int:
    family, family_resolved = _resolve_family(raw.get("family"))
    check_block = raw.get("check") or {}
    h = float(raw.get("h", DEFAULT_H))
    theta_probe = check_block.get(
        "theta_probe", (raw.get("simulation") or {}).get("theta_true")
    )
    if theta_probe is None:
        raise _config_error("check.theta_probe (or simulation.theta_true) is required")
    j0 = int(check_block.get("j0", 2))
    report = precheck_identifiability(family, np.asarray(theta_probe, dtype=float), h, j0)
    payload = _jsonify(report)
    payload["config"] = {
        "command": "check",
        "family": family_resolved,
        "h": h,
        "check": {"theta_probe": list(map(float, theta_probe)), "j0": j0},
    }
    print(json.dumps(payload, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carma-qml",
        description="Simulate and QML-estimate Levy-driven multivariate CARMA models.",
    )
    parser.add_argument(
        "command", choices=["simulate", "estimate", "spectrum", "check"]
    )
    parser.add_argument("--config", required=False, help="JSON config file")
    parser.add_argument("--data", help="CSV file, directory of CSVs, or manifest.json")
    parser.add_argument("--out", help="output directory (overrides io.out_dir)")
    parser.add_argument("--jobs", type=int, default=1, help="parallel replicate fits")
    parser.add_argument("--seed", type=int, help="seed override (overrides config)")
    return parser


_COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "spectrum": _cmd_spectrum,
    "check": _cmd_check,
}


def run_cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage errors; remap the latter
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        raw = _load_config(args.config)
        return _COMMANDS[args.command](args, raw)
    except _CliFailure as exc:
        print(
            json.dumps(
                {"error": exc.kind, "message": exc.message, "exit_code": exc.code}
            ),
            file=sys.stderr,
        )
        return exc.code
    except CarmaError as exc:
        # anything not classified above counts as an estimation-stage failure
        print(
            json.dumps(
                {
                    "error": type(exc).__name__,
                    "message": str(exc),
                    "exit_code": EXIT_ESTIMATION,
                }
            ),
            file=sys.stderr,
        )
        return EXIT_ESTIMATION


def main(argv=None) -> int:
    return run_cli(argv)


if __name__ == "__main__":
    sys.exit(main())
