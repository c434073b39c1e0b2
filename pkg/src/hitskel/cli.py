"""Batch front door: subcommands, INI configs, seeds, CSV/JSON artifacts.

Every run writes a ``manifest.json`` (config echo + seed + version) into the
output directory as soon as the effective configuration is known -- also on
failure paths after that point.  Exit status: 0 on success, 2 for
configuration problems (unparseable file, unknown key, bad value), 3 when a
configured oracle threshold is violated, 1 for anything else.  Wall-clock
numbers go to a ``timing.json`` sidecar so the primary artifacts stay
byte-identical for a fixed config and seed, whatever the worker count.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
import time
import traceback

import numpy as np

from .bsde import energy_check, make_driver, solve_bsde
from .errors import ConfigError, HitskelError, OracleGapError
from .exit_law import ExitLaw
from .limits import derivative_error, get_derivative_reference
from .operators import derivative_at_events, generator_field
from .reporting import write_json, write_manifest, write_rows_csv, write_timing
from .skeleton import SkeletonConfig, generate_intrinsic
from .stopping import lattice_reference, solve_optimal_stopping
from .streams import resolve_workers, substream
from .structures import build_functional_structure, get_functional

# Schema defaults double as type declarations: the INI/--set value for a key
# is coerced to the type of its default.  Empty-string defaults mark optional
# knobs that stay off until set.
_SCHEMAS = {
    "exit-law": {
        "seed": 0,
        "n": 100000,
        "cdf_tolerance": 1e-12,
        "oracle_mean": "",
        "oracle_second_moment": "",
        "oracle_tol": "",
    },
    "sample-skeleton": {
        "seed": 0,
        "dimension": 1,
        "mesh": 0.1,
        "horizon": 1.0,
    },
    "estimate-derivative": {
        "seed": 0,
        "functional": "square_minus_time",
        "functional_args": "",
        "dimension": 1,
        "mesh": 0.1,
        "horizon": 1.0,
    },
    "estimate-generator": {
        "seed": 0,
        "functional": "square_minus_time",
        "functional_args": "",
        "dimension": 1,
        "mesh": 0.1,
        "horizon": 1.0,
        "method": "exact",
        "mc_budget": 2000,
    },
    "convergence-report": {
        "seed": 0,
        "functional": "square_minus_time",
        "functional_args": "",
        "levels": "2,3,4",
        "horizon": 1.0,
        "replications": 100,
        "coordinate": 0,
        "grid_factor": 100.0,
        "require_monotone": False,
        "final_ratio_max": "",
    },
    "solve-stopping": {
        "seed": 0,
        "reward": "put",
        "reward_args": "strike=1.0",
        "mesh": 0.1,
        "horizon": 1.0,
        "method": "tree_1d",
        "budget": 20000,
        "time_grid_size": 192,
        "basis_degree": 3,
        "lattice_check": False,
        "lattice_step": 1e-4,
        "lattice_rel_tol": 0.02,
    },
    "solve-bsde": {
        "seed": 0,
        "driver": "linear_y",
        "driver_args": "alpha=0.5",
        "terminal": "square",
        "terminal_args": "",
        "mesh": 0.05,
        "horizon": 1.0,
        "budget": 20000,
        "test_budget": 4000,
        "degree": 3,
        "oracle_y0": "",
        "oracle_tol": "",
    },
    "energy-check": {
        "seed": 0,
        "driver": "linear_y",
        "driver_args": "alpha=0.5",
        "terminal": "square",
        "terminal_args": "",
        "mesh": 0.1,
        "horizon": 1.0,
        "budget": 8000,
        "test_budget": 1000,
        "degree": 3,
        "n_paths": 2000,
        "grid_size": 256,
        "sigmas": 3.0,
        "require_positive": True,
    },
}


def _coerce(key, raw, default):
    if isinstance(default, bool):
        text = str(raw).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"key {key!r}: expected boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(str(raw).strip())
        if isinstance(default, float):
            return float(str(raw).strip())
    except ValueError:
        raise ConfigError(
            f"key {key!r}: expected {type(default).__name__}, got {raw!r}"
        ) from None
    return str(raw)


def parse_kwargs(text):
    """'strike=1.0,j=0' -> {'strike': 1.0, 'j': 0} (int, then float, else str)."""
    out = {}
    for chunk in str(text).split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "=" not in chunk:
            raise ConfigError(f"malformed argument {chunk!r} (expected key=value)")
        key, value = chunk.split("=", 1)
        key, value = key.strip(), value.strip()
        try:
            out[key] = int(value)
        except ValueError:
            try:
                out[key] = float(value)
            except ValueError:
                out[key] = value
    return out


def effective_config(subcommand, config_path=None, overrides=(), seed_flag=None):
    """Defaults <- INI [subcommand] section <- --set pairs; returns (params, seed)."""
    try:
        schema = _SCHEMAS[subcommand]
    except KeyError:
        raise ConfigError(f"unknown subcommand {subcommand!r}") from None
    params = dict(schema)
    if config_path is not None:
        cp = configparser.ConfigParser()
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"config parse failure: {exc}") from exc
        if cp.has_section(subcommand):
            for key, raw in cp.items(subcommand):
                if key not in schema:
                    raise ConfigError(
                        f"unknown key {key!r} in section [{subcommand}] "
                        f"of {config_path}"
                    )
                params[key] = _coerce(key, raw, schema[key])
    for pair in overrides:
        if "=" not in pair:
            raise ConfigError(f"malformed --set {pair!r} (expected key=value)")
        key, raw = pair.split("=", 1)
        key = key.strip()
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} for subcommand {subcommand}")
        params[key] = _coerce(key, raw, schema[key])
    if seed_flag is not None:
        params["seed"] = int(seed_flag)
    seed = int(params["seed"])
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must fit in 64 bits, got {seed}")
    return params, seed


def _optional_float(params, key):
    raw = str(params.get(key, "")).strip()
    return float(raw) if raw else None


def _oracle_gap(summary, name, value, target, tol):
    gap = abs(value - target)
    summary[f"{name}_oracle_gap"] = gap
    if tol is not None and gap > tol:
        raise OracleGapError(
            f"{name} = {value!r} misses oracle {target!r} by {gap:.3e} > {tol!r}"
        )


# -- subcommand runners ------------------------------------------------------


def _run_exit_law(params, seed, workers, outdir):
    law = ExitLaw(cdf_tolerance=float(params["cdf_tolerance"]))
    rng = substream(seed, 0)
    draws = law.sample(int(params["n"]), rng)
    mean = float(draws.mean())
    second = float(np.mean(draws**2))
    n = draws.size
    summary = {
        "n": n,
        "mean": mean,
        "stderr_mean": float(draws.std(ddof=1) / np.sqrt(n)),
        "second_moment": second,
        "stderr_second_moment": float(np.std(draws**2, ddof=1) / np.sqrt(n)),
    }
    tol = _optional_float(params, "oracle_tol")
    try:
        target = _optional_float(params, "oracle_mean")
        if target is not None:
            _oracle_gap(summary, "mean", mean, target, tol)
        target = _optional_float(params, "oracle_second_moment")
        if target is not None:
            _oracle_gap(summary, "second_moment", second, target, tol)
    finally:
        write_json(os.path.join(outdir, "summary.json"), summary)


def _run_sample_skeleton(params, seed, workers, outdir):
    cfg = SkeletonConfig(
        mesh=float(params["mesh"]),
        horizon=float(params["horizon"]),
        dimension=int(params["dimension"]),
    )
    s = generate_intrinsic(cfg, substream(seed, 0))
    s.save_csv(os.path.join(outdir, "skeleton.csv"))
    write_json(
        os.path.join(outdir, "summary.json"),
        {
            "n_events": s.n_events,
            "quadratic_variation": [
                float(s.quadratic_variation(j, s.horizon))
                for j in range(s.dimension)
            ],
            "max_increment": float(s.max_increment()),
        },
    )


def _make_functional(params, key="functional", args_key=None):
    args_key = args_key or f"{key}_args"
    return get_functional(str(params[key]), **parse_kwargs(params.get(args_key, "")))


def _run_estimate_derivative(params, seed, workers, outdir):
    cfg = SkeletonConfig(
        mesh=float(params["mesh"]),
        horizon=float(params["horizon"]),
        dimension=int(params["dimension"]),
    )
    s = generate_intrinsic(cfg, substream(seed, 0))
    x = build_functional_structure(_make_functional(params), s)
    fld = derivative_at_events(x)
    fld.to_csv(os.path.join(outdir, "derivative.csv"))
    d = fld.derivative
    write_json(
        os.path.join(outdir, "summary.json"),
        {
            "n_events": s.n_events,
            "mean_derivative": float(d.mean()) if d.size else 0.0,
            "mean_abs_derivative": float(np.abs(d).mean()) if d.size else 0.0,
        },
    )


def _run_estimate_generator(params, seed, workers, outdir):
    cfg = SkeletonConfig(
        mesh=float(params["mesh"]),
        horizon=float(params["horizon"]),
        dimension=int(params["dimension"]),
    )
    rng = substream(seed, 0)
    s = generate_intrinsic(cfg, rng)
    fld = generator_field(
        _make_functional(params),
        s,
        method=str(params["method"]),
        mc_budget=int(params["mc_budget"]),
        rng=rng,
    )
    fld.to_csv(os.path.join(outdir, "generator.csv"))
    u = fld.generator
    write_json(
        os.path.join(outdir, "summary.json"),
        {
            "n_events": s.n_events,
            "method": str(params["method"]),
            "pooled_generator_mean": float(u.mean()) if u.size else 0.0,
            "pooled_generator_stderr": (
                float(u.std(ddof=1) / np.sqrt(u.size)) if u.size > 1 else 0.0
            ),
        },
    )


def _run_convergence_report(params, seed, workers, outdir):
    name = str(params["functional"])
    levels = [int(tok) for tok in str(params["levels"]).split(",") if tok.strip()]
    if not levels:
        raise ConfigError("levels must name at least one refinement level")
    report = derivative_error(
        name,
        get_derivative_reference(name),
        levels,
        horizon=float(params["horizon"]),
        replications=int(params["replications"]),
        master_seed=seed,
        coordinate=int(params["coordinate"]),
        grid_factor=float(params["grid_factor"]),
        workers=workers,
        functional_params=parse_kwargs(params.get("functional_args", "")),
    )
    report.to_json(os.path.join(outdir, "report.json"))
    report.to_csv(os.path.join(outdir, "report.csv"))
    write_timing(
        outdir,
        {f"level_{k}": rt for k, rt in zip(report.levels, report.runtimes)},
    )
    err = report.columns["derivative_error"]
    if bool(params["require_monotone"]) and not np.all(np.diff(err) < 0.0):
        raise OracleGapError(f"derivative_error column is not decreasing: {err}")
    ratio_max = _optional_float(params, "final_ratio_max")
    if ratio_max is not None and err[-1] > ratio_max * err[0]:
        raise OracleGapError(
            f"final error {err[-1]!r} exceeds {ratio_max} * initial {err[0]!r}"
        )


def _run_solve_stopping(params, seed, workers, outdir):
    reward = _make_functional(params, key="reward")
    sol = solve_optimal_stopping(
        reward,
        mesh=float(params["mesh"]),
        horizon=float(params["horizon"]),
        method=str(params["method"]),
        budget=int(params["budget"]),
        rng=substream(seed, 0),
        time_grid_size=int(params["time_grid_size"]),
        basis_degree=int(params["basis_degree"]),
    )
    sol.value_path.to_csv(os.path.join(outdir, "value_path.csv"))
    summary = sol.summary()
    try:
        if bool(params["lattice_check"]):
            ref = lattice_reference(
                reward, float(params["horizon"]), step=float(params["lattice_step"])
            )
            rel_gap = abs(sol.value_at_zero - ref) / max(abs(ref), 1e-12)
            summary["lattice_value"] = ref
            summary["lattice_rel_gap"] = rel_gap
            if rel_gap > float(params["lattice_rel_tol"]):
                raise OracleGapError(
                    f"stopping value {sol.value_at_zero!r} vs lattice {ref!r}: "
                    f"relative gap {rel_gap:.3e} > {params['lattice_rel_tol']!r}"
                )
    finally:
        write_json(os.path.join(outdir, "summary.json"), summary)


def _solve_bsde_from_params(params, seed):
    driver, lipschitz = make_driver(
        str(params["driver"]), **parse_kwargs(params.get("driver_args", ""))
    )
    terminal = _make_functional(params, key="terminal")
    sol = solve_bsde(
        driver,
        terminal,
        mesh=float(params["mesh"]),
        horizon=float(params["horizon"]),
        budget=int(params["budget"]),
        test_budget=int(params["test_budget"]),
        rng=substream(seed, 0),
        degree=int(params["degree"]),
        lipschitz=lipschitz,
    )
    return sol, driver, terminal


def _run_solve_bsde(params, seed, workers, outdir):
    sol, _, _ = _solve_bsde_from_params(params, seed)
    rows = [
        (n + 1, float(t), float(y), float(z), float(res))
        for n, (t, y, z, res) in enumerate(
            zip(sol.y_path.times, sol.y_path.values, sol.z_path, sol.residual_field)
        )
    ]
    write_rows_csv(
        os.path.join(outdir, "layers.csv"),
        ("n", "time", "y", "z", "residual"),
        rows,
        comment=f"hitskel-bsde mesh={sol.mesh!r} horizon={sol.horizon!r}",
    )
    summary = sol.summary()
    try:
        target = _optional_float(params, "oracle_y0")
        if target is not None:
            _oracle_gap(
                summary,
                "y_at_zero",
                sol.y_at_zero,
                target,
                _optional_float(params, "oracle_tol"),
            )
    finally:
        write_json(os.path.join(outdir, "summary.json"), summary)


def _run_energy_check(params, seed, workers, outdir):
    sol, driver, terminal = _solve_bsde_from_params(params, seed)
    report = energy_check(
        sol,
        driver,
        terminal,
        n_paths=int(params["n_paths"]),
        grid_size=int(params["grid_size"]),
        rng=substream(seed, 1),
    )
    sigmas = float(params["sigmas"])
    payload = report.summary()
    payload["margins_positive"] = report.all_positive(sigmas)
    payload["martingale_ok"] = report.martingale_ok()
    write_json(os.path.join(outdir, "energy.json"), payload)
    if bool(params["require_positive"]) and not (
        report.all_positive(sigmas) and report.martingale_ok()
    ):
        raise OracleGapError(
            "energy margins or martingale test failed: "
            f"margins={report.margins.tolist()} stderrs="
            f"{report.margin_stderrs.tolist()} tstat={report.lambda_tstat!r}"
        )


_RUNNERS = {
    "exit-law": _run_exit_law,
    "sample-skeleton": _run_sample_skeleton,
    "estimate-derivative": _run_estimate_derivative,
    "estimate-generator": _run_estimate_generator,
    "convergence-report": _run_convergence_report,
    "solve-stopping": _run_solve_stopping,
    "solve-bsde": _run_solve_bsde,
    "energy-check": _run_energy_check,
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="hitskel",
        description="hitting-time skeleton experiments: simulation, "
        "discrete calculus, backward solvers",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _SCHEMAS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", default=None, help="INI file with a [%s] section" % name)
        p.add_argument("--out", default="out", help="output directory (default: ./out)")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument(
            "--workers",
            default=None,
            help="process count (default: HITSKEL_WORKERS or 1)",
        )
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key (repeatable)",
        )
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        params, seed = effective_config(
            args.subcommand, args.config, args.overrides, args.seed
        )
        workers = resolve_workers(args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    os.makedirs(args.out, exist_ok=True)
    write_manifest(args.out, args.subcommand, params, seed)
    t0 = time.perf_counter()
    status = 0
    try:
        _RUNNERS[args.subcommand](params, seed, workers, args.out)
    except OracleGapError as exc:
        print(f"oracle gap: {exc}", file=sys.stderr)
        status = 3
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        status = 2
    except HitskelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = 1
    except Exception:
        traceback.print_exc()
        status = 1
    finally:
        sidecar = os.path.join(args.out, "timing.json")
        if not os.path.exists(sidecar):
            write_timing(args.out, {"total": time.perf_counter() - t0})
    print(f"{args.subcommand}: status {status}, artifacts in {args.out}")
    return status


if __name__ == "__main__":
    sys.exit(main())
