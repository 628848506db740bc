"""Command-line front end: ``delayed-binomial {price,verify,converge,smile}``.

Settings come from built-in defaults, then ``--config file.json``, then the
``--n/--strike/--h`` flags, later sources winning.  JSON goes to stdout (or
``--output``); CSV goes to ``--output`` or stdout.  Floats are written with
12 significant digits.

Exit codes: 0 success, 1 a check failed (or an arbitrage was found),
2 bad configuration, 3 parameters outside the validity window or a size cap.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import sys
from pathlib import Path
from typing import Optional

from . import asymptotics, oracle, smile
from .direct import direct_price
from .dp import NonConvexPayoff, backward_induct, hedge_plan
from .lattice import InvalidParameters, MarketParams, PayoffError, PayoffSpec, validate

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_CONFIG = 2
EXIT_INVALID_PARAMS = 3

GAP_TOL = 1e-8
DEFAULT_SEED = 20240101

DEFAULTS = {
    "price": {
        "market": {"s0": 4.0, "u": 2.0, "d": 0.5, "r": 0.0, "n_periods": 2, "delay": 1},
        "payoff": {"kind": "call", "strike": 4.0},
    },
    "verify": {
        "market": {"s0": 4.0, "u": 2.0, "d": 0.5, "r": 0.0, "n_periods": 2, "delay": 1},
        "payoff": {"kind": "call", "strike": 4.0},
        "lp": True,
    },
    "converge": {
        "scaling": {"mu": 0.0, "sigma": 0.1, "r_annual": 0.0, "h_periods": 1, "horizon": 1.0, "s0": 40.0},
        "n_grid": list(asymptotics.DEFAULT_N_GRID),
        "strike": None,
        "kind": "call",
        "mc_paths": 0,
    },
    "smile": {
        "scaling": {"s0": 40.0, "sigma": 0.1, "r_annual": 0.0, "horizon": 1.0, "h_periods": 1, "n": 100, "mu": 0.0},
        "strikes": None,
    },
}
COMMON_KEYS = {"command", "seed", "output"}


class ConfigError(ValueError):
    pass


def _round(value):
    """Recursively round floats to 12 significant digits for output."""
    if isinstance(value, float):
        if not math.isfinite(value):
            return None
        return float(f"{value:.12g}")
    if isinstance(value, dict):
        return {k: _round(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round(v) for v in value]
    return value


def dumps(report: dict) -> str:
    return json.dumps(_round(report), indent=2, ensure_ascii=False) + "\n"


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(command: str, path: Optional[str], args) -> dict:
    """Defaults <- file <- flags."""
    config = copy.deepcopy(DEFAULTS[command])
    config["seed"] = DEFAULT_SEED
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        if data.get("command", command) != command:
            raise ConfigError(f"config is for {data['command']!r}, not {command!r}")
        unknown = set(data) - set(DEFAULTS[command]) - COMMON_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "payoff" in data and isinstance(data["payoff"], dict):
            # a payoff given in the file replaces the default one wholesale
            config["payoff"] = data["payoff"]
            data = {k: v for k, v in data.items() if k != "payoff"}
        config = _merge(config, data)
    _apply_flags(command, config, args)
    if not isinstance(config.get("seed"), int):
        raise ConfigError("seed must be an integer")
    return config


def _apply_flags(command: str, config: dict, args) -> None:
    if command in ("price", "verify"):
        if args.n is not None:
            config["market"]["n_periods"] = args.n
        if args.h is not None:
            config["market"]["delay"] = args.h
        if args.strike is not None:
            if config["payoff"].get("kind") not in ("call", "put"):
                raise ConfigError("--strike needs a call or put payoff")
            config["payoff"]["strike"] = args.strike
    elif command == "converge":
        if args.n is not None:
            config["n_grid"] = [args.n]
        if args.h is not None:
            config["scaling"]["h_periods"] = args.h
        if args.strike is not None:
            config["strike"] = args.strike
    else:
        if args.n is not None:
            config["scaling"]["n"] = args.n
        if args.h is not None:
            config["scaling"]["h_periods"] = args.h
        if args.strike is not None:
            config["strikes"] = [args.strike]


def _market(config: dict) -> tuple:
    try:
        params = MarketParams.from_dict(config["market"])
        spec = PayoffSpec.from_dict(config["payoff"])
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    return params, spec


def _write(text: str, output: Optional[str]) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_price(config: dict) -> int:
    params, spec = _market(config)
    violations = validate(params)
    if violations:
        print("invalid parameters: " + "; ".join(violations), file=sys.stderr)
        return EXIT_INVALID_PARAMS
    try:
        surface = backward_induct(params, spec)
        price_direct = direct_price(params, spec)
    except (NonConvexPayoff, PayoffError) as exc:
        raise ConfigError(str(exc)) from exc
    root = surface.block(params.delay, 0)
    plan = hedge_plan(surface)
    gap = abs(surface.price - price_direct)
    report = {
        "price_dp": surface.price,
        "price_direct": price_direct,
        "max_abs_diff": gap,
        "hedge": {
            "x0_star": root.x0_star,
            "delta_star": root.delta_star,
            "value_up": root.value_up,
            "value_down": root.value_down,
            "blocks": len(plan),
        },
    }
    surface_path = config.get("output")
    if surface_path:
        Path(surface_path).write_text(surface.to_csv(), encoding="utf-8")
    sys.stdout.write(dumps(report))
    return EXIT_OK if gap <= GAP_TOL else EXIT_CHECK_FAILED


def cmd_verify(config: dict) -> int:
    params, spec = _market(config)
    use_lp = bool(config.get("lp", True))
    n = params.n_periods
    if n > oracle.MAX_ENUM_PERIODS or (use_lp and n > oracle.MAX_LP_PERIODS):
        cap = oracle.MAX_LP_PERIODS if use_lp else oracle.MAX_ENUM_PERIODS
        print(f"N={n} exceeds the cap N<={cap} for this check", file=sys.stderr)
        return EXIT_INVALID_PARAMS
    try:
        oracle._check_shape(params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report = {
        "feasible": None,
        "worst_slack": None,
        "initial_worst": None,
        "price_lp": None,
        "price_dp": None,
        "price_direct": None,
        "max_abs_diff": None,
        "arbitrage_found": None,
    }
    checks = {}
    violations = validate(params)
    if violations:
        report["parameter_violations"] = violations
    else:
        try:
            base = oracle.verification_report(params, spec, with_lp=use_lp)
        except (NonConvexPayoff, PayoffError) as exc:
            raise ConfigError(str(exc)) from exc
        report.update(base)
        checks["feasible"] = base["feasible"]
        checks["dp_matches_direct"] = abs(base["price_dp"] - base["price_direct"]) <= GAP_TOL
        if base["price_lp"] is not None:
            checks["lp_not_above_dp"] = base["price_lp"] <= base["price_dp"] + GAP_TOL
    if n <= oracle.MAX_LP_PERIODS:
        arb = oracle.arbitrage_search(params)
        report["arbitrage_found"] = arb["arbitrage_found"]
        checks["no_arbitrage"] = not arb["arbitrage_found"]
    report["checks"] = checks
    report["all_passed"] = bool(checks) and all(checks.values()) and not violations
    sys.stdout.write(dumps(report))
    return EXIT_OK if report["all_passed"] else EXIT_CHECK_FAILED


def _scaling_inputs(config: dict, keys: tuple) -> dict:
    scaling = config["scaling"]
    unknown = set(scaling) - set(keys)
    if unknown:
        raise ConfigError(f"unknown scaling keys: {sorted(unknown)}")
    return scaling


def cmd_converge(config: dict, plot: bool = False) -> int:
    sc = _scaling_inputs(config, ("mu", "sigma", "r_annual", "h_periods", "horizon", "s0"))
    grid = config["n_grid"]
    if not isinstance(grid, list) or not grid or not all(isinstance(v, int) and v > 0 for v in grid):
        raise ConfigError("n_grid must be a non-empty list of positive integers")
    kind = config.get("kind", "call")
    if kind not in ("call", "put"):
        raise ConfigError("kind must be call or put")
    try:
        rows = asymptotics.convergence_sweep(
            grid,
            sc["mu"],
            sc["sigma"],
            sc["r_annual"],
            sc["h_periods"],
            sc["horizon"],
            sc["s0"],
            strike=config.get("strike"),
            kind=kind,
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad scaling inputs: {exc}") from exc
    except asymptotics.ScalingError as exc:
        raise ConfigError(str(exc)) from exc
    for row in rows:
        if not row.valid:
            print(f"n={row.n}: outside the validity window, row left as NaN", file=sys.stderr)
    output = config.get("output")
    _write(asymptotics.convergence_csv(rows), output)
    paths = int(config.get("mc_paths") or 0)
    if paths > 0:
        summary = []
        for row in rows:
            if not row.valid:
                continue
            seq = asymptotics.build_scaling(row.n, sc["mu"], sc["sigma"], sc["r_annual"], sc["h_periods"], sc["horizon"])
            samples = asymptotics.simulate_chain(seq, paths, config["seed"])
            summary.append(
                {"n": row.n, "var_mc": float(samples.var(ddof=1)), "var_exact": asymptotics.chain_log_variance(seq)}
            )
        sys.stderr.write(dumps({"seed": config["seed"], "paths": paths, "variance": summary}))
    if plot:
        _require_output(output)
        from .plotting import plot_convergence

        plot_convergence(rows, Path(output).with_suffix(".png"))
    return EXIT_OK


def cmd_smile(config: dict, plot: bool = False) -> int:
    sc = _scaling_inputs(config, tuple(smile.SmileBase.__dataclass_fields__))
    try:
        base = smile.SmileBase.from_dict(sc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    strikes = config.get("strikes")
    if strikes is not None and (not isinstance(strikes, list) or not strikes):
        raise ConfigError("strikes must be a non-empty list")
    try:
        points = smile.smile_curve(base, strikes)
    except asymptotics.ScalingError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID_PARAMS
    output = config.get("output")
    _write(smile.smile_csv(points), output)
    if plot:
        _require_output(output)
        from .plotting import plot_smile

        plot_smile(points, Path(output).with_suffix(".png"), title=f"n={base.n}, H={base.h_periods}")
    return EXIT_OK


def _require_output(output: Optional[str]) -> None:
    if not output:
        raise ConfigError("--plot needs --output so the figure has a place to go")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delayed-binomial",
        description="Super-replication under delayed information in the binomial model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "price": "price a claim by backward induction and by the direct formula",
        "verify": "cross-check against path enumeration and exact LPs",
        "converge": "small-step convergence table (CSV)",
        "smile": "implied-volatility smile table (CSV)",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--n", type=int, help="number of periods (smile/converge: steps)")
        p.add_argument("--strike", type=float, help="strike override")
        p.add_argument("--h", type=int, help="delay in periods")
        p.add_argument(
            "--output",
            help="output file (price: value-surface CSV; converge/smile: the CSV table)",
        )
        if name in ("converge", "smile"):
            p.add_argument("--plot", action="store_true", help="also render a PNG next to --output")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.command, args.config, args)
        if args.output is not None:
            config["output"] = args.output
        if args.command == "price":
            return cmd_price(config)
        if args.command == "verify":
            return cmd_verify(config)
        if args.command == "converge":
            return cmd_converge(config, plot=args.plot)
        return cmd_smile(config, plot=args.plot)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except InvalidParameters as exc:
        print(f"invalid parameters: {exc}", file=sys.stderr)
        return EXIT_INVALID_PARAMS
    except oracle.TooLarge as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID_PARAMS


if __name__ == "__main__":
    sys.exit(main())
