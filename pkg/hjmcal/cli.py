"""Command-line entry point: `hjmcal <subcommand>` or `python -m hjmcal`.

Exit codes: 0 success, 2 data error, 3 solver failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from . import dataio
from .config import Settings, load_settings
from .errors import HjmCalError
from .models import DeliveryWindow, ModelBundle
from .pipeline import CalibrationPipeline, run_pipeline
from .synthetic import SyntheticConfig, default_truth, generate_synthetic
from .engine import montecarlo, pricer
from .engine.fixtures import fixture_names, load_fixture

logger = logging.getLogger("hjmcal.cli")

LOG_FORMAT = "%(asctime)s [%(name)s] %(levelname)s: %(message)s"


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_settings(args: argparse.Namespace) -> Settings:
    overrides: dict[str, Any] = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip().replace(".", "_").replace("-", "_")] = _parse_value(value)
    for name in ("data_dir", "output_dir", "seed", "workers", "observation_date"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return load_settings(args.config, **overrides)


def _load_bundle(args: argparse.Namespace) -> ModelBundle:
    if args.fixture:
        return load_fixture(args.fixture)
    if args.bundle:
        return dataio.load_bundle(args.bundle)
    raise HjmCalError("either --bundle or --fixture is required")


def _emit(frame: pd.DataFrame, out: Optional[str]) -> None:
    text = dataio.frame_to_csv(frame)
    if out:
        with open(out, "w") as fh:
            fh.write(text)
        logger.info(f"Wrote {len(frame)} row(s) to {out}")
    else:
        sys.stdout.write(text)


def _print_json(doc: Any) -> None:
    sys.stdout.write(json.dumps(doc, indent=2, default=str) + "\n")


# --- pipeline subcommands ---

def _pipeline(args: argparse.Namespace, config: Settings) -> CalibrationPipeline:
    pipe = CalibrationPipeline(config, run_id=args.run_id, resume=True)
    pipe.begin()
    return pipe


def cmd_step(args: argparse.Namespace, config: Settings) -> int:
    pipe = _pipeline(args, config)
    action = {
        "strip": pipe.strip,
        "cov": pipe.estimate_covariance,
        "ssvi": pipe.fit_surface,
        "calibrate-step1": pipe.calibrate_step1,
        "calibrate-step2": lambda: pipe.calibrate_step2(enabled=not args.skip_step2 and config.step2_enabled),
        "calibrate-step3": pipe.calibrate_step3,
        "report": pipe.report,
    }[args.command]
    if args.command in ("calibrate-step3", "report"):
        pipe.calibrate_step2(enabled=not args.skip_step2 and config.step2_enabled)
    action()
    _print_json(pipe.summary())
    return 0


def cmd_run(args: argparse.Namespace, config: Settings) -> int:
    pipe = run_pipeline(config, skip_step2=args.skip_step2, resume=args.resume)
    _print_json(pipe.summary())
    return 0


# --- model subcommands ---

def cmd_price(args: argparse.Namespace, config: Settings) -> int:
    bundle = _load_bundle(args)
    window = DeliveryWindow(start=args.start, end=args.end)
    strikes = np.asarray(_floats(args.strikes)) if args.strikes else args.forward * np.asarray(config.report_moneyness)
    sp = pricer.SmilePricer(bundle.lsc, bundle.correction, window, args.maturity, args.forward,
                            config.riccati_steps(args.maturity), args.scheme or config.riccati_scheme,
                            config.lewis_u_cap, config.lewis_tolerance)
    calls = sp.calls(strikes, bundle)
    vols = sp.vols(strikes, bundle)
    frame = pd.DataFrame({"strike": strikes, "call": calls, "put": calls - args.forward + strikes, "iv": vols})
    frame["vs_vol"] = pricer.model_vs_vol(bundle, window, args.maturity)
    _emit(frame, args.out)
    return 0


def _contracts(args: argparse.Namespace) -> list[montecarlo.SimContract]:
    windows = args.window or [f"{args.start},{args.end}"]
    out = []
    for i, text in enumerate(windows):
        start, end = _floats(text)
        out.append(montecarlo.SimContract(label=f"C{i + 1}", window=DeliveryWindow(start=start, end=end), f0=args.forward))
    return out


def cmd_simulate(args: argparse.Namespace, config: Settings) -> int:
    bundle = _load_bundle(args)
    paths = montecarlo.simulate(
        bundle, _contracts(args), args.horizon, args.paths or config.mc_paths, seed=config.seed, mode=args.mode,
        dt=config.mc_step_days / config.days_per_year, block_size=config.mc_block_size, workers=config.workers,
        stride=args.stride,
    )
    variance = montecarlo.variance_trajectory(paths)
    rows = []
    for j, ct in enumerate(paths.contracts):
        fwd = paths.forward[:, :, j]
        rows.append({"contract": ct.label, "mode": paths.mode.value, "paths": paths.n_paths,
                     "terminal_mean": float(fwd[:, -1].mean()), "terminal_std": float(fwd[:, -1].std()),
                     "min_variance": float(variance.min()), "mean_variance": float(variance.mean()),
                     "floored_fraction": paths.floored_fraction})
    _emit(pd.DataFrame(rows), args.out)
    return 0


def cmd_validate_kv(args: argparse.Namespace, config: Settings) -> int:
    bundle = _load_bundle(args)
    contracts = _contracts(args)
    common = dict(horizon=args.horizon, n_paths=args.paths or config.mc_paths, seed=config.seed,
                  dt=config.mc_step_days / config.days_per_year, block_size=config.mc_block_size,
                  workers=config.workers, stride=args.stride)
    exact = montecarlo.simulate(bundle, contracts, mode="exact", **common)
    kv = montecarlo.simulate(bundle, contracts, mode="kv", **common)
    _emit(montecarlo.kv_validation(exact, kv, bundle, config.report_moneyness), args.out)
    return 0


def cmd_synth(args: argparse.Namespace, config: Settings) -> int:
    truth = dataio.load_bundle(args.truth) if args.truth else (load_fixture(args.fixture) if args.fixture else default_truth())
    syn = SyntheticConfig(
        truth=truth, history_days=args.history_days, price_noise=args.price_noise, vol_noise=args.vol_noise,
        days_per_year=config.days_per_year,
        **({"observation_date": config.observation_date} if config.observation_date else {}),
    )
    market = generate_synthetic(syn, seed=config.seed, out_dir=args.out or config.data_dir)
    _print_json({"dates": len(market.curves), "smiles": len(market.smiles), "out": args.out or config.data_dir})
    return 0


# --- parser ---

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON settings file (nested sections)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a setting, e.g. step1.restarts=20")
    common.add_argument("--data-dir", dest="data_dir")
    common.add_argument("--output-dir", dest="output_dir")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--observation-date", dest="observation_date")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(prog="hjmcal", description="Commodity forward-curve volatility calibration")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (("strip", "strip daily forward curves"), ("cov", "rolling-contract covariance"),
                            ("ssvi", "SSVI surface and VS targets"), ("calibrate-step1", "joint factor calibration"),
                            ("calibrate-step2", "VS term-structure correction"),
                            ("calibrate-step3", "lifted-Heston smile calibration"), ("report", "emit reports")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--run-id", dest="run_id", help="reuse the artifacts of an earlier run")
        p.add_argument("--skip-step2", action="store_true")
        p.set_defaults(func=cmd_step)

    p = sub.add_parser("run", parents=[common], help="full pipeline")
    p.add_argument("--skip-step2", action="store_true")
    p.add_argument("--resume", action="store_true", help="reuse stored step outputs of the same run id")
    p.set_defaults(func=cmd_run)

    def model_args(p: argparse.ArgumentParser) -> None:
        group = p.add_mutually_exclusive_group(required=True)
        group.add_argument("--bundle", help="model bundle JSON")
        group.add_argument("--fixture", choices=fixture_names())
        p.add_argument("--start", type=float, default=0.25, help="delivery start (years)")
        p.add_argument("--end", type=float, default=0.5, help="delivery end (years)")
        p.add_argument("--forward", type=float, default=100.0)
        p.add_argument("--out")

    p = sub.add_parser("price", parents=[common], help="Fourier prices and implied vols")
    model_args(p)
    p.add_argument("--maturity", type=float, default=0.2)
    p.add_argument("--strikes", help="comma-separated strikes (default: report moneyness)")
    p.add_argument("--scheme", choices=pricer.SCHEMES)
    p.set_defaults(func=cmd_price)

    for name, func, help_text in (("simulate", cmd_simulate, "Monte Carlo paths"),
                                  ("validate-kv", cmd_validate_kv, "exact vs KV Monte Carlo comparison")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        model_args(p)
        p.add_argument("--window", action="append", metavar="START,END", help="contract window in years (repeatable)")
        p.add_argument("--horizon", type=float, default=0.2)
        p.add_argument("--paths", type=int)
        p.add_argument("--stride", type=int, default=1, help="record every n-th step")
        if name == "simulate":
            p.add_argument("--mode", choices=[m.value for m in montecarlo.SimulationMode], default="kv")
        p.set_defaults(func=func)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic market")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--truth", help="ground-truth model bundle JSON")
    group.add_argument("--fixture", choices=fixture_names())
    p.add_argument("--out", help="output directory (default: data dir)")
    p.add_argument("--history-days", type=int, default=400)
    p.add_argument("--price-noise", type=float, default=0.0)
    p.add_argument("--vol-noise", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = build_settings(args)
    except (ValidationError, argparse.ArgumentTypeError, OSError, ValueError) as e:
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
        logger.error(f"Invalid configuration: {e}")
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else config.log_level, format=LOG_FORMAT)
    try:
        return args.func(args, config)
    except HjmCalError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"{args.command}: invalid input: {e}")
        return 2
    except Exception as e:
        logger.error(f"{args.command} crashed: {e}\n{traceback.format_exc()}")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
