import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from substitution_utils import (SubstitutionError, get_default_seed, get_max_workers,
                                get_support_cap)
from concurrent_sweep import sweep_grid
from dist_core import bernoulli_distribution, distribution
from entropy import (differential_entropy, entropy_per_digit, hvar_curve, mean_entropy,
                     sequence_entropies)
from extrema import DEFAULT_I_RANGE, fit_root_curves, root_curve_model
from moments import moment_summary, moments_from_distribution, variance
from schemas import CountDistribution, EnsembleHistogram, RuleParams, RunConfig, validate_run_config
from simulate import (empirical_stats, ensemble_counts, exact_distribution_or_none,
                      iterate_sequence, preset, rule_ensemble, total_variation)

logger = logging.getLogger(__name__)

DEFAULT_P_GRID = "0:1:0.01"


class CommandResult(NamedTuple):
    frame: pd.DataFrame
    summary: Optional[Dict[str, Any]] = None


def parse_p_grid(text: str) -> List[float]:
    """Inclusive grid from 'start:stop:step'."""
    try:
        start, stop, step = (float(part) for part in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}")
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError(f"empty grid {text!r}")
    n = int(math.floor((stop - start) / step + 1e-9))
    grid = np.round(start + step * np.arange(n + 1), 12)
    return [float(p) for p in grid]


def parse_i_range(text: str) -> List[int]:
    """Inclusive iteration range from 'first:last'."""
    try:
        lo, hi = (int(part) for part in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected first:last, got {text!r}")
    return [lo, hi]


def parse_k_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--k", type=int, help="substitution length (default 2)")
    common.add_argument("--p", type=float, help="single fill probability")
    common.add_argument("--p-grid", dest="p_grid", type=parse_p_grid,
                        help=f"probability grid start:stop:step (default {DEFAULT_P_GRID})")
    common.add_argument("--i", type=int, help="iteration")
    common.add_argument("--i-range", dest="i_range", type=parse_i_range, help="iterations first:last")
    common.add_argument("--seed", type=int, help="random seed (default from RSUB_SEED)")
    common.add_argument("--format", dest="output_format", choices=["csv", "json"], help="output format")
    common.add_argument("--output", help="output file (default stdout)")
    common.add_argument("--support-cap", dest="support_cap", type=int,
                        help="maximum distribution entries (default from RSUB_SUPPORT_CAP)")
    common.add_argument("--workers", type=int, help="worker threads (default from RSUB_MAX_WORKERS)")

    parser = argparse.ArgumentParser(description="Random substitution sequences of constant length")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    subparsers.add_parser("dist", parents=[common], help="exact distribution of the number of ones")
    subparsers.add_parser("moments", parents=[common], help="closed-form moments over a p-grid")
    subparsers.add_parser("entropy", parents=[common], help="mean, differential and per-digit entropy")
    hvar = subparsers.add_parser("hvar", parents=[common], help="entropy-variance parametric curves")
    hvar.add_argument("--normalized", action="store_true", help="locate p_r on axes scaled by their maxima")
    extrema = subparsers.add_parser("extrema", parents=[common], help="variance maxima and root-curve fit")
    extrema.add_argument("--k-list", dest="k_list", type=parse_k_list, help="comma-separated lengths")
    simulate = subparsers.add_parser("simulate", parents=[common], help="Monte Carlo ensembles and presets")
    simulate.add_argument("--runs", type=int, help="number of realizations (default 1000)")
    simulate.add_argument("--mode", choices=["count", "sequence"], help="count-only or full sequences")
    simulate.add_argument("--preset", help="cantor, morse_thue, fibonacci, mandelbrot or bernoulli")
    return parser


def _grid(config: RunConfig) -> List[float]:
    return config.grid or parse_p_grid(DEFAULT_P_GRID)


def _iterations(config: RunConfig, minimum: int = 0) -> List[int]:
    iterations = config.iterations
    if not iterations:
        raise SubstitutionError("INVALID_PARAMS", f"'{config.subcommand}' needs --i or --i-range")
    if iterations[0] < minimum:
        raise SubstitutionError("INVALID_PARAMS", f"'{config.subcommand}' needs iterations >= {minimum}")
    return iterations


def cmd_dist(config: RunConfig) -> CommandResult:
    frames = []
    for i in _iterations(config):
        for p in _grid(config):
            dist = distribution(i, RuleParams(k=config.k, p=p), config.support_cap)
            frames.append(pd.DataFrame({
                "iteration": i, "k": config.k, "p": p,
                "x": dist.support, "prob": dist.probs,
            }))
    return CommandResult(pd.concat(frames, ignore_index=True))


def cmd_moments(config: RunConfig) -> CommandResult:
    rows = []
    for i in _iterations(config, minimum=1):
        summaries = sweep_grid(lambda p: moment_summary(i, RuleParams(k=config.k, p=p)),
                               _grid(config), max_workers=config.workers)
        rows.extend({
            "i": s.iteration, "k": s.k, "p": s.p,
            "mean": s.mean, "var": s.variance, "sigma": s.std_dev,
            "dispersion": s.dispersion, "zeros_mean": s.zeros_mean, "ratio": s.ones_zeros_ratio,
        } for s in summaries)
    return CommandResult(pd.DataFrame(rows))


def cmd_entropy(config: RunConfig) -> CommandResult:
    rows = []
    for i in _iterations(config, minimum=1):
        def row(p: float) -> Dict[str, Any]:
            params = RuleParams(k=config.k, p=p)
            h = mean_entropy(i, params, config.support_cap)
            return {
                "i": i, "p": p, "H_i": h,
                "h_i": differential_entropy(i, params, config.support_cap),
                "H_per_digit": entropy_per_digit(i, params, config.support_cap),
            }
        rows.extend(sweep_grid(row, _grid(config), max_workers=config.workers))
    return CommandResult(pd.DataFrame(rows))


def cmd_hvar(config: RunConfig) -> CommandResult:
    rows = []
    locus = []
    for i in _iterations(config, minimum=1):
        curve = hvar_curve(i, config.k, _grid(config), max_workers=config.workers,
                           normalized=config.normalized, support_cap=config.support_cap)
        rows.extend({"i": i, "p": pt.p, "VAR": pt.variance, "H": pt.mean_entropy, "is_p_r": False}
                    for pt in curve.points)
        params = RuleParams(k=config.k, p=curve.p_r)
        p_r_row = {"i": i, "p": curve.p_r, "VAR": variance(i, params),
                   "H": mean_entropy(i, params, config.support_cap), "is_p_r": True}
        rows.append(p_r_row)
        locus.append(p_r_row)
    frame = pd.DataFrame(rows).sort_values(["i", "p", "is_p_r"], kind="mergesort", ignore_index=True)
    return CommandResult(frame, {"p_r": locus})


def cmd_extrema(config: RunConfig) -> CommandResult:
    i_range = tuple(config.i_range) if config.i_range is not None else DEFAULT_I_RANGE
    fits = fit_root_curves(config.k_values, i_range, max_workers=config.workers)
    rows = [{
        "k": fit.k, "i": i, "p_m": p_m,
        "fitted": root_curve_model(i, fit.alpha, fit.beta),
        "alpha": fit.alpha, "beta": fit.beta, "rss": fit.rss,
    } for fit in fits for i, p_m in fit.roots]
    summary = {"fits": [{
        "k": fit.k, "i_range": list(fit.i_range), "alpha": fit.alpha, "beta": fit.beta,
        "rss": fit.rss, "evaluations": fit.evaluations,
    } for fit in fits]}
    return CommandResult(pd.DataFrame(rows), summary)


def _exact_for(config: RunConfig, hist: EnsembleHistogram) -> Optional[CountDistribution]:
    if config.preset and config.preset.lower() == "bernoulli":
        length = config.k ** hist.iteration
        if length + 1 > (config.support_cap or get_support_cap()):
            return None
        return CountDistribution(iteration=hist.iteration, k=hist.k, p=hist.p,
                                 probs=bernoulli_distribution(length, hist.p))
    return exact_distribution_or_none(hist, config.support_cap)


def cmd_simulate(config: RunConfig) -> CommandResult:
    i = _iterations(config)[0]
    grid = config.grid

    if config.preset:
        rule = preset(config.preset, config.k, grid[0] if len(grid) == 1 else 0.5)
        if rule.is_deterministic:
            seq = iterate_sequence(rule, None, i, config.seed)
            text = "(" + ",".join(str(int(s)) for s in seq) + ")"
            logger.info(f"{rule.name} generation {i}: {len(seq)} symbols")
            frame = pd.DataFrame([{"preset": rule.name, "i": i, "length": len(seq), "sequence": text}])
            return CommandResult(frame)

    if len(grid) != 1:
        raise SubstitutionError("INVALID_PARAMS", "simulate needs exactly one --p")
    p = grid[0]
    if config.preset:
        hist = rule_ensemble(rule, i, config.runs, config.seed, mode=config.mode,
                             max_workers=config.workers)
    else:
        hist = ensemble_counts(RuleParams(k=config.k, p=p), i, config.runs, config.seed,
                               mode=config.mode, max_workers=config.workers)

    exact = _exact_for(config, hist)
    frame = pd.DataFrame({
        "x": list(hist.counts),
        "count": list(hist.counts.values()),
    })
    frame["empirical_prob"] = frame["count"] / hist.runs
    if exact is not None:
        frame["exact_prob"] = exact.probs[frame["x"].to_numpy()]

    summary: Dict[str, Any] = {"k": hist.k, "i": hist.iteration, "p": hist.p,
                               "runs": hist.runs, "seed": hist.seed, "mode": hist.mode}
    if hist.runs >= 2:
        stats = empirical_stats(hist)
        summary.update(empirical_mean=stats.mean, empirical_var=stats.variance,
                       empirical_entropy=stats.mean_entropy)
    if exact is not None:
        exact_moments = moments_from_distribution(exact)
        n = hist.k ** hist.iteration
        summary.update(
            exact_mean=exact_moments.mean, exact_var=exact_moments.variance,
            exact_entropy=math.fsum(sequence_entropies(exact.support, n) * exact.probs),
            tv_distance=total_variation(hist, exact),
        )
    return CommandResult(frame, summary)


COMMANDS: Dict[str, Callable[[RunConfig], CommandResult]] = {
    "dist": cmd_dist,
    "moments": cmd_moments,
    "entropy": cmd_entropy,
    "hvar": cmd_hvar,
    "extrema": cmd_extrema,
    "simulate": cmd_simulate,
}


def _clean(value: Any) -> Any:
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats as None."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def render(result: CommandResult, output_format: str) -> str:
    if output_format == "csv":
        return result.frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")
    records = result.frame.to_dict(orient="records")
    payload: Any = {"rows": records, "summary": result.summary} if result.summary else records
    return json.dumps(_clean(payload), indent=2) + "\n"


def write_output(result: CommandResult, config: RunConfig) -> None:
    text = render(result, config.output_format)
    if config.output:
        path = Path(config.output)
        path.write_text(text, encoding="utf-8")
        logger.info(f"Wrote {len(result.frame)} rows to {path}")
        if result.summary and config.output_format == "csv":
            sidecar = path.with_suffix(".summary.json")
            sidecar.write_text(json.dumps(_clean(result.summary), indent=2) + "\n", encoding="utf-8")
            logger.info(f"Wrote summary to {sidecar}")
    else:
        sys.stdout.write(text)
    if result.summary and config.output_format == "csv":
        logger.info(f"Summary: {json.dumps(_clean(result.summary))}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    config_data = {key: value for key, value in vars(args).items() if value is not None}
    config_data.setdefault("seed", get_default_seed())
    config_data.setdefault("workers", get_max_workers())
    try:
        config = validate_run_config(config_data)
    except ValidationError:
        return 2

    try:
        result = COMMANDS[config.subcommand](config)
        write_output(result, config)
    except SubstitutionError as e:
        logger.error(f"{e.error_code}: {e.message}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"Invalid parameters: {e}")
        return 2
    except KeyboardInterrupt:
        logger.info("Keyboard interrupt received")
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
