"""Command-line surface: CSV ingestion, fitting, simulation studies, and
report/trace emission.

Two subcommands:

``fit``
    Read a grouped CSV (columns ``y``, ``z``, ``group``; optional ``t``),
    optionally window it, run one chain, and write a JSON (or CSV) report
    plus an optional per-iteration trace CSV.

``simulate``
    Run a replication study for one of the built-in generating processes and
    write the metric table.

All options may also be supplied through ``--config FILE`` (a flat JSON
object keyed by option name); explicit flags win.  Reports contain no
timestamps, so identical inputs produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from typing import Sequence

import numpy as np

from .data import Observation, canonicalize
from .inference import summarize, test_homogeneous_null, test_sharp_null
from .kernels import KDELTA_DIAG, KDELTA_SE
from .linalg import FactorizationError
from .model import PriorConfig
from .sampler import Chain, SamplerConfig, run_chain
from .simulation import METRIC_FIELDS, DGPSpec, StudyReport, run_study
from .windowing import WindowPolicy, apply_cut, resolve_window, rule_of_thumb_half_width

__all__ = ["main", "ingest_csv", "write_report", "write_trace"]

_TRUE_STRINGS = {"1", "true", "t", "yes"}
_FALSE_STRINGS = {"0", "false", "f", "no"}
_MAX_LISTED_ROWS = 10

_KDELTA_BY_FLAG = {"se": KDELTA_SE, "diag": KDELTA_DIAG}


class ConfigError(ValueError):
    """Bad command-line / config-file combination."""


def ingest_csv(path: str) -> list[Observation]:
    """Parse a grouped-observation CSV.

    Requires columns ``y``, ``z``, ``group`` (case-insensitive header);
    ``t`` is optional and is validated against the sharp rule ``z >= 0``
    (mismatches are corrected with a warning).  Rows with missing or
    non-numeric ``y``/``z`` abort ingestion with their line numbers.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        names = [h.strip().lower() for h in header]
        if len(set(names)) != len(names):
            raise ValueError(f"{path}: duplicate header column")
        cols = {name: i for i, name in enumerate(names)}
        missing = [c for c in ("y", "z", "group") if c not in cols]
        if missing:
            raise ValueError(f"{path}: missing required column(s) {missing}")
        t_col = cols.get("t")

        obs: list[Observation] = []
        bad: list[str] = []
        flag_mismatch: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(names):
                bad.append(f"line {lineno} (too few fields)")
                continue
            try:
                y = float(row[cols["y"]])
                z = float(row[cols["z"]])
            except ValueError:
                bad.append(f"line {lineno} (non-numeric y or z)")
                continue
            if not (math.isfinite(y) and math.isfinite(z)):
                bad.append(f"line {lineno} (non-finite y or z)")
                continue
            group = row[cols["group"]].strip()
            if not group:
                bad.append(f"line {lineno} (empty group)")
                continue
            treated = z >= 0.0
            if t_col is not None:
                raw_t = row[t_col].strip().lower()
                if raw_t in _TRUE_STRINGS:
                    given = True
                elif raw_t in _FALSE_STRINGS:
                    given = False
                else:
                    bad.append(f"line {lineno} (unparseable t)")
                    continue
                if given != treated:
                    flag_mismatch.append(lineno)
            obs.append(Observation(y=y, z=z, treated=treated, group=group))

        if bad:
            listed = ", ".join(bad[:_MAX_LISTED_ROWS])
            more = f" and {len(bad) - _MAX_LISTED_ROWS} more" if len(bad) > _MAX_LISTED_ROWS else ""
            raise ValueError(f"{path}: rejected rows: {listed}{more}")
        if not obs:
            raise ValueError(f"{path}: zero valid data rows")
        if flag_mismatch:
            shown = ", ".join(str(n) for n in flag_mismatch[:_MAX_LISTED_ROWS])
            warnings.warn(
                f"{path}: t column disagrees with z >= 0 on line(s) {shown}; flags corrected",
                stacklevel=2,
            )
    return obs


# ---------------------------------------------------------------------------
# Report writing
# ---------------------------------------------------------------------------


def fit_report(summary, sharp, homog, chain: Chain, dataset, config_echo: dict) -> dict:
    groups = []
    for j in range(dataset.J):
        groups.append(
            {
                "label": str(dataset.labels[j]),
                "index": j + 1,
                "n_control": int(dataset.n_minus[j]),
                "n_treated": int(dataset.n_plus[j]),
                "delta_mean": float(summary.delta_mean[j]),
                "lower": float(summary.marginal_intervals[j, 0]),
                "upper": float(summary.marginal_intervals[j, 1]),
            }
        )
    return {
        "config": config_echo,
        "seed": config_echo.get("seed"),
        "n_observations": dataset.N,
        "groups": groups,
        "region_level": float(summary.region_level),
        "r_alpha": float(summary.r_alpha),
        "volume": float(summary.volume),
        "sigma_hat": [[float(v) for v in row] for row in summary.sigma_hat],
        "sharp_null": {"statistic": float(sharp.statistic), "reject": bool(sharp.reject)},
        "homogeneous_null": {
            "c_star": float(homog.c_star),
            "statistic": float(homog.statistic),
            "reject": bool(homog.reject),
        },
        "acceptance_rates": {
            name: float(rate) for name, rate in zip(chain.coord_names, chain.acceptance_rates)
        },
        "n_retained": len(chain),
        "burn_in": chain.burn_in_used,
    }


def _write_fit_csv(report: dict, path: str) -> None:
    scalar = [
        ("r_alpha", report["r_alpha"]),
        ("volume", report["volume"]),
        ("sharp_stat", report["sharp_null"]["statistic"]),
        ("sharp_reject", int(report["sharp_null"]["reject"])),
        ("homog_c_star", report["homogeneous_null"]["c_star"]),
        ("homog_stat", report["homogeneous_null"]["statistic"]),
        ("homog_reject", int(report["homogeneous_null"]["reject"])),
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "delta_mean", "lower", "upper"] + [k for k, _ in scalar])
        tail = [repr(v) if isinstance(v, float) else v for _, v in scalar]
        for g in report["groups"]:
            writer.writerow([g["label"], repr(g["delta_mean"]), repr(g["lower"]), repr(g["upper"])] + tail)


def _write_study_csv(report: StudyReport, path: str) -> None:
    multi = len(report.methods) > 1
    header = ["replicate"] + (["method"] if multi else []) + list(METRIC_FIELDS)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for replicate, method, metrics in report.rows:
            row = [replicate] + ([method] if multi else [])
            writer.writerow(row + [repr(v) for v in metrics.as_dict().values()])
        for method, metrics in report.means.items():
            row = ["mean"] + ([method] if multi else [])
            writer.writerow(row + [repr(v) for v in metrics.as_dict().values()])


def _study_json_dict(report: StudyReport) -> dict:
    return {
        "spec": {
            "kind": report.spec.kind,
            "J": report.spec.J,
            "n_j": report.spec.n_j,
            "delta_mode": report.spec.delta_mode,
            "error_mode": report.spec.error_mode,
        },
        "base_seed": report.base_seed,
        "alpha": report.alpha,
        "replications": report.replications,
        "methods": list(report.methods),
        "n_failed": report.n_failed,
        "failures": [{"replicate": r, "error": msg} for r, msg in report.failures],
        "means": {m: row.as_dict() for m, row in report.means.items()},
        "rows": [
            {"replicate": r, "method": m, **metrics.as_dict()} for r, m, metrics in report.rows
        ],
    }


def write_report(obj, path: str, fmt: str = "json") -> None:
    """Serialize a fit report dict or a :class:`StudyReport` to json/csv."""
    if fmt not in ("json", "csv"):
        raise ConfigError(f"unknown report format {fmt!r}")
    if isinstance(obj, StudyReport):
        if fmt == "csv":
            _write_study_csv(obj, path)
        else:
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(_study_json_dict(obj), fh, indent=2)
                fh.write("\n")
        return
    if fmt == "csv":
        _write_fit_csv(obj, path)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2)
            fh.write("\n")


def write_trace(chain: Chain, path: str) -> None:
    """One CSV row per retained iteration: every hyperparameter coordinate
    followed by every effect entry."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["iteration"] + list(chain.coord_names) + [f"delta_{j}" for j in range(1, chain.J + 1)]
        )
        for k in range(len(chain)):
            row = [chain.burn_in_used + k + 1]
            row += [repr(float(v)) for v in chain.theta_draws[k]]
            row += [repr(float(v)) for v in chain.delta_draws[k]]
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------

_FIT_DEFAULTS = dict(
    window=None,
    window_rot=False,
    skew="none",
    imbalance_ratio=2.0,
    kdelta="se",
    iters=3000,
    burnin=500,
    alpha=0.05,
    prop_sd_log=0.3,
    prop_sd_mu=0.5,
    cauchy_scale=5.0,
    mu_sd=100.0,
    trace=None,
    format="json",
)

_SIM_DEFAULTS = dict(
    delta_mode=None,
    error_mode=None,
    groups=None,
    per_group=None,
    window=None,
    skew="none",
    imbalance_ratio=2.0,
    kdelta="se",
    iters=3000,
    burnin=500,
    alpha=0.05,
    prop_sd_log=0.3,
    prop_sd_mu=0.5,
    cauchy_scale=5.0,
    mu_sd=100.0,
    workers=1,
    format="csv",
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gprdd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    d = argparse.SUPPRESS

    fit = sub.add_parser("fit", help="fit grouped CSV data and write a report")
    fit.add_argument("--input", required=True)
    fit.add_argument("--out", required=True)
    fit.add_argument("--seed", type=int, required=True)
    fit.add_argument("--config", default=None, help="JSON file of option defaults (flags win)")
    fit.add_argument("--window", type=float, default=d)
    fit.add_argument("--window-rot", action="store_true", default=d,
                     help="derive the half-width from 1.06*sd(z)*N^(-1/5) (not an MSE-optimal bandwidth)")
    fit.add_argument("--skew", choices=["none", "auto", "right", "left"], default=d)
    fit.add_argument("--imbalance-ratio", type=float, default=d)
    fit.add_argument("--kdelta", choices=["se", "diag"], default=d)
    fit.add_argument("--iters", type=int, default=d)
    fit.add_argument("--burnin", type=int, default=d)
    fit.add_argument("--alpha", type=float, default=d)
    fit.add_argument("--prop-sd-log", type=float, default=d)
    fit.add_argument("--prop-sd-mu", type=float, default=d)
    fit.add_argument("--cauchy-scale", type=float, default=d)
    fit.add_argument("--mu-sd", type=float, default=d)
    fit.add_argument("--trace", default=d)
    fit.add_argument("--format", choices=["json", "csv"], default=d)

    sim = sub.add_parser("simulate", help="run a replication study")
    sim.add_argument("--dgp", required=True, choices=["dgp1", "dgp2", "dgp3"])
    sim.add_argument("--reps", type=int, required=True)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--config", default=None)
    sim.add_argument("--delta-mode", choices=["I", "II"], default=d)
    sim.add_argument("--error-mode", choices=["A", "B"], default=d)
    sim.add_argument("--groups", type=int, default=d)
    sim.add_argument("--per-group", type=int, default=d)
    sim.add_argument("--window", type=float, default=d)
    sim.add_argument("--skew", choices=["none", "auto", "right", "left"], default=d)
    sim.add_argument("--imbalance-ratio", type=float, default=d)
    sim.add_argument("--kdelta", choices=["se", "diag"], default=d)
    sim.add_argument("--iters", type=int, default=d)
    sim.add_argument("--burnin", type=int, default=d)
    sim.add_argument("--alpha", type=float, default=d)
    sim.add_argument("--prop-sd-log", type=float, default=d)
    sim.add_argument("--prop-sd-mu", type=float, default=d)
    sim.add_argument("--cauchy-scale", type=float, default=d)
    sim.add_argument("--mu-sd", type=float, default=d)
    sim.add_argument("--workers", type=int, default=d)
    sim.add_argument("--format", choices=["json", "csv"], default=d)
    return parser


def _resolve_options(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    provided = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    merged = dict(defaults)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config}: invalid JSON ({exc})") from exc
        if not isinstance(cfg, dict):
            raise ConfigError(f"config file {args.config}: expected a JSON object")
        for key, value in cfg.items():
            norm = key.replace("-", "_")
            if norm not in merged and norm not in provided:
                raise ConfigError(f"config file {args.config}: unknown option {key!r}")
            merged[norm] = value
    merged.update(provided)
    return merged


def _window_policy(opts: dict, z: np.ndarray) -> WindowPolicy | None:
    skew_map = {"none": "none", "auto": "auto", "right": "force_right", "left": "force_left"}
    h = opts.get("window")
    if opts.get("window_rot"):
        if h is not None:
            raise ConfigError("--window and --window-rot are mutually exclusive")
        h = rule_of_thumb_half_width(z)
        print(f"window half-width from rule of thumb (non-optimal): h = {h:.6g}")
    if h is None:
        return None
    return WindowPolicy(half_width=float(h), skew_mode=skew_map[opts["skew"]], imbalance_ratio=float(opts["imbalance_ratio"]))


def _sampler_config(opts: dict, seed: int) -> SamplerConfig:
    return SamplerConfig(
        iterations=int(opts["iters"]),
        burn_in=int(opts["burnin"]),
        proposal_sd_log=float(opts["prop_sd_log"]),
        proposal_sd_mu=float(opts["prop_sd_mu"]),
        seed=seed,
        kdelta_mode=_KDELTA_BY_FLAG[opts["kdelta"]],
        prior=PriorConfig(cauchy_scale=float(opts["cauchy_scale"]), mu_sd=float(opts["mu_sd"])),
    )


def _run_fit(opts: dict) -> int:
    obs = ingest_csv(opts["input"])
    dataset = canonicalize(obs)
    policy = _window_policy(opts, dataset.z)
    echo = {k: opts[k] for k in sorted(opts)}
    if policy is not None:
        lo, hi = resolve_window(dataset, policy)
        dataset = apply_cut(dataset, policy)
        echo["resolved_window"] = [float(lo), float(hi)]
    cfg = _sampler_config(opts, int(opts["seed"]))
    chain = run_chain(dataset, cfg)
    summary = summarize(chain, float(opts["alpha"]))
    sharp = test_sharp_null(summary)
    homog = test_homogeneous_null(summary)
    report = fit_report(summary, sharp, homog, chain, dataset, echo)
    write_report(report, opts["out"], opts["format"])
    if opts.get("trace"):
        write_trace(chain, opts["trace"])
    print(f"wrote {opts['out']}" + (f" and {opts['trace']}" if opts.get("trace") else ""))
    return 0


def _run_simulate(opts: dict) -> int:
    kind = opts["dgp"]
    overrides = {}
    if opts.get("groups") is not None:
        overrides["J"] = int(opts["groups"])
    if opts.get("per_group") is not None:
        overrides["n_j"] = int(opts["per_group"])
    if kind == "dgp3":
        overrides["delta_mode"] = opts.get("delta_mode") or "I"
        overrides["error_mode"] = opts.get("error_mode") or "A"
    elif opts.get("delta_mode") or opts.get("error_mode"):
        raise ConfigError("--delta-mode/--error-mode only apply to dgp3")
    spec = DGPSpec.default(kind, **overrides)

    cut = None
    if opts.get("window") is not None:
        skew_map = {"none": "none", "auto": "auto", "right": "force_right", "left": "force_left"}
        cut = WindowPolicy(
            half_width=float(opts["window"]),
            skew_mode=skew_map[opts["skew"]],
            imbalance_ratio=float(opts["imbalance_ratio"]),
        )
    cfg = _sampler_config(opts, int(opts["seed"]))
    report = run_study(
        spec,
        replications=int(opts["reps"]),
        sampler_cfg=cfg,
        cut=cut,
        base_seed=int(opts["seed"]),
        alpha=float(opts["alpha"]),
        workers=int(opts["workers"]),
    )
    write_report(report, opts["out"], opts["format"])
    if report.n_failed:
        print(f"{report.n_failed}/{report.replications} replicate(s) failed and were excluded")
    print(f"wrote {opts['out']}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "fit":
            opts = _resolve_options(args, _FIT_DEFAULTS)
            return _run_fit(opts)
        opts = _resolve_options(args, _SIM_DEFAULTS)
        return _run_simulate(opts)
    except ConfigError as exc:
        print(f"error:config_error: {_one_line(exc)}", file=sys.stderr)
    except (FactorizationError, np.linalg.LinAlgError) as exc:
        print(f"error:numerical_error: {_one_line(exc)}", file=sys.stderr)
    except ValueError as exc:
        print(f"error:data_error: {_one_line(exc)}", file=sys.stderr)
    except OSError as exc:
        print(f"error:io_error: {_one_line(exc)}", file=sys.stderr)
    return 1


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    raise SystemExit(main())
