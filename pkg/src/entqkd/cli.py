"""Command-line driver: ``entqkd run | verify | sweep``.

Exit codes: 0 accept / all checks pass, 1 usage or configuration error,
2 refined abort (``run``) or failed comparison (``verify``).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import analysis
from .adversary import AttackPolicy
from .analysis import Decision, InsufficientSamples
from .postprocessing import KeyTooShort, SiftedKey, privacy_amplify, reconcile
from .protocol_session import SUBSETS, SessionConfig, run_session

log = logging.getLogger("entqkd")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ABORT = 2

CONFIG_FIELDS = tuple(f.name for f in dataclasses.fields(SessionConfig))

DEFAULT_VERIFY_ALPHA_SQ = (0.5, 0.6, 0.8, 0.95)
DEFAULT_VERIFY_POLICIES = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0), (1 / 3, 1 / 3, 1 / 3))
DEFAULT_VERIFY_EPSILON = 0.3
DEFAULT_VERIFY_SAMPLES = (2000,) * 6
Z_LIMIT = 4.0

RECONCILE_ROUNDS = 4


class UsageError(Exception):
    pass


def _floats(text: str, count: Optional[int] = None, name: str = "value") -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"{name}: cannot parse {text!r} as comma-separated numbers") from None
    if count is not None and len(values) != count:
        raise UsageError(f"{name}: expected {count} comma-separated values, got {len(values)}")
    return values


def _int_like(value, name: str) -> int:
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    if isinstance(value, str):
        try:
            return int(value)
        except ValueError:
            pass
    try:
        f = float(value)
    except (TypeError, ValueError):
        raise UsageError(f"{name}: expected an integer, got {value!r}") from None
    if not math.isfinite(f) or f != int(f):
        raise UsageError(f"{name}: expected an integer, got {value!r}")
    return int(f)


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON file with SessionConfig fields; flags win")
    p.add_argument("--seed", type=str, help="unsigned 64-bit seed (fallback: $QKD_SEED)")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--alpha-sq", type=float, dest="alpha_sq")
    p.add_argument("--pairs", type=str, dest="n_pairs", help="number of pairs N")
    p.add_argument("--attack", type=str, help="p1,p2,p3")
    p.add_argument("--e-max", type=float, dest="e_max")
    p.add_argument("--samples", type=str, help="m1,m1p,m2,m2p,m3,m3p")
    p.add_argument("--workers", type=int, default=1, help="threads used for session chunks")


def load_config(args: argparse.Namespace, defaults: Optional[dict] = None) -> SessionConfig:
    """Merge defaults, the JSON config file, $QKD_SEED and flags into a SessionConfig."""
    values: dict = dict(defaults or {})
    seed_source = None
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"config: cannot read {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config: top level must be a JSON object")
        unknown = sorted(set(data) - set(CONFIG_FIELDS))
        if unknown:
            raise UsageError(f"config: unknown field(s) {', '.join(unknown)}")
        values.update(data)
        if "seed" in data:
            seed_source = "config"
    if seed_source is None and os.environ.get("QKD_SEED"):
        values["seed"] = os.environ["QKD_SEED"]
    for name in ("epsilon", "alpha_sq", "e_max", "n_pairs", "seed"):
        if getattr(args, name, None) is not None:
            values[name] = getattr(args, name)
    if getattr(args, "attack", None) is not None:
        values["attack"] = _floats(args.attack, 3, "attack")
    if getattr(args, "samples", None) is not None:
        values["m_samples"] = _floats(args.samples, 6, "samples")
    return build_config(values)


def build_config(values: dict) -> SessionConfig:
    kwargs = {}
    try:
        if "n_pairs" in values:
            kwargs["n_pairs"] = _int_like(values["n_pairs"], "n_pairs")
        if "seed" in values:
            seed = _int_like(values["seed"], "seed")
            if not 0 <= seed < 2**64:
                raise UsageError(f"seed: must be an unsigned 64-bit integer, got {seed}")
            kwargs["seed"] = seed
        for name in ("epsilon", "alpha_sq", "e_max"):
            if name in values:
                kwargs[name] = float(values[name])
        if "attack" in values:
            att = values["attack"]
            if isinstance(att, dict):
                att = (att.get("p1", 0.0), att.get("p2", 0.0), att.get("p3", 0.0))
            if len(att) != 3:
                raise UsageError("attack: expected three probabilities p1,p2,p3")
            try:
                kwargs["attack"] = AttackPolicy(*(float(p) for p in att))
            except ValueError as exc:
                raise UsageError(f"attack: {exc}") from None
        if "m_samples" in values:
            kwargs["m_samples"] = tuple(_int_like(m, "m_samples") for m in values["m_samples"])
        return SessionConfig(**kwargs)
    except UsageError:
        raise
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def config_to_dict(config: SessionConfig) -> dict:
    return {
        "n_pairs": config.n_pairs,
        "epsilon": config.epsilon,
        "alpha_sq": config.alpha_sq,
        "attack": list(config.attack.as_tuple()),
        "m_samples": list(config.m_samples),
        "e_max": config.e_max,
        "seed": config.seed,
    }


def reconcile_block_size(error_rate: float) -> int:
    """Initial block length for reconciliation, about 0.73 / error rate."""
    if error_rate <= 0.0:
        return 64
    return int(min(64, max(4, round(0.73 / error_rate))))


def _sub_seed(seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, purpose])


def execute_run(config: SessionConfig, workers: int = 1):
    """Run one full session. Returns ``(session, error_report, report_dict, final_key)``."""
    session = run_session(config, workers=workers)
    report = analysis.estimate_errors(
        session.table, config.m_samples, config.e_max, _sub_seed(config.seed, 1), config.epsilon
    )
    predicted = analysis.predict_all(config.amplitudes, config.attack, config.epsilon)
    out = {
        "config": config_to_dict(config),
        "tallies": {label.value: session.tallies[label] for label in SUBSETS},
        "sifted_count": session.sifted_count,
        "sifted_fraction": session.sifted_fraction,
        **report.to_dict(),
        "predicted": {
            **{label.value: predicted.rate(label) for label in SUBSETS},
            "average": predicted.average,
        },
        "postprocessing": None,
    }
    final_key = None
    if report.refined_decision is Decision.ACCEPT:
        rows = analysis.key_rows(session.table, report)
        alice = SiftedKey(session.table.alice_bit[rows], "alice")
        bob = SiftedKey(session.table.bob_bit[rows], "bob")
        total_m = sum(est.m for est in report.subsets.values())
        test_error = sum(est.r for est in report.subsets.values()) / total_m
        block = reconcile_block_size(test_error)
        alice, bob, leaked = reconcile(alice, bob, RECONCILE_ROUNDS, block, _sub_seed(config.seed, 2))
        hash_seed = int(_sub_seed(config.seed, 3).integers(2**63))
        final_key = privacy_amplify(alice, leaked, hash_seed=hash_seed)
        out["postprocessing"] = {
            "sifted_key_length": len(alice),
            "block_size": block,
            "rounds": RECONCILE_ROUNDS,
            "leaked_bits": leaked,
            "residual_mismatches": int((alice.bits != bob.bits).sum()),
            "final_key_length": len(final_key),
        }
    return session, report, out, final_key


def _write_text(path: str, text: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args)
    try:
        session, report, out, final_key = execute_run(config, workers=args.workers)
    except InsufficientSamples as exc:
        raise UsageError(str(exc)) from None
    except KeyTooShort as exc:
        raise UsageError(str(exc)) from None

    if args.records_out:
        with open(args.records_out, "w", newline="\n") as fh:
            session.table.write_csv(fh)
    text = json.dumps(out, indent=2) + "\n"
    if args.report_out:
        _write_text(args.report_out, text)
    else:
        sys.stdout.write(text)
    if args.key_out and final_key is not None:
        _write_text(args.key_out, final_key.hex() + "\n")

    rates = " ".join(f"{label.value}={report.rate(label):.4f}" for label in SUBSETS)
    log.info(
        "refined=%s naive=%s avg=%.6f %s",
        report.refined_decision.value, report.naive_decision.value, report.average_error, rates,
    )
    return EXIT_OK if report.refined_decision is Decision.ACCEPT else EXIT_ABORT


VERIFY_COLUMNS = ("alpha_sq", "p1", "p2", "p3", "epsilon", "n_pairs", "quantity", "predicted", "empirical", "n", "z", "status")


def verify_cell(config: SessionConfig, workers: int = 1) -> list[dict]:
    """Predicted vs Monte Carlo rates for one grid cell, one row per quantity."""
    base = {
        "alpha_sq": config.alpha_sq,
        "p1": config.attack.p1,
        "p2": config.attack.p2,
        "p3": config.attack.p3,
        "epsilon": config.epsilon,
        "n_pairs": config.n_pairs,
    }
    session = run_session(config, workers=workers)
    try:
        report = analysis.estimate_errors(
            session.table, config.m_samples, config.e_max, _sub_seed(config.seed, 1), config.epsilon
        )
    except InsufficientSamples as exc:
        return [{**base, "quantity": exc.subset.value, "predicted": math.nan, "empirical": math.nan,
                 "n": exc.available, "z": math.nan, "status": "insufficient_samples"}]
    predicted = analysis.predict_all(config.amplitudes, config.attack, config.epsilon)
    rows = []
    for label in SUBSETS:
        est = report.subsets[label]
        z = analysis.binomial_z(est.e, predicted.rate(label), est.m)
        rows.append({**base, "quantity": label.value, "predicted": predicted.rate(label), "empirical": est.e,
                     "n": est.m, "z": z, "status": "ok" if abs(z) <= Z_LIMIT else "fail"})
    n_sifted = session.sifted_count
    z = analysis.binomial_z(report.pooled_mismatch, predicted.average, n_sifted)
    rows.append({**base, "quantity": "average", "predicted": predicted.average, "empirical": report.pooled_mismatch,
                 "n": n_sifted, "z": z, "status": "ok" if abs(z) <= Z_LIMIT else "fail"})
    return rows


def _parse_policies(text: str) -> tuple[tuple[float, float, float], ...]:
    return tuple(_floats(chunk, 3, "policies") for chunk in text.split(";") if chunk.strip())


def cmd_verify(args: argparse.Namespace) -> int:
    base = load_config(
        args,
        defaults={"epsilon": DEFAULT_VERIFY_EPSILON, "m_samples": DEFAULT_VERIFY_SAMPLES},
    )
    alpha_grid = _floats(args.alpha_sq_grid, name="alpha-sq-grid") if args.alpha_sq_grid else DEFAULT_VERIFY_ALPHA_SQ
    policies = _parse_policies(args.policies) if args.policies else DEFAULT_VERIFY_POLICIES
    if args.alpha_sq is not None:
        alpha_grid = (args.alpha_sq,)
    if args.attack is not None:
        policies = (base.attack.as_tuple(),)
    if not alpha_grid or not policies:
        raise UsageError("verify: empty grid")
    rows = []
    for a2 in alpha_grid:
        for pol in policies:
            cfg = build_config({**config_to_dict(base), "alpha_sq": a2, "attack": pol})
            rows.extend(verify_cell(cfg, workers=args.workers))
    lines = [",".join(VERIFY_COLUMNS)]
    lines += [",".join(_fmt(r[c]) for c in VERIFY_COLUMNS) for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    failed = [r for r in rows if r["status"] != "ok"]
    for r in failed:
        log.warning("alpha_sq=%s policy=(%s,%s,%s) %s: %s", r["alpha_sq"], r["p1"], r["p2"], r["p3"], r["quantity"], r["status"])
    return EXIT_OK if not failed else EXIT_ABORT


SWEEP_PARAMS = ("epsilon", "alpha_sq", "n_pairs")
SWEEP_COLUMNS = (
    "value", "sifted_fraction", "e_avg_naive", "e1", "e1p", "e2", "e2p", "e3", "e3p", "min_epsilon", "feasible",
)
SWEEP_MC_COLUMNS = (
    "mc_sifted_fraction", "mc_e_avg_naive", "mc_e1", "mc_e1p", "mc_e2", "mc_e2p", "mc_e3", "mc_e3p",
)


def sweep_values(values: Optional[str], range_spec: Optional[str]) -> list[float]:
    if values:
        return list(_floats(values, name="values"))
    if range_spec:
        start, stop, step = _floats(range_spec, 3, "range")
        if step <= 0:
            raise UsageError("range: step must be positive")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(max(count, 0))]
    return []


def sweep_row(config: SessionConfig, value, monte_carlo: bool = False, workers: int = 1) -> dict:
    pred = analysis.predict_all(config.amplitudes, config.attack, config.epsilon)
    m = max(config.m_samples[2:])
    bound = analysis.epsilon_bound(config.n_pairs, m)
    row = {
        "value": value,
        "sifted_fraction": analysis.sifted_fraction(config.epsilon),
        "e_avg_naive": pred.average,
        **{label.value: pred.rate(label) for label in SUBSETS},
        "min_epsilon": bound,
        "feasible": "true" if bound <= 1.0 and config.epsilon >= bound else "false",
    }
    if monte_carlo:
        session = run_session(config, workers=workers)
        row["mc_sifted_fraction"] = session.sifted_fraction
        try:
            report = analysis.estimate_errors(
                session.table, config.m_samples, config.e_max, _sub_seed(config.seed, 1), config.epsilon
            )
            row["mc_e_avg_naive"] = report.average_error
            row.update({f"mc_{label.value}": report.rate(label) for label in SUBSETS})
        except InsufficientSamples:
            row["mc_e_avg_naive"] = math.nan
            row.update({f"mc_{label.value}": math.nan for label in SUBSETS})
    return row


def cmd_sweep(args: argparse.Namespace) -> int:
    values = sweep_values(args.values, args.range)
    if not values:
        raise UsageError("sweep: empty range; give --values or --range start,stop,step")
    base = load_config(args)
    rows = []
    for v in values:
        if args.param == "n_pairs":
            v = _int_like(v, "n_pairs")
        cfg = build_config({**config_to_dict(base), args.param: v})
        rows.append(sweep_row(cfg, v, args.monte_carlo, args.workers))
    columns = ("param",) + SWEEP_COLUMNS + (SWEEP_MC_COLUMNS if args.monte_carlo else ())
    lines = [",".join(columns)]
    lines += [",".join([args.param] + [_fmt(r[c]) for c in columns[1:]]) for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entqkd", description="Biased-basis entanglement QKD simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one session end to end")
    add_config_flags(run)
    run.add_argument("--records-out", metavar="PATH")
    run.add_argument("--report-out", metavar="PATH")
    run.add_argument("--key-out", metavar="PATH")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="compare Monte Carlo rates with closed-form predictions")
    add_config_flags(ver)
    ver.add_argument("--alpha-sq-grid", metavar="LIST", help="comma-separated alpha^2 values")
    ver.add_argument("--policies", metavar="LIST", help="'p1,p2,p3;p1,p2,p3;...'")
    ver.add_argument("--out", metavar="PATH")
    ver.set_defaults(func=cmd_verify)

    sw = sub.add_parser("sweep", help="tabulate predictions over one parameter")
    add_config_flags(sw)
    sw.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    sw.add_argument("--values", metavar="LIST")
    sw.add_argument("--range", metavar="START,STOP,STEP")
    sw.add_argument("--monte-carlo", action="store_true", help="also simulate each point")
    sw.add_argument("--out", metavar="PATH")
    sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"entqkd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
