"""Command-line front end.

Subcommands: critical, rates, simulate, lfc-check, empty-stratum-study.
Each takes a strictly validated JSON config (unknown keys are rejected) and
writes its report atomically: nothing is left behind on failure.  Exit
codes: 0 success, 2 configuration error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
import tempfile

import numpy as np

from . import control, design, prevalence, sim, strata
from .errors import ConfigurationError, NumericalError, PwerError
from .mvdist import Budget

THREADS_ENV = "PWER_THREADS"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class _ConfigWalker:
    """Dict view that tracks consumed keys and rejects unknown ones."""

    def __init__(self, data, path="config"):
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: expected an object")
        self._data = data
        self._path = path
        self._seen = set()

    def get(self, key, default=None, required=False, kind=None):
        if key in self._data:
            self._seen.add(key)
            value = self._data[key]
            bad_bool = kind is int and isinstance(value, bool)
            if kind is not None and (bad_bool or not isinstance(value, kind)):
                raise ConfigurationError(
                    f"{self._path}.{key}: expected "
                    f"{getattr(kind, '__name__', kind)}")
            return value
        if required:
            raise ConfigurationError(f"{self._path}.{key}: missing required key")
        return default

    def child(self, key, required=False, default=None):
        value = self.get(key, required=required)
        if value is None:
            if default is None:
                return None
            value = default
        return _ConfigWalker(value, f"{self._path}.{key}")

    def finish(self):
        unknown = set(self._data) - self._seen
        if unknown:
            raise ConfigurationError(
                f"{self._path}: unknown key {sorted(unknown)[0]!r}")


def _number(walker, key, default=None, required=False):
    value = walker.get(key, default=default, required=required)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{walker._path}.{key}: expected a number")
    return value


def _parse_stratum(label: str, m: int) -> int:
    try:
        members = [int(tok) for tok in str(label).split(",")]
    except ValueError:
        raise ConfigurationError(f"bad stratum label {label!r}") from None
    return strata.StrataIndex.from_members(members, m).mask


def _parse_counts(walker: _ConfigWalker, m: int) -> strata.CountTable:
    sizes = np.zeros((1 << m) - 1, dtype=np.int64)
    arms: dict[int, dict[str, int]] = {}
    cells = walker.get("strata", required=True, kind=dict)
    for label, arm_map in cells.items():
        mask = _parse_stratum(label, m)
        if not isinstance(arm_map, dict):
            raise ConfigurationError(f"counts for stratum {label!r} must be an "
                                     "object of arm counts")
        parsed = {}
        for arm, n in arm_map.items():
            if isinstance(n, bool) or not isinstance(n, int) or n < 0:
                raise ConfigurationError(
                    f"count for ({label!r}, {arm!r}) must be a nonnegative "
                    "integer")
            parsed[str(arm)] = n
        arms[mask] = parsed
        sizes[mask - 1] = sum(parsed.values())
    n_empty = walker.get("n_empty")
    if n_empty is not None and (isinstance(n_empty, bool)
                                or not isinstance(n_empty, int) or n_empty < 0):
        raise ConfigurationError("counts.n_empty must be a nonnegative integer")
    walker.finish()
    return strata.CountTable(m, sizes, arms, n_empty)


def _parse_cell_variances(raw, m: int):
    out = {}
    for label, arm_map in raw.items():
        mask = _parse_stratum(label, m)
        if not isinstance(arm_map, dict):
            raise ConfigurationError("cell variances must map arm -> value")
        for arm, v in arm_map.items():
            if isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0:
                raise ConfigurationError(
                    f"variance for ({label!r}, {arm!r}) must be positive")
            out[(mask, str(arm))] = float(v)
    return out


def _parse_regime(walker: _ConfigWalker, m: int, counts: strata.CountTable):
    kind = walker.get("regime", required=True, kind=str)
    if kind == sim.KNOWN_HOM:
        sigma2 = _number(walker, "sigma2", default=1.0)
        walker.finish()
        return design.KnownHomogeneous(sigma2)
    if kind == sim.KNOWN_HET:
        cells = walker.get("cells", required=True, kind=dict)
        walker.finish()
        return design.KnownHeterogeneous(_parse_cell_variances(cells, m))
    if kind == sim.UNKNOWN_HOM:
        sigma2 = _number(walker, "sigma2_hat", default=1.0)
        walker.finish()
        return design.UnknownHomogeneous(
            sigma2, design.pooled_df_from_counts(counts))
    if kind == sim.UNKNOWN_HET:
        cells = walker.get("cells", required=True, kind=dict)
        pops = walker.get("population_variances", required=True, kind=dict)
        walker.finish()
        pop_vars = {}
        for key, pair in pops.items():
            try:
                i = int(key)
            except ValueError:
                raise ConfigurationError(
                    f"population_variances key {key!r} must be a population "
                    "index") from None
            sub = _ConfigWalker(pair, f"population_variances.{key}")
            vt = _number(sub, "treatment", required=True)
            vc = _number(sub, "control", required=True)
            sub.finish()
            pop_vars[i] = (float(vt), float(vc))
        return design.UnknownHeterogeneous(_parse_cell_variances(cells, m),
                                           pop_vars)
    raise ConfigurationError(f"unknown variance regime {kind!r}")


def _parse_prevalence_choice(walker, counts, m):
    kind = walker.get("kind", default="mle", kind=str)
    if kind == "mle":
        walker.finish()
        return prevalence.mle(counts)
    if kind == "marginal":
        walker.finish()
        return prevalence.marginal(prevalence.MarginalInput.from_counts(counts))
    if kind == "given":
        weights_raw = walker.get("weights", required=True, kind=dict)
        walker.finish()
        w = np.zeros((1 << m) - 1)
        for label, value in weights_raw.items():
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigurationError(f"weight for {label!r} must be a number")
            w[_parse_stratum(label, m) - 1] = value
        return strata.PrevalenceVector(m, w)
    raise ConfigurationError(f"unknown prevalence kind {kind!r}")


def _parse_budget(walker):
    if walker is None:
        return None
    abs_tol = _number(walker, "abs_tol", default=Budget.abs_tol)
    seed = walker.get("seed", default=Budget.seed, kind=int)
    max_evals = walker.get("max_evals", default=Budget.max_evals, kind=int)
    walker.finish()
    return Budget(abs_tol=abs_tol, max_evals=max_evals, seed=seed)


def _parse_scenario(walker: _ConfigWalker, seed_override=None,
                    replicates_override=None) -> sim.ScenarioSpec:
    m = walker.get("m", required=True, kind=int)
    n_total = walker.get("n_total", required=True, kind=int)
    replicates = walker.get("replicates", default=10_000, kind=int)
    if replicates_override is not None:
        replicates = replicates_override
    alpha = _number(walker, "alpha", default=0.025)
    seed = walker.get("seed", default=0, kind=int)
    if seed_override is not None:
        seed = seed_override

    bio = walker.child("biomarkers", default={})
    mode = bio.get("mode", default=sim.UNIFORM_RANDOM, kind=str)
    probabilities = bio.get("probabilities")
    prob_range = bio.get("range", default=[0.0, 1.0], kind=list)
    pinned_stratum = 1
    pinned_value = bio.get("value", default=0.5)
    pinned_label = bio.get("stratum")
    if pinned_label is not None:
        pinned_stratum = _parse_stratum(pinned_label, m)
    bio.finish()

    dependence = walker.get("dependence", kind=list)
    variance = walker.child("variance", default={})
    regime = variance.get("regime", default=sim.UNKNOWN_HOM, kind=str)
    known_variance = _number(variance, "sigma2", default=1.0)
    variance_range = variance.get("range", default=[0.5, 2.0], kind=list)
    data_replicates = variance.get("data_replicates", default=10_000, kind=int)
    variance.finish()

    est = walker.child("estimator", default={})
    est_kind = est.get("kind", default=sim.EST_MLE, kind=str)
    pi_min = _number(est, "pi_min")
    est.finish()

    structure = walker.get("structure", default=strata.ALL_DIFFERENT, kind=str)
    allocation = walker.get("allocation", default=strata.STRATIFIED, kind=str)
    walker.finish()
    return sim.ScenarioSpec(
        m=m, n_total=n_total, replicates=replicates, alpha=alpha,
        biomarker_mode=mode,
        probabilities=None if probabilities is None else tuple(probabilities),
        prob_range=tuple(prob_range),
        pinned_stratum=pinned_stratum, pinned_value=pinned_value,
        dependence=None if dependence is None else tuple(
            tuple(row) for row in dependence),
        variance_regime=regime, known_variance=known_variance,
        variance_range=tuple(variance_range), structure=structure,
        allocation=allocation, estimator=est_kind, pi_min=pi_min,
        data_replicates=data_replicates, seed=seed)


def _parse_effects(raw, m: int):
    effects = {}
    for label, arm_map in raw.items():
        mask = _parse_stratum(label, m)
        if not isinstance(arm_map, dict):
            raise ConfigurationError("effects must map stratum -> arm -> mean")
        for arm, value in arm_map.items():
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigurationError(
                    f"effect for ({label!r}, {arm!r}) must be a number")
            effects[(mask, str(arm))] = float(value)
    return effects


def _atomic_write(path: str, payload: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".pwer-")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _write_json(path, obj):
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _fmt(x) -> str:
    return f"{x:.6g}"


RATE_FLOOR = 1e-14


def _floor_rates(report: control.ErrorRateReport, m: int):
    swer = {}
    floored = []
    for mask, rate in sorted(report.swer.items()):
        label = strata.StrataIndex(mask, m).label()
        if rate < RATE_FLOOR:
            swer[label] = 0.0
            floored.append(label)
        else:
            swer[label] = rate
    out = {
        "pwer": 0.0 if report.pwer < RATE_FLOOR else report.pwer,
        "swer": swer,
        "max_swer": 0.0 if report.max_swer < RATE_FLOOR else report.max_swer,
        "mean_swer": 0.0 if report.mean_swer < RATE_FLOOR else report.mean_swer,
        "numerical_error": report.numerical_error,
    }
    if report.pwer < RATE_FLOOR:
        floored.insert(0, "pwer")
    if floored:
        out["floored_below_1e-14"] = floored
    return out


def _load_config(path):
    try:
        with open(path) as handle:
            return json.load(handle)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"config is not valid JSON (line {exc.lineno}, column {exc.colno}):"
            f" {exc.msg}") from None


def _design_inputs(walker, seed_override):
    m = walker.get("m", required=True, kind=int)
    alpha = _number(walker, "alpha", default=0.025)
    counts = _parse_counts(walker.child("counts", required=True), m)
    structure = walker.get("structure", default=strata.ALL_DIFFERENT, kind=str)
    regime = _parse_regime(walker.child("variance", required=True), m, counts)
    budget = _parse_budget(walker.child("budget"))
    if seed_override is not None:
        budget = dataclasses.replace(budget or Budget(), seed=seed_override)
    model = design.build_model(counts, regime, structure)
    return m, alpha, counts, model, budget


def _cmd_critical(args) -> int:
    walker = _ConfigWalker(_load_config(args.config))
    m, alpha, counts, model, budget = _design_inputs(walker, args.seed)
    est = walker.child("estimator", default={})
    est_kind = est.get("kind", default="mle", kind=str)
    if est_kind in ("mle", "marginal", "given"):
        pi_min = None
        prev_walker = est
    elif est_kind == "mle_min_prevalence":
        pi_min = _number(est, "pi_min")
        est.finish()
        prev_walker = None
    else:
        raise ConfigurationError(f"unknown estimator kind {est_kind!r}")
    if prev_walker is not None:
        prev_hat = _parse_prevalence_choice(prev_walker, counts, m)
    else:
        prev_hat = prevalence.mle(counts)
    walker.finish()

    if model.satterthwaite is not None:
        if est_kind != "mle":
            raise ConfigurationError(
                "the unknown-heterogeneous regime solves per-population "
                "boundaries from the multinomial estimate only")
        result = control.solve_per_population(prev_hat, model, alpha, budget)
    elif est_kind == "mle_min_prevalence":
        result = control.solve_min_adjusted(prev_hat, model, alpha, pi_min,
                                            budget)
    else:
        result = control.solve_equal(prev_hat, model, alpha, budget)

    out = {
        "alpha": alpha,
        "mode": result.mode,
        "iterations": result.iterations,
        "bracket": list(result.bracket),
        "components": result.components,
        "numerical_error": result.numerical_error,
    }
    if result.mode == control.MODE_PER_POPULATION:
        out["boundary"] = [float(c) for c in result.boundary]
        out["achieved"] = [float(a) for a in result.achieved]
        out["satterthwaite_df"] = [float(d) for d in model.satterthwaite]
    else:
        out["boundary"] = float(result.boundary)
        out["achieved"] = float(result.achieved)
        report = control.error_rates(result.boundary, prev_hat, model, budget)
        out["report"] = _floor_rates(report, m)
    _write_json(args.out, out)
    return EXIT_OK


def _cmd_rates(args) -> int:
    walker = _ConfigWalker(_load_config(args.config))
    m, alpha, counts, model, budget = _design_inputs(walker, args.seed)
    boundary = _number(walker, "boundary", required=True)
    prev = _parse_prevalence_choice(walker.child("prevalences", default={}),
                                    counts, m)
    walker.finish()
    report = control.error_rates(boundary, prev, model, budget)
    out = {"alpha": alpha, "boundary": boundary}
    out.update(_floor_rates(report, m))
    _write_json(args.out, out)
    return EXIT_OK


def _summary_rows(result: sim.ScenarioResult):
    spec = result.spec
    metrics = ["true_pwer", "max_swer", "mean_swer"]
    if result.records and isinstance(result.records[0].boundary, float):
        metrics.append("boundary")
    rows = []
    for metric in metrics:
        s = sim.summarize(result, metric)
        rows.append([metric, spec.m, spec.n_total, _fmt(s.mean), _fmt(s.sd),
                     _fmt(s.min), _fmt(s.q1), _fmt(s.median), _fmt(s.q3),
                     _fmt(s.max)])
    return rows


def _summary_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "m", "N", "mean", "sd", "min", "q1", "med",
                     "q3", "max"])
    writer.writerows(rows)
    return buf.getvalue()


_DUMP_FIELDS = ["replicate", "true_pwer", "max_swer", "mean_swer", "boundary",
                "had_empty_stratum", "counts_digest"]


def _dump_payload(records, fmt: str) -> str:
    def row(rec):
        boundary = rec.boundary
        if isinstance(boundary, tuple):
            boundary = ";".join(repr(b) for b in boundary)
        return {
            "replicate": rec.replicate,
            "true_pwer": rec.true_pwer,
            "max_swer": rec.max_swer,
            "mean_swer": rec.mean_swer,
            "boundary": boundary,
            "had_empty_stratum": rec.had_empty_stratum,
            "counts_digest": rec.counts_digest,
        }
    if fmt == "jsonl":
        return "".join(json.dumps(row(rec), sort_keys=True) + "\n"
                       for rec in records)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_DUMP_FIELDS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        data = row(rec)
        for key in ("true_pwer", "max_swer", "mean_swer", "boundary"):
            if isinstance(data[key], float):
                data[key] = repr(data[key])
        writer.writerow(data)
    return buf.getvalue()


def _cmd_simulate(args) -> int:
    walker = _ConfigWalker(_load_config(args.config))
    budget = _parse_budget(walker.child("budget"))
    spec = _parse_scenario(walker, args.seed, args.replicates)
    result = sim.run_scenario(spec, threads=args.threads, budget=budget)
    if not result.records:
        raise ConfigurationError(
            f"every replicate failed: {dict(result.failures)}")
    _atomic_write(args.out, _summary_csv(_summary_rows(result)))
    if args.dump:
        _atomic_write(args.dump, _dump_payload(result.records, args.format))
    if result.failures:
        print(f"excluded replicates: {dict(result.failures)}", file=sys.stderr)
    return EXIT_OK


def _cmd_lfc_check(args) -> int:
    walker = _ConfigWalker(_load_config(args.config))
    budget = _parse_budget(walker.child("budget"))
    scenario = _parse_scenario(walker.child("scenario", required=True),
                               args.seed, None)
    effects = _parse_effects(walker.get("effects", required=True, kind=dict),
                             scenario.m)
    replicates = args.replicates or walker.get("replicates", default=20_000,
                                               kind=int)
    walker.finish()
    shifted = dataclasses.replace(scenario, effects=effects)
    report = sim.lfc_check(shifted, scenario, replicates, budget)
    _write_json(args.out, {
        "pwer_shifted": report.pwer_shifted,
        "pwer_null": report.pwer_null,
        "difference": report.difference,
        "se": report.se,
        "violation": report.violation,
        "replicates": report.replicates,
    })
    return EXIT_OK


def _cmd_empty_stratum(args) -> int:
    walker = _ConfigWalker(_load_config(args.config))
    budget = _parse_budget(walker.child("budget"))
    scenario = _parse_scenario(walker.child("scenario", required=True),
                               args.seed, args.replicates)
    pi_min = _number(walker, "pi_min")
    walker.finish()
    study = sim.empty_stratum_study(scenario, pi_min, threads=args.threads,
                                    budget=budget)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "variant", "m", "N", "mean", "sd", "min", "q1",
                     "med", "q3", "max"])
    for metric, (plain, floored) in study.summaries().items():
        for variant, s in (("plain", plain), ("floored", floored)):
            writer.writerow([metric, variant, scenario.m, scenario.n_total,
                             _fmt(s.mean), _fmt(s.sd), _fmt(s.min), _fmt(s.q1),
                             _fmt(s.median), _fmt(s.q3), _fmt(s.max)])
    _atomic_write(args.out, buf.getvalue())
    print(f"qualifying replicates: {len(study.records)} of "
          f"{study.total_replicates}", file=sys.stderr)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pwer",
        description="Multiple-test design under population-wise error-rate "
                    "control for overlapping populations")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, threads=False, dump=False, replicates=False):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", required=True, help="output report path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        if replicates:
            p.add_argument("--replicates", type=int, default=None,
                           help="override the replicate count")
        if threads:
            p.add_argument("--threads", type=int, default=None,
                           help=f"worker processes (default: ${THREADS_ENV} "
                                "or 1)")
        if dump:
            p.add_argument("--dump", default=None,
                           help="also write one row per replicate here")
            p.add_argument("--format", choices=("csv", "jsonl"), default="csv",
                           help="per-replicate dump format")

    p = sub.add_parser("critical", help="solve a rejection boundary")
    common(p)
    p.set_defaults(func=_cmd_critical)

    p = sub.add_parser("rates", help="error rates at a given boundary")
    common(p)
    p.set_defaults(func=_cmd_rates)

    p = sub.add_parser("simulate", help="run a scenario and summarize it")
    common(p, threads=True, dump=True, replicates=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("lfc-check",
                       help="compare rates under nonpositive vs zero effects")
    common(p, replicates=True)
    p.set_defaults(func=_cmd_lfc_check)

    p = sub.add_parser("empty-stratum-study",
                       help="plain vs floored boundaries when strata go "
                            "unobserved")
    common(p, threads=True, replicates=True)
    p.set_defaults(func=_cmd_empty_stratum)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None) is None:
        env = os.environ.get(THREADS_ENV)
        if hasattr(args, "threads"):
            try:
                args.threads = int(env) if env else 1
            except ValueError:
                print(f"error: {THREADS_ENV} must be an integer",
                      file=sys.stderr)
                return EXIT_CONFIG
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PwerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
