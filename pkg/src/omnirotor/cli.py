"""Command line front end: ``omnirotor simulate | compare | uif | verify``.

Exit codes: 0 success, 1 usage or schema error, 2 simulation failure,
3 verification failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from omnirotor.allocation import RankDeficiencyError
from omnirotor.configuration import ConfigId
from omnirotor.metrics import (
    NPCF_TOLERANCE,
    REFERENCE_NPCF,
    UNCERTAINTY_CASES,
    attitude_rms,
    cf,
    npcf,
    position_rms,
    uif_table,
)
from omnirotor.scenario_file import DEFAULT_SEED, ScenarioFile, SchemaError, load, parse, to_jsonable
from omnirotor.scenarios import ManeuverId, SimulationError, run_simulation
from omnirotor.verify import run_checks

log = logging.getLogger("omnirotor")

EXIT_OK, EXIT_USAGE, EXIT_SIM, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def derive_seed(base: int, index: int) -> int:
    """Per-cell seed, a pure function of the base seed and the cell index."""
    return int(np.random.SeedSequence([base, index]).generate_state(1)[0])


def _scenario(args) -> ScenarioFile:
    sf = load(args.config) if args.config else parse({})
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.duration is not None:
        if not args.duration > 0:
            raise UsageError("--duration must be positive")
        changes["duration"] = args.duration
    if changes:
        sf.spec = sf.spec.with_(**changes)
    if args.seed is None and not sf.seed_from_file:
        log.info("no seed given; using default %d", DEFAULT_SEED)
    return sf


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(to_jsonable(data), indent=2, sort_keys=False) + "\n")


def _workers(args) -> int:
    n = args.workers if args.workers is not None else (os.cpu_count() or 1)
    if n < 1:
        raise UsageError("--workers must be at least 1")
    return n


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    if not args.config:
        raise UsageError("simulate needs --config")
    sf = _scenario(args)
    spec = sf.spec
    lg = run_simulation(spec)
    out = _out_dir(args)
    stem = Path(args.config).stem
    csv_path = lg.to_csv(out / f"{stem}.csv")
    err = lg.tracking_error[-1]
    summary = {
        "configuration": spec.config.value,
        "controller": spec.controller,
        "maneuver": spec.maneuver.value,
        "seed": spec.seed,
        "duration_s": spec.duration,
        "uncertainty": spec.uncertainty is not None,
        "final_position_error_m": float(np.linalg.norm(err[0:3])),
        "final_attitude_error_deg": [math.degrees(a) for a in err[3:6]],
        "position_rms_final_third_m": position_rms(lg),
        "attitude_rms_final_third_deg": math.degrees(attitude_rms(lg)),
        "npcf": npcf(lg, spec.params),
        "saturation_samples": lg.saturation_counts(),
        "csv": str(csv_path),
    }
    _write_json(out / f"{stem}.summary.json", summary)
    print(f"{spec.config.value} / {spec.controller} / {spec.maneuver.value}  seed={spec.seed}")
    print(f"  position RMS (final third)  {summary['position_rms_final_third_m']:.3e} m")
    print(f"  attitude RMS (final third)  {summary['attitude_rms_final_third_deg']:.3e} deg")
    print(f"  final position error        {summary['final_position_error_m']:.3e} m")
    print(f"  NPCF                        {summary['npcf']:.4f}")
    print(f"  saturated samples           {summary['saturation_samples']}")
    print(f"  wrote {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare


def _cell_key(controller: str, e: float) -> str:
    return f"{controller}, e={e:g}"


def _compare_cell(job):
    spec, controller, e, config = job
    try:
        spec = spec.with_(config=config, controller=controller, params=spec.params.with_(e=e),
                          gains=None, uncertainty=None)
        lg = run_simulation(spec)
        return npcf(lg, spec.params)
    except RankDeficiencyError as exc:
        return f"rank-deficient: {exc}"
    except (SimulationError, ValueError) as exc:
        return f"failed: {exc}"


def compare_report(sf: ScenarioFile, workers: int = 1) -> dict:
    """NPCF per (controller, e, configuration) cell, pairwise CF and reference-band flags."""
    base = sf.spec
    configs = [ConfigId.parse(c).value for c in sf.compare_configs]
    cells = list(itertools.product(
        [c.lower() for c in sf.compare_controllers], [float(e) for e in sf.compare_e_values], configs
    ))
    jobs = [(base.with_(seed=derive_seed(base.seed, i)), *cell) for i, cell in enumerate(cells)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(_compare_cell, jobs))
    else:
        values = [_compare_cell(j) for j in jobs]

    table: dict = {}
    numeric: dict = {}
    for (controller, e, config), value in zip(cells, values):
        table.setdefault(_cell_key(controller, e), {})[config] = value
        if isinstance(value, float):
            numeric[(controller, e, config)] = value

    cf_table = {}
    for a, b in itertools.combinations(sorted(numeric), 2):
        name = f"{a[0]}/e={a[1]:g}/{a[2]} | {b[0]}/e={b[1]:g}/{b[2]}"
        cf_table[name] = cf(numeric[a], numeric[b])

    checks = {}
    if base.maneuver is ManeuverId.M3:
        checks = npcf_checks(numeric)
    return {
        "maneuver": base.maneuver.value,
        "duration_s": base.duration,
        "seed": base.seed,
        "npcf": table,
        "cf_percent": cf_table,
        "checks": checks,
    }


def npcf_checks(numeric: dict) -> dict:
    """Reference bands (+-0.05) and orderings for whichever cells are present."""
    checks = {}
    for (controller, e, config), value in numeric.items():
        target = REFERENCE_NPCF.get((controller, e), {}).get(config)
        if target is not None:
            checks[f"band {controller}/e={e:g}/{config}"] = {
                "value": value, "target": target, "pass": abs(value - target) <= NPCF_TOLERANCE,
            }
    for controller, e in sorted({(c, e) for c, e, _ in numeric}):
        cell = {cfg: v for (c, ee, cfg), v in numeric.items() if (c, ee) == (controller, e)}
        tag = f"{controller}/e={e:g}"
        if "tilt-hedral" in cell and "hedral" in cell:
            checks[f"order tilt-hedral < hedral ({tag})"] = {"pass": cell["tilt-hedral"] < cell["hedral"]}
        if "tilt" in cell and "hedral" in cell:
            gap = abs(cell["hedral"] - cell["tilt"])
            checks[f"|hedral - tilt| < 0.01 ({tag})"] = {"value": gap, "pass": gap < 0.01}
    for (controller, e, config), value in numeric.items():
        if controller == "pid" and ("smc", e, config) in numeric:
            checks[f"order pid > smc (e={e:g}/{config})"] = {"pass": value > numeric[("smc", e, config)]}
        if e > 0 and (controller, 0.0, config) in numeric:
            checks[f"order e={e:g} > e=0 ({controller}/{config})"] = {
                "pass": value > numeric[(controller, 0.0, config)]
            }
    return checks


def cmd_compare(args) -> int:
    sf = _scenario(args)
    if not args.config:
        sf.spec = sf.spec.with_(maneuver=ManeuverId.M3)
    report = compare_report(sf, _workers(args))
    out = _out_dir(args)
    _write_json(out / "compare.json", report)
    configs = sorted({c for row in report["npcf"].values() for c in row})
    print("NPCF".ljust(18) + "".join(c.rjust(14) for c in configs))
    for row, cells in report["npcf"].items():
        text = []
        for c in configs:
            v = cells.get(c)
            text.append(f"{v:14.4f}" if isinstance(v, float) else (v or "").split(":")[0].rjust(14))
        print(row.ljust(18) + "".join(text))
    for name, check in report["checks"].items():
        print(f"  [{'pass' if check['pass'] else 'FAIL'}] {name}")
    print(f"wrote {out / 'compare.json'}")
    numeric = [v for row in report["npcf"].values() for v in row.values() if isinstance(v, float)]
    return EXIT_OK if numeric or not report["npcf"] else EXIT_SIM


# ---------------------------------------------------------------------------
# uif


def uif_report(sf: ScenarioFile, names, workers: int = 1, tolerance_scale: float = 1.0) -> dict:
    base = sf.spec.with_(uncertainty=None)
    if base.controller != "smc":
        raise UsageError("uif needs an SMC scenario (controller.kind = \"smc\")")
    thresholds = sf.thresholds.scaled(tolerance_scale) if tolerance_scale != 1.0 else sf.thresholds
    rows = {}
    if names:
        results = uif_table(base, names, thresholds, workers)
        for name, res in results.items():
            _, reference, accept = UNCERTAINTY_CASES[name.strip().lower().replace("_", "-")]
            row = {
                "uif": res.value,
                "uncompensable": res.uncompensable,
                "multiplier": res.multiplier_uncertain,
                "max_k": res.k_uncertain,
                "reference_band": list(reference),
                "acceptance_band": list(accept) if accept else None,
                "pass": None,
            }
            if accept is not None:
                row["pass"] = bool(accept[0] <= res.value <= accept[1])
            rows[name] = row
    return {
        "configuration": base.config.value,
        "maneuver": base.maneuver.value,
        "duration_s": base.duration,
        "seed": base.seed,
        "thresholds": vars(thresholds),
        "uif": rows,
    }


def cmd_uif(args) -> int:
    sf = _scenario(args)
    names = list(args.uncertainty or sf.uif_uncertainties)
    for name in names:
        if name.strip().lower().replace("_", "-") not in UNCERTAINTY_CASES:
            raise UsageError(f"unknown uncertainty {name!r}; expected one of " + ", ".join(UNCERTAINTY_CASES))
    if not args.config:
        sf.spec = sf.spec.with_(maneuver=ManeuverId.M3)
    report = uif_report(sf, names, _workers(args), args.tolerance_scale)
    out = _out_dir(args)
    _write_json(out / "uif.json", report)
    for name, row in report["uif"].items():
        mark = {None: "    ", True: "pass", False: "FAIL"}[row["pass"]]
        extra = " (uncompensable within bracket)" if row["uncompensable"] else ""
        lo, hi = row["reference_band"]
        band = f"{lo:g}" if lo == hi else f"{lo:g} to {hi:g}"
        print(f"  [{mark}] {name:22s} UIF {row['uif']:7.2f}   reference {band}{extra}")
    print(f"wrote {out / 'uif.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    results = run_checks(args.tolerance_scale)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"  [{status}] {r.name.ljust(width)}  error {r.error:.3e}  tol {r.tolerance:.1e}  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="scenario TOML file")
    common.add_argument("--out", default="results", help="output directory (default: results)")
    common.add_argument("--seed", type=int, help=f"base seed (default {DEFAULT_SEED})")
    common.add_argument("--duration", type=float, help="run length in seconds")
    common.add_argument("--workers", type=int, help="process pool size (default: CPU count)")
    common.add_argument("--tolerance-scale", type=float, default=1.0,
                        help="multiply verification tolerances / UIF floors")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="omnirotor", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    sub.add_parser("simulate", parents=[common], help="run one scenario, write CSV and summary")
    sub.add_parser("compare", parents=[common], help="NPCF matrix and CF table")
    p_uif = sub.add_parser("uif", parents=[common], help="uncertainty impact factors")
    p_uif.add_argument("--uncertainty", action="append",
                       help="uncertainty case (repeatable): " + ", ".join(UNCERTAINTY_CASES))
    sub.add_parser("verify", parents=[common], help="numerical invariant suite")
    return parser


COMMANDS = {"simulate": cmd_simulate, "compare": cmd_compare, "uif": cmd_uif, "verify": cmd_verify}


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if not args.tolerance_scale > 0:
        print("--tolerance-scale must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (UsageError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RankDeficiencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIM
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
