"""Batch driver: run scenarios, sweep indicators, recover geometry, and run
the oracle batteries.

Every command is deterministic given its inputs and the seed; exit code 0
on success, 2 with a single machine-readable error line on failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import oracle as orc
from .errors import EcholabError
from .geometry import Sphere, first_reflector
from .pipeline import (
    read_indicator_csv,
    recover_scenario,
    run_pipeline,
    run_scenario,
    write_indicator_csv,
)
from .recovery import RecoveryResult, recover_beta, recover_result
from .scenario import Scenario
from .solver import WaveRecording


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EcholabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: FileNotFound: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="echolab")
    sub = p.add_subparsers(required=True)

    def add_tau_flags(sp):
        sp.add_argument("--tau-min", type=float, default=None)
        sp.add_argument("--tau-max", type=float, default=None)
        sp.add_argument("--tau-points", type=int, default=None)

    sp = sub.add_parser("run", help="forward run: recording archive or "
                                    "j-mode indicator table")
    sp.add_argument("scenario")
    sp.add_argument("--out-dir", default="out")
    sp.add_argument("--mode", choices=["solver", "j-mode"], default=None)
    sp.add_argument("--reference", choices=["matched", "analytic"],
                    default="matched")
    add_tau_flags(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("indicator", help="indicator table from a recording "
                                          "archive")
    sp.add_argument("archive")
    sp.add_argument("--out-dir", default="out")
    sp.add_argument("--reference", choices=["matched", "analytic"],
                    default="matched")
    add_tau_flags(sp)
    sp.set_defaults(func=cmd_indicator)

    sp = sub.add_parser("recover", help="recovery document from an indicator "
                                        "table")
    sp.add_argument("table")
    sp.add_argument("--scenario", default=None,
                    help="geometry side-data for the boundary coefficient")
    sp.add_argument("--out-dir", default="out")
    sp.set_defaults(func=cmd_recover)

    sp = sub.add_parser("oracle", help="run an oracle battery")
    sp.add_argument("battery", choices=["lemma31", "dualpath", "laplace",
                                        "meanvalue", "contraction"])
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--count", type=int, default=50)
    sp.add_argument("--out-dir", default="out")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("pipeline", help="end-to-end run")
    sp.add_argument("scenario")
    sp.add_argument("--out-dir", default="out")
    sp.add_argument("--mode", choices=["solver", "j-mode"], default=None)
    sp.add_argument("--reference", choices=["matched", "analytic"],
                    default="matched")
    add_tau_flags(sp)
    sp.set_defaults(func=cmd_pipeline)

    return p


def _load_scenario(args) -> Scenario:
    scen = Scenario.from_file(args.scenario)
    if getattr(args, "mode", None):
        scen.mode = args.mode
    if getattr(args, "tau_min", None) is not None:
        scen.tau_min = args.tau_min
    if getattr(args, "tau_max", None) is not None:
        scen.tau_max = args.tau_max
    if getattr(args, "tau_points", None) is not None:
        scen.tau_points = args.tau_points
    scen.validate()
    return scen


def cmd_run(args) -> int:
    scen = _load_scenario(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = run_scenario(scen, reference=args.reference)
    if scen.mode == "solver":
        out.recording.save(out_dir / "recording")
        if out.reference is not None:
            out.reference.save(out_dir / "reference")
        (out_dir / "scenario.txt").write_text(scen.to_text())
        print(f"archive written to {out_dir}")
    else:
        write_indicator_csv(out_dir / "indicator.csv", out)
        print(f"indicator table written to {out_dir / 'indicator.csv'}")
    return 0


def cmd_indicator(args) -> int:
    archive = Path(args.archive)
    scen = Scenario.from_file(archive / "scenario.txt")
    if getattr(args, "tau_min", None) is not None:
        scen.tau_min = args.tau_min
    if getattr(args, "tau_max", None) is not None:
        scen.tau_max = args.tau_max
    if getattr(args, "tau_points", None) is not None:
        scen.tau_points = args.tau_points
    rec = WaveRecording.load(archive / "recording")
    ref = None
    if args.reference == "matched" and (archive / "reference").exists():
        ref = WaveRecording.load(archive / "reference")

    from .indicator import indicator_series
    from .pipeline import PipelineOutput
    taus = scen.tau_grid()
    meta = {"scenario": scen.hash(), "name": scen.name}
    series = {"volume": indicator_series(rec, scen.source, taus, "volume",
                                         reference=ref, **meta)}
    if rec.sphere_series is not None:
        series["sphere"] = indicator_series(rec, scen.source, taus, "sphere",
                                            R=scen.R, reference=ref, **meta)
        series["sphere-reduced"] = indicator_series(
            rec, scen.source, taus, "sphere-reduced", R=scen.R,
            reference=ref, **meta)
    out = PipelineOutput(scenario=scen, primary=series["volume"],
                         series=series, recording=rec, reference=ref)
    recover_scenario(out)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_indicator_csv(out_dir / "indicator.csv", out)
    print(f"indicator table written to {out_dir / 'indicator.csv'}")
    return 0


def cmd_recover(args) -> int:
    series = read_indicator_csv(args.table)
    scen = Scenario.from_file(args.scenario) if args.scenario else None
    eta = scen.source.eta if scen else 0.5
    refl = scen.reflectors() if scen and scen.obstacle is not None else []
    result = recover_result(series, eta, n_reflectors=max(1, len(refl)))
    if len(refl) == 1 and scen is not None:
        try:
            result.beta_est = recover_beta(result, refl[0])
        except EcholabError:
            pass
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "recovery.txt").write_text(result.to_text())
    (out_dir / "recovery.csv").write_text(
        RecoveryResult.csv_header + "\n" + result.csv_row() + "\n")
    print(result.to_text(), end="")
    return 0


def cmd_oracle(args) -> int:
    rng = np.random.default_rng(args.seed)
    rows: list[tuple[str, str, float]] = []
    sphere_refl = first_reflector(Sphere(center=(0, 0, 0), radius=1.0),
                                  (3.0, 0.0, 0.0))[0]

    if args.battery == "lemma31":
        rep = orc.lemma31_check(sphere_refl.patch, sphere_refl.d)
        rows.extend(("unit-sphere", k, v) for _, k, v in rep.rows())
        for i in range(args.count):
            d = float(rng.uniform(1.2, 3.0))
            patch = orc.random_admissible_chart(rng, d=d)
            rep = orc.lemma31_check(patch, d)
            rows.extend((f"chart{i:03d}", k, v) for _, k, v in rep.rows())
    elif args.battery == "dualpath":
        for i in range(args.count):
            d = float(rng.uniform(1.2, 3.0))
            patch = orc.random_admissible_chart(rng, d=d)
            a = orc.G0_laplacian(patch, d)
            b = orc.G0_laplacian_closed(patch, d)
            rows.append((f"chart{i:03d}", "expansion-vs-closed",
                         abs(a - b) / max(abs(a), abs(b))))
    elif args.battery == "laplace":
        taus = [50.0, 100.0, 200.0, 400.0]
        charts = [("unit-sphere", sphere_refl.patch, sphere_refl.d, 0.0)]
        for i in range(max(1, args.count)):
            d = float(rng.uniform(1.5, 2.5))
            charts.append((f"chart{i:03d}",
                           orc.random_admissible_chart(rng, d=d), d,
                           float(rng.uniform(-1.0, 1.0))))
        for label, patch, d, beta in charts:
            root = np.sqrt(orc.det_gap(patch, d))
            i1 = orc.LaplaceIntegrand(patch=patch, d=d, kind="g0")
            c1, c2 = orc.two_term_fit(i1, taus)
            rows.append((label, "leading-vs-closed",
                         abs(c1 - np.pi / d**2) / (np.pi / d**2)))
            pred = np.pi / 4.0 * orc.G0_laplacian_closed(patch, d)
            rows.append((label, "second-vs-closed",
                         abs(c2 - pred) / abs(pred)))
            i2 = orc.LaplaceIntegrand(patch=patch, d=d, kind="g1", beta_q=beta)
            g1c1, _ = orc.two_term_fit(i2, taus)
            tgt = np.pi * (1.0 / d**3 - beta / d**2)
            rows.append((label, "g1-leading-vs-closed",
                         abs(g1c1 - tgt) / max(abs(tgt), 1e-3)))
    elif args.battery == "meanvalue":
        from .fields import mean_value_ball, mean_value_ball_factor, mean_value_sphere
        for tau in (1.0, 10.0, 100.0):
            r = min(0.5, 30.0 / tau)
            x = np.array([0.2, -0.1, 0.3])
            y = x + np.array([0.0, 0.0, r + 1.0])
            field = lambda z: np.exp(-tau * np.linalg.norm(z - y, axis=-1)) \
                / np.linalg.norm(z - y, axis=-1)
            exact = float(field(x[None, :])[0])
            rows.append((f"tau{tau:g}", "sphere-mean",
                         abs(mean_value_sphere(field, x, r, tau) - exact)
                         / abs(exact)))
            ball = mean_value_ball(field, x, r, tau)
            rows.append((f"tau{tau:g}", "ball-mean",
                         abs(ball - mean_value_ball_factor(r, tau) * exact)
                         / abs(ball)))
    elif args.battery == "contraction":
        for i in range(args.count):
            m = rng.normal(size=(2, 2))
            rows.append((f"B{i:03d}", "delta-contraction",
                         orc.contraction_identity_residual(0.5 * (m + m.T))))

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"oracle_{args.battery}.csv"
    with open(path, "w") as fh:
        fh.write("chart,identity,residual\n")
        for label, key, val in rows:
            fh.write(f"{label},{key},{val:.17g}\n")
    worst = max(v for _, _, v in rows)
    print(f"{args.battery}: {len(rows)} checks, max residual {worst:.3e}, "
          f"report {path}")
    return 0


def cmd_pipeline(args) -> int:
    scen = _load_scenario(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = run_pipeline(scen, reference=args.reference)
    if out.recording is not None:
        out.recording.save(out_dir / "recording")
        if out.reference is not None:
            out.reference.save(out_dir / "reference")
    (out_dir / "scenario.txt").write_text(scen.to_text())
    write_indicator_csv(out_dir / "indicator.csv", out)
    if out.result is not None:
        (out_dir / "recovery.txt").write_text(out.result.to_text())
        (out_dir / "recovery.csv").write_text(
            RecoveryResult.csv_header + "\n" + out.result.csv_row() + "\n")
        print(out.result.to_text(), end="")
    if out.sign_verdict is not None:
        print(f"gamma_sign_test = {out.sign_verdict}")
    print(f"outputs in {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
