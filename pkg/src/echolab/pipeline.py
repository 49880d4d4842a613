"""End-to-end orchestration: scenario -> recordings/series -> indicator
table -> recovery document.  Used by the CLI and the acceptance suite.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NoiseFloorReached
from .fields import BallSource
from .indicator import (
    IndicatorSeries,
    indicator_series,
    j_mode_series,
    reduce_sphere_log_factor,
)
from .recovery import RecoveryResult, gamma_sign_test, recover_beta, recover_result
from .scenario import Scenario
from .solver import RobinFields, WaveRecording, build_grid, run_forward

CSV_COLUMNS = ("tau", "I_volume", "I_sphere", "I_reduced", "J_mode", "M",
               "log_abs_primary", "sign_primary")


@dataclass(eq=False)
class PipelineOutput:
    scenario: Scenario
    primary: IndicatorSeries
    series: dict
    recording: WaveRecording | None = None
    reference: WaveRecording | None = None
    result: RecoveryResult | None = None
    sign_verdict: str | None = None


def run_scenario(scenario: Scenario, reference: str = "matched",
                 taus=None) -> PipelineOutput:
    """Produce every series the scenario supports.

    solver mode: forward run plus (by default) a matched empty-grid
    reference run on the same grid; volume/sphere/reduced series.
    j-mode: surface-quadrature series only (requires gamma == 0).
    """
    scenario.validate()
    taus = np.asarray(taus if taus is not None else scenario.tau_grid(), float)
    meta = {"scenario": scenario.hash(), "name": scenario.name}
    series: dict[str, IndicatorSeries] = {}

    if scenario.mode == "j-mode":
        primary = j_mode_series(scenario.obstacle, scenario.source,
                                scenario.robin_beta(), taus,
                                gamma=scenario.gamma, **meta)
        series["j-mode"] = primary
        return PipelineOutput(scenario=scenario, primary=primary,
                              series=series)

    grid = build_grid(scenario.obstacle, scenario.source, scenario.T,
                      scenario.grid_dx(), R=scenario.R, cfl=scenario.cfl)
    robin = RobinFields(scenario.gamma, scenario.robin_beta())
    rec = run_forward(scenario.source, grid, obstacle=scenario.obstacle,
                      robin=robin, R=scenario.R,
                      scenario_hash=scenario.hash())
    ref = None
    if reference == "matched" and scenario.obstacle is not None:
        ref = run_forward(scenario.source, grid, R=scenario.R,
                          scenario_hash=scenario.hash() + ":empty")
    primary = indicator_series(rec, scenario.source, taus, "volume",
                               reference=ref, **meta)
    series["volume"] = primary
    if scenario.R is not None:
        series["sphere"] = indicator_series(rec, scenario.source, taus,
                                            "sphere", R=scenario.R,
                                            reference=ref, **meta)
        series["sphere-reduced"] = indicator_series(
            rec, scenario.source, taus, "sphere-reduced", R=scenario.R,
            reference=ref, **meta)
    return PipelineOutput(scenario=scenario, primary=primary, series=series,
                          recording=rec, reference=ref)


def recover_scenario(out: PipelineOutput) -> PipelineOutput:
    """Attach recovery results (and the sign verdict when sphere data and a
    nonzero gamma are in play)."""
    scenario = out.scenario
    refl = scenario.reflectors()
    try:
        result = recover_result(out.primary, scenario.source.eta,
                                n_reflectors=max(1, len(refl)))
    except NoiseFloorReached:
        result = None
    if (result is not None and len(refl) == 1 and scenario.gamma == 0.0
            and not isinstance(scenario.beta, (list, tuple))):
        try:
            result.beta_est = recover_beta(result, refl[0])
        except Exception:
            pass
    if result is not None and refl:
        dist_true = min(r.d for r in refl) - scenario.source.eta
        result.truth["dist"] = dist_true
    out.result = result
    if "sphere" in out.series:
        out.sign_verdict = gamma_sign_test(out.series["sphere"])
    return out


def run_pipeline(scenario: Scenario, reference: str = "matched",
                 taus=None) -> PipelineOutput:
    return recover_scenario(run_scenario(scenario, reference=reference,
                                         taus=taus))


# ---------------------------------------------------------------------------
# CSV io
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and not np.isfinite(x) and np.isnan(x)):
        return "nan"
    return f"{x:.17g}"


def write_indicator_csv(path, out: PipelineOutput,
                        dist_ref: float | None = None,
                        timestamp: bool = True) -> None:
    """Indicator table with one row per tau.

    The two trailing columns carry the primary series in lossless log/sign
    form (plain values underflow at large tau); the header records the
    scenario hash, the mode and the dist used for the moment column.
    """
    primary = out.primary
    if dist_ref is None:
        if out.result is not None:
            dist_ref = out.result.dist_est
        else:
            dist_ref = out.scenario.dist() or 0.0
    taus = primary.tau
    cols: dict[str, np.ndarray] = {
        "tau": taus,
        "I_volume": _values_or_nan(out.series.get("volume"), taus),
        "I_sphere": _values_or_nan(out.series.get("sphere"), taus),
        "I_reduced": _values_or_nan(out.series.get("sphere-reduced"), taus),
        "J_mode": _values_or_nan(out.series.get("j-mode"), taus),
        "M": primary.moments(dist_ref),
        "log_abs_primary": primary.log_abs,
        "sign_primary": primary.sign,
    }
    lines = []
    stamp = f" generated={time.strftime('%Y-%m-%dT%H:%M:%S')}" if timestamp else ""
    lines.append(f"# scenario={out.scenario.hash()} mode={primary.mode} "
                 f"dist_ref={dist_ref:.17g}{stamp}")
    lines.append(",".join(CSV_COLUMNS))
    for i in range(len(taus)):
        lines.append(",".join(_fmt(float(cols[c][i])) for c in CSV_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n")


def _values_or_nan(series: IndicatorSeries | None, taus) -> np.ndarray:
    if series is None:
        return np.full(len(taus), np.nan)
    return series.values


def read_indicator_csv(path) -> IndicatorSeries:
    """Rebuild the primary series (lossless) from an indicator table."""
    text = Path(path).read_text().strip().splitlines()
    header = {}
    if text[0].startswith("#"):
        for tokens in text[0][1:].split():
            if "=" in tokens:
                k, v = tokens.split("=", 1)
                header[k] = v
        text = text[1:]
    names = text[0].split(",")
    rows = np.array([[float(x) for x in line.split(",")] for line in text[1:]])
    data = {name: rows[:, i] for i, name in enumerate(names)}
    return IndicatorSeries(tau=data["tau"], log_abs=data["log_abs_primary"],
                           sign=data["sign_primary"],
                           mode=header.get("mode", "volume"),
                           meta={"scenario": header.get("scenario", ""),
                                 "dist_ref": float(header.get("dist_ref", "nan"))})
