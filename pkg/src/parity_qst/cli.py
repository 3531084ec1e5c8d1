"""``parity-qst`` command line: spectrum | transfer | qst | check.

Exit codes: 0 success, 1 check failure, 2 configuration error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .config import (
    MANIFEST_NAME,
    ConfigError,
    RunManifest,
    build_mediator_params,
    build_model,
    load_config,
    parse_sweep,
    qst_config_of,
    scale_of,
    theta_of,
    transfer_config_of,
)
from .dynamics import AccuracyError, IntegrationError, dressed_jump_operators
from .effective import ResonanceError
from .io import write_csv, write_svg, write_trajectory
from .models import DickeParams, InvalidParametersError, QrsParams, build_dicke_mediator, build_parity, build_qrs
from .protocol import (
    SampleError,
    mediator_system,
    run_population_inversion,
    run_qst_fidelity,
    thermal_product_check,
)
from .spectral import (
    SpectrumRow,
    SweepError,
    SymmetryError,
    antisymmetric_mode_number,
    convergence_audit,
    qrs_quadrature,
    selection_rule_violations,
    spectrum_sweep,
    symmetry_labels,
)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
NUMERICAL_ERRORS = (SweepError, SymmetryError, AccuracyError, IntegrationError, ResonanceError, SampleError,
                    np.linalg.LinAlgError, FloatingPointError)


class Outputs:
    """Files produced by a run, written only after the computation succeeded."""

    def __init__(self):
        self.writers: list[tuple[str, Callable[[Path], object]]] = []

    def add(self, name: str, writer: Callable[[Path], object]) -> None:
        self.writers.append((name, writer))

    def names(self) -> list[str]:
        return [n for n, _ in self.writers]


# ---------------------------------------------------------------- subcommands


def _sweep_builder(cfg: dict, mediator: str, parameter: str):
    def build(value):
        c = copy.deepcopy(cfg)
        if parameter == "omega_cav":
            c["model"]["omega_cav"] = float(value)
        else:
            c["model"][parameter] = [float(value), float(value)]
        p = build_mediator_params(c, mediator)
        if isinstance(p, QrsParams):
            return build_qrs(p), build_parity(p.layout, "qrs"), p.identical_qubits
        return build_dicke_mediator(p), build_parity(p.mediator_layout, "dicke"), p.omega_q[0] == p.omega_q[1]

    return build


def _spectrum_series(rows: Sequence[SpectrumRow]):
    """Continuous tracks: k-th level inside each (parity, dark) sector."""
    tracks: dict[tuple, list[tuple[float, float]]] = {}
    by_param: dict[float, list[SpectrumRow]] = {}
    for r in rows:
        by_param.setdefault(r.param, []).append(r)
    for param, rs in by_param.items():
        count: dict[tuple, int] = {}
        for r in sorted(rs, key=lambda r: r.freq):
            sector = (r.parity, r.dark)
            idx = count.get(sector, 0)
            count[sector] = idx + 1
            tracks.setdefault(sector + (idx,), []).append((param, r.freq))
    colours = {(1, False): "#1f77b4", (-1, False): "#d62728"}
    series = []
    for key, pts in sorted(tracks.items()):
        xs, ys = zip(*pts)
        colour = "#2ca02c" if key[1] else colours[(key[0], False)]
        series.append((xs, ys, colour, None))
    return series


def cmd_spectrum(cfg: dict, args, out: Outputs) -> tuple[int, dict, list[str]]:
    sw = cfg["sweep"]
    grid = np.linspace(float(sw["start"]), float(sw["stop"]), int(sw["points"]))
    rows = spectrum_sweep(_sweep_builder(cfg, args.mediator, sw["parameter"]), grid, int(sw["levels"]), args.threads)
    dark = [r for r in rows if r.dark]
    offsets = sorted({round(r.freq - round(r.freq), 9) for r in dark})
    header = (sw["parameter"], "level_index", "freq", "parity", "dark")
    out.add("spectrum.csv", lambda p: write_csv(p, header, ((r.param, r.level_index, r.freq, r.parity, r.dark) for r in rows)))
    if args.plot:
        out.add("spectrum.svg", lambda p: write_svg(p, _spectrum_series(rows), "Mediator spectrum",
                                                   sw["parameter"], "energy / omega_cav"))
    report = {"points": len(grid), "levels": int(sw["levels"]), "rows": len(rows), "dark_rows": len(dark),
              "dark_fractional_offsets": offsets}
    lines = [f"rows={len(rows)} points={len(grid)} levels={sw['levels']}",
             f"dark_rows={len(dark)} dark_offsets_from_integer={offsets}"]
    return EXIT_OK, report, lines


def cmd_transfer(cfg: dict, args, out: Outputs) -> tuple[int, dict, list[str]]:
    model = build_model(cfg, args.mediator)
    res = run_population_inversion(transfer_config_of(cfg, model, args.effective_only))
    rep = res.report()
    scale = scale_of(cfg)
    ep = res.effective_params
    t_half = rep["half_period_omega_cav"]
    rep["half_period_ns"] = scale.to_ns(t_half) if t_half else None
    rep["splitting_closed_form"] = 2 * abs(ep.j_eff)
    rep["splitting_from_period"] = np.pi / t_half if t_half else None
    if res.full is not None:
        out.add("transfer_full.csv", lambda p: write_trajectory(p, res.full))
    out.add("transfer_effective.csv", lambda p: write_trajectory(p, res.effective))
    if args.plot:
        series = []
        for name, tr in (("full", res.full), ("effective", res.effective)):
            if tr is not None:
                series.append((tr.times, tr["P_up_down"], None, f"{name} P(ud)"))
                series.append((tr.times, tr["P_down_up"], None, f"{name} P(du)"))
        out.add("transfer.svg", lambda p: write_svg(p, series, "Population inversion", "t omega_cav", "population"))
    lines = [
        f"half_period_omega_cav = {t_half:.6g}" + (" (ab initio)" if res.half_period_full else " (effective)"),
        f"half_period_ns = {rep['half_period_ns']:.6g}",
        f"half_period_effective = {res.half_period_effective:.6g} (channels={ep.channels})",
        f"half_period_closed_form = {res.half_period_formula:.6g} (J_eff={ep.j_eff:.6g})",
        f"splitting: closed form 2|J_eff| = {rep['splitting_closed_form']:.6g}, "
        f"from period pi/T = {rep['splitting_from_period']:.6g}",
    ]
    if res.full is not None:
        rep["max_leakage_full"] = float(res.full["leakage"].max())
        lines.append(f"max_leakage_full = {rep['max_leakage_full']:.4g}")
    return EXIT_OK, rep, lines


def cmd_qst(cfg: dict, args, out: Outputs) -> tuple[int, dict, list[str]]:
    model = build_model(cfg, args.mediator)
    qc = qst_config_of(cfg, model)
    res = run_qst_fidelity(qc)
    rep = {
        "F_peak": res.peak,
        "t_peak": res.peak_time,
        "t_peak_ns": scale_of(cfg).to_ns(res.peak_time),
        "F_envelope_peak": res.peak_envelope,
        "t_envelope_peak": res.peak_envelope_time,
        "method": res.trajectory.meta["method"],
        "levels": res.levels,
        "samples": qc.bloch_samples,
        "scheme": qc.scheme,
        "seed": qc.seed,
        "theta": qc.theta,
        "exchange_effective": res.effective.exchange,
    }
    out.add("qst_average.csv", lambda p: write_trajectory(p, res.trajectory))
    k = int(np.argmin(np.abs(res.trajectory.times - res.peak_time)))
    out.add("qst_samples.csv", lambda p: write_csv(
        p, ("index", "theta_angle", "phi_angle", "fidelity_min", "fidelity_max", "fidelity_near_peak"),
        ((i, s.theta_angle, s.phi_angle, res.per_sample[i].min(), res.per_sample[i].max(), res.per_sample[i, k])
         for i, s in enumerate(res.samples))))
    if args.plot:
        tr = res.trajectory
        out.add("qst.svg", lambda p: write_svg(p, [
            (tr.times, tr["fidelity_envelope"], None, "phase-optimal envelope"),
            (tr.times, tr["fidelity_sphere_exact"], None, "sphere average"),
        ], "Bloch-averaged transfer fidelity", "t omega_cav", "fidelity"))
    lines = [f"F_peak={res.peak:.4f}", f"t_peak={res.peak_time:.6g} ({rep['t_peak_ns']:.4g} ns)",
             f"F_envelope_peak={res.peak_envelope:.4f}", f"method={rep['method']} levels={res.levels}"]
    return EXIT_OK, rep, lines


def _status(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


def cmd_check(cfg: dict, args, out: Outputs) -> tuple[int, dict, list[str]]:
    med = build_mediator_params(cfg, args.mediator)
    c = cfg["check"]
    audit = convergence_audit(med, int(c["audit_levels"]), int(c["audit_extra"]), float(c["audit_tol"]))
    model = build_model(cfg, args.mediator)
    _, es = mediator_system(model)
    levels = int(c["selection_levels"])
    sector = None
    if isinstance(med, DickeParams) and med.n_modes == 2:
        es, sector = symmetry_labels(es, antisymmetric_mode_number(es.layout), levels, decimals=2, residual_tol=1e-2)
    viol = selection_rule_violations(es, qrs_quadrature(es.layout), levels, sector=sector)
    sel_ok = not any(viol.values())
    nu = es.freqs - es.freqs[0]
    dark_abs = es.freqs[es.dark]
    dark_ok = bool(np.all(np.abs(dark_abs - np.round(dark_abs)) < 1e-8)) if dark_abs.size else True
    theta = theta_of(cfg)
    thermal = thermal_product_check(model, theta)
    qc = qst_config_of(cfg, model)
    rates = dressed_jump_operators(es, qc.rates.kappa, qc.rates.gamma,
                                   med, levels=min(len(es), int(np.searchsorted(nu, qc.qrs_cutoff, "right"))))
    ok = audit.converged and sel_ok and dark_ok
    rep = {
        "fock_convergence": {"status": _status(audit.converged), "max_shift": audit.max_shift,
                             "n_fock": audit.n_fock, "reference": audit.n_fock_reference, "tol": audit.tol},
        "selection_rules": {"status": _status(sel_ok), "levels": levels,
                            "violations": {k: [list(v) for v in vs] for k, vs in viol.items()},
                            "sector_labels": None if sector is None else sector.tolist()},
        "dark_states": {"status": _status(dark_ok), "count": int(es.dark.sum())},
        "thermal_product": {"fidelity": thermal.fidelity, "uhlmann": thermal.uhlmann,
                            "normalized_overlap": thermal.normalized_overlap, "theta": theta},
        "dressed_rates": {"count": len(rates),
                          "channels": [[j.j, j.k, j.rate] for j in rates]},
        "passed": ok,
    }
    lines = [
        f"fock_convergence: {_status(audit.converged)} (max shift {audit.max_shift:.3g}, tol {audit.tol:g})",
        f"selection_rules: {_status(sel_ok)}",
        f"dark_states: {_status(dark_ok)} ({int(es.dark.sum())} flagged)",
        f"thermal_product: {thermal.fidelity:.4f} (Uhlmann {thermal.uhlmann:.4f})",
        f"dressed_rates: {len(rates)} channels" + (" (none: kappa = gamma = 0)" if not rates else ""),
    ]
    text = "\n".join(lines) + "\n"
    out.add("check_report.txt", lambda p: p.write_text(text))
    return (EXIT_OK if ok else EXIT_CHECK), rep, lines


COMMANDS = {"spectrum": cmd_spectrum, "transfer": cmd_transfer, "qst": cmd_qst, "check": cmd_check}


# ---------------------------------------------------------------- plumbing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parity-qst", description="Parity-assisted state transfer simulations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="TOML experiment file")
        p.add_argument("--out", type=Path, help=f"output directory (default results/{name})")
        p.add_argument("--plot", action="store_true", help="also write SVG plots")
        p.add_argument("--samples", type=int, help="number of Bloch samples")
        p.add_argument("--threads", type=int, default=None, help="cap on concurrent workers")
        p.add_argument("--seed", type=int, help="seed for seeded-uniform sampling")
        p.add_argument("--mediator", choices=("rabi", "dicke"))
        p.add_argument("--force", action="store_true", help="overwrite a previous run in --out")
        if name == "spectrum":
            p.add_argument("--sweep", help="name:start:stop:points, e.g. g:0:1:200")
        if name == "transfer":
            p.add_argument("--effective-only", action="store_true", help="skip the ab initio run")
    return parser


def _overrides(args) -> dict:
    ov: dict[str, dict] = {}
    if args.samples is not None:
        ov.setdefault("qst", {})["samples"] = args.samples
    if args.seed is not None:
        ov.setdefault("qst", {})["seed"] = args.seed
    if args.mediator is not None:
        ov.setdefault("model", {})["mediator"] = args.mediator
    if getattr(args, "sweep", None):
        ov["sweep"] = parse_sweep(args.sweep)
    return ov


def _prepare_out(directory: Path, force: bool) -> None:
    manifest = directory / MANIFEST_NAME
    if manifest.exists():
        if not force:
            raise ConfigError(f"{directory} already holds a run; pass --force to overwrite")
        try:
            old = RunManifest.read(directory)
            stale = old.outputs
        except (ValueError, TypeError, KeyError):
            stale = []
        for name in stale + [MANIFEST_NAME]:
            target = directory / name
            if target.is_file() and target.parent == directory:
                target.unlink()


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, overrides=_overrides(args))
        args.mediator = cfg["model"]["mediator"]
        out_dir = args.out or Path("results") / args.command
        if out_dir.exists() and not out_dir.is_dir():
            raise ConfigError(f"{out_dir} is not a directory")
        _prepare_out(out_dir, args.force)
    except (ConfigError, InvalidParametersError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outputs = Outputs()
    try:
        with np.errstate(invalid="raise", divide="raise", over="raise"):
            code, report, lines = COMMANDS[args.command](cfg, args, outputs)
    except (ConfigError, InvalidParametersError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:  # parameter combinations rejected by the kernels
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir.mkdir(parents=True, exist_ok=True)
    report_name = f"{args.command}_report.json"
    outputs.add(report_name, lambda p: p.write_text(json.dumps(report, indent=2, sort_keys=True, default=float) + "\n"))
    for name, writer in outputs.writers:
        writer(out_dir / name)
    RunManifest(args.command, cfg, outputs=outputs.names(),
                extra={"argv": list(argv) if argv is not None else sys.argv[1:]}).write(out_dir)
    for line in lines:
        print(line)
    return code


if __name__ == "__main__":
    sys.exit(main())
