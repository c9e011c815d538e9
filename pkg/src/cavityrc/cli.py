"""Command-line entry point: ``cavityrc simulate|benchmark|characterize|validate-config``.

Exit codes: 0 success, 1 an acceptance gate failed, 2 usage or validation
error, 3 numerical instability.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .benchmarks.corpus import CorpusError, ingest_vowel_corpus, synthetic_dataset
from .benchmarks.layout import Layout, cavity_layout, room_layout
from .benchmarks.memory import run_memory_probe
from .benchmarks.report import BenchmarkReport, gate
from .benchmarks.sinc import SincSettings, SincTask, run_sinc_sweep
from .benchmarks.vowel import MODES, VowelSettings, run_vowel_benchmark, vowel_spectra
from .config import ConfigError, RunConfig, load_config
from .encoding import encode_audio, encode_scalar, make_mask, pressure_source_scale, read_wav
from .io import ArtifactWriter
from .scatterers import driven_record, max_stable_gain, sine_drive, stroboscopic_analysis
from .wavefield import Absorbing, InstabilityError, ProbeSpec, Rigid, SourceSpec, run

EXIT_OK, EXIT_GATE, EXIT_USAGE, EXIT_UNSTABLE = 0, 1, 2, 3
log = logging.getLogger("cavityrc")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ layout


def build_layout(cfg: RunConfig, dx: float | None = None, rate_hz: float | None = None,
                 inclusions: int | None = None) -> Layout:
    cav, sc, enc = cfg.cavity, cfg.scatterers, cfg.encoding
    dx = dx or cav.dx
    rate = rate_hz or cav.sample_rate_hz
    if cav.geometry == "room":
        layout = room_layout(cav.width_m, cav.height_m, dx, rate, cav.damping, sc.count, sc.exponent_n,
                             sc.symmetry, seed=cfg.seeds.mask)
    else:
        boundary = Absorbing(cav.absorbing_layer_cells, cav.absorbing_max_sigma) if cav.boundary == "absorbing" else Rigid()
        scale = cav.dx / dx
        layout = cavity_layout(
            cav.width_m, cav.height_m, dx, rate, cav.c, cav.damping, boundary,
            n_sources=enc.n_sources if enc.sources is None else len(enc.sources),
            source_column=enc.source_column,
            n_scatterers=sc.count,
            exponent_n=sc.exponent_n,
            symmetry=sc.symmetry,
            coupling=sc.coupling,
            n_inclusions=cav.inclusions if inclusions is None else inclusions,
            inclusion_c=cav.inclusion_c,
            inclusion_cells=max(1, round(cav.inclusion_cells * scale)),
            seed=cfg.seeds.mask,
            scatterer_cells=[tuple(p) for p in sc.positions] if sc.positions is not None and dx == cav.dx else None,
            source_cells=[tuple(p) for p in enc.sources] if enc.sources is not None and dx == cav.dx else None,
        )
    if cfg.readout.probes is not None and dx == cav.dx:
        layout = replace(layout, probes=[ProbeSpec(tuple(p.position), p.label) for p in cfg.readout.probes])
    if sc.gain is not None:
        layout = layout.with_control(gain=sc.gain)
    if not sc.enabled:
        layout = layout.linear()
    return layout


def _mask(cfg: RunConfig, n_sources: int):
    carriers = cfg.encoding.carriers_hz
    return make_mask(n_sources, len(carriers) if carriers else 10, cfg.seeds.mask, carriers, cfg.encoding.amplitude)


# ---------------------------------------------------------------- simulate


def _drive_sources(cfg: RunConfig, layout: Layout, duration_s: float) -> list[SourceSpec]:
    d = cfg.encoding.drive
    cav = layout.cavity
    rate = cav.sample_rate_hz
    cells = layout.source_cells
    if d.kind == "none" or not cells:
        return []
    if d.kind == "sine":
        w = sine_drive(d.amplitude, d.frequency_hz, duration_s, rate)
        return [SourceSpec(c, w * pressure_source_scale(cav, c), rate_hz=rate) for c in cells]
    if d.kind == "pulse":
        from .benchmarks.memory import ricker

        w = ricker(d.width_s, rate) * d.amplitude
        return [SourceSpec(c, w * pressure_source_scale(cav, c), rate_hz=rate) for c in cells]
    if d.kind == "scalar":
        plan = encode_scalar(d.zeta, _mask(cfg, len(cells)), duration_s, rate)
        return plan.to_sources(cav, cells)
    audio, in_rate = read_wav(d.path)
    plan = encode_audio(audio, len(cells), cfg.encoding.delay_s, rate, d.amplitude, input_rate_hz=in_rate)
    return plan.to_sources(cav, cells)


def cmd_simulate(cfg: RunConfig, writer: ArtifactWriter) -> int:
    layout = build_layout(cfg)
    if cfg.scatterers.gain is None:
        layout = layout.with_control(gain=0.0)
    dur = cfg.task.simulate.duration_s
    sources = _drive_sources(cfg, layout, dur)
    t0 = time.perf_counter()
    recs = run(layout.cavity, sources, layout.probes, layout.scatterers, dur, cfl_number=cfg.cavity.cfl)
    writer.stages["simulate_s"] = round(time.perf_counter() - t0, 3)
    writer.records("records", recs, wav=cfg.task.simulate.wav)
    resolved = cfg.to_dict()
    resolved.pop("output_dir")
    writer.json("config.resolved.json", resolved)
    return EXIT_OK


# --------------------------------------------------------------- benchmark


def _bench_sinc(cfg: RunConfig, writer: ArtifactWriter) -> BenchmarkReport:
    from .plotting import plot_rmse_curve

    t = cfg.task.sinc
    layout = build_layout(cfg, t.dx, t.sample_rate_hz, t.inclusions)
    mask = _mask(cfg, len(layout.source_cells))
    task = SincTask(t.n_train, t.n_test, cfg.seeds.split)
    settings = SincSettings(t.duration_s, t.window_s, t.onset_s, cfg.readout.floor_db, cfg.readout.feature,
                            cfg.readout.ridge_lambda, cfg.scatterers.gain_fraction)
    t0 = time.perf_counter()
    sweep = run_sinc_sweep(layout, mask, task, t.exponents, settings, progress=log.info)
    rows = [("linear", sweep.linear)] + [(f"{p.exponent:g}", p) for p in sweep.points]
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["exponent", "bound", "gain", "train_rmse", "test_rmse", "unstable"])
    for name, p in rows:
        w.writerow([name, f"{p.bound:.10g}", f"{p.gain:.10g}", f"{p.train_rmse:.10g}", f"{p.test_rmse:.10g}", int(p.unstable)])
    writer.text("sinc_rmse_curve.csv", buf.getvalue())
    plot_rmse_curve(sweep, writer.path("sinc_rmse_curve.png"))
    metrics = {"linear_test_rmse": sweep.linear.test_rmse, "direct_linear_rmse": sweep.direct_linear_rmse,
               "points": [p.__dict__ for p in sweep.points]}
    gates = {}
    try:
        best = sweep.best()
        metrics.update(best_exponent=best.exponent, best_test_rmse=best.test_rmse)
        gates["best_rmse"] = gate(best.test_rmse, t.max_rmse, "<=", "best test RMSE")
        gates["vs_linear"] = gate(best.test_rmse, t.max_ratio * sweep.linear.test_rmse, "<=", "best vs linear baseline")
    except ValueError:
        gates["best_rmse"] = {"passed": False, "label": "every exponent unstable"}
    gates["interior_minimum"] = {"passed": sweep.has_interior_minimum(), "label": "RMSE-vs-n interior minimum"}
    return BenchmarkReport("sinc", cfg.hash, metrics, gates=gates, runtime_s=time.perf_counter() - t0,
                           artifacts={"curve_csv": "sinc_rmse_curve.csv", "curve_png": "sinc_rmse_curve.png"},
                           info={"layout": layout.name, "grid": list(layout.cavity.shape),
                                 "sample_rate_hz": layout.cavity.sample_rate_hz})


def load_dataset(cfg: RunConfig, split_seed: int):
    v = cfg.task.vowel
    try:
        return ingest_vowel_corpus(v.corpus, split_seed)
    except CorpusError as exc:
        if not v.synthetic_fallback:
            raise
        log.warning("%s -- using the synthetic formant corpus instead", exc)
        return synthetic_dataset(cfg.seeds.split, split_seed, n_male=v.n_male, n_female=v.n_female)


def _bench_vowel(cfg: RunConfig, writer: ArtifactWriter, modes) -> BenchmarkReport:
    from .plotting import plot_confusion, plot_spectra

    v = cfg.task.vowel
    ro = cfg.readout
    settings = VowelSettings(v.duration_s, cfg.encoding.delay_s, cfg.encoding.amplitude, ro.window_start_s,
                             ro.window_len, tuple(tuple(b) for b in ro.bands), ro.pca_k, v.svm_c, ro.svm_epochs,
                             v.gain_fraction)
    base = load_dataset(cfg, cfg.seeds.split)
    layout = build_layout(cfg) if any(m != "digital" for m in modes) else None
    seeds = [cfg.seeds.split + k for k in range(v.eval_seeds)]
    t0 = time.perf_counter()
    acc: dict[str, list[float]] = {}
    per_mode = {}
    artifacts = {}
    spectra_by_mode = {}
    for mode in modes:
        spectra = vowel_spectra(layout, base.samples, mode, settings, cfg.scatterers.gain, progress=log.info)
        spectra_by_mode[mode] = spectra
        acc[mode] = []
        for s in seeds:
            ds = base.with_split(s)
            rep, model, _ = run_vowel_benchmark(layout, ds, mode, settings, cfg.seeds.svm, cfg.hash, spectra)
            acc[mode].append(rep.accuracy)
            stem = f"vowel_{mode}_split{s}"
            rep.confusion_to_csv(writer.path(f"{stem}_confusion.csv"))
            artifacts[f"{stem}_confusion"] = f"{stem}_confusion.csv"
            if s == seeds[0]:
                plot_confusion(rep.confusion, rep.classes, writer.path(f"{stem}_confusion.png"), mode)
                model.save(writer.path(f"{stem}_model.bin"))
                per_mode[mode] = rep.to_dict()
            log.info("%s split %d: accuracy %.3f", mode, s, rep.accuracy)
    freqs = spectra_by_mode[modes[0]].selector.bin_hz
    labels = base.labels
    for mode, sp in spectra_by_mode.items():
        mean = {c: sp.magnitudes[labels == k].mean(axis=(0, 2)) for k, c in enumerate(base.classes)}
        plot_spectra(freqs, mean, writer.path(f"vowel_{mode}_spectra.png"), f"{mode}: class-mean spectra")
        artifacts[f"{mode}_spectra"] = f"vowel_{mode}_spectra.png"
    gates = {}
    params = max(r["metrics"]["parameters"] for r in per_mode.values())
    gates["parameters"] = gate(params, 200, "<=", "classifier parameters")
    if "nonlinear" in acc and "linear" in acc:
        margin = [100 * (a - b) for a, b in zip(acc["nonlinear"], acc["linear"])]
        gates["nonlinear_vs_linear"] = gate(min(margin), v.min_margin_linear, ">=", "min over seeds, points")
    if "nonlinear" in acc and "digital" in acc:
        margin = [100 * (a - b) for a, b in zip(acc["nonlinear"], acc["digital"])]
        gates["nonlinear_vs_digital"] = gate(min(margin), v.min_margin_digital, ">=", "min over seeds, points")
    metrics = {"accuracy": acc, "split_seeds": seeds, "parameters": params,
               "gain": {m: spectra_by_mode[m].gain for m in modes},
               "gain_backoffs": {m: spectra_by_mode[m].info.get("backoffs", 0) for m in modes}}
    return BenchmarkReport("vowel", cfg.hash, metrics, gates=gates, synthetic=base.synthetic,
                           runtime_s=time.perf_counter() - t0, artifacts=artifacts,
                           info={"origin": base.origin, "per_mode": per_mode,
                                 "class_counts": base.class_counts()})


def _bench_memory(cfg: RunConfig, writer: ArtifactWriter) -> BenchmarkReport:
    from .plotting import plot_impulse_responses

    m = cfg.task.memory
    layout = build_layout(cfg).with_control(gain=0.0) if cfg.scatterers.gain is None else build_layout(cfg)
    t0 = time.perf_counter()
    res = run_memory_probe(layout, m.pulse_width_s, m.duration_s, m.source_index)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "distance_m", "onset_delay_s", "decay_rate_per_s", "decay_time_s", "t60_s", "non_decaying"])
    for r in res.responses:
        w.writerow([r.label, f"{r.distance_m:.10g}", f"{r.onset_delay_s:.10g}", f"{r.decay_rate:.10g}",
                    f"{r.decay_time_s:.10g}", f"{r.t60_s:.10g}", int(r.non_decaying)])
    writer.text("memory_probes.csv", buf.getvalue())
    plot_impulse_responses(res, writer.path("memory_impulse_responses.png"))
    gates = {"distinct": gate(res.max_xcorr, m.max_xcorr, "<", "max normalized cross-correlation")}
    if res.theoretical_rate:
        err = max(abs(r.decay_rate - res.theoretical_rate) / res.theoretical_rate for r in res.responses)
        gates["decay_rate"] = gate(err, m.decay_tolerance, "<=", "max relative decay-rate error")
    metrics = {"theoretical_rate": res.theoretical_rate, "max_xcorr": res.max_xcorr,
               "decay_rates": [r.decay_rate for r in res.responses],
               "onset_delays_s": [r.onset_delay_s for r in res.responses]}
    return BenchmarkReport("memory", cfg.hash, metrics, gates=gates, runtime_s=time.perf_counter() - t0,
                           artifacts={"probes_csv": "memory_probes.csv", "plot": "memory_impulse_responses.png"})


def cmd_benchmark(cfg: RunConfig, writer: ArtifactWriter, task: str, mode: str | None) -> int:
    if task == "sinc":
        report = _bench_sinc(cfg, writer)
    elif task == "vowel":
        modes = list(cfg.task.vowel.modes) if mode in (None, "all") else [mode]
        if any(m not in MODES for m in modes):
            raise UsageError(f"unknown mode {mode!r}; expected one of {MODES + ('all',)}")
        report = _bench_vowel(cfg, writer, modes)
    elif task == "memory":
        report = _bench_memory(cfg, writer)
    else:
        raise UsageError(f"unknown task {task!r}; expected sinc, vowel or memory")
    writer.stages[f"{task}_s"] = round(report.runtime_s, 3)
    report.to_json(writer.path(f"{task}_report.json"))
    for name, g in report.gates.items():
        log.info("gate %-22s %s", name, "PASS" if g["passed"] else "FAIL")
    return EXIT_OK if report.passed else EXIT_GATE


# ------------------------------------------------------------ characterize


def cmd_characterize(cfg: RunConfig, writer: ArtifactWriter, scatterer: str, fundamental_hz: float) -> int:
    from .plotting import plot_phasors

    ch = cfg.task.characterize
    layout = build_layout(cfg)
    scs = layout.scatterers
    try:
        idx = int(scatterer)
        target = scs[idx]
    except (ValueError, IndexError):
        match = [s for s in scs if s.label == scatterer]
        if not match:
            raise UsageError(f"no scatterer {scatterer!r}; have indices 0..{len(scs) - 1} or labels "
                             f"{[s.label for s in scs]}") from None
        target = match[0]
    src = layout.source_cells[ch.source_index]
    t0 = time.perf_counter()
    # the bound is searched over the same run length the sweep uses, so 1.0 x bound is a tested point
    bound = max_stable_gain(target, layout.cavity, ch.drive_amplitude, fundamental_hz, src, ch.duration_s)
    rate = 8.0 * max(fundamental_hz, layout.cavity.sample_rate_hz / 8.0)
    sets, labels = [], []
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["gain_factor", "gain", "harmonic_index", "re", "im", "magnitude", "phase_rad"])
    second = []
    for f in ch.gain_factors:
        g = f * bound
        rec = driven_record(target, g, layout.cavity, src, ch.drive_amplitude, fundamental_hz, ch.duration_s, rate)
        ph = stroboscopic_analysis(rec, fundamental_hz, ch.harmonics)
        sets.append(ph)
        labels.append(f"{f:g} x bound")
        second.append(abs(ph.phasors[1]) if ch.harmonics > 1 else 0.0)
        for row in ph.rows():
            w.writerow([f"{f:g}", f"{g:.10g}", row[0]] + [f"{v:.12e}" for v in row[1:]])
    writer.text("phasors.csv", buf.getvalue())
    plot_phasors(sets, labels, writer.path("phasors.png"))
    active = [k for k, f in enumerate(ch.gain_factors) if f > 0]
    mono = bool(np.all(np.diff([second[k] for k in active]) >= -1e-12))
    gates = {"second_harmonic_monotone": {"passed": mono, "label": "2nd harmonic non-decreasing in gain"}}
    factors = [float(f) for f in ch.gain_factors]
    if ch.gate_factor in factors and ch.harmonics > 1:
        db = float(sets[factors.index(ch.gate_factor)].magnitudes_db[1])
        gates["second_harmonic"] = gate(db, ch.min_second_harmonic_db, ">=",
                                        f"2nd harmonic at {ch.gate_factor:g} x bound, dB re fundamental")
    if 0.0 in factors and ch.harmonics > 1:
        db = float(np.max(sets[factors.index(0.0)].magnitudes_db[1:]))
        gates["passive_harmonics"] = gate(db, ch.max_passive_harmonic_db, "<=",
                                          "largest harmonic at gain 0, dB re fundamental")
    metrics = {"bound": bound, "second_harmonic_db": [20 * math.log10(s) if s > 0 else None for s in second],
               "scatterer": target.label, "fundamental_hz": fundamental_hz}
    report = BenchmarkReport("characterize", cfg.hash, metrics, gates=gates, runtime_s=time.perf_counter() - t0,
                             artifacts={"phasors_csv": "phasors.csv", "phasors_png": "phasors.png"})
    writer.stages["characterize_s"] = round(report.runtime_s, 3)
    report.to_json(writer.path("characterize_report.json"))
    return EXIT_OK if report.passed else EXIT_GATE


# -------------------------------------------------------------------- main


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cavityrc", description="Wave-based reservoir computing in a simulated cavity.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors on stderr")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run the solver and write probe records")
    s.add_argument("config")
    s.add_argument("-o", "--output-dir", help="override output_dir from the config")
    b = sub.add_parser("benchmark", help="run the sinc, vowel or memory benchmark")
    b.add_argument("config")
    b.add_argument("task", help="sinc, vowel or memory")
    b.add_argument("--mode", default=None, help="vowel only: digital, linear, nonlinear or all")
    b.add_argument("-o", "--output-dir")
    c = sub.add_parser("characterize", help="harmonic phasors of one scatterer over a gain sweep")
    c.add_argument("config")
    c.add_argument("--scatterer", default="0", help="index or label (default 0)")
    c.add_argument("--fundamental-hz", type=float, default=500.0)
    c.add_argument("-o", "--output-dir")
    v = sub.add_parser("validate-config", help="check a config and print its hash")
    v.add_argument("config")
    return p


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "validate-config":
        print(f"ok {cfg.hash}")
        return EXIT_OK
    out = Path(args.output_dir or cfg.output_dir)
    try:
        writer = ArtifactWriter(out, cfg.hash, args.command)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    handler = logging.FileHandler(out / "run.log", mode="w")
    logging.getLogger().addHandler(handler)
    try:
        if args.command == "simulate":
            code = cmd_simulate(cfg, writer)
        elif args.command == "benchmark":
            code = cmd_benchmark(cfg, writer, args.task, args.mode)
        else:
            code = cmd_characterize(cfg, writer, args.scatterer, args.fundamental_hz)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CorpusError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InstabilityError as exc:
        print(f"instability: {exc}", file=sys.stderr)
        writer.finalize(status="unstable")
        return EXIT_UNSTABLE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    writer.finalize(status="ok" if code == EXIT_OK else "gates_failed")
    return code


if __name__ == "__main__":
    sys.exit(main())
