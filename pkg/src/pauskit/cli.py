"""Command-line interface: phantom generation, simulation, and the processing chain."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .calibrate import calibrate_agent, measure_tube_pair
from .compensate import compensate_volume, fit_volume
from .declutter import CompressionConfig, declutter_volume
from .depthfit import DepthSeries, fit_depth_decay
from .figures import emit_figure
from .model import Roi
from .phantoms import depth_target_doc, injected_agent_doc, point_target_doc, tube_pair_docs
from .pipeline import PipelineConfig, run_pipeline, verify_run
from .scene import load_scene, save_scene
from .simulate import PSFModel, synthesize_volume
from .spectra import SpectrumTable
from .unmix import agent_weighted_image, ncc_map, overlay, sigmoid_weight
from .volume_io import load_volume, save_volume

log = logging.getLogger("pauskit")


def _parse_roi(text: str) -> Roi:
    parts = [int(p) for p in text.split(",")]
    if len(parts) == 2:
        return Roi(parts[0], parts[1])
    if len(parts) == 4:
        return Roi(parts[0], parts[1], parts[2], parts[3])
    raise argparse.ArgumentTypeError("ROI must be ix0,iz0[,nx,nz]")


def cmd_phantom(args) -> int:
    builders = {
        "injected-agent": lambda: injected_agent_doc(),
        "injected-agent-clean": lambda: injected_agent_doc(noise_sigma=0.0, clutter=False,
                                           distractor=False, background=False),
        "point": lambda: point_target_doc(depth_mm=args.depth),
        "depth": lambda: depth_target_doc(depth_mm=args.depth),
    }
    if args.name in builders:
        save_scene(builders[args.name](), args.output)
        log.info("wrote %s", args.output)
        return 0
    if args.name == "tube-pair":
        agent_doc, ref_doc = tube_pair_docs()
        base, ext = os.path.splitext(args.output)
        save_scene(agent_doc, f"{base}-agent{ext}")
        save_scene(ref_doc, f"{base}-reference{ext}")
        log.info("wrote %s-agent%s and %s-reference%s", base, ext, base, ext)
        return 0
    log.error("unknown phantom %r", args.name)
    return 2


def cmd_simulate(args) -> int:
    scene = load_scene(args.scene)
    volume = synthesize_volume(scene, PSFModel(), threads=args.threads)
    save_volume(volume, args.output)
    log.info("wrote %s (%s)", args.output, "x".join(str(d) for d in volume.data.shape))
    return 0


def cmd_compensate(args) -> int:
    volume = load_volume(args.volume)
    fits = fit_volume(volume, args.noise_roi, min_depth_mm=args.min_depth,
                      threads=args.threads)
    if any(f is None for f in fits):
        missing = [lam for lam, f in zip(volume.wavelengths_nm, fits) if f is None]
        log.error("no signal to fit at %s nm", missing)
        return 1
    fibers_doc = volume.meta.get("fibers", {})
    energies = {float(k): v for k, v in fibers_doc.get("pulse_energy_mj", {}).items()} or None
    result = compensate_volume(volume, fits, energies=energies)
    save_volume(result.volume, args.output)
    with open(args.report, "w") as fh:
        json.dump({"fits": [f.to_doc() for f in fits]}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("wrote %s and %s", args.output, args.report)
    return 0


def cmd_declutter(args) -> int:
    volume = load_volume(args.volume)
    if args.declutter == "off":
        config = CompressionConfig(1.0, enabled=False)
    else:
        config = CompressionConfig(float(args.declutter.removeprefix("p=")), enabled=True)
    save_volume(declutter_volume(volume, config), args.output)
    log.info("wrote %s", args.output)
    return 0


def cmd_unmix(args) -> int:
    volume = load_volume(args.volume)
    reference = SpectrumTable.from_csv(args.reference)
    stack = volume.data[:, 0] if volume.n_fibers == 1 else volume.fiber_sum()
    ref_values = reference.sample(np.asarray(volume.wavelengths_nm))
    scores = ncc_map(np.abs(stack), ref_values)
    weights = sigmoid_weight(scores, args.slope, args.midpoint)
    compound = np.abs(stack.sum(axis=0))
    weighted = agent_weighted_image(compound, weights)
    os.makedirs(args.output_dir, exist_ok=True)
    emit_figure(scores, os.path.join(args.output_dir, "ncc_map.png"),
                floor_db=-6.0, ref=1.0)
    emit_figure(weighted, os.path.join(args.output_dir, "weighted.png"),
                floor_db=args.floor_db, colormap="hot")
    anatomy = np.zeros_like(weighted)
    if args.anatomy:
        anatomy = np.abs(load_volume(args.anatomy).fiber_sum()[0])
    from .figures import write_rgb_png

    write_rgb_png(overlay(weighted, anatomy, floor_db=args.floor_db),
                  os.path.join(args.output_dir, "overlay.png"))
    log.info("wrote NCC map, weighted image and overlay to %s", args.output_dir)
    return 0


def cmd_calibrate(args) -> int:
    vol_agent = load_volume(args.agent_volume)
    vol_ref = load_volume(args.reference_volume)
    reference = SpectrumTable.from_csv(args.reference_spectrum)
    pair = measure_tube_pair(vol_agent, vol_ref, args.roi, args.noise_roi, reference,
                             pool_noise_std=not args.per_wavelength_std)
    result = calibrate_agent(pair, order=args.poly_order)
    result.spectrum.to_csv(args.output)
    with open(args.poly_output, "w") as fh:
        json.dump(result.poly.to_doc(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("wrote %s and %s", args.output, args.poly_output)
    return 0


def cmd_depthfit(args) -> int:
    series = DepthSeries.from_csv(args.series, modality=args.modality,
                                  noise_floor_db=args.floor)
    fit = fit_depth_decay(series, floor_std_db=args.floor_std)
    with open(args.output, "w") as fh:
        json.dump(fit.to_doc(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 4))
        if series.std_db is not None:
            ax.errorbar(series.depths_mm, series.signal_db, yerr=series.std_db, fmt="ko")
        else:
            ax.plot(series.depths_mm, series.signal_db, "ko")
        grid = np.linspace(series.depths_mm[0], fit.max_depth_mm, 50)
        ax.plot(grid, fit.intercept_db + fit.slope_db_per_mm * grid, "r--", label="fit")
        ax.axhline(series.noise_floor_db, color="y", label="noise floor")
        ax.set_xlabel("depth (mm)")
        ax.set_ylabel(f"{series.modality} signal (dB)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)
        plt.close(fig)
    log.info("max imaging depth %.2f +/- %.2f mm", fit.max_depth_mm, fit.max_depth_std_mm)
    return 0


def cmd_run(args) -> int:
    config = PipelineConfig.from_file(args.config)
    if args.threads is not None:
        config.threads = args.threads
    report = run_pipeline(config)
    log.info("report at %s", report["report_path"])
    return 0


def cmd_report(args) -> int:
    summary = verify_run(args.run_dir)
    report = summary["report"]
    print(f"version:     {report.get('version')}")
    print(f"config hash: {report.get('config_hash')}")
    print(f"scene hash:  {report.get('scene_hash')}")
    for stage, artifacts in report.get("stages", {}).items():
        print(f"stage {stage}: {len(artifacts)} artifacts")
    if summary["mismatches"]:
        for stage, rel, why in summary["mismatches"]:
            print(f"MISMATCH [{why}] {stage}: {rel}")
        return 1
    print("all artifact checksums verified")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pauskit",
        description="Swept-illumination photoacoustic simulation and processing.")
    parser.add_argument("--version", action="version", version=f"pauskit {__version__}")
    parser.add_argument("--quiet", action="store_true", help="suppress log output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="write a bundled scene JSON")
    p.add_argument("name", choices=["injected-agent", "injected-agent-clean", "point", "tube-pair", "depth"])
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--depth", type=float, default=8.0)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", help="synthesize an IQ volume from a scene")
    p.add_argument("scene")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compensate", help="fit optical properties and divide out fluence")
    p.add_argument("volume")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--report", required=True, help="fit report JSON path")
    p.add_argument("--noise-roi", type=_parse_roi, default=Roi(2, 2, 6, 6))
    p.add_argument("--min-depth", type=float, default=2.0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_compensate)

    p = sub.add_parser("declutter", help="compressed-average the fiber axis")
    p.add_argument("volume")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--declutter", default="p=0.25", metavar="p=<float>|off")
    p.set_defaults(func=cmd_declutter)

    p = sub.add_parser("unmix", help="spectral-correlation weighting against a reference")
    p.add_argument("volume", help="fiber-reduced (or per-fiber) volume")
    p.add_argument("reference", help="reference spectrum CSV")
    p.add_argument("-o", "--output-dir", required=True)
    p.add_argument("--slope", type=float, default=300.0)
    p.add_argument("--midpoint", type=float, default=0.978)
    p.add_argument("--floor-db", type=float, default=-40.0)
    p.add_argument("--anatomy", help="optional anatomy volume for the overlay")
    p.set_defaults(func=cmd_unmix)

    p = sub.add_parser("calibrate", help="recover an agent spectrum from two tube volumes")
    p.add_argument("agent_volume")
    p.add_argument("reference_volume")
    p.add_argument("reference_spectrum", help="reference absorber CSV")
    p.add_argument("--roi", type=_parse_roi, required=True, help="signal box ix0,iz0[,nx,nz]")
    p.add_argument("--noise-roi", type=_parse_roi, required=True)
    p.add_argument("-o", "--output", required=True, help="spectrum CSV out")
    p.add_argument("--poly-output", required=True, help="polynomial JSON out")
    p.add_argument("--poly-order", type=int, default=9)
    p.add_argument("--per-wavelength-std", action="store_true")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("depthfit", help="dB-domain decay fit and maximum imaging depth")
    p.add_argument("series", help="CSV with depth_mm, signal_db[, std_db]")
    p.add_argument("-o", "--output", required=True, help="fit JSON out")
    p.add_argument("--floor", type=float, required=True, help="noise floor (dB)")
    p.add_argument("--floor-std", type=float, default=0.0)
    p.add_argument("--modality", default="PA")
    p.add_argument("--plot", help="optional plot PNG path")
    p.set_defaults(func=cmd_depthfit)

    p = sub.add_parser("run", help="full chain from a config JSON")
    p.add_argument("config")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="verify and summarize a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.ERROR if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except Exception as exc:  # CLI boundary: report and exit nonzero
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
