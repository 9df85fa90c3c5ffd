"""
``sim-recon`` command line: simulate, preprocess, estimate, reconstruct, eval-psf and
otf-from-beads.

Exit codes: 0 success, 1 usage or configuration error, 2 failure while processing (the failing
stage is named on stderr).
"""
import argparse
import json
import logging
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, config_from_dict, config_to_dict, load_config
from .estimate import EstimationError
from .imagecore import (FFT_CONVENTION, downsample2, frequency_radius, load_image, read_sidecar,
                        save_image, save_spectrum_preview)
from .otfmodel import (Otf, default_bead_window, estimate_otf_from_beads, psf_from_otf,
                       support_radius, synthesize_otf)
from .params import IlluminationParams
from .preprocess import preprocess_stack
from .psfmetrics import DegenerateObjectError, fwhm, resolution_report, solve_effective_psf
from .reconstruct import (ReconstructionError, estimate_parameters, reconstruct_sim,
                          reconstruct_tirf_sim)
from .simulate import RawSimStack, simulate_stack

logger = logging.getLogger("simrecon")

FRAME_PATTERN = re.compile(r"^theta([0-2])_phi([0-2])\.(tif|tiff|png)$", re.IGNORECASE)


class UsageError(Exception):
    """Bad command line or configuration (exit 1)."""


class StageError(Exception):
    """Failure while processing data (exit 2)."""

    def __init__(self, stage, message):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# file helpers
# ---------------------------------------------------------------------------

def frame_name(i, j, suffix=".tif"):
    return f"theta{i}_phi{j}{suffix}"


def find_stack_files(directory):
    """
    The nine frame files of a stack directory, ordered ``[orientation][phase]``.

    ``manifest.json`` with ``{"frames": [[...], [...], [...]]}`` (or a flat θ-major list of nine)
    overrides the ``theta{i}_phi{j}`` naming convention.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise UsageError(f"stack directory {directory} does not exist")
    manifest = directory / "manifest.json"
    if manifest.exists():
        names = json.loads(manifest.read_text(encoding="utf-8")).get("frames", [])
        flat = [n for row in names for n in (row if isinstance(row, list) else [row])]
        if len(flat) != 9:
            raise StageError("input", f"expected 9 frames in {manifest}, found {len(flat)}")
        files = [directory / n for n in flat]
        missing = [str(f) for f in files if not f.exists()]
        if missing:
            raise StageError("input", f"manifest lists missing frames: {', '.join(missing)}")
        return [files[3 * i:3 * i + 3] for i in range(3)]
    found = {}
    for f in sorted(directory.iterdir()):
        m = FRAME_PATTERN.match(f.name)
        if m:
            found.setdefault((int(m.group(1)), int(m.group(2))), f)
    if len(found) != 9:
        raise StageError("input", f"expected 9 frames named theta{{0..2}}_phi{{0..2}}.tif in "
                                  f"{directory}, found {len(found)}")
    return [[found[(i, j)] for j in range(3)] for i in range(3)]


def read_stack(directory, center_crop=0):
    files = find_stack_files(directory)
    crop = center_crop or None
    try:
        frames = [[load_image(f, crop, raw_range=True) for f in row] for row in files]
        return RawSimStack(np.array(frames), {"source": str(directory)})
    except ValueError as exc:
        raise StageError("input", str(exc)) from exc


def write_stack(stack, directory, extra_meta=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(3):
        for j in range(3):
            save_image(stack.frames[i, j], directory / frame_name(i, j), extra_meta)


def save_otf(otf, path):
    save_image(otf.spectrum.real, path, {"kind": "otf", "k_cutoff": otf.k_cutoff})


def load_otf(path, n=None, k_cutoff=None):
    """
    A DC-centered OTF image; the cutoff comes from ``k_cutoff``, the sidecar, or the support.

    :param int n: expected grid size
    """
    path = Path(path)
    if not path.exists():
        raise UsageError(f"OTF file {path} does not exist")
    spec = load_image(path, raw_range=True)
    if n is not None and spec.shape[0] != n:
        raise StageError("input", f"OTF is {spec.shape[0]} px but the frames are {n} px")
    c = spec.shape[0] // 2
    if spec[c, c] <= 0:
        raise StageError("input", f"{path} does not look like a DC-centered OTF")
    spec = spec / spec[c, c]
    kc = k_cutoff or read_sidecar(path).get("k_cutoff") or support_radius(spec)
    return Otf(spec, float(kc), frequency_radius(spec.shape[0]) <= kc)


def resolve_otf(args, cfg, n):
    if getattr(args, "otf", None):
        return load_otf(args.otf, n, getattr(args, "k_cutoff", None))
    kc = getattr(args, "k_cutoff", None) or cfg.otf.k_cutoff
    return synthesize_otf(n, kc)


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False), encoding="utf-8")


def read_params(path):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"parameter file {path} does not exist")
    d = json.loads(path.read_text(encoding="utf-8"))
    if "per_orientation" not in d and "params" in d:
        d = d["params"]
    try:
        params = IlluminationParams.from_json(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path} is not a parameter file: {exc}") from exc
    if len(params) != 3:
        raise UsageError(f"{path} must hold 3 orientations, found {len(params)}")
    return params


def parse_pairs(text, allowed):
    """``"a0=0.05,beta=1.2"`` -> {"a0": 0.05, "beta": 1.2}."""
    out = {}
    for item in filter(None, (t.strip() for t in text.split(","))):
        key, sep, val = item.partition("=")
        if not sep or key not in allowed:
            raise UsageError(f"expected {','.join(k + '=value' for k in allowed)}, got '{item}'")
        try:
            out[key] = float(val)
        except ValueError as exc:
            raise UsageError(f"'{val}' is not a number") from exc
    return out


def _load_cfg(args):
    if getattr(args, "config", None):
        if not Path(args.config).exists():
            raise UsageError(f"config file {args.config} does not exist")
        return load_config(args.config)
    return RunConfig()


def _override(cfg, section, **changes):
    """Apply command-line overrides through the validating config builder."""
    data = config_to_dict(cfg)
    data[section].update({k: v for k, v in changes.items() if v is not None})
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    cfg = _override(_load_cfg(args), "simulation", rng_seed=args.seed)
    obj = load_image(args.object, cfg.io.center_crop or None, cfg.io.raw_range)
    otf = resolve_otf(args, cfg, obj.shape[0])
    stack, truth = simulate_stack(obj, otf, cfg.simulation)
    out = Path(args.out)
    write_stack(stack, out)
    save_otf(otf, out / "otf.tif")
    write_json(out / "ground_truth.json", truth.to_json())
    write_json(out / "report.json", {"command": "simulate", "n": int(obj.shape[0]),
                                     "k_cutoff": otf.k_cutoff, "ground_truth": truth.to_json(),
                                     "config": config_to_dict(cfg)})
    print(f"wrote 9 frames, otf.tif and ground_truth.json to {out}")


def cmd_preprocess(args):
    cfg = _override(_load_cfg(args), "preprocess", bg_radius=args.bg_radius,
                    normalize=False if args.skip_normalize else None)
    stack = read_stack(args.input, cfg.io.center_crop)
    try:
        out_stack = preprocess_stack(stack, cfg.preprocess.bg_radius, cfg.preprocess.normalize)
    except ValueError as exc:
        raise StageError("preprocess", str(exc)) from exc
    out = Path(args.out)
    write_stack(out_stack, out)
    write_json(out / "report.json", {
        "command": "preprocess",
        "frame_mean": out_stack.frames.mean(axis=(2, 3)).tolist(),
        "frame_std": out_stack.frames.std(axis=(2, 3)).tolist(),
        "config": config_to_dict(cfg)})
    print(f"wrote preprocessed stack to {out}")


def cmd_estimate(args):
    cfg = _load_cfg(args)
    stack = read_stack(args.stack, cfg.io.center_crop)
    otf = resolve_otf(args, cfg, stack.n)
    algorithm = "tirf" if args.tirf else "standard"
    params = estimate_parameters(stack, otf, cfg.estimation, algorithm)
    write_json(args.out, {**params.to_json(), "algorithm": algorithm,
                          "config": config_to_dict(cfg)})
    for i, o in enumerate(params.orientations):
        print(f"orientation {i}: p = ({o.p.fx:.6f}, {o.p.fy:.6f}) cycles/px, "
              f"phases = {np.round(np.rad2deg(o.phases), 2).tolist()} deg, m = {o.m:.3f}")
    print(f"object prior: A = {params.A:.4g}, alpha = {params.alpha:.3f}")


def cmd_reconstruct(args):
    cfg = _load_cfg(args)
    merge = {"w": args.w}
    if args.notch:
        pairs = parse_pairs(args.notch, ("a0", "beta"))
        merge.update(notch_enabled=True, notch_a0=pairs.get("a0"), notch_beta=pairs.get("beta"))
    if args.apodize:
        merge.update(apodize_enabled=True,
                     apodize_gamma=parse_pairs(args.apodize, ("gamma",)).get("gamma"))
    cfg = _override(cfg, "merge", **merge)
    stack = read_stack(args.stack, cfg.io.center_crop)
    otf = resolve_otf(args, cfg, stack.n)
    params = read_params(args.params) if args.params else None
    run = reconstruct_tirf_sim if args.tirf else reconstruct_sim
    t0 = time.perf_counter()
    result = run(stack, otf, cfg.merge, cfg.estimation, params)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    save_image(result.image, out / "sim.tif", {"pixel_size": "0.5 input pixels"})
    save_image(result.widefield, out / "widefield_deconv.tif")
    save_spectrum_preview(result.spectrum, out / "spectrum_log.png")
    report = {**result.report, "command": "reconstruct", "k_cutoff": otf.k_cutoff,
              "fft_convention": FFT_CONVENTION, "seconds": round(elapsed, 3),
              "config": config_to_dict(cfg)}
    write_json(out / "report.json", report)
    print(f"wrote sim.tif ({result.image.shape[0]} px), widefield_deconv.tif, spectrum_log.png "
          f"and report.json to {out}")


def cmd_eval_psf(args):
    cfg = _override(_load_cfg(args), "psf", size=args.psf_size, repeats=args.repeats,
                    rows=args.rows, seed=args.seed)
    pc = cfg.psf
    obj = load_image(args.object, cfg.io.center_crop or None, cfg.io.raw_range)
    image = load_image(args.image, raw_range=True)
    rows = pc.rows or None
    out = Path(args.out)
    if args.widefield:
        otf = resolve_otf(args, cfg, obj.shape[0])
        wf = load_image(args.widefield, raw_range=True)
        report, wf_est, si_est = resolution_report(obj, wf, image, psf_from_otf(otf), pc.size,
                                                   rows, pc.repeats, pc.seed, pc.downsample)
        save_image(wf_est.psf, out.with_name("psf_widefield.tif"))
    else:
        if image.shape[0] == 2 * obj.shape[0]:
            image = downsample2(image, pc.downsample)
        si_est = solve_effective_psf(obj, image, pc.size, rows, pc.repeats, pc.seed)
        report = {"fwhm_px": {"image": si_est.fwhm},
                  "solver": {"psf_size": si_est.size, "n_rows": rows or 7 * pc.size ** 2,
                             "n_repeats": pc.repeats}}
        if args.otf or args.k_cutoff:
            otf = resolve_otf(args, cfg, obj.shape[0])
            f_sys = fwhm(psf_from_otf(otf))
            report["fwhm_px"]["system"] = f_sys
            report["ratio"] = {"image": si_est.fwhm / f_sys}
    save_image(si_est.psf, out.with_name("psf.tif"))
    write_json(out, {**report, "command": "eval-psf", "config": config_to_dict(cfg)})
    print(json.dumps(report["fwhm_px"]))


def cmd_otf_from_beads(args):
    cfg = _override(_load_cfg(args), "otf", bead_threshold=args.threshold,
                    bead_window=args.window, k_cutoff=args.k_cutoff)
    images = [load_image(f, raw_range=True) for f in args.files]
    window = cfg.otf.bead_window or None
    if window is None and args.k_cutoff:
        window = default_bead_window(args.k_cutoff)
    try:
        otf = estimate_otf_from_beads(images, cfg.otf.bead_threshold, window, args.k_cutoff)
    except ValueError as exc:
        raise StageError("otf-from-beads", str(exc)) from exc
    save_otf(otf, args.out)
    print(f"wrote {args.out} (k_cutoff {otf.k_cutoff:.4f} cycles/px)")


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="sim-recon", description="Structured illumination microscopy "
                "reconstruction with blind parameter estimation. Configuration defaults are "
                "listed in docs/parameters.md; every JSON config key can be omitted.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, otf=True):
        sp.add_argument("--config", help="JSON run configuration")
        if otf:
            sp.add_argument("--otf", help="DC-centered OTF image (default: synthesized from "
                                          "otf.k_cutoff)")
            sp.add_argument("--k-cutoff", type=float, help="OTF cutoff in cycles/pixel")

    s = sub.add_parser("simulate", help="synthesize a 9-frame SIM stack from an object image")
    s.add_argument("--object", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, help="override simulation.rng_seed")
    common(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("preprocess", help="background removal and frame normalization")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--bg-radius", type=float, help="opening disk radius in pixels (default 10)")
    s.add_argument("--skip-normalize", action="store_true")
    common(s, otf=False)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("estimate", help="estimate illumination parameters only")
    s.add_argument("--stack", required=True)
    s.add_argument("--out", required=True, help="params.json to write")
    s.add_argument("--tirf", action="store_true", help="estimate relative phases (TIRF-SIM)")
    common(s)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("reconstruct", help="full SIM reconstruction")
    s.add_argument("--stack", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--tirf", action="store_true", help="use the TIRF-SIM pipeline")
    s.add_argument("--params", help="params.json or report.json; skips estimation")
    s.add_argument("--w", type=float, help="Wiener constant in (0, 1] (default 0.4)")
    s.add_argument("--notch", help="enable the notch filter, e.g. a0=0.05,beta=1.2")
    s.add_argument("--apodize", help="enable apodization, e.g. gamma=1")
    common(s)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("eval-psf", help="effective PSF and FWHM of an image of a known object")
    s.add_argument("--object", required=True)
    s.add_argument("--image", required=True, help="reconstruction (N or 2N pixels)")
    s.add_argument("--widefield", help="deconvolved widefield image for the ratio report")
    s.add_argument("--out", required=True, help="psf_report.json to write")
    s.add_argument("--psf-size", type=int)
    s.add_argument("--repeats", type=int)
    s.add_argument("--rows", type=int)
    s.add_argument("--seed", type=int)
    common(s)
    s.set_defaults(func=cmd_eval_psf)

    s = sub.add_parser("otf-from-beads", help="estimate the OTF from bead images")
    s.add_argument("files", nargs="+")
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float)
    s.add_argument("--window", type=int)
    s.add_argument("--k-cutoff", type=float)
    s.add_argument("--config")
    s.set_defaults(func=cmd_otf_from_beads)
    return p


def run(argv=None):
    """Execute one command; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"sim-recon: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"sim-recon {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        print(f"sim-recon {args.command}: failed at {exc}", file=sys.stderr)
        return 2
    except ReconstructionError as exc:
        print(f"sim-recon {args.command}: failed at {exc}", file=sys.stderr)
        return 2
    except (EstimationError, DegenerateObjectError, ValueError) as exc:
        print(f"sim-recon {args.command}: failed: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
