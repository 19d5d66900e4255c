"""Command-line front end: ``stereohb {unmix,synth,eval,bench,inspect}``.

Every command accepts ``--config FILE`` with ``key = value`` lines using the
long flag names (dashes or underscores).  Flags given on the command line
win over the file.  Exit codes: 0 success, 1 runtime or numeric failure,
2 usage or configuration error.
"""

import argparse
import hashlib
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import AlignmentError, ConfigError, FormatError, RangeError, StereoHbError
from .forward import SIGMA_SWEEP, NoiseSpec, PhantomSpec, Vessel, make_phantom, simulate
from .imgio import RawPlanarImage, read_raw, read_rgb_png, render_heatmap, write_heatmap_png
from .imgio import write_raw, write_rgb_png
from .inversion import DEFAULT_GAMMA, build_laplacian, build_tikhonov_operator, normal_matrix
from .metrics import DEFAULT_COD_THRESHOLD, ErrorReport, cod_mask, evaluate
from .pipeline import DEFAULT_THB_MAX, ConcentrationMap, Frame, process_frame, reason_counts
from .pipeline import resolve_threads, stack_stereo
from .spectra import (
    ChromophoreBasis,
    IlluminantSpectrum,
    default_basis,
    default_response,
    load_basis,
    load_illuminant,
    load_response,
    resample_to_grid,
    validate_alignment,
)
from .unmix import UnmixPolicy

MAP_CHANNELS = ("hbo2", "hb", "thb", "sato2", "reason", "cod")
PROVENANCE = "provenance.txt"


class UsageError(ConfigError):
    pass


# ---------------------------------------------------------------- config


def read_config(path):
    """Parse a ``key = value`` file into a dict; ``#`` starts a comment."""
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _write_keyvalue(path, items):
    with open(path, "w") as fh:
        for k, v in items.items():
            fh.write(f"{k} = {v}\n")


def _read_keyvalue(path):
    try:
        return read_config(path)
    except UsageError:
        return {}


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _provenance(command, args, extra=None, inputs=()):
    prov = {"tool": f"stereohb {__version__}", "command": command}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "config") or v is None:
            continue
        prov[k] = ",".join(map(str, v)) if isinstance(v, (list, tuple)) else str(v)
    for p in inputs:
        if p:
            prov[f"sha256:{Path(p).name}"] = _sha256(p)
    prov.update(extra or {})
    return prov


# ---------------------------------------------------------------- calibration


def _require_file(path, what):
    if path is not None and not Path(path).is_file():
        raise UsageError(f"{what} file not found: {path}")


def _onto(obj, grid, what):
    """Resample a basis or illuminant onto ``grid`` when it was tabulated on
    a different (covering) grid."""
    if obj.grid == grid:
        return obj
    try:
        values = resample_to_grid(np.asarray(getattr(obj, "matrix", getattr(obj, "values", None))),
                                  obj.grid, grid)
    except RangeError as exc:
        raise AlignmentError(f"{what}: {exc}") from exc
    if isinstance(obj, ChromophoreBasis):
        return ChromophoreBasis(values, grid)
    return IlluminantSpectrum(values, grid)


def load_bundle(args):
    _require_file(args.response, "response")
    _require_file(args.chromophores, "chromophore")
    _require_file(args.illuminant, "illuminant")
    if args.response:
        response = load_response(args.response, args.mode)
    else:
        response = default_response(mode=args.mode)
    grid = response.grid
    basis = load_basis(args.chromophores) if args.chromophores else default_basis(grid)
    illum = load_illuminant(args.illuminant) if args.illuminant else IlluminantSpectrum.flat(grid)
    basis = _onto(basis, grid, "chromophores")
    illum = _onto(illum, grid, "illuminant")
    return validate_alignment(response, basis, illum)


def build_operator(bundle, gamma):
    if gamma < 0:
        raise UsageError(f"--gamma must be >= 0, got {gamma}")
    return build_tikhonov_operator(bundle.response.white_balanced(bundle.illuminant), gamma=gamma)


# ---------------------------------------------------------------- map files


def map_to_raw(cmap):
    planes = [cmap.hbo2, cmap.hb, cmap.thb(), cmap.sato2(), cmap.reason.astype(float), cmap.cod]
    return RawPlanarImage(np.stack(planes))


def map_from_raw(image, provenance=None):
    if image.channels != len(MAP_CHANNELS):
        raise FormatError(
            f"concentration map needs {len(MAP_CHANNELS)} channels "
            f"({','.join(MAP_CHANNELS)}), file has {image.channels}"
        )
    d = image.data.astype(np.float64)
    return ConcentrationMap(d[0], d[1], d[4].astype(np.uint8), d[5], provenance or {})


def read_map(path):
    _require_file(path, "concentration map")
    prov = _read_keyvalue(Path(path).with_name(PROVENANCE))
    return map_from_raw(read_raw(path), prov)


def _write_maps(out, cmap, stem, cod_threshold=None, thb_max=DEFAULT_THB_MAX):
    """Raw map keeps every pixel; the heatmaps hide pixels failing the
    display thresholds."""
    write_raw(map_to_raw(cmap), out / f"{stem}.raw")
    hidden = ~cmap.valid | (cmap.thb() > thb_max)
    if cod_threshold is not None:
        hidden |= ~cod_mask(cmap.cod, cod_threshold)
    write_heatmap_png(render_heatmap(cmap.thb(), (0.0, thb_max), invalid=hidden), out / "thb.png")
    write_heatmap_png(render_heatmap(cmap.sato2(), (0.0, 100.0), invalid=hidden), out / "sato2.png")


# ---------------------------------------------------------------- commands


def cmd_unmix(args):
    bundle = load_bundle(args)
    _require_file(args.left, "left frame")
    if args.mode == "stereo":
        if args.right is None:
            raise UsageError("stereo mode needs --right")
        _require_file(args.right, "right frame")
    op = build_operator(bundle, args.gamma)
    left = read_rgb_png(args.left)
    frame = stack_stereo(left, read_rgb_png(args.right)) if args.mode == "stereo" else left
    cmap = process_frame(frame, bundle, op, UnmixPolicy(), threads=args.threads)
    out = _out_dir(args)
    prov = _provenance("unmix", args, {**cmap.provenance, **_counts(cmap)},
                       [args.left, args.right, args.response, args.chromophores, args.illuminant])
    _write_maps(out, cmap, "concentration", _cod_arg(args.cod_threshold), args.thb_max)
    _write_keyvalue(out / PROVENANCE, prov)
    print(f"unmixed {frame.width}x{frame.height} {args.mode} frame: "
          + ", ".join(f"{k}={v}" for k, v in reason_counts(cmap).items()))
    return 0


def _counts(cmap):
    return {f"n_{k}": v for k, v in reason_counts(cmap).items()}


def read_phantom(path):
    """PhantomSpec from a ``key = value`` file.

    Keys: width, height, pixel_pitch, background_thb, background_oxygenation
    and ``vessels`` as ``centre_mm:width_mm:oxygenation[:thb]`` entries
    separated by ``;``.  Missing keys keep their defaults.
    """
    cfg = read_config(path)
    kw = {}
    try:
        for key in ("width", "height"):
            if key in cfg:
                kw[key] = int(cfg.pop(key))
        for key in ("pixel_pitch", "background_thb", "background_oxygenation"):
            if key in cfg:
                kw[key] = float(cfg.pop(key))
        if "vessels" in cfg:
            vessels = []
            for item in filter(None, (v.strip() for v in cfg.pop("vessels").split(";"))):
                vessels.append(Vessel(*(float(f) for f in item.split(":"))))
            kw["vessels"] = tuple(vessels)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    if cfg:
        raise UsageError(f"{path}: unknown phantom key(s): {', '.join(sorted(cfg))}")
    return PhantomSpec(**kw)


def cmd_synth(args):
    bundle = load_bundle(args)
    sigmas = list(SIGMA_SWEEP) if args.sweep else [args.sigma]
    root = _out_dir(args)
    _require_file(args.phantom, "phantom")
    truth = make_phantom(read_phantom(args.phantom) if args.phantom else None)
    for sigma in sigmas:
        out = root / f"sigma_{sigma:g}" if args.sweep else root
        out.mkdir(parents=True, exist_ok=True)
        ds = simulate(truth, bundle, NoiseSpec(sigma, args.seed))
        write_raw(map_to_raw(ds.truth), out / "truth.raw")
        write_raw(ds.multispectral, out / "multispectral.raw")
        write_rgb_png(ds.left, out / "left.png", args.bitdepth)
        if ds.right is not None:
            write_rgb_png(ds.right, out / "right.png", args.bitdepth)
        prov = _provenance("synth", args, {"sigma": repr(sigma), "grid": bundle.grid.describe(),
                                           "cod_source": "multispectral"},
                           [args.response, args.chromophores, args.illuminant, args.phantom])
        _write_keyvalue(out / PROVENANCE, prov)
        print(f"wrote {out}")
    return 0


def cmd_eval(args):
    truth = read_map(args.truth)
    cod = _cod_arg(args.cod_threshold)
    reports = []
    for path in args.est:
        est = read_map(path)
        label = Path(path).parent.name or Path(path).stem
        reports.append(evaluate(est, truth, cod, args.thb_max, dataset=label))
    out = _out_dir(args)
    with open(out / "report.csv", "w") as fh:
        fh.write(ErrorReport.header() + "\n")
        for r in reports:
            fh.write(r.to_row() + "\n")
    summary = _summary(reports)
    (out / "summary.txt").write_text(summary)
    _write_keyvalue(out / PROVENANCE, _provenance("eval", args, inputs=[args.truth, *args.est]))
    sys.stdout.write(summary)
    return 0


def _cod_arg(value):
    return None if value is None or value < 0 else value


def _summary(reports):
    lines = []
    for r in reports:
        lines.append(f"{r.dataset or '-'} [{r.mode}] pooled MAE {r.mae_pooled:.4g} g/L, "
                     f"THb MAE {r.mae_thb:.4g} g/L, SatO2 MAE {r.mae_sato2:.4g} %, "
                     f"valid {r.n_valid}, masked {r.n_masked}, outliers {r.n_outliers}")
    by_mode = {r.mode: r for r in reports}
    if "stereo" in by_mode and "mono" in by_mode:
        s, m = by_mode["stereo"], by_mode["mono"]
        verdict = "stereo <= mono" if s.mae_pooled <= m.mae_pooled else "stereo > mono"
        lines.append(f"comparison: stereo {s.mae_pooled:.4g} vs mono {m.mae_pooled:.4g} g/L ({verdict})")
    return "\n".join(lines) + "\n"


def bench_frame(bundle, width, height, sigma=0.01, seed=0):
    """A stereo frame of the vessel phantom sampled onto ``width`` x ``height``."""
    row = make_phantom(PhantomSpec(height=1))
    cols = ((np.arange(width) + 0.5) * row.shape[1] / width).astype(int)
    truth = ConcentrationMap(np.tile(row.hbo2[0, cols], (height, 1)),
                             np.tile(row.hb[0, cols], (height, 1)))
    ds = simulate(truth, bundle, NoiseSpec(sigma, seed))
    return stack_stereo(ds.left, ds.right)


def cmd_bench(args):
    """Time mono and stereo unmixing at one thread and at the requested count."""
    bundle = load_bundle(argparse.Namespace(**{**vars(args), "mode": "stereo"}))
    white = bundle.response.white_balanced(bundle.illuminant)
    h, w = args.height, args.width
    if w < 1 or h < 1:
        raise UsageError("frame size must be at least 1x1")
    data = bench_frame(bundle, w, h, args.sigma, args.seed).data
    counts = sorted({1, resolve_threads(args.threads)})
    lines = [f"# cores available: {resolve_threads(0)}"]
    for mode in ("mono", "stereo"):
        resp = white if mode == "stereo" else white.camera("left")
        op = build_tikhonov_operator(resp, gamma=args.gamma)
        frame = Frame(data if mode == "stereo" else data[:3])
        ref = None
        for t in counts:
            best = np.inf
            for _ in range(args.repeat):
                t0 = time.perf_counter()
                cmap = process_frame(frame, bundle, op, threads=t)
                best = min(best, time.perf_counter() - t0)
            same = ref is None or all(
                np.array_equal(getattr(ref, k), getattr(cmap, k), equal_nan=True)
                for k in ("hbo2", "hb", "reason", "cod")
            )
            ref = cmap if ref is None else ref
            lines.append(f"{mode} {w}x{h} threads={t} latency_s={best:.6f} "
                         f"pixels_per_s={h * w / best:.4g} identical={'yes' if same else 'no'}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out_dir:
        out = _out_dir(args)
        (out / "bench.txt").write_text(text)
        _write_keyvalue(out / PROVENANCE, _provenance("bench", args))
    return 0


def cmd_inspect(args):
    _require_file(args.response, "response")
    _require_file(args.chromophores, "chromophore")
    _require_file(args.illuminant, "illuminant")
    warnings = []
    response = load_response(args.response) if args.response else default_response()
    if args.mode == "stereo" and response.n_channels != 6:
        warnings.append(f"mode mismatch: stereo mode requested but the response has "
                        f"{response.n_channels} channels")
        mode_resp = response
    elif args.mode == "mono" and response.n_channels == 6:
        mode_resp = response.camera("left")
    else:
        mode_resp = response
    print(f"response: {mode_resp.n_channels} channels, {mode_resp.n_bands} bands, "
          f"grid {response.grid.describe()}")
    print(f"channels: {', '.join(mode_resp.channel_names)}")
    zero = [n for n, row in zip(response.channel_names, response.matrix) if not np.any(row > 0)]
    if zero:
        warnings.append(f"all-zero response rows: {', '.join(zero)}")
    A = normal_matrix(mode_resp, build_laplacian(mode_resp.n_bands), args.gamma)
    ev = np.linalg.eigvalsh(A)
    if ev[0] <= ev[-1] * A.shape[0] * np.finfo(float).eps:
        warnings.append(f"singular normal matrix at gamma={args.gamma:g} "
                        f"({mode_resp.n_channels} channels x {mode_resp.n_bands} bands)")
        print("cond=inf")
    else:
        print(f"{mode_resp.n_channels} channels, {mode_resp.n_bands} bands, cond={ev[-1] / ev[0]:.6g}")
    for path, loader, what in ((args.chromophores, load_basis, "chromophores"),
                               (args.illuminant, load_illuminant, "illuminant")):
        if path:
            obj = loader(path)
            print(f"{what}: grid {obj.grid.describe()}")
            if obj.grid != response.grid:
                warnings.append(f"{what} grid {obj.grid.describe()} is not aligned with the response "
                                f"grid {response.grid.describe()}")
    for w in warnings:
        print(f"warning: {w}")
    return 0


def _out_dir(args):
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- parser


def _common(p, *, frames=False, noise=False, thresholds=False):
    p.add_argument("--config", help="key = value file; command-line flags override it")
    p.add_argument("--mode", choices=("mono", "stereo"), default="stereo")
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--response", help="camera response CSV (default: shipped model stereo rig)")
    p.add_argument("--chromophores", help="attenuation basis CSV with hbo2,hb columns")
    p.add_argument("--illuminant", help="illuminant CSV (default: flat)")
    p.add_argument("--out-dir")
    p.add_argument("--threads", type=int, default=1, help="worker threads; 0 uses every core")
    if frames:
        p.add_argument("--left")
        p.add_argument("--right")
    if noise:
        p.add_argument("--sigma", type=float, default=0.0)
        p.add_argument("--seed", type=int, default=0)
    if thresholds:
        p.add_argument("--cod-threshold", type=float, default=DEFAULT_COD_THRESHOLD,
                       help="strict CoD inclusion threshold; negative disables the mask")
        p.add_argument("--thb-max", type=float, default=DEFAULT_THB_MAX)


def build_parser():
    parser = argparse.ArgumentParser(prog="stereohb", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"stereohb {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("unmix", help="haemoglobin maps from RGB frames")
    _common(p, frames=True, thresholds=True)
    p.set_defaults(func=cmd_unmix)

    p = sub.add_parser("synth", help="render the vessel phantom to camera frames")
    _common(p, noise=True)
    p.add_argument("--sweep", action="store_true", help="one dataset per sigma in the standard sweep")
    p.add_argument("--phantom", help="phantom key = value file (default: three-vessel phantom)")
    p.add_argument("--bitdepth", type=int, choices=(8, 16), default=16)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="error statistics against ground truth")
    _common(p, thresholds=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--est", action="append", required=True, help="estimated map; repeatable")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="unmixing throughput")
    _common(p, noise=True)
    p.set_defaults(sigma=0.01)
    p.add_argument("--width", type=int, default=1920)
    p.add_argument("--height", type=int, default=1080)
    p.add_argument("--repeat", type=int, default=3)
    p.set_defaults(func=cmd_bench, threads=0)

    p = sub.add_parser("inspect", help="summarise calibration files")
    _common(p)
    p.set_defaults(func=cmd_inspect)
    return parser, sub


def parse_args(argv):
    parser, sub = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config and known.command in sub.choices:
        sp = sub.choices[known.command]
        cfg = read_config(known.config)
        dests = {a.dest: a for a in sp._actions}
        typed = {}
        for key, value in cfg.items():
            if key not in dests or key in ("help", "config", "func"):
                raise UsageError(f"{known.config}: unknown key {key!r} for {known.command}")
            action = dests[key]
            if isinstance(action, argparse._StoreTrueAction):
                typed[key] = value.lower() in ("1", "true", "yes", "on")
            elif isinstance(action, argparse._AppendAction):
                typed[key] = [v.strip() for v in value.split(",")]
            else:
                conv = action.type or str
                try:
                    typed[key] = conv(value)
                except ValueError:
                    raise UsageError(f"{known.config}: bad value for {key}: {value!r}") from None
                if action.choices and typed[key] not in action.choices:
                    raise UsageError(f"{known.config}: {key} must be one of {action.choices}")
            if action.required:
                action.required = False
        sp.set_defaults(**typed)
    return parser.parse_args(argv)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    except ConfigError as exc:
        print(f"stereohb: error: {exc}", file=sys.stderr)
        return 2
    except (StereoHbError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"stereohb: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"stereohb: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
