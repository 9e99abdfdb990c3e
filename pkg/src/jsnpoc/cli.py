"""Command-line front end: simulate, detect, quantify, evaluate.

Every command writes under ``--out`` (files are replaced atomically) and
records the effective settings in ``run_config.txt`` there. Settings come
from built-in defaults, then ``--config FILE``, then explicit flags.

Exit codes: 0 success, 1 hard failure, 2 partial result (some pairs
mismatch-flagged or failed).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .detection import DetectConfig, DetectionError, detect_joints
from .metrics import SeriesResult, mean_error, pair_table, pearson, rmsd
from .phantom import COARSE_SWEEP, FINE_SWEEP, NOISE_PRESETS, PhantomSpec, load_manifest, render_sweep, truth_matrix
from .pipoc import MeasureConfig, jsn_series, quantify_jsn
from .raster import ImageReadError, MissingSpacingError, _atomic_write, extract_window, load_image, save_pgm
from .segmentation import dump_debug, segment
from .spectral import PocConfig

logger = logging.getLogger("jsnpoc")

EXIT_OK, EXIT_FAIL, EXIT_PARTIAL = 0, 1, 2

CSV_COLUMNS = ["baseline_id", "followup_id", "jsn_px", "jsn_mm", "beta_upper", "beta_lower",
               "peak_upper", "peak_lower", "calib_dx", "calib_dy", "mismatch"]


class CliError(Exception):
    """Reported on stderr with exit code 1."""


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class RunConfig:
    window_size: int = 128
    spacing: float | None = None
    i_min: int | None = None
    i_max: int | None = None
    median_radius: int = 1
    weighting: bool = True
    weight_sigma: float = 0.5
    peak_threshold: float = 0.1
    mask_margin: int = 0
    seed: int = 0
    out: str = "out"

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {_format_value(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"config line {n}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in known:
                raise CliError(f"config line {n}: unknown key {key!r}")
            values[key] = _parse_value(known[key].default, key, val)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_text(Path(path).read_text())
        except OSError as exc:
            raise CliError(f"cannot read config {path}: {exc}") from exc

    def measure_config(self) -> MeasureConfig:
        poc = PocConfig(weighting=self.weighting, weight_sigma=self.weight_sigma,
                        peak_threshold=self.peak_threshold)
        return MeasureConfig(poc=poc, median_radius=self.median_radius, i_min=self.i_min,
                             i_max=self.i_max, mask_margin=self.mask_margin)


_OPTIONAL_TYPES = {"spacing": float, "i_min": int, "i_max": int}


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(default, key, text: str):
    if text.lower() == "none":
        if key in _OPTIONAL_TYPES:
            return None
        raise CliError(f"{key} may not be none")
    kind = _OPTIONAL_TYPES.get(key, type(default))
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(text)
            return low in ("true", "1", "yes", "on")
        return kind(text)
    except ValueError as exc:
        raise CliError(f"bad value for {key}: {text!r}") from exc


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            overrides[f.name] = v
    if getattr(args, "no_weighting", False):
        overrides["weighting"] = False
    return replace(cfg, **overrides)


def _write_text(path: Path, text: str) -> Path:
    _atomic_write(path, text.encode("utf-8"))
    return path


def _write_json(path: Path, data) -> Path:
    return _write_text(path, json.dumps(data, indent=2, sort_keys=False, allow_nan=False) + "\n")


def _num(v):
    """Floats for CSV/JSON: shortest repr, non-finite as null/empty."""
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


# ---------------------------------------------------------------------------
# commands

PRESETS = {"sweep-coarse": COARSE_SWEEP, "sweep-fine": FINE_SWEEP}


def cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg.out)
    noise = args.noise
    if noise in NOISE_PRESETS:
        sigma = NOISE_PRESETS[noise]
    else:
        try:
            sigma = float(noise)
        except ValueError:
            raise CliError(f"noise must be one of {sorted(NOISE_PRESETS)} or a number") from None
    spec = PhantomSpec(spacing=cfg.spacing or 0.15, canvas=cfg.window_size,
                       jsw_sequence=tuple(PRESETS[args.preset]), noise_sigma=sigma, seed=cfg.seed)
    manifest, _ = render_sweep(spec, out)
    _write_text(out / "run_config.txt", replace(cfg, spacing=spec.spacing).to_text())
    print(out / "manifest.json")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg.out)
    img = load_image(args.image, cfg.spacing) if cfg.spacing else _load_with_default_spacing(args.image)
    dcfg = DetectConfig(window_size=cfg.window_size)
    try:
        det = detect_joints(img, dcfg)
    except DetectionError as exc:
        raise CliError(str(exc)) from exc
    payload = [p.to_dict() for p in det.proposals]
    result = {
        "image": Path(args.image).name,
        "fingers": [{"finger": f.label, "thumb": f.is_thumb, "tip": list(f.tip), "point": list(f.point),
                     "angle_deg": math.degrees(f.angle)} for f in det.fingers],
        "proposals": payload,
    }
    path = _write_json(out / "detections.json", result)
    if args.dump_debug:
        dbg = out / "debug"
        save_pgm(dbg / "mask.pgm", det.mask.astype(np.float64))
        _write_text(dbg / "outline.csv", "x,y\n" + "".join(f"{x!r},{y!r}\n" for x, y in det.polygon))
        mcfg = cfg.measure_config()
        for k, p in enumerate(det.proposals):
            win = extract_window(img, p.window)
            lo, hi = mcfg.gully_widths(img.spacing)
            save_pgm(dbg / f"window_{k:02d}.pgm", win)
            dump_debug(dbg, win, lo, hi, stem=f"window_{k:02d}")
    _write_text(out / "run_config.txt", cfg.to_text())
    print(path)
    return EXIT_OK


def _load_with_default_spacing(path):
    try:
        return load_image(path)
    except MissingSpacingError:
        logger.info("%s: no spacing metadata, using 0.175 mm/px", path)
        return load_image(path, 0.175)


def _collect_inputs(paths) -> list[Path]:
    files: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in (".pgm", ".png")))
        else:
            files.append(p)
    if len(files) < 2:
        raise CliError("quantify needs at least two images")
    return files


def cmd_quantify(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg.out)
    files = _collect_inputs(args.inputs)
    images = [load_image(f, cfg.spacing) for f in files]
    spacing = cfg.spacing or images[0].spacing
    if len({im.shape for im in images}) != 1:
        raise CliError("all windows must share one size")
    mcfg = cfg.measure_config()
    ids = [f.stem for f in files]
    rows = []
    partial = False
    if args.masks == "from-baseline":
        series = jsn_series(images, mcfg, spacing)
        results = {(f, g): series.pairs[(f, g)] for f in range(len(images)) for g in range(f + 1, len(images))}
    else:
        results = {}
        for f in range(len(images)):
            masks = segment(images[f].samples, *mcfg.gully_widths(spacing))
            for g in range(f + 1, len(images)):
                try:
                    results[(f, g)] = quantify_jsn(images[f], images[g], masks, mcfg, spacing)
                except (ValueError, RuntimeError) as exc:
                    logger.warning("pair (%s, %s) failed: %s", ids[f], ids[g], exc)
                    results[(f, g)] = exc
    failures = 0
    for (f, g), m in results.items():
        if isinstance(m, Exception):
            failures += 1
            partial = True
            rows.append([ids[f], ids[g], "", "", "", "", "", "", "", "", 1])
            continue
        partial |= m.mismatch
        rows.append([ids[f], ids[g], m.jsn_px, m.jsn_mm, m.upper.beta, m.lower.beta, m.upper.peak,
                     m.lower.peak, m.calibration_offset[0], m.calibration_offset[1], int(m.mismatch)])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    path = _write_text(out / "quantify.csv", buf.getvalue())
    _write_text(out / "run_config.txt", replace(cfg, spacing=spacing).to_text())
    print(path)
    if failures == len(results):
        logger.error("every pair failed")
        return EXIT_FAIL
    return EXIT_PARTIAL if partial else EXIT_OK


def read_results(path) -> list[dict]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read results {path}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    missing = set(CSV_COLUMNS) - set(reader.fieldnames or [])
    if missing:
        raise CliError(f"{path}: missing columns {sorted(missing)}")
    return list(reader)


def evaluate(rows, manifest, include_endpoints: bool = False):
    """Join result rows with a manifest; returns ``(summary, scatter_rows)``."""
    ids = [Path(im.file).stem for im in manifest.images]
    index = {s: i for i, s in enumerate(ids)}
    n = len(ids)
    direct = np.full((n, n), np.nan)
    excluded = np.zeros((n, n), dtype=bool)
    for r in rows:
        try:
            f, g = index[r["baseline_id"]], index[r["followup_id"]]
        except KeyError as exc:
            raise CliError(f"result id {exc.args[0]!r} not in manifest") from None
        if f > g:
            f, g = g, f
            sign = -1.0
        else:
            sign = 1.0
        val = r["jsn_mm"]
        if val == "" or r["mismatch"] not in ("0", "False", "false"):
            excluded[f, g] = True
        if val != "":
            direct[f, g] = sign * float(val)
    truth = truth_matrix([im.true_jsw_mm for im in manifest.images])
    res = SeriesResult(direct, truth, excluded)
    table = pair_table(res, include_endpoints) if n >= 3 else pair_table(res)
    sig = np.array([t["sigma"] for t in table], dtype=np.float64)
    err = np.array([t["error"] for t in table], dtype=np.float64)
    ok = np.isfinite(sig)
    try:
        r = pearson(sig[ok], err[ok])
    except ValueError:
        r = None
    summary = {
        "E_mm": _num(mean_error(res)),
        "RMSD_mm": _num(rmsd(res)),
        "sigma_mean_mm": _num(sig[ok].mean()) if ok.any() else None,
        "pearson_sigma_vs_E": _num(r),
        "mismatch_ratio": _num(res.mismatch_ratio),
        "n_pairs": len(table),
    }
    scatter = [{"baseline_id": ids[t["f"]], "followup_id": ids[t["g"]], "sigma_mm": _num(t["sigma"]),
                "abs_error_mm": _num(t["error"])} for t in table]
    return summary, scatter


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg.out)
    if not Path(args.manifest).exists():
        raise CliError(f"manifest not found: {args.manifest}")
    manifest = load_manifest(args.manifest)
    rows = read_results(args.results)
    summary, scatter = evaluate(rows, manifest, args.include_endpoints)
    path = _write_json(out / "evaluation.json", summary)
    if args.scatter:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["baseline_id", "followup_id", "sigma_mm", "abs_error_mm"])
        for s in scatter:
            w.writerow([s["baseline_id"], s["followup_id"],
                        "" if s["sigma_mm"] is None else repr(s["sigma_mm"]),
                        "" if s["abs_error_mm"] is None else repr(s["abs_error_mm"])])
        _write_text(out / "scatter.csv", buf.getvalue())
    _write_text(out / "run_config.txt", cfg.to_text())
    print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _common(p: argparse.ArgumentParser, measure: bool = True):
    p.add_argument("--config", help="key = value settings file; flags override it")
    p.add_argument("--out", help="output directory (default: out)")
    p.add_argument("--seed", type=int)
    p.add_argument("--spacing", type=float, help="pixel spacing in mm (overrides sidecars)")
    p.add_argument("--window-size", dest="window_size", type=int)
    if measure:
        p.add_argument("--i-min", dest="i_min", type=int)
        p.add_argument("--i-max", dest="i_max", type=int)
        p.add_argument("--median-radius", dest="median_radius", type=int)
        p.add_argument("--weight-sigma", dest="weight_sigma", type=float)
        p.add_argument("--no-weighting", dest="no_weighting", action="store_true")
        p.add_argument("--peak-threshold", dest="peak_threshold", type=float)
        p.add_argument("--mask-margin", dest="mask_margin", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jsnpoc", description="Joint-space narrowing by partial-image POC")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a synthetic phantom sweep")
    p.add_argument("--preset", choices=sorted(PRESETS), default="sweep-coarse")
    p.add_argument("--noise", default="air", help="none, air, water or a sigma in [0, 1]")
    _common(p, measure=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="propose joint windows in a hand radiograph")
    p.add_argument("image")
    p.add_argument("--dump-debug", dest="dump_debug", action="store_true",
                   help="write mask, outline and per-window segmentation artefacts")
    _common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("quantify", help="pairwise JSN over a series of windows")
    p.add_argument("inputs", nargs="+", help="window images or a directory of them")
    p.add_argument("--masks", choices=["from-baseline", "per-pair"], default="from-baseline")
    _common(p)
    p.set_defaults(func=cmd_quantify)

    p = sub.add_parser("evaluate", help="score quantify results against a phantom manifest")
    p.add_argument("--results", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--scatter", action="store_true", help="also write per-pair (sigma, |error|) CSV")
    p.add_argument("--include-endpoints", dest="include_endpoints", action="store_true")
    _common(p, measure=False)
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CliError, ImageReadError, MissingSpacingError, DetectionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
