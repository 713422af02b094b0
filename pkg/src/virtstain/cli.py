"""Command-line entry points: synth, train, stain, qc, eval.

Every failure path exits through one funnel that prints a single JSON
object to stderr ({"error", "message", "code"}) and returns the
error's exit code, so scripts driving the tool never have to parse
prose. Outputs are deterministic under a fixed --seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoints import CheckpointStore
from .config import RunConfig, load_config
from .errors import ConfigurationError, VirtstainError
from .metrics import aggregate_reports, evaluate_wsi
from .qc import (
    anomaly_stats,
    calibrate_interval,
    confidence_map,
    render_heatmap,
)
from .raster_io import (
    read_png,
    read_wsi,
    write_mask_png,
    write_png,
    write_pyramid_tiff,
)
from .stitching import stitch_wsi
from .synth import default_stain_specs, generate_synth_pair, generate_synth_slide, stain_band
from .training import HE_DOMAIN, StainDataset, Trainer, make_bank
from .wsi import build_tile_grid, extract_tile, is_tissue_tile


def _add_common(sub):
    sub.add_argument("--config", help="INI run configuration")
    sub.add_argument("--seed", type=int, help="overrides the configured seed")
    sub.add_argument("--out", help="output directory (or file for eval)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="virtstain",
        description="Virtual staining toolkit: synthesize, train, stain, inspect, score.",
    )
    subs = p.add_subparsers(dest="mode", required=True)

    s = subs.add_parser("synth", help="generate a synthetic dataset")
    _add_common(s)

    s = subs.add_parser("train", help="train a model bank on a synth dataset")
    _add_common(s)
    s.add_argument("--data", required=True, help="dataset directory from `synth`")
    s.add_argument("--iterations", type=int, help="overrides the configured count")
    s.add_argument("--log", help="JSON-lines loss log path")

    s = subs.add_parser("stain", help="virtually stain an H&E slide")
    _add_common(s)
    s.add_argument("--input", required=True, help="H&E slide (PNG or TIFF)")
    s.add_argument("--stains", required=True, help="comma-separated stain ids")
    s.add_argument("--checkpoints", required=True, help="checkpoint directory")
    s.add_argument("--overlap", type=float, help="tile overlap fraction")
    s.add_argument(
        "--qc", action="store_true",
        help="also load discriminators and emit confidence heatmaps",
    )

    s = subs.add_parser("qc", help="score a slide with a discriminator")
    _add_common(s)
    s.add_argument("--input", required=True, help="slide to inspect")
    s.add_argument("--domain", default=HE_DOMAIN, help="discriminator domain")
    s.add_argument("--checkpoints", required=True)
    s.add_argument(
        "--interval", default="auto",
        help='"auto" (percentile calibration) or "lo,hi" score bounds',
    )

    s = subs.add_parser("eval", help="score a prediction against ground truth")
    _add_common(s)
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--he", required=True, help="H&E source, defines foreground")
    return p


def _config_for(args) -> RunConfig:
    config = load_config(args.config, mode=args.mode)
    if args.seed is not None:
        config.seed = args.seed
    if getattr(args, "out", None):
        config.out_dir = args.out
    return config


# -- synth ------------------------------------------------------------


def run_synth(config: RunConfig) -> dict:
    """Slides for the walkthrough plus tile pairs for training."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    specs = default_stain_specs()
    slide = generate_synth_slide(
        specs,
        shape=(config.synth.slide_width, config.synth.slide_height),
        seed=config.seed,
    )
    write_pyramid_tiff(out / "he.tiff", slide.he)
    for sid, img in slide.stains.items():
        write_pyramid_tiff(out / f"truth_{sid}.tiff", img)
        write_mask_png(out / f"mask_{sid}.png", slide.masks[sid])

    pair_counts = {}
    for k, spec in enumerate(specs):
        tile_dir = out / "tiles" / spec.stain_id
        tile_dir.mkdir(parents=True, exist_ok=True)
        for i in range(config.synth.n_pairs):
            pair = generate_synth_pair(
                spec, size=config.synth.tile, seed=config.seed + 1000 * k + i
            )
            write_png(tile_dir / f"he_{i:04d}.png", pair.he)
            write_png(tile_dir / f"stain_{i:04d}.png", pair.stain)
        pair_counts[spec.stain_id] = config.synth.n_pairs

    manifest = {
        "seed": config.seed,
        "tile": config.synth.tile,
        "n_pairs": pair_counts,
        "stains": [
            {"stain_id": s.stain_id, "band": list(s.band)} for s in specs
        ],
    }
    (out / "synth.json").write_text(json.dumps(manifest, indent=2))
    return {"out": str(out), "stains": sorted(pair_counts)}


# -- train ------------------------------------------------------------


def _load_tile_dataset(data_dir: Path, stain_id: str, dtype) -> StainDataset:
    tile_dir = data_dir / "tiles" / stain_id
    he_paths = sorted(tile_dir.glob("he_*.png"))
    st_paths = sorted(tile_dir.glob("stain_*.png"))
    if not he_paths or not st_paths:
        raise ConfigurationError(f"no tiles for stain {stain_id!r} under {tile_dir}")
    return StainDataset(
        [read_png(p).astype(dtype) for p in he_paths],
        [read_png(p).astype(dtype) for p in st_paths],
    )


def run_train(config: RunConfig, data: str, iterations=None, log_path=None) -> dict:
    data_dir = Path(data)
    manifest_path = data_dir / "synth.json"
    if not manifest_path.exists():
        raise ConfigurationError(f"no dataset manifest at {manifest_path}")
    synth_manifest = json.loads(manifest_path.read_text())
    specs = {s.stain_id: s for s in default_stain_specs()}
    stain_ids = [s["stain_id"] for s in synth_manifest["stains"]]
    unknown = [s for s in stain_ids if s not in specs]
    if unknown:
        raise ConfigurationError(f"dataset has unknown stains: {unknown}")

    stains = config.stains or [stain_band(specs[s]) for s in stain_ids]
    bank = make_bank(stains, config.arch, seed=config.seed)
    dtype = config.arch.dtype
    datasets = {
        s.stain_id: _load_tile_dataset(data_dir, s.stain_id, dtype) for s in stains
    }
    training = replace(config.training, seed=config.seed)
    trainer = Trainer(bank, datasets, training)

    n_iter = iterations if iterations is not None else config.iterations
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if log_path is None:
        log_path = out / "training_log.jsonl"
    with open(log_path, "w") as stream:
        trainer.train(n_iter, log_stream=stream)
    store = CheckpointStore(out)
    store.save_bank(bank, trainer.iteration)
    return {
        "checkpoints": str(out),
        "iterations": trainer.iteration,
        "log": str(log_path),
    }


# -- stain ------------------------------------------------------------


def run_stain(config: RunConfig, input_path, stain_ids, checkpoints, qc=False) -> dict:
    store = CheckpointStore(checkpoints)
    bank, _ = store.load_for_staining(stain_ids, with_disc=qc)
    slide = read_wsi(input_path)
    grid = build_tile_grid(
        slide,
        tile_size=config.tiles.tile_size,
        overlap_fraction=config.stitch_overlap,
        magnification=config.tiles.magnification,
    )
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    written = {}
    heat_dir = out / "qc"
    for sid in stain_ids:
        stained = stitch_wsi(bank, sid, slide, grid)
        path = out / f"{sid}.tiff"
        write_pyramid_tiff(path, stained)
        written[sid] = str(path)
        if qc:
            heat_dir.mkdir(parents=True, exist_ok=True)
            disc = bank.triple(sid).discriminator
            cmap = confidence_map(disc, stained)
            heat = render_heatmap(cmap, base=stained)
            write_png(heat_dir / f"{sid}_heatmap.png", heat.rgb)
    report = {"outputs": written, "opened_archives": list(store.opened)}
    (out / "stain_report.json").write_text(json.dumps(report, indent=2))
    return report


# -- qc ---------------------------------------------------------------


def _parse_interval(raw: str):
    if raw == "auto":
        return None
    parts = raw.split(",")
    if len(parts) != 2:
        raise ConfigurationError(f'--interval must be "auto" or "lo,hi", got {raw!r}')
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError as e:
        raise ConfigurationError(f"cannot parse interval bounds {raw!r}") from e
    if lo >= hi:
        raise ConfigurationError(f"interval lo must be below hi, got {raw!r}")
    return lo, hi


def run_qc(config: RunConfig, input_path, domain, checkpoints, interval_raw) -> dict:
    store = CheckpointStore(checkpoints)
    manifest = store.read_manifest()
    known = [s["stain_id"] for s in manifest["stains"]]
    if domain == HE_DOMAIN:
        bank, _ = store.load_bank(None)
    elif domain in known:
        bank, _ = store.load_bank([domain])
    else:
        raise ConfigurationError(f"domain {domain!r} not in checkpoint ({known})")
    disc = bank.triple(domain).discriminator

    slide = read_wsi(input_path)
    grid = build_tile_grid(
        slide,
        tile_size=config.tiles.tile_size,
        overlap_fraction=0.0,
        magnification=config.tiles.magnification,
    )
    out = Path(config.out_dir)
    heat_dir = out / "heatmaps"
    heat_dir.mkdir(parents=True, exist_ok=True)

    tiles = []
    maps = []
    for iy in range(len(grid.ys)):
        for ix in range(len(grid.xs)):
            tile = extract_tile(slide, grid, ix, iy)
            tiles.append((ix, iy, tile))
            maps.append(confidence_map(disc, tile.pixels))

    interval = _parse_interval(interval_raw)
    if interval is None:
        interval = calibrate_interval(maps, config.qc.lo_pct, config.qc.hi_pct)

    rows = []
    verdict_counts = {}
    for (ix, iy, tile), cmap in zip(tiles, maps):
        stats = anomaly_stats(cmap, interval)
        heat = render_heatmap(cmap, base=tile.pixels)
        write_png(heat_dir / f"tile_{ix:03d}_{iy:03d}.png", heat.rgb)
        rows.append(
            {
                "ix": ix,
                "iy": iy,
                "tissue": bool(is_tissue_tile(tile, config.tiles.min_tissue)),
                "score": stats.std_percent,
                "verdict": stats.verdict,
            }
        )
        verdict_counts[stats.verdict] = verdict_counts.get(stats.verdict, 0) + 1

    report = {
        "domain": domain,
        "interval": list(interval),
        "tiles": rows,
        "summary": verdict_counts,
    }
    (out / "qc_report.json").write_text(json.dumps(report, indent=2))
    return {"report": str(out / "qc_report.json"), "summary": verdict_counts}


# -- eval ---------------------------------------------------------------


def run_eval(config: RunConfig, pred, truth, he) -> dict:
    pred_slide = read_wsi(pred)
    truth_slide = read_wsi(truth)
    he_slide = read_wsi(he)
    report = evaluate_wsi(pred_slide, truth_slide, he_slide)
    payload = aggregate_reports([report])
    out = Path(config.out_dir)
    if out.suffix == ".json":
        out.parent.mkdir(parents=True, exist_ok=True)
        report_path = out
    else:
        out.mkdir(parents=True, exist_ok=True)
        report_path = out / "eval_report.json"
    report_path.write_text(json.dumps(payload, indent=2))
    return {"report": str(report_path), **payload}


# -- entry ------------------------------------------------------------


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config_for(args)
        if args.mode == "synth":
            result = run_synth(config)
        elif args.mode == "train":
            result = run_train(config, args.data, args.iterations, args.log)
        elif args.mode == "stain":
            stain_ids = [s for s in args.stains.split(",") if s]
            if not stain_ids:
                raise ConfigurationError("--stains must name at least one stain")
            if args.overlap is not None:
                config.stitch_overlap = args.overlap
            result = run_stain(
                config, args.input, stain_ids, args.checkpoints, qc=args.qc
            )
        elif args.mode == "qc":
            result = run_qc(
                config, args.input, args.domain, args.checkpoints, args.interval
            )
        else:
            result = run_eval(config, args.pred, args.truth, args.he)
    except VirtstainError as e:
        payload = {"error": type(e).__name__, "message": str(e), "code": e.exit_code}
        print(json.dumps(payload), file=sys.stderr)
        return e.exit_code
    except Exception as e:  # noqa: BLE001 - the CLI contract maps everything
        payload = {"error": type(e).__name__, "message": str(e), "code": 1}
        print(json.dumps(payload), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
