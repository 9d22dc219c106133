"""Command-line entry point: ``slidepair <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .dataset import GroupEntry, PairingEntry, PairingManifest, read_manifest, relpath, write_manifest
from .errors import PairingError
from .glomeruli import (MatchConfig, ingest_detections, match_glomeruli, read_keypoints, write_detections,
                        write_keypoints)
from .io import read_field, read_image, write_png
from .losses import adjacency_loss
from .patches import SimilarityThresholds, TilingConfig, read_external_scores, score_and_filter, tile_pair
from .pipeline import DetectConfig, detect_at_working_size, resolve_workers, run_pipeline, validate_config
from .prealign import RotationSearchConfig, search_rotation
from .registration import RansacConfig, fit_affine_ransac
from .synth import SynthConfig, write_pair
from .transform import AffineTransform2D

log = logging.getLogger("slidepair")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _dump(doc, out) -> None:
    text = json.dumps(doc, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _load_transform(path) -> AffineTransform2D:
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        doc = doc["transform"]
    return AffineTransform2D.from_list(doc)


def _update_manifest(path, group_id: str, stain: str | None, *, wsi=None, records=None, **fields) -> None:
    """Create or update one group of a manifest, then rewrite it atomically.

    With ``stain`` set, the pairing for that special stain is created if
    needed and ``fields`` are assigned to it; with ``stain`` None only the
    slide paths in ``wsi`` are recorded.
    """
    path = Path(path)
    m = read_manifest(path) if path.exists() else PairingManifest()
    try:
        group = m.group(group_id)
    except KeyError:
        group = GroupEntry(group_id, group_id, ["HE"], {})
        m.groups.append(group)
        m.groups.sort(key=lambda g: g.group_id)
    specials = set(group.stains[1:]) | {k for k in (wsi or {}) if k != "HE"}
    if stain is not None:
        specials.add(stain)
    group.stains = ["HE", *sorted(specials)]
    for key, p in (wsi or {}).items():
        group.wsi_paths[key] = relpath(p, path)
    if stain is not None:
        pairing = next((p for p in group.pairings if p.stain == stain), None)
        if pairing is None:
            pairing = PairingEntry(stain)
            group.pairings.append(pairing)
            group.pairings.sort(key=lambda p: p.stain)
        for key, val in fields.items():
            setattr(pairing, key, val)
    if records is not None:
        keep = [r for r in m.patch_records if not (r.group_id == group_id and r.stains[1] == stain)]
        m.patch_records = sorted(keep + list(records), key=lambda r: (r.group_id, r.stains[1], r.origin[1], r.origin[0]))
    write_manifest(m, path)


def _manifest_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="manifest JSON to update atomically")
    p.add_argument("--group-id", default="group", help="manifest group to update (default: group)")
    p.add_argument("--stain", default="PAS", help="special stain of this pairing (default: PAS)")


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    cfg = SynthConfig(
        seed=args.seed, canvas=args.canvas, n_glomeruli=args.glomeruli,
        blob_sigma_range=tuple(_floats(args.sigma_range)), rotation=args.rotation,
        translation=tuple(_floats(args.translation)), shear=args.shear, noise_sigma=args.noise,
        stain_palette=args.stain, target_stain=args.target_stain,
    )
    truth = write_pair(cfg, args.out_dir)
    if args.manifest:
        out = Path(args.out_dir)
        target = cfg.target_stain or cfg.stain_palette
        wsi = {cfg.stain_palette: out / "source.png"}
        if target != cfg.stain_palette:
            wsi[target] = out / "target.png"
        _update_manifest(args.manifest, args.group_id, None, wsi=wsi)
    log.info("wrote synthetic pair to %s (%d glomeruli)", args.out_dir, len(truth.glomerulus_centers_source))
    return EXIT_OK


def cmd_align(args) -> int:
    cfg = RotationSearchConfig(coarse_step=args.coarse_step, fine_step=args.fine_step,
                               fine_halfwidth=args.fine_halfwidth, max_dim=args.max_dim, metric=args.metric)
    res = search_rotation(read_image(args.source), read_image(args.target), cfg, workers=args.workers)
    _dump(res.to_json(), args.out)
    if args.manifest:
        _update_manifest(args.manifest, args.group_id, args.map_stain,
                         wsi={"HE": args.source, args.map_stain: args.target}, prealign=res.transform.to_list())
    return EXIT_OK


def cmd_detect(args) -> int:
    img = read_image(args.input)
    dcfg = DetectConfig(scales=tuple(_floats(args.scales)), threshold=args.threshold,
                        max_dim=args.max_dim or max(img.width, img.height, 16))
    dets = detect_at_working_size(img, dcfg, args.slide_id or Path(args.input).stem, args.stain, args.level)
    write_detections(dets, args.out)
    if args.manifest:
        _update_manifest(args.manifest, args.group_id, None, wsi={args.stain: args.input})
    log.info("%d detections written to %s", len(dets), args.out)
    return EXIT_OK


def cmd_match(args) -> int:
    cfg = MatchConfig(max_dist=args.max_dist, min_confidence=args.min_confidence)
    src = ingest_detections(args.source_dets, cfg.min_confidence)
    dst = ingest_detections(args.target_dets, cfg.min_confidence)
    pre = _load_transform(args.prealign) if args.prealign else AffineTransform2D.identity()
    pairs = match_glomeruli(src, dst, pre, cfg)
    write_keypoints(pairs, args.out)
    log.info("%d keypoint pairs written to %s", len(pairs), args.out)
    if args.manifest:
        _update_manifest(args.manifest, args.group_id, args.map_stain, keypoint_pair_count=len(pairs))
    return EXIT_OK


def cmd_register(args) -> int:
    cfg = RansacConfig(enabled=args.ransac, iterations=args.iters, inlier_tol=args.tol,
                       min_inlier_frac=args.min_inlier_frac, seed=args.seed)
    res = fit_affine_ransac(read_keypoints(args.keypoints), cfg)
    _dump(res.to_json(), args.out)
    if args.manifest:
        _update_manifest(args.manifest, args.group_id, args.map_stain, affine=res.transform.to_list())
    return EXIT_OK


def cmd_pair(args) -> int:
    he, special = read_image(args.source), read_image(args.target)
    t = _load_transform(args.transform) if args.transform else AffineTransform2D.identity()
    tiles = tile_pair(he, special, t, TilingConfig(args.patch, args.stride, args.min_tissue))
    thr = SimilarityThresholds(fsim_min=args.fsim_min, ssim_min=args.ssim_min, external_max=args.external_max)
    ext = read_external_scores(args.external_scores) if args.external_scores else None
    stain = args.map_stain
    records = score_and_filter(tiles, thr, ext, group_id=args.group_id, stains=("HE", stain),
                               workers=args.workers)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = Path(args.manifest) if args.manifest else out / "manifest.json"
    named = []
    by_origin = {tp.origin: tp for tp in tiles}
    for rec in records:
        x, y = rec.origin
        tp = by_origin[(x, y)]
        sp, tpth = out / f"{args.group_id}_HE_{x}_{y}.png", out / f"{args.group_id}_{stain}_{x}_{y}.png"
        write_png(tp.he_patch, sp)
        write_png(tp.special_patch, tpth)
        named.append(replace(rec, source_path=relpath(sp, base), target_path=relpath(tpth, base)))
    if args.manifest:
        _update_manifest(args.manifest, args.group_id, stain, wsi={"HE": args.source, stain: args.target},
                         records=named)
    acc = sum(r.accepted for r in named)
    print(json.dumps({"tiles": len(named), "accepted": acc, "rejected": len(named) - acc}))
    return EXIT_OK


def cmd_adjloss(args) -> int:
    res = adjacency_loss(read_image(args.generated), read_image(args.adjacent), read_field(args.field),
                         crop_border=args.crop_border)
    print(json.dumps(res.to_json()))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = validate_config(args.config)
    report = run_pipeline(cfg, manifest_path=args.manifest, workers=args.workers)
    doc = report.to_json()
    if args.report:
        Path(args.report).write_text(json.dumps(doc, indent=2) + "\n")
    for p in report.pairings:
        status = p.error or ", ".join(p.flags + p.warnings) or "ok"
        log.info("%s/%s: pairs=%d tiles=%d accepted=%d (%s)", p.group_id, p.stain, p.keypoint_pairs,
                 p.tiles_total, p.tiles_accepted, status)
    return report.exit_status


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slidepair", description=__doc__)
    parser.add_argument("--version", action="version", version=f"slidepair {__version__}")
    parser.add_argument("--threads", type=int, default=1, help="worker threads, 0 = one per CPU (default: 1)")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic source/target slide pair with ground truth")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--canvas", type=int, default=1024)
    p.add_argument("--glomeruli", type=int, default=12)
    p.add_argument("--sigma-range", default="8,12", help="glomerulus sigma range 'lo,hi' in pixels")
    p.add_argument("--rotation", type=float, default=0.0, help="degrees, counter-clockwise on screen")
    p.add_argument("--translation", default="0,0", help="'dx,dy' in pixels")
    p.add_argument("--shear", type=float, default=0.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--stain", default="HE", help="source palette (and target, unless --target-stain)")
    p.add_argument("--target-stain", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--manifest", help="record the rendered slides in this manifest")
    p.add_argument("--group-id", default="group")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("align", help="stage 1: centroid + exhaustive rotation pre-alignment")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--coarse-step", type=float, default=4.0)
    p.add_argument("--fine-step", type=float, default=0.5)
    p.add_argument("--fine-halfwidth", type=float, default=6.0)
    p.add_argument("--max-dim", type=int, default=512)
    p.add_argument("--metric", choices=["ncc", "mse"], default="ncc")
    p.add_argument("--out")
    _manifest_args(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("detect", help="stage 2a: LoG blob detection, written as JSON Lines")
    p.add_argument("--input", required=True)
    p.add_argument("--scales", default="6,8,10,12,14", help="ascending sigmas in pixels")
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--max-dim", type=int, default=0, help="detect on a copy reduced to this size (0 = full)")
    p.add_argument("--slide-id")
    p.add_argument("--stain", default="HE")
    p.add_argument("--level", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="record the slide path in this manifest")
    p.add_argument("--group-id", default="group")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("match", help="stage 2b: Hungarian matching of detections")
    p.add_argument("--source-dets", required=True)
    p.add_argument("--target-dets", required=True)
    p.add_argument("--prealign", help="JSON from `align` (or any file with a 'transform' list)")
    p.add_argument("--max-dist", type=float, default=300.0)
    p.add_argument("--min-confidence", type=float, default=0.0)
    p.add_argument("--out", required=True)
    _manifest_args(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("register", help="stage 3: affine fit to keypoint pairs")
    p.add_argument("--keypoints", required=True)
    p.add_argument("--ransac", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--tol", type=float, default=20.0)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--min-inlier-frac", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _manifest_args(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("pair", help="stage 4: tile, score and filter patch pairs")
    p.add_argument("--source", required=True, help="H&E slide")
    p.add_argument("--target", required=True, help="special-stain slide")
    p.add_argument("--transform", help="JSON transform mapping source to target (default identity)")
    p.add_argument("--patch", type=int, default=512)
    p.add_argument("--stride", type=int, default=512)
    p.add_argument("--min-tissue", type=float, default=0.25)
    p.add_argument("--fsim-min", type=float, default=SimilarityThresholds().fsim_min)
    p.add_argument("--ssim-min", type=float, default=None)
    p.add_argument("--external-scores", help="JSON map 'x_y' -> score")
    p.add_argument("--external-max", type=float, default=None)
    p.add_argument("--out-dir", required=True)
    _manifest_args(p)
    p.set_defaults(func=cmd_pair)

    p = sub.add_parser("adjloss", help="adjacency-guided loss of a generated image, adjacent image and field")
    p.add_argument("--generated", required=True)
    p.add_argument("--adjacent", required=True)
    p.add_argument("--field", required=True, help="SRAL float32 displacement field")
    p.add_argument("--crop-border", type=int, default=0)
    p.set_defaults(func=cmd_adjloss)

    p = sub.add_parser("pipeline", help="run all four stages over a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", help="manifest path (default: <output_dir>/manifest.json)")
    p.add_argument("--report", help="write the run report as JSON")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    args.workers = resolve_workers(args.threads)
    if hasattr(args, "stain") and args.command in ("align", "match", "register", "pair"):
        args.map_stain = args.stain
    try:
        return args.func(args)
    except (PairingError, ValueError, OSError, KeyError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
