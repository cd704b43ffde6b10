"""Command-line driver.

Configuration precedence, lowest to highest: built-in defaults, the config
stored in the dataset manifest, ``--config FILE``, ``--set key=value``
overrides, then dedicated flags such as ``--seed``.  The worker count comes
from ``--workers`` or the ``XDMAP_WORKERS`` environment variable.

Failures exit nonzero and print one line to stderr of the form
``xdmap: error E_CODE: message``.
"""

from __future__ import annotations

import argparse
import dataclasses
import functools
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .config import ConfigError, PipelineConfig, config_from_dict, worker_count
from .dataset import LoadedSequence, frame_name, load_manifest, load_sequence, write_sequence
from .geometry import frame_indices_for_rate
from .io import FormatError, read_cloud, read_label_image, read_map, write_cloud, write_label_image, write_map
from .mapping import FitResult, build_map
from .metrics import REPORT_COLUMNS, format_key_values, format_table
from .pipeline import FrameTruth, MethodScores, label_frame, run_baseline, truth_from_points
from .primitives import SemanticClass
from .render import LabelImage
from .synthetic import GenerationError, simulate_sequence

EXIT_CODES = {
    "E_USAGE": 2,
    "E_CONFIG": 3,
    "E_MISSING_INPUT": 4,
    "E_FORMAT": 5,
    "E_GENERATION": 6,
    "E_INVALID": 7,
    "E_INTERNAL": 70,
}


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# configuration


def _deep_merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _deep_merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _parse_set(items: Sequence[str]) -> Dict[str, Any]:
    tree: Dict[str, Any] = {}
    for item in items:
        if "=" not in item:
            raise CliError("E_USAGE", f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = tree
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return tree


_LINKED = (("seed", "scene", "seed"), ("range_threshold", "render", "range_threshold"))


def _normalize_layer(layer: Dict[str, Any], source: str) -> Dict[str, Any]:
    """Copy top-level values into their derived slots; a layer may not contradict itself."""
    layer = dict(layer)
    for top, section, key in _LINKED:
        inner = layer.get(section, {}) if isinstance(layer.get(section), dict) else {}
        if top in layer and key in inner and inner[key] != layer[top]:
            raise ConfigError(f"{source}: {section}.{key}={inner[key]!r} contradicts {top}={layer[top]!r}")
        if top in layer:
            layer[section] = {**inner, key: layer[top]}
        elif key in inner:
            layer[top] = inner[key]
    return layer


def resolve_config(args, base: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    data = dict(base or {})
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise CliError("E_MISSING_INPUT", f"config file not found: {path}")
        try:
            layer = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CliError("E_CONFIG", f"{path}: not valid JSON at byte {exc.pos}: {exc.msg}") from exc
        if not isinstance(layer, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        data = _deep_merge(data, _normalize_layer(layer, str(path)))
    data = _deep_merge(data, _normalize_layer(_parse_set(getattr(args, "set", None) or []), "--set"))
    flags: Dict[str, Any] = {}
    for name in ("seed", "range_threshold", "sampling_hz", "motion_compensation"):
        if getattr(args, name, None) is not None:
            flags[name] = getattr(args, name)
    data = _deep_merge(data, _normalize_layer(flags, "flags"))
    return config_from_dict(data)


def _workers(args) -> int:
    return args.workers if getattr(args, "workers", None) else worker_count()


def _sequence(path) -> LoadedSequence:
    root = Path(path)
    if not (root / "manifest.json").exists():
        raise CliError("E_MISSING_INPUT", f"no dataset manifest in {root}")
    return load_sequence(root)


def _frame_indices(spec: str, n: int, cfg: PipelineConfig) -> List[int]:
    if spec == "all":
        return list(range(n))
    if spec == "eval":
        return list(range(0, n, cfg.eval_stride))
    try:
        ks = sorted({int(s) for s in spec.split(",") if s})
    except ValueError as exc:
        raise CliError("E_USAGE", f"bad --frames value {spec!r}") from exc
    bad = [k for k in ks if not 0 <= k < n]
    if bad:
        raise CliError("E_USAGE", f"frames out of range 0..{n - 1}: {bad}")
    return ks


def _pmap(fn, items, workers: int) -> list:
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# ppm dump

_PALETTE = {
    int(SemanticClass.BACKGROUND): (0, 0, 0),
    int(SemanticClass.POLE): (230, 180, 40),
    int(SemanticClass.TRAFFIC_LIGHT): (240, 70, 60),
    int(SemanticClass.TRAFFIC_SIGN): (60, 140, 240),
}


def label_image_to_ppm(img: LabelImage) -> bytes:
    rgb = np.zeros((img.height, img.width, 3), np.uint8)
    for cls, col in _PALETTE.items():
        rgb[img.semantic == cls] = col
    # vary brightness per instance so neighbours of one class stay distinguishable
    shade = 0.6 + 0.4 * ((img.instance.astype(np.int64) * 37) % 11) / 10.0
    rgb = np.where((img.instance > 0)[..., None], (rgb * shade[..., None]).astype(np.uint8), rgb)
    rgb[img.ignore] = (70, 70, 70)
    return f"P6\n{img.width} {img.height}\n255\n".encode() + rgb.tobytes()


# ---------------------------------------------------------------------------
# per-frame workers (module level so they pickle)


def _render_one(k: int, data: str, map_path: str, out: str, cfg: PipelineConfig, dump_ppm: bool, want_cloud: bool,
                want_image: bool):
    seq = load_sequence(data)
    lms = read_map(map_path).landmarks
    res = label_frame(lms, seq.frame(k), seq.trajectory, cfg)
    n = frame_name(seq.entry.frames[k].frame_id)
    if want_image:
        write_label_image(res.image, Path(out) / f"{n}.lbl")
        if dump_ppm:
            (Path(out) / f"{n}.ppm").write_bytes(label_image_to_ppm(res.image))
    if want_cloud:
        write_cloud(res.cloud, Path(out) / f"{n}.cloud")


def _baseline_one(k: int, name: str, data: str, out: str, cfg: PipelineConfig, dump_ppm: bool):
    seq = load_sequence(data)
    res = run_baseline(name, seq.frame(k), seq.trajectory, cfg)
    n = frame_name(seq.entry.frames[k].frame_id)
    write_label_image(res.image, Path(out) / f"{n}.lbl")
    write_cloud(res.cloud, Path(out) / f"{n}.cloud")
    if dump_ppm:
        (Path(out) / f"{n}.ppm").write_bytes(label_image_to_ppm(res.image))


def _dataset_truth(seq: LoadedSequence, k: int, cfg: PipelineConfig) -> FrameTruth:
    tc = seq.truth_cloud(k)
    return truth_from_points(tc.positions, tc.semantic, tc.instance, cfg.lidar.model())


def _score_pair(name: str, pred_dir: str, ref_dir: str, ref_is_dataset: bool, cfg: PipelineConfig) -> MethodScores:
    pred_img = read_label_image(Path(pred_dir) / f"{name}.lbl")
    pred_cloud = read_cloud(Path(pred_dir) / f"{name}.cloud")
    scores = MethodScores()
    if ref_is_dataset:
        seq = load_sequence(ref_dir)
        k = next(i for i, f in enumerate(seq.entry.frames) if frame_name(f.frame_id) == name)
        truth = _dataset_truth(seq, k, cfg)
        ignore_pts = None
    else:
        ref_img = read_label_image(Path(ref_dir) / f"{name}.lbl")
        ref_cloud = read_cloud(Path(ref_dir) / f"{name}.cloud")
        truth = FrameTruth(ref_cloud.semantic, ref_cloud.instance, ref_img)
        ignore_pts = ref_cloud.ignore
    if len(pred_cloud) != len(truth.classes):
        raise CliError("E_INVALID", f"frame {name}: {len(pred_cloud)} predicted points vs {len(truth.classes)} reference")
    if pred_img.semantic.shape != truth.image.semantic.shape:
        raise CliError("E_INVALID", f"frame {name}: label image shapes differ")
    scores.add(pred_img, pred_cloud, truth, restrict_points=ignore_pts)
    return scores


def _merge(scores: Sequence[MethodScores]) -> MethodScores:
    return functools.reduce(MethodScores.merge, scores, MethodScores())


def _score_rows(label: str, s: MethodScores) -> Dict[str, Dict[str, float]]:
    r2, r3 = s.rows()
    r3 = {k: v for k, v in r3.items() if not k.endswith("_th")}
    r3["recall"] = s.recall3d
    r3["precision"] = s.precision3d
    return {f"{label}/2d": r2, f"{label}/3d": r3}


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise CliError("E_INVALID", f"output directory {out} is not empty")
    seq = simulate_sequence(cfg.scene, cfg.noise, cfg.lidar.model(), cfg.camera.rig())
    write_sequence(seq, cfg, out, split=args.split)
    print(f"wrote {len(seq.frames)} frames, {len(seq.scene.landmarks)} landmarks to {out}")
    return 0


def _diagnostics_text(diags: Sequence[FitResult]) -> str:
    lines = []
    for fr in diags:
        rec = {
            "id": fr.landmark.instance_id if fr.accepted else None,
            "class": fr.landmark.cls.name if fr.landmark is not None else None,
            "accepted": fr.accepted,
            "reason": fr.reason,
            "family": fr.family,
            "final_cost": None if not math.isfinite(fr.final_cost) else float(fr.final_cost),
            "iterations": int(fr.iterations),
            "converged": bool(fr.converged),
            "inlier_fraction": float(fr.inlier_fraction),
            "support": int(fr.support),
            "num_detections": int(fr.num_detections),
        }
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")


def cmd_map(args) -> int:
    seq = _sequence(args.data)
    cfg = resolve_config(args, load_manifest(args.data).config)
    ks = [int(k) for k in frame_indices_for_rate(len(seq), cfg.sampling_hz)]
    frames = [seq.frame(k) for k in ks]
    pmap = build_map(frames, seq.trajectory, cfg.solver, cfg.motion_compensation, _workers(args))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_map(pmap, out)
    out.with_name(out.name + ".diagnostics.jsonl").write_text(_diagnostics_text(pmap.diagnostics))
    print(f"mapped {len(pmap)} landmarks from {len(ks)} frames -> {out}")
    return 0


def _label_command(args, want_image: bool, want_cloud: bool) -> int:
    seq = _sequence(args.data)
    cfg = resolve_config(args, load_manifest(args.data).config)
    if not Path(args.map).exists():
        raise CliError("E_MISSING_INPUT", f"map file not found: {args.map}")
    read_map(args.map)  # fail early on a bad map
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ks = _frame_indices(args.frames, len(seq), cfg)
    fn = partial(_render_one, data=str(args.data), map_path=str(args.map), out=str(out), cfg=cfg,
                 dump_ppm=getattr(args, "dump_ppm", False), want_cloud=want_cloud, want_image=want_image)
    _pmap(fn, ks, _workers(args))
    print(f"labeled {len(ks)} frames -> {out}")
    return 0


def cmd_render(args) -> int:
    return _label_command(args, want_image=True, want_cloud=False)


def cmd_label3d(args) -> int:
    return _label_command(args, want_image=False, want_cloud=True)


def cmd_baseline(args) -> int:
    seq = _sequence(args.data)
    cfg = resolve_config(args, load_manifest(args.data).config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ks = _frame_indices(args.frames, len(seq), cfg)
    fn = partial(_baseline_one, name=args.method, data=str(args.data), out=str(out), cfg=cfg, dump_ppm=args.dump_ppm)
    _pmap(fn, ks, _workers(args))
    print(f"{args.method} labeled {len(ks)} frames -> {out}")
    return 0


def cmd_eval(args) -> int:
    pred = Path(args.pred)
    ref = Path(args.ref)
    for p in (pred, ref):
        if not p.is_dir():
            raise CliError("E_MISSING_INPUT", f"not a directory: {p}")
    ref_is_dataset = (ref / "manifest.json").exists()
    cfg = resolve_config(args, load_manifest(ref).config if ref_is_dataset else None)
    names = sorted(p.stem for p in pred.glob("*.lbl"))
    if not names:
        raise CliError("E_MISSING_INPUT", f"no label images in {pred}")
    for n in names:
        if not (pred / f"{n}.cloud").exists():
            raise CliError("E_MISSING_INPUT", f"{pred / (n + '.cloud')} missing (run label3d into the same directory)")
    fn = partial(_score_pair, pred_dir=str(pred), ref_dir=str(ref), ref_is_dataset=ref_is_dataset, cfg=cfg)
    total = _merge(_pmap(fn, names, _workers(args)))
    rows = _score_rows(args.label, total)
    print(format_table(rows, list(REPORT_COLUMNS) + ["recall", "precision"]))
    if args.kv:
        Path(args.kv).write_text(format_key_values(rows))
    return 0


def _report_frame(k: int, data: str, cfg: PipelineConfig, map_path: Optional[str], taus: Sequence[float],
                  baselines: Sequence[str]) -> Dict[str, MethodScores]:
    seq = load_sequence(data)
    frame = seq.frame(k)
    truth = _dataset_truth(seq, k, cfg)
    out: Dict[str, MethodScores] = {}
    if map_path is not None:
        lms = read_map(map_path).landmarks
        for tau in taus:
            c = dataclasses.replace(cfg, range_threshold=tau)
            res = label_frame(lms, frame, seq.trajectory, c)
            s = MethodScores()
            s.add(res.image, res.cloud, truth)
            out[f"xdmap_tau{tau:g}"] = s
    for b in baselines:
        res = run_baseline(b, frame, seq.trajectory, cfg)
        s = MethodScores()
        s.add(res.image, res.cloud, truth)
        out[b] = s
    return out


def cmd_report(args) -> int:
    seq = _sequence(args.data)
    base_cfg = resolve_config(args, load_manifest(args.data).config)
    workers = _workers(args)
    work = Path(args.workdir) if args.workdir else Path(args.out).parent / "report_maps"
    work.mkdir(parents=True, exist_ok=True)
    ks = _frame_indices(args.frames, len(seq), base_cfg)
    rows: Dict[str, Dict[str, float]] = {}
    for mc in args.mc:
        cfg_mc = dataclasses.replace(base_cfg, motion_compensation=mc)
        tag_mc = "mcon" if mc else "mcoff"
        for i, hz in enumerate(args.rates):
            cfg = dataclasses.replace(cfg_mc, sampling_hz=hz)
            mk = [int(k) for k in frame_indices_for_rate(len(seq), hz)]
            pmap = build_map([seq.frame(k) for k in mk], seq.trajectory, cfg.solver, mc, workers)
            map_path = work / f"map_{tag_mc}_hz{hz:g}.jsonl"
            write_map(pmap, map_path)
            # single-shot baselines do not depend on the mapping rate
            bl = list(args.baselines) if i == 0 else []
            fn = partial(_report_frame, data=str(args.data), cfg=cfg, map_path=str(map_path), taus=args.taus, baselines=bl)
            per = _pmap(fn, ks, workers)
            for key in per[0]:
                label = f"{key}_{tag_mc}" if key in bl else f"{key}_hz{hz:g}_{tag_mc}"
                rows.update(_score_rows(label, _merge([p[key] for p in per])))
    table = format_table(rows, list(REPORT_COLUMNS) + ["recall", "precision"])
    Path(args.out).write_text(table + "\n")
    Path(args.out).with_suffix(".kv").write_text(format_key_values(rows))
    print(table)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _floats(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _onoff(text: str) -> List[bool]:
    table = {"on": True, "off": False}
    try:
        return [table[x] for x in text.split(",") if x]
    except KeyError as exc:
        raise argparse.ArgumentTypeError(f"expected a list of on/off, got {text!r}") from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("E_USAGE", message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config value (dotted key, JSON value); repeatable")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, help="parallel workers (default: $XDMAP_WORKERS or 1)")
    common.add_argument("--range-threshold", type=float, dest="range_threshold", help="tau in meters")
    common.add_argument("--sampling-hz", type=float, dest="sampling_hz")
    mc = common.add_mutually_exclusive_group()
    mc.add_argument("--motion-compensation", dest="motion_compensation", action="store_true", default=None)
    mc.add_argument("--no-motion-compensation", dest="motion_compensation", action="store_false")

    p = _Parser(prog="xdmap", description="Parametric-map label transfer from camera masks to LiDAR.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="generate a synthetic dataset with truth sidecar")
    s.add_argument("--out", required=True)
    s.add_argument("--split", default="eval", choices=["train", "eval"])
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("map", parents=[common], help="fit the parametric map")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="map file (JSON lines)")
    s.set_defaults(func=cmd_map)

    for name, func, helptext in (("render", cmd_render, "per-frame label images"),
                                 ("label3d", cmd_label3d, "per-frame labeled point clouds")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--data", required=True)
        s.add_argument("--map", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--frames", default="eval", help="'all', 'eval' (every eval_stride-th) or a comma list")
        if name == "render":
            s.add_argument("--dump-ppm", action="store_true", help="also write viewable .ppm rasters")
        s.set_defaults(func=func)

    s = sub.add_parser("baseline", parents=[common], help="single-shot baselines")
    s.add_argument("method", choices=["b1", "b2"])
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--frames", default="eval")
    s.add_argument("--dump-ppm", action="store_true")
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("eval", parents=[common], help="compare a label set to a dataset's truth or another label set")
    s.add_argument("--pred", required=True, help="directory with NNNNNN.lbl and NNNNNN.cloud")
    s.add_argument("--ref", required=True, help="dataset directory (uses truth) or another label directory")
    s.add_argument("--label", default="pred")
    s.add_argument("--kv", help="also write key=value metrics here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", parents=[common], help="experiment grid over MC, tau and mapping rate")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="table file; a .kv file is written next to it")
    s.add_argument("--taus", type=_floats, default=[30.0, 50.0, 70.0])
    s.add_argument("--rates", type=_floats, default=[0.5, 2.0, 10.0])
    s.add_argument("--mc", type=_onoff, default=[True, False])
    s.add_argument("--baselines", type=lambda t: [b for b in t.split(",") if b], default=["b1", "b2"])
    s.add_argument("--frames", default="eval")
    s.add_argument("--workdir", help="where intermediate maps go")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as exc:
        code, msg = exc.code, str(exc)
    except ConfigError as exc:
        code, msg = "E_CONFIG", str(exc)
    except FormatError as exc:
        code, msg = "E_FORMAT", str(exc)
    except FileNotFoundError as exc:
        code, msg = "E_MISSING_INPUT", f"{exc.filename or exc}: not found"
    except GenerationError as exc:
        code, msg = "E_GENERATION", str(exc)
    except (ValueError, KeyError) as exc:
        code, msg = "E_INVALID", str(exc)
    except Exception as exc:  # noqa: BLE001 - last-resort single-line report
        code, msg = "E_INTERNAL", f"{type(exc).__name__}: {exc}"
    print(f"xdmap: error {code}: {' '.join(msg.split())}", file=sys.stderr)
    return EXIT_CODES[code]


if __name__ == "__main__":
    sys.exit(main())
