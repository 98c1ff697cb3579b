"""Command-line surface: plan, group, edit, eval, and demo subcommands.

Every invocation writes exactly one JSON result document to stdout and
diagnostics to stderr.  Exit codes: 0 success, 1 validation/usage
failure, 2 backend failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import attention, worlds
from .engine import EngineConfig, dump_trace, run_edit
from .errors import (
    AspectEditError,
    BackendError,
    UnsupportedBackendError,
)
from .grouping import classify_plan, group_edits, plan_branches
from .latents import encode_f32
from .metrics import ToyEmbedder, aspacc_clip, dclip_score, pixel_metrics
from .plan import EditPlan, infer_plan, parse_annotation, plan_from_annotation, validate_plan
from .predictors import Conditioning, GmmPredictor, load_world
from .sampler import SamplerConfig
from .schedules import build_schedule

ALL_METRICS = ("psnr", "mse", "ssim", "dclip", "aspacc")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_plan_inputs(p):
    p.add_argument("--source-prompt")
    p.add_argument("--target-prompt")
    p.add_argument("--annotation", help="annotation document path (overrides prompts)")


def _add_grouping_flags(p):
    p.add_argument("--maps", help="directory of attention-map files")
    p.add_argument("--lambda", dest="lam", type=float, default=0.9)
    p.add_argument("--beta", type=float, default=0.8)
    p.add_argument("--bin-threshold", type=float, default=0.5)


def _add_sampler_flags(p):
    p.add_argument("--steps", type=int, default=15)
    p.add_argument("--guidance", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["parallel", "sequential"], default="parallel")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aspectedit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="diff two prompts into edit actions")
    _add_plan_inputs(p)
    p.add_argument("--out", help="write the result document here as well")

    p = sub.add_parser("group", help="classify and group edit actions")
    _add_plan_inputs(p)
    p.add_argument("--plan", help="saved plan document path")
    _add_grouping_flags(p)
    p.add_argument("--world", help="analytic-world config used to derive masks")
    p.add_argument("--out")

    p = sub.add_parser("edit", help="run the multi-branch edit")
    _add_plan_inputs(p)
    p.add_argument("--plan")
    _add_grouping_flags(p)
    _add_sampler_flags(p)
    p.add_argument("--backend", choices=["gmm", "external"], required=True)
    p.add_argument("--world", help="analytic-world config (gmm backend)")
    p.add_argument("--endpoint", help="bridge address (external backend)")
    p.add_argument("--source-latent", help=".npy file with the source latent")
    p.add_argument("--out", help="write the final latent (.npy) and trace here")

    p = sub.add_parser("eval", help="compute metrics for an edited image")
    _add_plan_inputs(p)
    p.add_argument("--source-image", help=".npy image")
    p.add_argument("--edited-image", help=".npy image")
    p.add_argument("--metrics", default=",".join(ALL_METRICS))
    p.add_argument("--out")

    p = sub.add_parser("demo", help="run the built-in analytic end-to-end scenario")
    _add_sampler_flags(p)
    p.add_argument("--out")
    return parser


def _load_plan(args) -> EditPlan:
    if getattr(args, "plan", None):
        record = parse_annotation(Path(args.plan).read_text())
        return plan_from_annotation(record)
    if args.annotation:
        record = parse_annotation(Path(args.annotation).read_text())
        return plan_from_annotation(record)
    if not args.source_prompt or not args.target_prompt:
        raise _UsageError("need --source-prompt and --target-prompt (or --annotation)")
    return infer_plan(args.source_prompt, args.target_prompt)


def _action_doc(a) -> dict:
    doc = {"action": a.action, "category": a.category}
    if a.source_aspect is not None:
        doc["source"] = {"span": list(a.source_aspect.span), "text": a.source_aspect.text}
    if a.target_aspect is not None:
        doc["target"] = {"span": list(a.target_aspect.span), "text": a.target_aspect.text}
    if a.insert_at is not None:
        doc["insert_at"] = a.insert_at
    return doc


def _masks_from_dir(plan: EditPlan, maps_dir: str, threshold: float) -> dict:
    """Per-action masks from a map directory, matched by token index."""
    loaded = attention.load_map_dir(maps_dir)
    by_key = {}
    for m in loaded.values():
        by_key[(m.origin, m.token_index)] = m
    masks = {}
    for i, a in enumerate(plan.actions):
        if a.action == "none":
            continue
        src_mask = tgt_mask = None
        if a.source_aspect is not None:
            hits = [
                attention.binarize(by_key[(attention.SOURCE_PROMPT, j)], threshold)
                for j in range(a.source_aspect.start, a.source_aspect.stop)
                if (attention.SOURCE_PROMPT, j) in by_key
            ]
            if hits:
                src_mask = attention.mask_union(*hits)
        if a.target_aspect is not None:
            hits = [
                attention.binarize(by_key[(attention.TARGET_PROMPT, j)], threshold)
                for j in range(a.target_aspect.start, a.target_aspect.stop)
                if (attention.TARGET_PROMPT, j) in by_key
            ]
            if hits:
                tgt_mask = attention.mask_union(*hits)
        masks[i] = (src_mask, tgt_mask)
    return masks


def _resolve_masks(plan: EditPlan, args, world=None) -> dict:
    if getattr(args, "maps", None):
        return _masks_from_dir(plan, args.maps, args.bin_threshold)
    if world is not None:
        return worlds.plan_masks_from_blocks(plan, world)
    return {}


def _emit(doc: dict, out_path: str | None) -> None:
    text = json.dumps(doc, sort_keys=True)
    if out_path:
        Path(out_path).write_text(text + "\n")
    sys.stdout.write(text + "\n")


def _cmd_plan(args) -> int:
    plan = _load_plan(args)
    report = validate_plan(plan.actions, plan.source_prompt, plan.target_prompt)
    _emit(
        {
            "source_prompt": plan.source_prompt,
            "target_prompt": plan.target_prompt,
            "actions": [_action_doc(a) for a in plan.actions],
            "violations": report,
        },
        args.out,
    )
    return 0 if not report else 1


def _cmd_group(args) -> int:
    plan = _load_plan(args)
    world = load_world(Path(args.world).read_text()) if args.world else None
    masks = _resolve_masks(plan, args, world)
    classified = classify_plan(plan, masks, args.lam, args.beta)
    assignment = group_edits(classified, args.lam)
    groups_doc = []
    for g in assignment.groups:
        members = []
        for ca in g.members:
            a = ca.action
            aspect = a.target_aspect if a.target_aspect is not None else a.source_aspect
            members.append({"action": a.action, "text": aspect.text})
        groups_doc.append(
            {
                "type": g.edit_type,
                "members": members,
                "matte": attention.alpha_matte(g.union_mask),
            }
        )
    _emit({"N": assignment.N, "groups": groups_doc}, args.out)
    return 0


def _make_predictor(args, schedule):
    if args.backend == "gmm":
        if not args.world:
            raise _UsageError("--backend gmm requires --world")
        world = load_world(Path(args.world).read_text())
        return GmmPredictor(world, schedule), world
    if not args.endpoint:
        raise _UsageError("--backend external requires --endpoint")
    try:
        from aspectedit_bridge import RemotePredictor
    except ImportError as exc:
        raise BackendError(f"external backend unavailable: {exc}") from exc
    return RemotePredictor(args.endpoint, schedule), None


def _cmd_edit(args) -> int:
    plan = _load_plan(args)
    schedule = build_schedule("linear", T=1000)
    predictor, world = _make_predictor(args, schedule)
    masks = _resolve_masks(plan, args, world)
    bindings = None
    grid_shape = (1, world.dimension) if world is not None else (1, 1)
    branches = plan_branches(
        plan, masks, args.lam, args.beta, label_bindings=bindings, grid_shape=grid_shape
    )
    if args.source_latent:
        z_src = np.load(args.source_latent)
    elif world is not None:
        cond = Conditioning.from_prompt(plan.source_prompt)
        idx = world.components_for(cond)
        mean = (world.weights[idx, None] * world.means[idx]).sum(0) / world.weights[idx].sum()
        z_src = mean.reshape(1, 1, -1)
    else:
        raise _UsageError("external backend requires --source-latent")
    config = EngineConfig(
        sampler=SamplerConfig(
            schedule=schedule, steps=args.steps, guidance=args.guidance, seed=args.seed
        ),
        lam=args.lam,
        beta=args.beta,
        bin_threshold=args.bin_threshold,
        mode=args.mode,
    )
    result = run_edit(z_src, plan, branches, predictor, config)
    if args.out:
        np.save(args.out, result.final)
        Path(str(args.out) + ".trace.jsonl").write_text(dump_trace(result.trace))
    _emit(
        {
            "branches": [
                {"index": b.index, "type": b.group.edit_type, "auxiliary": b.auxiliary,
                 "prompt": b.conditioning.prompt}
                for b in branches
            ],
            "final": {
                "shape": list(result.final.shape),
                "data": encode_f32(result.final),
            },
        },
        None,
    )
    return 0


def _cmd_eval(args) -> int:
    plan = _load_plan(args)
    if not args.source_image or not args.edited_image:
        raise _UsageError("eval requires --source-image and --edited-image")
    src = np.load(args.source_image)
    edt = np.load(args.edited_image)
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in wanted if m not in ALL_METRICS]
    if unknown:
        raise _UsageError(f"unknown metrics: {unknown}")
    embedder = ToyEmbedder()
    report = {}
    if {"psnr", "mse", "ssim"} & set(wanted):
        pix = pixel_metrics(src, edt)
        for key in ("psnr", "mse", "ssim"):
            if key in wanted:
                report[key] = getattr(pix, key)
    if "dclip" in wanted:
        ds = dclip_score(embedder, src, edt, plan.source_prompt, plan.target_prompt)
        report["dclip"] = ds.score
        report["dclip_degenerate"] = ds.degenerate
    if "aspacc" in wanted:
        acc, passes = aspacc_clip(embedder, edt, plan)
        report["aspacc"] = acc
        report["per_aspect"] = [bool(p) for p in passes]
    _emit(report, args.out)
    return 0


def _cmd_demo(args) -> int:
    scenario = worlds.two_aspect_scenario()
    schedule = build_schedule("linear", T=1000)
    predictor = GmmPredictor(scenario.world, schedule)
    branches = plan_branches(
        scenario.plan, scenario.masks, grid_shape=(1, scenario.world.dimension)
    )
    z_src = worlds.sample_source_latent(scenario, args.seed)
    config = EngineConfig(
        sampler=SamplerConfig(
            schedule=schedule, steps=args.steps, guidance=args.guidance, seed=args.seed
        ),
        mode=args.mode,
    )
    result = run_edit(z_src, scenario.plan, branches, predictor, config)
    final = result.final.reshape(-1)
    distance = float(np.max(np.abs(final - scenario.target_mean)))
    ok = distance <= 3.0 * scenario.stddev
    _emit(
        {
            "seed": args.seed,
            "source_latent": z_src.reshape(-1).tolist(),
            "final_latent": final.tolist(),
            "target_mean": scenario.target_mean.tolist(),
            "max_abs_distance": distance,
            "within_bound": ok,
        },
        args.out,
    )
    return 0 if ok else 1


_COMMANDS = {
    "plan": _cmd_plan,
    "group": _cmd_group,
    "edit": _cmd_edit,
    "eval": _cmd_eval,
    "demo": _cmd_demo,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (BackendError, UnsupportedBackendError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 2
    except (AspectEditError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
