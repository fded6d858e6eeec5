"""Command-line interface: data synthesis, training, evaluation, few-shot
harness, one-off inference, the HTTP service, and gradient checks."""

import os

# Pin BLAS threading before numpy loads; single-threaded math keeps training
# and evaluation bitwise reproducible.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def _load_dataset(manifest: str):
    from .data_synth import load_manifest

    dataset = load_manifest(Path(manifest))
    return dataset, dataset.load_sketch_bank()


def _print_record(record: dict) -> None:
    print(json.dumps(record), file=sys.stderr)


def cmd_synth_data(args) -> int:
    from .data_synth import generate_dataset

    manifest = generate_dataset(
        Path(args.out),
        n_train=args.n_train,
        n_test=args.n_test,
        sketch_counts={"train": args.train_sketches, "testA": args.test_sketches, "testB": args.test_sketches},
        seed=args.seed,
        image_size=args.image_size,
    )
    print(manifest)
    return 0


def cmd_train(args) -> int:
    from .engine import TrainConfig, save_checkpoint, train
    from .model import ModelConfig

    dataset, bank = _load_dataset(args.data)
    model_cfg = ModelConfig(image_size=dataset.image_size, sketch_mode=args.sketch_mode)
    config = TrainConfig.desk(
        seed=args.seed,
        max_iterations=args.iterations,
        batch_size=args.batch_size,
        lr=args.lr,
        decay_every=args.decay_every,
        checkpoint_every=args.checkpoint_every,
        model=model_cfg,
    )
    out_dir = Path(args.out)
    ckpt = train(
        config,
        dataset,
        bank,
        out_dir=out_dir,
        metrics_path=args.metrics,
        progress=_print_record if not args.quiet else None,
    )
    path = out_dir / "checkpoint-final.bin"
    print(f"{path} digest={ckpt.digest}")
    return 0


def cmd_eval(args) -> int:
    from .engine import evaluate, load_checkpoint

    dataset, bank = _load_dataset(args.data)
    ckpt = load_checkpoint(Path(args.checkpoint))
    report = evaluate(
        ckpt,
        dataset,
        args.scene_split,
        bank,
        args.sketch_split,
        ks=_int_list(args.ks),
        seed=args.seed,
        max_scenes=args.max_scenes,
    )
    if args.json:
        print(report.to_json())
    else:
        print(report.to_table())
    return 0


def cmd_few_shot(args) -> int:
    from .engine import TrainConfig, format_few_shot_table, run_few_shot
    from .model import ModelConfig

    dataset, bank = _load_dataset(args.data)
    config = TrainConfig.desk(
        max_iterations=args.iterations,
        model=ModelConfig(image_size=dataset.image_size),
    )
    rows = run_few_shot(
        dataset,
        bank,
        config,
        shots=tuple(_int_list(args.shots)),
        seeds=tuple(_int_list(args.seeds)),
        max_eval_scenes=args.max_eval_scenes,
        progress=_print_record if not args.quiet else None,
    )
    table = format_few_shot_table(rows)
    print(table)
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=1) + "\n" + table + "\n")
    return 0


def cmd_infer(args) -> int:
    from .engine import infer, load_checkpoint
    from .sketch_graph import parse_ndjson

    ckpt = load_checkpoint(Path(args.checkpoint))
    image = np.asarray(Image.open(args.image).convert("RGB"), dtype=np.float32) / 255.0
    lines = [line for line in Path(args.sketch).read_text().splitlines() if line.strip()]
    if not lines:
        print("sketch file is empty", file=sys.stderr)
        return 2
    drawing = parse_ndjson(lines[0])
    preds = infer(ckpt, image, drawing, k=args.k, score_thresh=args.score_thresh)
    print(
        json.dumps(
            {
                "grasps": [
                    {"x": p.rect.x, "y": p.rect.y, "w": p.rect.w, "h": p.rect.h, "theta": p.rect.theta, "score": p.score}
                    for p in preds
                ]
            },
            indent=1,
        )
    )
    return 0


def cmd_serve(args) -> int:
    from .engine import load_checkpoint
    from .service import create_app, serve

    ckpt = load_checkpoint(Path(args.checkpoint))
    dataset = None
    if args.data:
        dataset, _ = _load_dataset(args.data)
    app = create_app(ckpt, dataset=dataset, scene_split=args.scene_split)
    print(f"serving on http://{args.host}:{args.port} (checkpoint {ckpt.digest[:12]})", file=sys.stderr)
    serve(app, host=args.host, port=args.port)
    return 0


def cmd_gradcheck(args) -> int:
    from .data_synth import synth_scene, synth_sketch
    from .engine import TrainConfig, make_loss_fn
    from .gradcheck import end_to_end_check, run_primitive_suite
    from .model import GraspModel, ModelConfig

    failures = 0
    for name, err in sorted(run_primitive_suite(seed=args.seed).items()):
        ok = err < 1e-3
        failures += 0 if ok else 1
        print(f"{'PASS' if ok else 'FAIL'} {name:<28} rel-err {err:.3e}")

    config = TrainConfig.desk(
        max_iterations=1,
        model=ModelConfig(image_size=64, feat_dim=16, image_channels=(8, 16, 32), num_points=48),
        rpn_batch=16,
        roi_batch=16,
        rpn_proposal_boxes=0,
        random_boxes=4,
    )
    model = GraspModel.init(config.model, seed=args.seed)
    scene = synth_scene(args.seed, image_size=64, n_objects_range=(1, 2))
    drawing = synth_sketch(scene.objects[0].category, seed=args.seed)
    loss_fn = make_loss_fn(model, scene, drawing, scene.objects[0].category, config, seed=args.seed)
    err = end_to_end_check(loss_fn, model.named(), n_samples=10, seed=args.seed)
    ok = err < 1e-2
    failures += 0 if ok else 1
    print(f"{'PASS' if ok else 'FAIL'} {'end-to-end loss':<28} rel-err {err:.3e}")
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sketchgrasp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=400)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--image-size", type=int, default=128)
    p.add_argument("--train-sketches", type=int, default=120)
    p.add_argument("--test-sketches", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True, help="dataset manifest path")
    p.add_argument("--out", required=True, help="checkpoint output directory")
    p.add_argument("--metrics", default=None, help="NDJSON metrics log path")
    p.add_argument("--iterations", type=int, default=5000)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--decay-every", type=int, default=1600)
    p.add_argument("--checkpoint-every", type=int, default=1000)
    p.add_argument("--sketch-mode", choices=("graph", "image"), default="graph")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scene-split", default="test")
    p.add_argument("--sketch-split", default="testA")
    p.add_argument("--ks", default="1,2,3")
    p.add_argument("--max-scenes", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("few-shot", help="few-shot encoder comparison grid")
    p.add_argument("--data", required=True)
    p.add_argument("--shots", default="5,10,100")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--iterations", type=int, default=1500)
    p.add_argument("--max-eval-scenes", type=int, default=None)
    p.add_argument("--out", default=None, help="write rows + table to this file")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_few_shot)

    p = sub.add_parser("infer", help="predict grasps for one image + sketch")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="PNG image path")
    p.add_argument("--sketch", required=True, help="NDJSON sketch file (first line used)")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--score-thresh", type=float, default=0.0)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("serve", help="run the inference HTTP service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None, help="manifest whose scenes become browsable")
    p.add_argument("--scene-split", default="test")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8420)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
