import os
import sys
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..')))

import argparse
from pathlib import Path
from typing import List, Optional, Tuple

from config.settings import get_settings
from config.logging_config import setup_logger
from src.models.response_model import RunManifest
from src.ndgrad.checkpoint import load_container
from src.spritegen.dataset import load_dataset
from src.trainer.model import build_model
from src.utils.io import read_json
from src.utils.seeding import substream
from src.xeval.evaluator import Evaluator
from src.xeval.intervention import ORDERS


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--ckpt", required=True, help="Stage checkpoint inside a run directory")
    parser.add_argument("--data", default=None, help="Dataset directory (default: the one recorded in the run manifest)")
    parser.add_argument("--split", choices=["train", "test"], default="test")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out", default=None, help="Report directory (default <run>/eval)")


def add_evaluate_parsers(subparsers) -> None:
    settings = get_settings().evaluation

    parser = subparsers.add_parser("eval", help="Accuracy, concept error, IoU and head weights for a checkpoint")
    _add_common(parser)
    parser.set_defaults(handler=cmd_eval)

    parser = subparsers.add_parser("attribute", help="Top attributed latent dimensions of one concept, with saliency maps")
    _add_common(parser)
    parser.add_argument("--concept", required=True)
    parser.add_argument("--top", type=int, default=2)
    parser.add_argument("--samples", type=_int_list, default=[0], help="Comma-separated sample indices in the split")
    parser.set_defaults(handler=cmd_attribute)

    parser = subparsers.add_parser("traverse", help="Decode sweeps of single latent dimensions")
    _add_common(parser)
    parser.add_argument("--sample", type=int, default=0)
    parser.add_argument("--dims", type=_int_list, default=None, help="Comma-separated dimensions (default all)")
    parser.add_argument("--lo", type=float, default=settings.traversal_lo)
    parser.add_argument("--hi", type=float, default=settings.traversal_hi)
    parser.add_argument("--steps", type=int, default=settings.traversal_steps)
    parser.set_defaults(handler=cmd_traverse)

    parser = subparsers.add_parser("intervene", help="Test-time intervention curve over misclassified samples")
    _add_common(parser)
    parser.add_argument("--fractions", type=_float_list, default=settings.intervention_fractions)
    parser.add_argument("--order", choices=list(ORDERS), default="deviant")
    parser.add_argument("--seed", type=int, default=None, help="Seed for random order (default: the run seed)")
    parser.set_defaults(handler=cmd_intervene)


def load_run(ckpt: str, data_dir: Optional[str] = None) -> Tuple[object, object, RunManifest, List[str]]:
    """Rebuild the model recorded next to a checkpoint, load its parameters and its dataset."""
    settings = get_settings()
    ckpt_path = Path(ckpt)
    if not ckpt_path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {ckpt_path}")
    manifest_path = ckpt_path.parent / settings.data.run_manifest_file
    if not manifest_path.exists():
        raise FileNotFoundError(f"Run manifest not found next to the checkpoint: {manifest_path}")
    manifest = RunManifest.model_validate(read_json(manifest_path))

    cfg = manifest.config
    model = build_model(cfg.ablation, cfg.model, substream(cfg.seed, "init"))
    state = load_container(ckpt_path)
    model.load_state_dict({k: v for k, v in state.items() if not k.startswith("optim.")})
    model.eval()

    dataset = load_dataset(data_dir or manifest.dataset_dir)
    concept_names = [c.name for c in dataset.manifest.concept_defs][:cfg.model.n_annotated]
    return model, dataset, manifest, concept_names


def _evaluator(args: argparse.Namespace) -> Tuple[Evaluator, RunManifest]:
    model, dataset, manifest, concept_names = load_run(args.ckpt, args.data)
    out_dir = Path(args.out or Path(args.ckpt).parent / "eval")
    evaluator = Evaluator(model, dataset.split(args.split), concept_names, out_dir,
                          split_name=args.split, workers=args.workers)
    return evaluator, manifest


def cmd_eval(args: argparse.Namespace) -> int:
    logger = setup_logger("EvalCommand", get_settings().log.subdirectories["cli"])
    evaluator, _ = _evaluator(args)
    summary = evaluator.run()
    logger.info(f"Evaluated {args.ckpt} on {args.split}")
    print(f"Summary written to {evaluator.out_dir / 'summary.json'}: {summary.model_dump()}")
    return 0


def cmd_attribute(args: argparse.Namespace) -> int:
    evaluator, _ = _evaluator(args)
    if not evaluator.model.has_concepts:
        raise ValueError(f"{evaluator.model.kind.value} model has no concepts to attribute")
    table = evaluator.attribute(args.concept, args.top, args.samples)
    print(f"Attributed '{args.concept}' on {len(args.samples)} samples: {len(table)} rows in {evaluator.out_dir}")
    return 0


def cmd_traverse(args: argparse.Namespace) -> int:
    evaluator, _ = _evaluator(args)
    dims = args.dims if args.dims is not None else list(range(evaluator.model.cfg.latent_dim))
    paths = evaluator.traverse(args.sample, dims, args.lo, args.hi, args.steps)
    print(f"Wrote {len(paths)} traversal images to {evaluator.out_dir}")
    return 0


def cmd_intervene(args: argparse.Namespace) -> int:
    evaluator, manifest = _evaluator(args)
    seed = manifest.seed if args.seed is None else args.seed
    results = evaluator.intervention(args.fractions, seed, args.order)
    if not results:
        print("No misclassified samples; intervention curve is empty")
    for r in results:
        print(f"p={r.fraction_intervened:.2f} ({r.concepts_intervened} concepts): corrected {r.corrected_rate:.4f} of {r.sample_count}")
    return 0
