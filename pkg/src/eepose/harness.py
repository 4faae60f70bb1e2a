"""Command-line orchestration: gen, analyze, train, eval, infer, report."""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .datagen import Dataset, EEExample, config_hash, generate_dataset, load_config, read_xyz
from .diffusion import (SampleConfig, SdeSchedule, TrainConfig, TrainingSet, estimate_poses,
                        train)
from .errors import (ConfigError, EEPoseError, EmptyTestSplit, InsufficientData, MissingInput,
                     ModelMissing)
from .geometry import Pose, SymmetryFlags, geodesic_angle, pose_from_json, pose_to_json
from .metrics import (DEFAULT_THRESHOLDS, ConsistencyReport, PoseError, ThresholdSpec,
                      consistency_report, map_at_thresholds, rotation_error_symaware,
                      translation_error)
from .scorenet import NetConfig, init_params, load_params, save_params

log = logging.getLogger("eepose")

CONDITIONS = ("ee", "ee_w_sp", "ours")
UNIMPLEMENTED_CONDITIONS = ("obj_w_pp",)


# -- analysis ----------------------------------------------------------------------

def canonical_views(examples: Iterable[EEExample]):
    """Yield ``(category, centering, cloud)`` with the object or EE pose removed."""
    for ex in examples:
        yield ex.category, "object_centric", ex.object_pose.inverse().apply(ex.cloud)
        yield ex.category, "ee_centric", ex.pose.inverse().apply(ex.cloud)


def analyze_dataset(ds: Dataset, max_per_group: int = 40, n_points: int = 256, seed: int = 0) -> ConsistencyReport:
    """Consistency study on up to ``max_per_group`` seeded-random clouds per category."""
    by_cat = defaultdict(list)
    for ex in ds.examples(load=False):
        by_cat[ex.category].append(ex.sample_id)
    chosen = set()
    for cat, ids in sorted(by_cat.items()):
        ids = sorted(ids)
        if len(ids) < 2:
            raise InsufficientData(f"category {cat} has {len(ids)} cloud(s); need at least 2")
        rng = np.random.default_rng([seed, len(ids)])
        pick = ids if len(ids) <= max_per_group else [ids[i] for i in sorted(rng.choice(len(ids), max_per_group, replace=False))]
        chosen.update((cat, s) for s in pick)
    if not chosen:
        raise InsufficientData("dataset has no clouds")
    exs = [ex for ex in _examples_filtered(ds, chosen)]
    return consistency_report(canonical_views(exs), n_points=n_points, seed=seed)


def _examples_filtered(ds: Dataset, chosen):
    for rec in ds.records:
        for j, ee in enumerate(rec["ee"]):
            if (ee["category"], rec["sample_id"]) in chosen:
                pose, s = pose_from_json(ee["pose"])
                obj, _ = pose_from_json(rec["object_pose"])
                yield EEExample(rec["sample_id"], rec["instance_id"], ee["category"], rec["split"],
                                read_xyz(ds.root / ee["cloud"]), pose, np.asarray(s, float), obj,
                                int(ee["n_observed"]))


# -- evaluation --------------------------------------------------------------------

Predictor = Callable[[Sequence[EEExample]], list[tuple[Pose, SymmetryFlags]]]


@dataclass
class EvalReport:
    thresholds: tuple[ThresholdSpec, ...]
    # category -> condition -> threshold label -> precision
    table: dict[str, dict[str, dict[str, float]]] = field(default_factory=dict)
    symmetric: dict[str, str] = field(default_factory=dict)
    n_samples: dict[str, int] = field(default_factory=dict)

    def average(self) -> dict[str, dict[str, float]]:
        cats = sorted(self.table)
        return {c: {th.label: float(np.mean([self.table[k][c][th.label] for k in cats])) for th in self.thresholds}
                for c in CONDITIONS}

    def columns(self, conditions=CONDITIONS):
        return [(th.label, c) for th in self.thresholds for c in conditions]

    def to_csv(self, conditions=CONDITIONS) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = self.columns(conditions)
        w.writerow(["category", "symmetric", "n"] + [f"{lab}_{c}" for lab, c in cols])
        for cat in sorted(self.table):
            w.writerow([cat, self.symmetric[cat], self.n_samples[cat]] + [f"{self.table[cat][c][lab]:.3f}" for lab, c in cols])
        avg = self.average()
        w.writerow(["Average", "-", sum(self.n_samples.values())] + [f"{avg[c][lab]:.3f}" for lab, c in cols])
        return buf.getvalue()

    def format_table(self, conditions=CONDITIONS) -> str:
        cols = self.columns(conditions)
        head = f"{'category':<18} {'sym':<5} " + " ".join(f"{lab + ':' + c:>16}" for lab, c in cols)
        lines = [head]
        rows = [(cat, self.symmetric[cat], self.table[cat]) for cat in sorted(self.table)]
        rows.append(("Average", "-", self.average()))
        for cat, sym, vals in rows:
            lines.append(f"{cat:<18} {sym:<5} " + " ".join(f"{vals[c][lab]:>16.3f}" for lab, c in cols))
        return "\n".join(lines)


def condition_errors(pred: Pose, pred_flags: SymmetryFlags, gt: Pose, gt_flags: SymmetryFlags) -> dict[str, PoseError]:
    tr = translation_error(pred, gt)
    return {
        "ee": PoseError(geodesic_angle(pred.rot, gt.rot), tr),
        "ee_w_sp": PoseError(rotation_error_symaware(pred.rot, gt.rot, gt_flags), tr),
        "ours": PoseError(rotation_error_symaware(pred.rot, gt.rot, pred_flags), tr),
    }


def evaluate(examples: Sequence[EEExample], predictor: Predictor,
             thresholds: Sequence[ThresholdSpec] = DEFAULT_THRESHOLDS) -> EvalReport:
    """Score one prediction per example under every ablation condition."""
    if len(examples) == 0:
        raise EmptyTestSplit("no test examples")
    by_cat = defaultdict(list)
    for ex in sorted(examples, key=lambda e: (e.category, e.sample_id)):
        by_cat[ex.category].append(ex)
    report = EvalReport(tuple(thresholds))
    for cat, exs in by_cat.items():
        preds = predictor(exs)
        errs = defaultdict(list)
        for ex, (pose, flags) in zip(exs, preds):
            for c, e in condition_errors(pose, flags, ex.pose, ex.flags).items():
                errs[c].append(e)
        report.table[cat] = {c: map_at_thresholds(errs[c], thresholds) for c in CONDITIONS}
        n_sym = sum(ex.flags.count > 0 for ex in exs)
        report.symmetric[cat] = "Yes" if n_sym == len(exs) else ("No" if n_sym == 0 else "Mixed")
        report.n_samples[cat] = len(exs)
    return report


def model_predictor(model_path: str, config: SampleConfig) -> Predictor:
    """Predictor loading ``model_path`` (``{category}`` is substituted per category)."""
    cache = {}

    def predict(exs):
        path = model_path.format(category=exs[0].category)
        if path not in cache:
            if not Path(path).is_file():
                raise ModelMissing(f"model file not found: {path}")
            cache[path] = load_params(path)
        ests = estimate_poses(cache[path], [ex.cloud for ex in exs], config)
        return [(e.pose, e.flags) for e in ests]

    return predict


def training_set(ds: Dataset, trans_scale: float, category: str | None = None, split: str = "train",
                 principal: bool = True) -> TrainingSet:
    exs = list(ds.examples(split=split, category=category))
    if not exs:
        raise InsufficientData(f"no {split} examples for category {category or 'any'}")
    return TrainingSet.from_examples([e.cloud for e in exs], [e.pose for e in exs], [e.s for e in exs], trans_scale,
                                     principal, canonical_spin=principal)


def train_model(ds: Dataset, category: str | None, train_cfg: TrainConfig, net: NetConfig = NetConfig(),
                trans_scale: float = 0.05, principal: bool = True, callback=None):
    """Train one model; with ``principal`` the inputs are canonicalized and rotation augmentation is skipped."""
    data = training_set(ds, trans_scale, category, principal=principal)
    meta = {**train_cfg.schedule.meta(), "trans_scale": trans_scale, "principal_frame": float(principal)}
    params = init_params(net, seed=train_cfg.seed, meta=meta)
    if principal and train_cfg.augment:
        train_cfg = replace(train_cfg, augment=False)
    return train(params, data, train_cfg, callback)


# -- provenance ------------------------------------------------------------------------

def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_csv_with_meta(path: Path, text: str, meta: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(text)
    meta = dict(meta, file=path.name, sha256=sha256_file(path))
    with open(str(path) + ".meta.json", "w", newline="\n") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def build_report(inputs: Sequence[Path]) -> tuple[str, list[str]]:
    """Collate CSVs (with their ``.meta.json`` sidecars) into a markdown summary."""
    csvs = []
    for p in inputs:
        p = Path(p)
        if p.is_dir():
            csvs.extend(sorted(p.glob("*.csv")))
        elif p.suffix == ".csv" and p.is_file():
            csvs.append(p)
    if not csvs:
        raise MissingInput("no CSV inputs found")
    warnings = []
    lines = ["# Experiment report", "", "| file | sha256 | seed | config hash |", "|---|---|---|---|"]
    bodies = []
    for path in csvs:
        digest = sha256_file(path)
        meta_path = Path(str(path) + ".meta.json")
        meta = {}
        if meta_path.is_file():
            meta = json.loads(meta_path.read_text())
            if meta.get("sha256") != digest:
                warnings.append(f"{path.name}: checksum {digest[:12]} differs from recorded {str(meta.get('sha256'))[:12]} (stale or edited)")
        else:
            warnings.append(f"{path.name}: no provenance sidecar")
        lines.append(f"| {path.name} | {digest} | {meta.get('seed', '?')} | {meta.get('config_hash', '?')} |")
        bodies += ["", f"## {path.name}", "", "```", path.read_text().rstrip("\n"), "```"]
    if "obj_w_pp" not in "".join(b for b in bodies):
        bodies += ["", "Condition `obj_w_pp` is not implemented (whole-object prior extraction is unspecified)."]
    lines += ["", "## Warnings", ""] + ([f"- {w}" for w in warnings] or ["- none"])
    return "\n".join(lines + bodies) + "\n", warnings


# -- CLI ----------------------------------------------------------------------------------

def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--out", default=None)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eepose", description="End-effector pose diffusion toolkit")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--samples-per-category", type=int, default=None)

    p = sub.add_parser("analyze", help="object- vs EE-centric consistency study")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--max-per-group", type=int, default=40)
    p.add_argument("--points", type=int, default=256)

    p = sub.add_parser("train", help="train a score network")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--category", default=None)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-final", type=float, default=None)
    p.add_argument("--sigma-min", type=float, default=0.01)
    p.add_argument("--sigma-max", type=float, default=5.0)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--draws", type=int, default=8)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--trans-scale", type=float, default=0.05)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--frame", choices=("principal", "centroid"), default="principal",
                   help="model-space input frame; 'centroid' keeps camera axes and uses rotation augmentation")

    p = sub.add_parser("eval", help="Table I style ablation on the test split")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True, help="model path; may contain {category}")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--ode-steps", type=int, default=500)
    p.add_argument("--thresholds", nargs="+", default=[t.label for t in DEFAULT_THRESHOLDS])
    p.add_argument("--condition", choices=CONDITIONS + UNIMPLEMENTED_CONDITIONS, default=None)
    p.add_argument("--categories", nargs="+", default=None)

    p = sub.add_parser("infer", help="estimate the pose of one cloud")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--cloud", required=True)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--ode-steps", type=int, default=500)
    p.add_argument("--refine-ref", default=None, help="pose JSON whose rotation is the refinement reference")

    p = sub.add_parser("report", help="collate CSV outputs into a markdown report")
    _common(p)
    p.add_argument("--inputs", nargs="*", default=[])
    return ap


def cmd_gen(args) -> int:
    cfg = load_config(args.config)
    if args.samples_per_category is not None:
        cfg.samples_per_category = args.samples_per_category
        cfg.validate()
    out = Path(args.out or "data")
    t0 = time.time()
    manifest = generate_dataset(cfg, args.seed, out)
    print(f"wrote {len(manifest['samples'])} scenes to {out} in {time.time() - t0:.1f}s")
    return 0


def _open_dataset(path) -> Dataset:
    ds = Dataset(path)
    if not ds.records:
        raise MissingInput(f"dataset {path} has no samples")
    return ds


def cmd_analyze(args) -> int:
    ds = _open_dataset(args.dataset)
    rep = analyze_dataset(ds, args.max_per_group, args.points, args.seed)
    out = Path(args.out or ".") / "consistency.csv"
    write_csv_with_meta(out, rep.to_csv(), {"command": "analyze", "seed": args.seed, "dataset": str(args.dataset),
                                            "config_hash": ds.manifest.get("config_hash")})
    wins = rep.ee_more_consistent()
    print(rep.to_csv(), end="")
    print(f"EE-centric strictly more consistent in {sum(wins.values())}/{len(wins)} comparisons")
    return 0


def cmd_train(args) -> int:
    ds = _open_dataset(args.dataset)
    try:
        sched = SdeSchedule(args.sigma_min, args.sigma_max, args.eps)
        tc = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, seed=args.seed, schedule=sched,
                         draws=args.draws, augment=not args.no_augment, lr_final=args.lr_final, max_steps=args.max_steps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out or "model.teep")

    def cb(epoch, loss):
        log.info("epoch %d loss %.4f", epoch, loss)

    params, hist = train_model(ds, args.category, tc, trans_scale=args.trans_scale,
                               principal=args.frame == "principal", callback=cb)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_params(params, out)
    print(f"saved {out}; first/last epoch loss {hist[0]:.4f} / {hist[-1]:.4f}" if hist else f"saved {out}")
    return 0


def cmd_eval(args) -> int:
    if args.condition in UNIMPLEMENTED_CONDITIONS:
        raise ConfigError(f"condition '{args.condition}' is unimplemented (whole-object prior extraction is unspecified)")
    ds = _open_dataset(args.dataset)
    try:
        thresholds = [ThresholdSpec.parse(t) for t in args.thresholds]
        sc = SampleConfig(k=args.k, ode_steps=args.ode_steps, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    exs = [ex for ex in ds.examples(split="test") if args.categories is None or ex.category in args.categories]
    if not exs:
        raise EmptyTestSplit("test split is empty")
    report = evaluate(exs, model_predictor(args.model, sc), thresholds)
    conds = CONDITIONS if args.condition is None else (args.condition,)
    out = Path(args.out or ".") / "map_table.csv"
    write_csv_with_meta(out, report.to_csv(conds), {"command": "eval", "seed": args.seed, "model": args.model,
                                                   "k": args.k, "ode_steps": args.ode_steps,
                                                   "config_hash": ds.manifest.get("config_hash")})
    print(report.format_table(conds))
    return 0


def cmd_infer(args) -> int:
    if not Path(args.model).is_file():
        raise ModelMissing(f"model file not found: {args.model}")
    params = load_params(args.model)
    cloud = read_xyz(args.cloud)
    ref = None
    if args.refine_ref:
        ref, _ = pose_from_json(json.loads(Path(args.refine_ref).read_text()))
        ref = ref.rot
    est = estimate_poses(params, [cloud], SampleConfig(k=args.k, ode_steps=args.ode_steps, seed=args.seed), ref)[0]
    doc = {"pose": pose_to_json(est.pose, est.pooled.s), "flags": [bool(f) for f in est.flags]}
    text = json.dumps(doc, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_report(args) -> int:
    text, warnings = build_report([Path(p) for p in args.inputs])
    out = Path(args.out or ".") / "report.md"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(f"wrote {out} ({len(warnings)} warning(s))")
    return 0


COMMANDS = {"gen": cmd_gen, "analyze": cmd_analyze, "train": cmd_train, "eval": cmd_eval,
            "infer": cmd_infer, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.cmd](args)
    except EEPoseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
