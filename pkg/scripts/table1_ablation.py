"""Train one model per EE category and print the ee / ee_w_sp / ours table.

    python scripts/table1_ablation.py [--data DIR] [--steps N] [--k K]

Models are cached under ``<data>/../models``; delete them to retrain.
"""
import argparse
import time
from pathlib import Path

from eepose.datagen import Dataset, GeneratorConfig, generate_dataset
from eepose.diffusion import SampleConfig, TrainConfig
from eepose.harness import evaluate, model_predictor, train_model
from eepose.scorenet import save_params


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", default="runs/default/data")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--k", type=int, default=50)
    ap.add_argument("--ode-steps", type=int, default=500)
    args = ap.parse_args()

    root = Path(args.data)
    if not (root / "manifest.json").exists():
        generate_dataset(GeneratorConfig(), args.seed, root)
    ds = Dataset(root)
    models = root.parent / "models"
    models.mkdir(parents=True, exist_ok=True)
    for cat in ds.categories():
        path = models / f"{cat}.teep"
        if path.exists():
            continue
        t0 = time.time()
        cfg = TrainConfig(epochs=10**6, max_steps=args.steps, batch_size=16, lr=1e-3, lr_final=1e-5, seed=args.seed)
        params, hist = train_model(ds, cat, cfg)
        save_params(params, path)
        print(f"trained {cat}: loss {hist[0]:.3f} -> {hist[-1]:.3f} in {time.time() - t0:.0f}s")
    pred = model_predictor(str(models / "{category}.teep"), SampleConfig(k=args.k, ode_steps=args.ode_steps, seed=args.seed))
    rep = evaluate(list(ds.examples(split="test")), pred)
    print(rep.format_table())


if __name__ == "__main__":
    main()
