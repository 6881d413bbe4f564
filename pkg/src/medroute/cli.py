"""``medroute`` command line."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

from . import augment, dataset, ingest
from .checkpoint import CheckpointError, save_checkpoint
from .evaluation import Holdout, VocabSpec, holdout_evaluate, kfold_evaluate, leakage_safe_folds
from .metrics import emit_report
from .model import ModelConfig
from .tokenize import build_vocab
from .train import SyntheticSpec, TrainConfig, grid_search_batch_size, train_baseline_bow, train_model, write_history

log = logging.getLogger("medroute")


def _dump(obj) -> None:
    print(json.dumps(obj, ensure_ascii=False, indent=2))


def load_run_config(path: str | None) -> tuple[dict, TrainConfig, VocabSpec, float]:
    """Read ``{"model": {...}, "train": {...}, "vocab": {...}, "val_fraction": f}``.

    ``model`` holds ModelConfig fields except vocab_size / n_classes,
    which come from the data.
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
    model = dict(doc.get("model", {}))
    model.pop("vocab_size", None)
    model.pop("n_classes", None)
    known = {f.name for f in fields(ModelConfig)}
    unknown = set(model) - known
    if unknown:
        raise SystemExit(f"unknown model config keys: {sorted(unknown)}")
    tcfg = TrainConfig(**doc.get("train", {}))
    vspec = VocabSpec(**doc.get("vocab", {}))
    return model, tcfg, vspec, float(doc.get("val_fraction", 0.1))


# --- commands ---------------------------------------------------------------


def cmd_ingest(args) -> int:
    specs = ingest.load_sources(args.source)
    if len(specs) != 1:
        raise SystemExit("ingest expects exactly one source per run")
    urls = [u.strip() for u in Path(args.urls).read_text(encoding="utf-8").splitlines() if u.strip()]
    pages = list(ingest.fetch_pages(specs[0], urls, allow_network=args.allow_network, retries=args.retries))
    manifest = ingest.save_pages(pages, args.out)
    failed = sum(not p.ok for p in pages)
    _dump({"pages": len(pages), "failed": failed, "manifest": str(manifest)})
    return 0


def cmd_dataset_build(args) -> int:
    spec = ingest.load_sources(args.rules)[0]
    ds, skips = ingest.build_dataset(ingest.load_pages(args.pages), spec.extraction_rules)
    dataset.write_csv(ds, args.out)
    _dump({"records": len(ds), "skips": [asdict(s) for s in skips]})
    return 0


def cmd_dataset_stats(args) -> int:
    st = dataset.stats(dataset.read_csv(args.csv))
    _dump({"total": st.total, "per_class_counts": st.per_class_counts})
    return 0


def cmd_augment(args) -> int:
    ds = dataset.read_csv(args.inp)
    cfg = augment.AugmentConfig(args.target, seed=args.seed, downsample_majority=not args.keep_majority)
    out = augment.balance_dataset(ds, cfg)
    dataset.write_csv(out, args.out)
    if args.debug:
        debug = Path(args.out).with_suffix(".debug.csv")
        with open(debug, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*dataset.CSV_HEADER, "synthetic"])
            for r in out.records:
                w.writerow([r.source_url, r.question_text, r.specialization, int(r.is_synthetic)])
    st = dataset.stats(out)
    _dump({"total": st.total, "per_class_counts": st.per_class_counts})
    return 0


def cmd_synth(args) -> int:
    from .experiments import imbalanced_corpus
    from .synth import SynthSpec, generate_corpus

    if args.imbalance is None:
        ds = generate_corpus(SynthSpec(n_classes=args.classes, per_class=args.per_class, seed=args.seed))
    else:
        ds = imbalanced_corpus(args.seed, args.classes, args.per_class, args.imbalance)
    dataset.write_csv(ds, args.out)
    _dump({"records": len(ds), "per_class_counts": dataset.stats(ds).per_class_counts})
    return 0


def cmd_train(args) -> int:
    ds = dataset.read_csv(args.data)
    model_kw, tcfg, vspec, val_fraction = load_run_config(args.config)
    codec = dataset.fit_label_codec(ds)
    (tr, va), = leakage_safe_folds(ds, Holdout(1.0 - val_fraction, seed=tcfg.seed))
    train_ds, val_ds = ds.subset(tr), ds.subset(va)
    vocab = build_vocab(train_ds, min_freq=vspec.min_freq, max_size=vspec.max_size)
    mcfg = ModelConfig(vocab_size=len(vocab), n_classes=len(codec), **model_kw)
    ckpt = train_model(train_ds, val_ds, vocab, codec, mcfg, tcfg)
    save_checkpoint(ckpt, args.out)
    out_dir = Path(args.out).parent
    write_history(ckpt.history, out_dir / "history.csv")
    summary = {"checkpoint": str(args.out), "model_version": ckpt.model_version,
               "best_val_macro_f1": max(h["val_macro_f1"] for h in ckpt.history)}
    if args.baseline_bow:
        bow = train_baseline_bow(train_ds, val_ds, vocab, codec, epochs=args.bow_epochs, lr=args.bow_lr,
                                 seed=tcfg.seed)
        write_history(bow.history, out_dir / "history_bow.csv")
        summary["baseline_best_val_macro_f1"] = max(h["val_macro_f1"] for h in bow.history)
    _dump(summary)
    return 0


def cmd_gridsearch(args) -> int:
    doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    mcfg = ModelConfig(**doc.get("model", doc))
    candidates = [int(c) for c in args.candidates.split(",") if c.strip()]
    spec = SyntheticSpec(steps_per_candidate=args.steps, seed=args.seed,
                         memory_ceiling_bytes=int(args.memory_ceiling_mb * 1024 * 1024))
    result = grid_search_batch_size(mcfg, candidates, spec)
    _dump({"chosen": result.chosen, "table": result.table})
    return 0


def cmd_eval(args) -> int:
    ds = dataset.read_csv(args.data)
    model_kw, tcfg, vspec, val_fraction = load_run_config(args.config)
    mcfg = ModelConfig(vocab_size=3, n_classes=2, **model_kw)
    kind = "bow" if args.baseline_bow else "transformer"
    common = dict(seed=args.seed, paper_mode=args.paper_mode, kind=kind, val_fraction=val_fraction)
    out = Path(args.out)
    if args.mode == "kfold":
        res = kfold_evaluate(ds, vspec, mcfg, tcfg, args.k, **common)
        for i, fold in enumerate(res.folds, 1):
            emit_report(fold.report, fold.confusion, out / f"fold_{i}")
        summary = {"mode": "kfold", "k": args.k, "fold_macro_f1": [r.macro_f1 for r in res.reports],
                   "mean_macro_f1": res.mean_macro_f1, "std_macro_f1": res.std_macro_f1}
    else:
        fold = holdout_evaluate(ds, vspec, mcfg, tcfg, args.train_frac, **common)
        emit_report(fold.report, fold.confusion, out)
        summary = {"mode": "holdout", "train_frac": args.train_frac, "macro_f1": fold.report.macro_f1,
                   "accuracy": fold.report.accuracy}
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    _dump(summary)
    return 0


def cmd_predict(args) -> int:
    from .serve import Router

    router = Router.from_path(args.model, args.threshold)
    _dump(router.classify(args.text, args.k).to_dict())
    return 0


def cmd_serve(args) -> int:
    from .serve import make_server

    server = make_server(args.host, args.port)
    server.load_in_background(args.model, args.threshold)
    log.info("serving on %s", server.url)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="medroute", description="Route medical questions to specialists.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="fetch pages for one source")
    s.add_argument("--source", required=True, help="SourceSpec JSON")
    s.add_argument("--urls", required=True, help="file with one URL per line")
    s.add_argument("--out", required=True, help="pages directory")
    s.add_argument("--allow-network", action="store_true")
    s.add_argument("--retries", type=int, default=2)
    s.set_defaults(func=cmd_ingest)

    d = sub.add_parser("dataset", help="build or inspect a corpus CSV")
    dsub = d.add_subparsers(dest="dataset_command", required=True)
    b = dsub.add_parser("build")
    b.add_argument("--pages", required=True)
    b.add_argument("--rules", required=True, help="SourceSpec JSON holding the extraction rules")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_dataset_build)
    st = dsub.add_parser("stats")
    st.add_argument("csv")
    st.set_defaults(func=cmd_dataset_stats)

    a = sub.add_parser("augment", help="balance classes by word shuffling")
    a.add_argument("--in", dest="inp", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--target", type=int, required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--keep-majority", action="store_true")
    a.add_argument("--debug", action="store_true", help="also write <out>.debug.csv with a synthetic column")
    a.set_defaults(func=cmd_augment)

    y = sub.add_parser("synth", help="generate the synthetic keyword corpus")
    y.add_argument("--out", required=True)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--classes", type=int, default=12)
    y.add_argument("--per-class", type=int, default=500)
    y.add_argument("--imbalance", type=float, default=None, help="geometric class-size ratio, e.g. 0.85")
    y.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train the encoder classifier")
    t.add_argument("--data", required=True)
    t.add_argument("--config", default=None, help="run config JSON (model/train/vocab)")
    t.add_argument("--out", required=True)
    t.add_argument("--baseline-bow", action="store_true", help="also train the bag-of-words baseline")
    t.add_argument("--bow-epochs", type=int, default=30)
    t.add_argument("--bow-lr", type=float, default=2.0)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("gridsearch-batch", help="pick a batch size by measured throughput")
    g.add_argument("--config", required=True, help="ModelConfig JSON")
    g.add_argument("--candidates", required=True, help="comma-separated batch sizes")
    g.add_argument("--steps", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--memory-ceiling-mb", type=float, default=2048)
    g.set_defaults(func=cmd_gridsearch)

    e = sub.add_parser("eval", help="k-fold or holdout evaluation")
    e.add_argument("--data", required=True)
    e.add_argument("--mode", choices=("kfold", "holdout"), default="kfold")
    e.add_argument("--k", type=int, default=3)
    e.add_argument("--train-frac", type=float, default=0.9)
    e.add_argument("--config", default=None)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--paper-mode", action="store_true", help="allow augmented records in test folds")
    e.add_argument("--baseline-bow", action="store_true", help="evaluate the bag-of-words baseline instead")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("serve", help="HTTP routing service")
    v.add_argument("--model", required=True)
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8080)
    v.add_argument("--threshold", type=float, default=0.5)
    v.set_defaults(func=cmd_serve)

    r = sub.add_parser("predict", help="one-shot routing of a text")
    r.add_argument("--model", required=True)
    r.add_argument("--text", required=True)
    r.add_argument("--k", type=int, default=5)
    r.add_argument("--threshold", type=float, default=0.5)
    r.set_defaults(func=cmd_predict)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    from .serve import ValidationError

    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, ingest.IngestError, CheckpointError, ValidationError) as exc:
        print(f"medroute: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
