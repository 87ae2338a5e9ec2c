"""Command-line pipeline: corpus generation, classifier pretraining,
extractor pretraining, hierarchical or selector-free training, greedy
extraction, mention ranking, baselines, evaluation, and the downstream
feature-classification experiment.  Every stage is seeded and writes
byte-reproducible artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import baselines, corpus, evaluation, extractor, ranking, selector, trainer
from .estimator import CnnEstimator, train_estimator
from .trainer import PRESETS, TrainConfig


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, help="output file (or directory for train)")


def _add_lambdas(parser):
    parser.add_argument("--preset", choices=sorted(PRESETS), default="noisy",
                        help="hyperparameter preset (default: noisy)")
    parser.add_argument("--lambda1", type=float, default=None)
    parser.add_argument("--lambda2", type=float, default=None)
    parser.add_argument("--empty-penalty", type=float, default=-1.0,
                        help="reward assigned to an empty extraction")


def _lambdas(args):
    preset = PRESETS[args.preset]
    l1 = preset["lambda1"] if args.lambda1 is None else args.lambda1
    l2 = preset["lambda2"] if args.lambda2 is None else args.lambda2
    return l1, l2


def cmd_gen_corpus(args):
    cfg = corpus.GenConfig(
        n_relations=args.relations,
        mentions_per_relation=args.mentions_per_relation,
        bags=args.bags,
        sentences_per_bag=args.sentences_per_bag,
        noise_ratio=args.noise_ratio,
        seed=args.seed,
        min_fillers=args.min_fillers,
        max_fillers=args.max_fillers,
        test_fraction=args.test_fraction,
    )
    out = corpus.generate_synthetic(cfg)
    corpus.write_jsonl(out, args.out)
    print(f"wrote {out.n_sentences()} sentences in {len(out.bags)} bags to {args.out}")
    return 0


def cmd_pretrain_cnn(args):
    full = corpus.load_jsonl(args.corpus)
    train = full.subset("train")
    est, losses = train_estimator(
        train,
        lr=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        dropout=args.dropout,
        seed=args.seed,
        word_dim=args.word_dim,
        pos_dim=args.pos_dim,
        feature_maps=args.feature_maps,
    )
    est.save(args.out)
    print(f"initial loss {losses[0]:.4f}, final loss {losses[-1]:.4f}; saved to {args.out}")
    return 0


def cmd_pretrain_extractor(args):
    full = corpus.load_jsonl(args.corpus)
    train = full.subset("train")
    est = CnnEstimator.load(args.cnn, frozen=True)
    l1, l2 = _lambdas(args)
    policy = extractor.ExtractorPolicy.for_estimator(est)
    _, rewards = extractor.pretrain_extractor(
        train, policy, est, l1, l2,
        lr=args.lr,
        epochs=args.epochs,
        samples_per_sentence=args.samples,
        seed=args.seed,
        empty_penalty=args.empty_penalty,
    )
    policy.save(args.out)
    if rewards:
        print(f"mean sampled reward {rewards[0]:.4f} -> {rewards[-1]:.4f}; saved to {args.out}")
    return 0


def cmd_train(args):
    full = corpus.load_jsonl(args.corpus)
    train = full.subset("train")
    est = CnnEstimator.load(args.cnn, frozen=True)
    ext = extractor.ExtractorPolicy.load(args.extractor)
    sel = (
        selector.SelectorPolicy.load(args.selector)
        if args.selector
        else selector.SelectorPolicy.for_estimator(est)
    )
    l1, l2 = _lambdas(args)
    config = TrainConfig(
        lambda1=l1,
        lambda2=l2,
        gamma=args.gamma,
        lr=args.lr,
        episodes=args.epochs,
        trajectories_per_bag=args.trajectories,
        mode=args.mode,
        seed=args.seed,
        empty_mention_penalty=args.empty_penalty,
        use_baseline=args.baseline,
    )
    sel, ext, metrics = trainer.train_hrl(train, sel, ext, est, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext.save(out / "extractor.ckpt")
    if args.mode != "single":
        sel.save(out / "selector.ckpt")
    trainer.write_metrics_csv(metrics, out / "metrics.csv")
    if metrics:
        last = metrics[-1]
        print(
            f"episode {last['episode']}: bag reward {last['mean_final_reward_h']:.4f}, "
            f"extraction reward {last['mean_reward_l']:.4f}"
        )
    print(f"artifacts in {out}")
    return 0


def cmd_extract(args):
    full = corpus.load_jsonl(args.corpus)
    subset = full.subset(args.split)
    est = CnnEstimator.load(args.cnn, frozen=True)
    ext = extractor.ExtractorPolicy.load(args.extractor)
    sel = selector.SelectorPolicy.load(args.selector) if args.selector else None
    l1, l2 = _lambdas(args)
    config = TrainConfig(lambda1=l1, lambda2=l2, empty_mention_penalty=args.empty_penalty,
                         mode="hrl" if sel else "single", seed=args.seed)
    records = []
    traces = []
    for bag_idx, bag in enumerate(subset.bags):
        traj = trainer.greedy_rollout(bag, sel, ext, est, config)
        options = [s.option for s in traj.steps]
        traces.append(selector.trace_record(bag_idx, options, traj.final_reward))
        for sent_idx, step in enumerate(traj.steps):
            if step.extraction is not None:
                records.append(
                    extractor.extraction_record(
                        bag_idx, sent_idx, full.relations[bag.relation_id],
                        step.extraction.mention,
                    )
                )
    extractor.write_extractions(records, args.out)
    if args.trace_out:
        selector.write_selection_traces(traces, args.trace_out)
    print(f"wrote {len(records)} extractions to {args.out}")
    return 0


def cmd_baseline_ngram(args):
    full = corpus.load_jsonl(args.corpus)
    subset = full.subset(args.split)
    est = CnnEstimator.load(args.cnn, frozen=True)
    l1, l2 = _lambdas(args)
    records = []
    for bag_idx, bag in enumerate(subset.bags):
        for sent_idx, sentence in enumerate(bag.sentences):
            mention = baselines.ngram_extract(
                sentence, est, l1, l2, empty_penalty=args.empty_penalty
            )
            if not mention.is_empty():
                records.append(
                    extractor.extraction_record(
                        bag_idx, sent_idx, full.relations[bag.relation_id], mention
                    )
                )
    extractor.write_extractions(records, args.out)
    print(f"wrote {len(records)} extractions to {args.out}")
    return 0


def cmd_rank(args):
    full = corpus.load_jsonl(args.corpus)
    subset = full.subset(args.split)
    records = extractor.read_extractions(args.extractions)
    mentions = extractor.mentions_from_records(records, subset)
    counts = ranking.accumulate(mentions, subset)
    lexicon = ranking.top_n(counts, args.top, n_relations=len(full.relations))
    ranking.write_lexicon(lexicon, full.relations, args.out)
    print(f"wrote lexicon for {len(full.relations)} relations to {args.out}")
    return 0


def cmd_eval(args):
    full = corpus.load_jsonl(args.corpus)
    subset = full.subset(args.split)
    report = {}
    if args.extractions:
        records = extractor.read_extractions(args.extractions)
        mentions = extractor.mentions_from_records(records, subset)
        acc = evaluation.sentence_accuracy(mentions, subset)
        report["sentence_accuracy"] = acc.value
        report["sentence_accuracy_undefined"] = acc.undefined
        report["n_extracted"] = acc.n_extracted
    if args.lexicon:
        lexicon = ranking.read_lexicon(args.lexicon, full.relations)
        gold = corpus.gold_surface_sets(subset)
        report["precision_at_k"] = {
            str(k): evaluation.precision_at_k(lexicon, gold, k)
            for k in (int(v) for v in args.k.split(","))
        }
    if args.traces:
        traces = selector.read_selection_traces(args.traces)
        metrics = evaluation.selector_metrics(traces, subset)
        report["selector_precision"] = metrics["precision"]
        report["selector_recall"] = metrics["recall"]
    if args.downstream:
        with open(args.downstream, "r", encoding="utf-8") as fh:
            report["downstream_macro_f1"] = json.load(fh)["macro_f1"]
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_features(args):
    full = corpus.load_jsonl(args.corpus)
    lexicon = ranking.read_lexicon(args.lexicon, full.relations)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for sentence in full.sentences():
            bits = evaluation.mention_feature_vector(sentence, lexicon)
            rec = {
                "split": sentence.split,
                "label": sentence.relation_id,
                "bits": [int(b) for b in bits],
            }
            fh.write(json.dumps(rec) + "\n")
    print(f"wrote features to {args.out}")
    return 0


def cmd_classify(args):
    train_x, train_y, test_x, test_y = [], [], [], []
    with open(args.features, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["split"] == "train":
                train_x.append(rec["bits"])
                train_y.append(rec["label"])
            else:
                test_x.append(rec["bits"])
                test_y.append(rec["label"])
    f1 = evaluation.logreg_classify(
        train_x, train_y, test_x, test_y,
        lr=args.lr, epochs=args.epochs, seed=args.seed,
    )
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"macro_f1": f1}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"macro F1: {f1:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mentionrl",
        description="Relation mention extraction from noisy bags with hierarchical RL",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic noisy corpus")
    p.add_argument("--relations", type=int, default=5)
    p.add_argument("--mentions-per-relation", type=int, default=3)
    p.add_argument("--bags", type=int, default=100)
    p.add_argument("--sentences-per-bag", type=int, default=4)
    p.add_argument("--noise-ratio", type=float, default=0.0)
    p.add_argument("--min-fillers", type=int, default=1)
    p.add_argument("--max-fillers", type=int, default=4)
    p.add_argument("--test-fraction", type=float, default=0.2)
    _add_common(p)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("pretrain-cnn", help="train and freeze the reward classifier")
    p.add_argument("--corpus", required=True)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--batch", type=int, default=160)
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--word-dim", type=int, default=50)
    p.add_argument("--pos-dim", type=int, default=5)
    p.add_argument("--feature-maps", type=int, default=230)
    _add_common(p)
    p.set_defaults(func=cmd_pretrain_cnn)

    p = sub.add_parser("pretrain-extractor", help="pretrain the mention extractor")
    p.add_argument("--corpus", required=True)
    p.add_argument("--cnn", required=True)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--samples", type=int, default=1,
                   help="action sequences sampled per sentence per epoch")
    _add_lambdas(p)
    _add_common(p)
    p.set_defaults(func=cmd_pretrain_extractor)

    p = sub.add_parser("train", help="hierarchical (or single) RL training")
    p.add_argument("--corpus", required=True)
    p.add_argument("--cnn", required=True)
    p.add_argument("--extractor", required=True)
    p.add_argument("--selector", default=None, help="optional selector checkpoint to resume")
    p.add_argument("--mode", choices=("hrl", "single"), default="hrl")
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--gamma", type=float, default=0.999)
    p.add_argument("--trajectories", type=int, default=5)
    p.add_argument("--baseline", action="store_true",
                   help="subtract a moving-average reward baseline")
    _add_lambdas(p)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", help="greedy extraction over a split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--cnn", required=True)
    p.add_argument("--extractor", required=True)
    p.add_argument("--selector", default=None)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--trace-out", default=None, help="also write selection traces")
    _add_lambdas(p)
    _add_common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("baseline-ngram", help="n-gram search baseline extraction")
    p.add_argument("--corpus", required=True)
    p.add_argument("--cnn", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    _add_lambdas(p)
    _add_common(p)
    p.set_defaults(func=cmd_baseline_ngram)

    p = sub.add_parser("rank", help="rank extracted mentions into lexicons")
    p.add_argument("--corpus", required=True)
    p.add_argument("--extractions", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--top", type=int, default=10)
    _add_common(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("eval", help="evaluation report")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--extractions", default=None)
    p.add_argument("--lexicon", default=None)
    p.add_argument("--traces", default=None)
    p.add_argument("--downstream", default=None,
                   help="classify output JSON to merge into the report")
    p.add_argument("--k", default="1,2,5,10")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("features", help="binary mention-presence feature vectors")
    p.add_argument("--corpus", required=True)
    p.add_argument("--lexicon", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("classify", help="logistic regression over feature vectors")
    p.add_argument("--features", required=True)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=200)
    _add_common(p)
    p.set_defaults(func=cmd_classify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
