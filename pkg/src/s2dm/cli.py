"""Command line entry point: ``s2dm <subcommand> [--config run.yaml] [--set key=value ...]``.

Layout under ``out_dir``::

    config.yaml                   resolved config of the last command
    data/                         CoNLL-U, alignments, MRC and STS files, vocab.txt
    stage1/                       encoder + disentangler checkpoints, loss.jsonl
    stage2/                       span-model checkpoints (S2DM and baseline), loss.jsonl
    eval/                         reports.jsonl, predictions, pca.csv
    ablate/                       reports.jsonl
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline as P
from .config import RunConfig
from .data.mrc import MrcConfig, load_mrc, make_synthetic_mrc, write_mrc
from .data.synthetic import make_sts_set
from .encoder import Vocab
from .errors import ConfigError, ContractError, NumericError, ParseError
from .evaluation import EvalReport, pca_export, write_reports
from .mrc_head import write_predictions
from .nn import load_checkpoint, save_checkpoint

log = logging.getLogger("s2dm")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def resolve_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = None if v.strip().lower() in ("none", "null") else v.strip()
    if args.out_dir:
        overrides["out_dir"] = args.out_dir
    cfg = cfg.override(**overrides).apply_env()
    if args.seed is not None:
        cfg = cfg.override(seed=args.seed)
    return cfg.validate()


def _archive(cfg):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.yaml")
    return out


def _need(path, what):
    if not Path(path).exists():
        raise FileNotFoundError(f"missing {what}: {path} (run the earlier stage first)")
    return Path(path)


# ---------------------------------------------------------------------------- commands


def cmd_gen_data(cfg):
    out = _archive(cfg)
    data = out / "data"
    corpus = P.build_corpus(cfg)
    P.write_corpus(corpus, data)
    Vocab.from_lexicon(corpus.lexicon).save(data / "vocab.txt")
    mrc = make_synthetic_mrc(corpus, cfg.seed + 7, MrcConfig(
        n_examples=cfg.n_mrc, constituent_fraction=cfg.constituent_fraction, max_len=cfg.max_len))
    for lang, exs in mrc.items():
        write_mrc(data / f"mrc.{lang}.jsonl", exs)
    P.write_sts(data / "sts.jsonl", make_sts_set(corpus, cfg.n_sts, cfg.seed + 5))
    log.info("wrote %d train / %d held-out pairs, %d MRC examples per language to %s",
             len(corpus.train), len(corpus.heldout), cfg.n_mrc, data)
    return data


def _load_data(cfg):
    data = _need(Path(cfg.out_dir) / "data", "corpus directory")
    vocab = Vocab.load(_need(data / "vocab.txt", "vocabulary"))
    return data, vocab


def _encoded_pairs(encoder, vocab, pairs):
    items = P.prepare_pairs(pairs, vocab)
    P.encode_sentences(encoder, [x for it in items for x in (it.s, it.t)])
    return items


def cmd_train_stage1(cfg):
    out = _archive(cfg)
    data, vocab = _load_data(cfg)
    train = P.read_pairs(data, "train")
    stage = out / "stage1"
    stage.mkdir(exist_ok=True)
    encoder = P.build_encoder(cfg, vocab, _PairsCorpus(train))
    encoder.set_frozen(True)
    enc_hash = encoder.parameter_hash()
    items = _encoded_pairs(encoder, vocab, train)
    model = P.build_disentangler(cfg, len(vocab))
    with open(stage / "loss.jsonl", "w") as fh:
        history = P.train_stage1(cfg, model, items, len(vocab), log=fh)
    if encoder.parameter_hash() != enc_hash:
        raise ContractError("encoder changed during stage 1")
    meta = {"config": cfg.to_dict(), "vocab_size": len(vocab)}
    save_checkpoint(stage / "encoder.json", encoder.state_dict(), {**meta, "kind": "encoder",
                                                                 "hash": enc_hash})
    save_checkpoint(stage / "disentangler.json", model.state_dict(),
                    {**meta, "kind": "disentangler", "hash": model.parameter_hash()})
    log.info("stage 1: %d steps, total loss %.4f -> %.4f", len(history), history[0]["total"],
             history[-1]["total"])
    return history


class _PairsCorpus:
    """Just enough of a corpus for encoder warm start."""

    def __init__(self, train):
        self.train = train


def _load_module(path, module, kind):
    state, meta = load_checkpoint(_need(path, f"{kind} checkpoint"))
    if meta.get("kind") != kind:
        raise ContractError(f"{path}: expected a {kind} checkpoint, found {meta.get('kind')!r}")
    module.load_state_dict(state)
    return meta


def _load_stage1(cfg, vocab):
    stage = Path(cfg.out_dir) / "stage1"
    encoder = P.build_encoder(cfg, vocab)
    _load_module(stage / "encoder.json", encoder, "encoder")
    meta = load_checkpoint(_need(stage / "disentangler.json", "disentangler checkpoint"))[1]
    s1 = RunConfig.from_dict(meta.get("config", {}))
    model = P.build_disentangler(s1, len(vocab))
    _load_module(stage / "disentangler.json", model, "disentangler")
    encoder.set_frozen(True)
    model.set_frozen(True)
    return encoder, model


def _mrc(data):
    return {lang: load_mrc(_need(data / f"mrc.{lang}.jsonl", f"{lang} MRC file"))
            for lang in ("l1", "l2")}


def cmd_train_stage2(cfg):
    out = _archive(cfg)
    data, vocab = _load_data(cfg)
    encoder0, model = _load_stage1(cfg, vocab)
    mrc = _mrc(data)
    stage = out / "stage2"
    stage.mkdir(exist_ok=True)
    results = {}
    with open(stage / "loss.jsonl", "w") as fh:
        for kind in ("s2dm", "baseline"):
            encoder = P.build_encoder(cfg, vocab)
            encoder.load_state_dict(encoder0.state_dict())
            sm = P.build_span_model(cfg, encoder, model if kind == "s2dm" else None)
            d = P.MrcData(mrc, vocab)
            before = model.parameter_hash()
            P.train_stage2(cfg, sm, d, log=fh)
            if model.parameter_hash() != before:
                raise ContractError("disentangler changed in stage 2")
            state = {f"head.{k}": v for k, v in sm.head.state_dict().items()}
            state.update({f"encoder.{k}": v for k, v in encoder.state_dict().items()})
            save_checkpoint(stage / f"{kind}.json", state,
                            {"kind": f"span-{kind}", "config": cfg.to_dict(),
                             "l2_accesses": d.access["l2"]})
            results[kind] = d.access
    log.info("stage 2 done; L2 accesses during training: %s",
             {k: v["l2"] for k, v in results.items()})
    return results


def _load_span_model(cfg, vocab, kind, model):
    state, meta = load_checkpoint(_need(Path(cfg.out_dir) / "stage2" / f"{kind}.json",
                                        f"{kind} span checkpoint"))
    if meta.get("kind") != f"span-{kind}":
        raise ContractError(f"stage-2 checkpoint kind {meta.get('kind')!r} != span-{kind}")
    encoder = P.build_encoder(cfg, vocab)
    encoder.load_state_dict({k[8:]: v for k, v in state.items() if k.startswith("encoder.")})
    sm = P.build_span_model(cfg, encoder, model if kind == "s2dm" else None)
    sm.head.load_state_dict({k[5:]: v for k, v in state.items() if k.startswith("head.")})
    return sm


def cmd_eval(cfg):
    out = _archive(cfg)
    data, vocab = _load_data(cfg)
    encoder, model = _load_stage1(cfg, vocab)
    ev = out / "eval"
    ev.mkdir(exist_ok=True)
    reports = []
    mrc = _mrc(data)
    for kind in ("s2dm", "baseline"):
        sm = _load_span_model(cfg, vocab, kind, model)
        d = P.MrcData(mrc, vocab)
        for lang in ("l1", "l2"):
            m, preds = P.mrc_metrics(sm, d, lang, cfg.max_answer_len)
            n = len(preds)
            cohort = {"model": kind, "lang": lang}
            for name in ("em", "f1", "constituent_consistency"):
                reports.append(EvalReport(name, m[name], n, cohort))
            write_predictions(ev / f"predictions.{kind}.{lang}.jsonl",
                              [(ex.id, p, ex.passage) for ex, p in zip(mrc[lang], preds)])
    train = P.read_pairs(data, "train")[:cfg.probe_fit_pairs]
    held = P.read_pairs(data, "heldout")
    fit_items = _encoded_pairs(encoder, vocab, train)
    held_items = _encoded_pairs(encoder, vocab, held)
    sts = P.sts_sentences(encoder, vocab, P.read_sts(_need(data / "sts.jsonl", "STS file")))
    metrics = P.disentanglement_metrics(cfg, model, fit_items, held_items, sts)
    for name, value in metrics.items():
        family, kind = name.rsplit("_", 1)
        n = len(sts[2]) if family == "sts" else len(held_items)
        reports.append(EvalReport(family, value, n, {"model": "s2dm", "vector": kind,
                                                     "lang": "l1-l2"}))
    _export_pca(model, held_items, "y", ev / "pca.csv")
    write_reports(ev / "reports.jsonl", reports)
    for r in reports:
        log.info("%-24s %-40s %.4f", r.metric, json.dumps(r.cohort, sort_keys=True), r.value)
    return reports


def _export_pca(model, items, vector, path):
    ys, zs = P.pooled_latents(model, [it.s for it in items] + [it.t for it in items])
    vecs = ys if vector == "y" else zs
    n = len(items)
    labels = [f"pair-{k:05d}" for k in range(n)] * 2
    langs = ["l1"] * n + ["l2"] * n
    return pca_export(vecs, labels, langs, path)


def cmd_export_pca(cfg, vector="y"):
    out = _archive(cfg)
    data, vocab = _load_data(cfg)
    encoder, model = _load_stage1(cfg, vocab)
    items = _encoded_pairs(encoder, vocab, P.read_pairs(data, "heldout"))
    path = out / "eval" / f"pca.{vector}.csv"
    path.parent.mkdir(exist_ok=True)
    _export_pca(model, items, vector, path)
    log.info("wrote %s", path)
    return path


def cmd_ablate(cfg):
    out = _archive(cfg)
    corpus = P.build_corpus(cfg)
    (out / "ablate").mkdir(exist_ok=True)
    reports = []
    for name, cell in P.ablation_cells(cfg):
        res = P.run_stage1(cell, corpus)
        m = P.stage1_metrics(cell, res)
        for metric, value in m.items():
            reports.append(EvalReport(metric, value, len(res.heldout),
                                      {"cell": name, "losses": sorted(cell.enabled_losses()),
                                       "siamese": cell.siamese, "seed": cell.seed}))
        log.info("%-8s retrieval_y=%.3f retrieval_z=%.3f", name, m["retrieval_y"],
                 m["retrieval_z"])
    write_reports(out / "ablate" / "reports.jsonl", reports)
    return reports


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-stage1": cmd_train_stage1,
    "train-stage2": cmd_train_stage2,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "export-pca": cmd_export_pca,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="s2dm", description="Siamese semantic disentanglement "
                                 "experiments on synthetic bilingual data.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat YAML run config")
        p.add_argument("--out-dir", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="seed (overrides config and S2DM_SEED)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key; repeatable")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "export-pca":
            p.add_argument("--vector", choices=("y", "z"), default="y")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "export-pca":
            cmd_export_pca(cfg, args.vector)
        else:
            COMMANDS[args.command](cfg)
    except ConfigError as err:
        log.error("config error: %s", err)
        return EXIT_CONFIG
    except NumericError as err:
        log.error("numeric failure: %s", err)
        return EXIT_NUMERIC
    except (ContractError, ParseError, FileNotFoundError, OSError) as err:
        log.error("%s", err)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
