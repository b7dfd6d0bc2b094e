"""CLI orchestration: generate / train / decode / eval / sweep / tradeoff.

Each stage reads a flat key-value config file, writes its artifacts under
the output directory, and records a manifest with the config hash and seed
so reruns on unchanged inputs are skipped (and byte-identical when forced).
Stage dependencies are checked up front; a missing upstream artifact is an
error naming the stage to rerun. Exit code 0 only if the stage's invariant
checks pass.

Artifact layout under the output directory:

    corpus/   train.jsonl valid.jsonl test.jsonl test_clean.jsonl vocab.tsv
    models/   <tag>.ckpt <tag>-log.jsonl
    decodes/  <tag>.jsonl
    reports/  <tag>-report.json <tag>-report.csv <tag>-alignment.json
    sweeps/   <kind>.csv
    tradeoff/ tradeoff.csv correlation.json

plus a ``<stage>...-manifest.json`` next to each artifact group.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import (
    Corpus,
    GenConfig,
    build_probes,
    build_vocab,
    generate,
    load_split,
    save_split,
)
from .decoding import DecodeConfig, beam_search
from .losses import RejectionLossConfig, TruncationConfig
from .metrics import ALIGNMENT_CATEGORIES, alignment_analysis, factuality_report
from .model import ModelConfig
from .trainer import TrainConfig, train
from .vocab import Vocabulary

LAMBDA_GRID = (0.0, 1.0, 2.0, 3.0, 5.0)
BEAM_GRID = (1, 2, 4, 8, 16, 32)
ALPHA_GRID = (0.5, 1.0, 2.0)
TRUNC_GRID = (0.3, 0.5, 0.7)
SWEEP_KINDS = ("lambda", "alpha", "beam", "truncation", "regularizer")


class HarnessError(RuntimeError):
    pass


# -- config ----------------------------------------------------------------


@dataclass
class ExperimentConfig:
    # corpus
    n_train: int = 8000
    n_valid: int = 500
    n_test: int = 500
    noise_rate: float = 0.3
    corpus_seed: int = 0
    # model
    d_model: int = 64
    d_ffn: int = 128
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    max_src_len: int = 96
    max_tgt_len: int = 32
    # objective
    objective: str = "mle"  # mle | rejection | truncation
    alpha: float = 1.0
    warmup_steps: int = 0
    entity_only: bool = True
    trunc_level: str = "sentence"
    trunc_c: float = 0.5
    trunc_window: int = 10
    trunc_warmup: int = 300
    # training
    steps: int = 6000
    batch_size: int = 32
    lr: float = 3e-3
    dropout: float = 0.1
    train_seed: int = 0
    # decoding
    beam_size: int = 6
    lam: float = 0.0
    k: int = 1
    regularizer: str = "sum"
    max_len: int = 32
    # evaluation
    n_probes: int = 200
    probe_seed: int = 0
    # sweep
    sweep: str = "lambda"
    # output
    out_dir: str = "runs"

    def replace(self, **kw):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return ExperimentConfig(**d)


def parse_config(path):
    """Flat ``key = value`` lines; '#' comments and blank lines ignored."""
    if not os.path.exists(path):
        raise HarnessError(f"config file not found: {path}")
    raw = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise HarnessError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in raw:
                raise HarnessError(f"{path}:{lineno}: duplicate key {key!r}")
            raw[key] = value
    return raw


def build_config(raw):
    defaults = ExperimentConfig()
    kwargs = {}
    for key, value in raw.items():
        if not hasattr(defaults, key):
            raise HarnessError(f"unknown config key {key!r}")
        cur = getattr(defaults, key)
        try:
            if isinstance(cur, bool):
                if value.lower() not in ("true", "false"):
                    raise ValueError(value)
                kwargs[key] = value.lower() == "true"
            elif isinstance(cur, int):
                kwargs[key] = int(value)
            elif isinstance(cur, float):
                kwargs[key] = float(value)
            else:
                kwargs[key] = value
        except ValueError:
            raise HarnessError(f"config key {key!r}: cannot parse {value!r}") from None
    return ExperimentConfig(**kwargs)


def _hash(payload) -> str:
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _file_sha(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path, stage, cfg_hash, seed, outputs, extra=None):
    manifest = {
        "stage": stage,
        "config_hash": cfg_hash,
        "seed": seed,
        "outputs": {os.path.basename(p): _file_sha(p) for p in outputs},
        **(extra or {}),
    }
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def _fresh(manifest_path, cfg_hash, outdir):
    """True if the stage already ran with this config and artifacts exist."""
    if not os.path.exists(manifest_path):
        return False
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except json.JSONDecodeError:
        return False
    if manifest.get("config_hash") != cfg_hash:
        return False
    return all(
        os.path.exists(os.path.join(outdir, name)) for name in manifest["outputs"]
    )


# -- per-stage config subsets (what each stage's hash covers) ---------------


def _gen_subset(cfg):
    return {
        "n_train": cfg.n_train,
        "n_valid": cfg.n_valid,
        "n_test": cfg.n_test,
        "noise_rate": cfg.noise_rate,
        "corpus_seed": cfg.corpus_seed,
    }


def _model_subset(cfg):
    return {
        "d_model": cfg.d_model,
        "d_ffn": cfg.d_ffn,
        "n_enc_layers": cfg.n_enc_layers,
        "n_dec_layers": cfg.n_dec_layers,
        "max_src_len": cfg.max_src_len,
        "max_tgt_len": cfg.max_tgt_len,
    }


def _train_subset(cfg):
    sub = {
        **_gen_subset(cfg),
        **_model_subset(cfg),
        "objective": cfg.objective,
        "steps": cfg.steps,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "dropout": cfg.dropout,
        "train_seed": cfg.train_seed,
    }
    if cfg.objective == "rejection":
        sub.update(alpha=cfg.alpha, warmup_steps=cfg.warmup_steps,
                   entity_only=cfg.entity_only)
    elif cfg.objective == "truncation":
        sub.update(trunc_level=cfg.trunc_level, trunc_c=cfg.trunc_c,
                   trunc_window=cfg.trunc_window, trunc_warmup=cfg.trunc_warmup)
    elif cfg.objective != "mle":
        raise HarnessError(f"unknown objective {cfg.objective!r}")
    return sub


def _decode_subset(cfg):
    return {
        **_train_subset(cfg),
        "beam_size": cfg.beam_size,
        "lam": cfg.lam,
        "k": cfg.k,
        "regularizer": cfg.regularizer,
        "max_len": cfg.max_len,
    }


def train_tag(cfg):
    return f"{cfg.objective}-{_hash(_train_subset(cfg))}"


def decode_tag(cfg):
    return f"{cfg.objective}-{_hash(_decode_subset(cfg))}"


# -- artifact loading helpers ----------------------------------------------


def _corpus_dir(out):
    return os.path.join(out, "corpus")


def _require(path, stage_needed, what):
    if not os.path.exists(path):
        raise HarnessError(
            f"missing {what} ({path}); run `rejgen {stage_needed}` first"
        )
    return path


def _load_corpus(out, cfg):
    cdir = _corpus_dir(out)
    _require(os.path.join(cdir, "generate-manifest.json"), "generate", "corpus artifacts")
    with open(os.path.join(cdir, "generate-manifest.json")) as f:
        manifest = json.load(f)
    want = _hash(_gen_subset(cfg))
    if manifest["config_hash"] != want:
        raise HarnessError(
            "corpus artifacts are stale (config changed); run `rejgen generate` first"
        )
    vocab = Vocabulary.load(os.path.join(cdir, "vocab.tsv"))
    splits = {
        name: load_split(os.path.join(cdir, f"{name}.jsonl"), vocab)
        for name in ("train", "valid", "test", "test_clean")
    }
    return Corpus(
        vocab=vocab,
        train=splits["train"],
        valid=splits["valid"],
        test=splits["test"],
        test_clean=splits["test_clean"],
        realized_noise_fraction=manifest["realized_noise_fraction"],
        config=GenConfig(
            n_train=cfg.n_train, n_valid=cfg.n_valid, n_test=cfg.n_test,
            noise_rate=cfg.noise_rate, seed=cfg.corpus_seed,
        ),
    ), manifest["config_hash"]


# -- stages ----------------------------------------------------------------


def cmd_generate(cfg, out):
    cdir = _corpus_dir(out)
    os.makedirs(cdir, exist_ok=True)
    cfg_hash = _hash(_gen_subset(cfg))
    manifest_path = os.path.join(cdir, "generate-manifest.json")
    if _fresh(manifest_path, cfg_hash, cdir):
        print(f"generate: up to date ({cfg_hash})")
        return 0
    corpus = generate(GenConfig(
        n_train=cfg.n_train, n_valid=cfg.n_valid, n_test=cfg.n_test,
        noise_rate=cfg.noise_rate, seed=cfg.corpus_seed,
    ))
    if abs(corpus.realized_noise_fraction - cfg.noise_rate) > 0.02:
        raise HarnessError(
            f"invariant violated: realized noise fraction "
            f"{corpus.realized_noise_fraction:.4f} deviates from configured "
            f"{cfg.noise_rate} by more than 0.02"
        )
    outputs = []
    for name, split in (
        ("train", corpus.train), ("valid", corpus.valid),
        ("test", corpus.test), ("test_clean", corpus.test_clean),
    ):
        path = os.path.join(cdir, f"{name}.jsonl")
        save_split(split, corpus.vocab, path)
        outputs.append(path)
    vocab_path = os.path.join(cdir, "vocab.tsv")
    corpus.vocab.save(vocab_path)
    outputs.append(vocab_path)
    _write_manifest(
        manifest_path, "generate", cfg_hash, cfg.corpus_seed, outputs,
        extra={"realized_noise_fraction": corpus.realized_noise_fraction},
    )
    print(f"generate: wrote {len(outputs)} artifacts to {cdir} ({cfg_hash})")
    return 0


def _objective_cfg(cfg):
    if cfg.objective == "rejection":
        return RejectionLossConfig(
            alpha=cfg.alpha, warmup_steps=cfg.warmup_steps, entity_only=cfg.entity_only
        )
    if cfg.objective == "truncation":
        return TruncationConfig(level=cfg.trunc_level, c=cfg.trunc_c,
                                window=cfg.trunc_window,
                                warmup_steps=cfg.trunc_warmup)
    if cfg.objective == "mle":
        return None
    raise HarnessError(f"unknown objective {cfg.objective!r}")


def cmd_train(cfg, out):
    corpus, _ = _load_corpus(out, cfg)
    mdir = os.path.join(out, "models")
    os.makedirs(mdir, exist_ok=True)
    tag = train_tag(cfg)
    cfg_hash = _hash(_train_subset(cfg))
    manifest_path = os.path.join(mdir, f"train-{tag}-manifest.json")
    if _fresh(manifest_path, cfg_hash, mdir):
        print(f"train: up to date ({tag})")
        return 0
    model_cfg = ModelConfig(n_ids=len(corpus.vocab), dropout=cfg.dropout,
                            **_model_subset(cfg))
    log_path = os.path.join(mdir, f"{tag}-log.jsonl")
    model, log = train(
        corpus.train, corpus.vocab, cfg.objective, _objective_cfg(cfg),
        TrainConfig(steps=cfg.steps, batch_size=cfg.batch_size, lr=cfg.lr,
                    dropout=cfg.dropout),
        model_cfg, seed=cfg.train_seed, log_path=log_path,
    )
    if not all(np.isfinite(p).all() for p in model.params.values()):
        raise HarnessError("invariant violated: non-finite parameters after training")
    ckpt_path = os.path.join(mdir, f"{tag}.ckpt")
    save_checkpoint(model, ckpt_path)
    _write_manifest(
        manifest_path, "train", cfg_hash, cfg.train_seed, [ckpt_path, log_path],
        extra={"tag": tag, "final_loss": log[-1]["total"]},
    )
    print(f"train: {tag} final loss {log[-1]['total']:.4f}")
    return 0


def _load_model(out, cfg):
    mdir = os.path.join(out, "models")
    tag = train_tag(cfg)
    ckpt = os.path.join(mdir, f"{tag}.ckpt")
    _require(ckpt, "train", f"checkpoint for objective {cfg.objective!r}")
    return load_checkpoint(ckpt), tag


def cmd_decode(cfg, out):
    corpus, _ = _load_corpus(out, cfg)
    model, ttag = _load_model(out, cfg)
    ddir = os.path.join(out, "decodes")
    os.makedirs(ddir, exist_ok=True)
    tag = decode_tag(cfg)
    cfg_hash = _hash(_decode_subset(cfg))
    manifest_path = os.path.join(ddir, f"decode-{tag}-manifest.json")
    if _fresh(manifest_path, cfg_hash, ddir):
        print(f"decode: up to date ({tag})")
        return 0
    dec_cfg = DecodeConfig(beam_size=cfg.beam_size, lam=cfg.lam, k=cfg.k,
                           regularizer=cfg.regularizer, max_len=cfg.max_len)
    path = os.path.join(ddir, f"{tag}.jsonl")
    n_unfinished = 0
    with open(path, "w") as f:
        for ex in corpus.test:
            best = beam_search(model, ex.source, dec_cfg)[0]
            n_unfinished += not best.finished
            f.write(json.dumps({
                "id": ex.id,
                "tokens": corpus.vocab.decode(best.tokens[1:]),
                "finished": best.finished,
                "logprob": best.logprob,
                "penalty": best.penalty,
                "score": best.score,
            }) + "\n")
    _write_manifest(
        manifest_path, "decode", cfg_hash, cfg.train_seed, [path],
        extra={"tag": tag, "train_tag": ttag, "n_unfinished": n_unfinished},
    )
    print(f"decode: {tag} over {len(corpus.test)} examples "
          f"({n_unfinished} unfinished)")
    return 0


def _load_decodes(out, cfg, vocab):
    tag = decode_tag(cfg)
    path = os.path.join(out, "decodes", f"{tag}.jsonl")
    _require(path, "decode", f"decodes for {tag}")
    decodes = {}
    with open(path) as f:
        for line in f:
            rec = json.loads(line)
            decodes[rec["id"]] = vocab.encode(rec["tokens"])
    return decodes, tag


def _eval_one(cfg, out, corpus):
    """Report + alignment for the current config point; returns the report."""
    model, _ = _load_model(out, cfg)
    decodes, tag = _load_decodes(out, cfg, corpus.vocab)
    rdir = os.path.join(out, "reports")
    os.makedirs(rdir, exist_ok=True)
    report = factuality_report(decodes, corpus.test, corpus.vocab,
                               references=corpus.test_clean)
    for k, v in report.to_dict().items():
        if k != "n" and not (np.isfinite(v) and -1e-9 <= v <= 1.0 + 1e-9):
            raise HarnessError(f"invariant violated: metric {k}={v} outside [0, 1]")
    report.save_json(os.path.join(rdir, f"{tag}-report.json"))
    report.save_csv(os.path.join(rdir, f"{tag}-report.csv"),
                    extra={"tag": tag, "objective": cfg.objective})
    probes = build_probes(corpus.valid, corpus.vocab, cfg.n_probes,
                          seed=cfg.probe_seed)
    dist = alignment_analysis(model, probes, corpus.valid, corpus.vocab)
    alignment = {
        label: {
            "counts": dist.counts[label],
            "rates": {c: dist.rate(label, c) for c in ALIGNMENT_CATEGORIES},
        }
        for label in dist.counts
    }
    with open(os.path.join(rdir, f"{tag}-alignment.json"), "w") as f:
        json.dump(alignment, f, indent=2, sort_keys=True)
        f.write("\n")
    return report, tag


def cmd_eval(cfg, out):
    corpus, _ = _load_corpus(out, cfg)
    rdir = os.path.join(out, "reports")
    tag = decode_tag(cfg)
    cfg_hash = _hash({**_decode_subset(cfg), "n_probes": cfg.n_probes,
                      "probe_seed": cfg.probe_seed})
    manifest_path = os.path.join(rdir, f"eval-{tag}-manifest.json")
    if _fresh(manifest_path, cfg_hash, rdir):
        print(f"eval: up to date ({tag})")
        return 0
    report, tag = _eval_one(cfg, out, corpus)
    outputs = [os.path.join(rdir, f"{tag}-{s}") for s in
               ("report.json", "report.csv", "alignment.json")]
    _write_manifest(manifest_path, "eval", cfg_hash, cfg.train_seed, outputs,
                    extra={"tag": tag})
    print(f"eval: {tag} factuality={report.sentence_factuality_rate:.3f} "
          f"halluc={report.entity_hallucination_rate:.3f}")
    return 0


# -- sweeps ----------------------------------------------------------------


def _sweep_points(cfg):
    """(knob, knob_value, derived config) triples for the configured sweep."""
    if cfg.sweep == "lambda":
        base = cfg.replace(objective="rejection")
        return [("lambda", lam, base.replace(lam=lam)) for lam in LAMBDA_GRID]
    if cfg.sweep == "beam":
        base = cfg.replace(objective="rejection", lam=2.0)
        return [("beam_size", b, base.replace(beam_size=b)) for b in BEAM_GRID]
    if cfg.sweep == "alpha":
        base = cfg.replace(objective="rejection")
        return [("alpha", a, base.replace(alpha=a)) for a in ALPHA_GRID]
    if cfg.sweep == "truncation":
        base = cfg.replace(objective="truncation", lam=0.0)
        return [("trunc_c", c, base.replace(trunc_c=c)) for c in TRUNC_GRID]
    if cfg.sweep == "regularizer":
        base = cfg.replace(objective="rejection")
        return [
            (f"{reg}_lambda", lam, base.replace(regularizer=reg, lam=lam))
            for reg in ("sum", "max")
            for lam in LAMBDA_GRID
        ]
    raise HarnessError(
        f"unknown sweep kind {cfg.sweep!r}; expected one of {SWEEP_KINDS}"
    )


def _ensure_point(point_cfg, out, corpus):
    """Train/decode/eval one grid point (all idempotent); returns its row."""
    cmd_train(point_cfg, out)
    cmd_decode(point_cfg, out)
    report, tag = _eval_one(point_cfg, out, corpus)
    with open(os.path.join(out, "reports", f"{tag}-alignment.json")) as f:
        alignment = json.load(f)
    return report, tag, alignment


def _alignment_path(out, cfg):
    return os.path.join(out, "reports", f"{decode_tag(cfg)}-alignment.json")


SWEEP_FIELDS = [
    "knob", "knob_value", "checkpoint_hash",
    "sentence_factuality_rate", "entity_hallucination_rate",
    "novel_unigram_pct", "novel_bigram_pct", "mean_coverage", "rouge1_f", "n",
    "factual_rejection_rate", "nonfactual_rejection_rate",
]


def cmd_sweep(cfg, out):
    corpus, _ = _load_corpus(out, cfg)
    points = _sweep_points(cfg)
    sdir = os.path.join(out, "sweeps")
    os.makedirs(sdir, exist_ok=True)
    cfg_hash = _hash([(knob, val, _decode_subset(c)) for knob, val, c in points])
    manifest_path = os.path.join(sdir, f"sweep-{cfg.sweep}-manifest.json")
    csv_path = os.path.join(sdir, f"{cfg.sweep}.csv")
    if _fresh(manifest_path, cfg_hash, sdir):
        print(f"sweep: {cfg.sweep} up to date")
        return 0
    rows = []
    for knob, value, point_cfg in points:
        report, tag, alignment = _ensure_point(point_cfg, out, corpus)
        rows.append({
            "knob": knob,
            "knob_value": value,
            "checkpoint_hash": train_tag(point_cfg).split("-")[-1],
            **report.to_dict(),
            "factual_rejection_rate":
                alignment["factual_entity"]["rates"]["rejection"],
            "nonfactual_rejection_rate":
                alignment["nonfactual_entity"]["rates"]["rejection"],
        })
    if len(rows) != len(points):
        raise HarnessError("invariant violated: one row per grid point required")
    with open(csv_path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=SWEEP_FIELDS)
        w.writeheader()
        w.writerows(rows)
    _write_manifest(manifest_path, "sweep", cfg_hash, cfg.train_seed, [csv_path],
                    extra={"kind": cfg.sweep, "n_rows": len(rows)})
    print(f"sweep: {cfg.sweep} wrote {len(rows)} rows to {csv_path}")
    return 0


def cmd_tradeoff(cfg, out):
    corpus, _ = _load_corpus(out, cfg)
    tdir = os.path.join(out, "tradeoff")
    os.makedirs(tdir, exist_ok=True)
    series = {
        "rejection": _sweep_points(cfg.replace(sweep="lambda")),
        "truncation": _sweep_points(cfg.replace(sweep="truncation")),
    }
    cfg_hash = _hash({
        m: [(k, v, _decode_subset(c)) for k, v, c in pts]
        for m, pts in series.items()
    })
    manifest_path = os.path.join(tdir, "tradeoff-manifest.json")
    csv_path = os.path.join(tdir, "tradeoff.csv")
    corr_path = os.path.join(tdir, "correlation.json")
    if _fresh(manifest_path, cfg_hash, tdir):
        print("tradeoff: up to date")
        return 0
    rows = []
    correlations = {}
    for method, points in series.items():
        if len(points) < 2:
            print(f"warning: single-point series for {method}", file=sys.stderr)
        faith, cov = [], []
        for knob, value, point_cfg in points:
            report, _, _ = _ensure_point(point_cfg, out, corpus)
            rows.append({
                "method": method,
                "knob": knob,
                "knob_value": value,
                "coverage": report.mean_coverage,
                "faithfulness": report.sentence_factuality_rate,
            })
            faith.append(report.sentence_factuality_rate)
            cov.append(report.mean_coverage)
        if len(points) >= 2 and np.std(faith) > 0 and np.std(cov) > 0:
            correlations[method] = float(np.corrcoef(faith, -np.asarray(cov))[0, 1])
        else:
            correlations[method] = None
    with open(csv_path, "w", newline="") as f:
        w = csv.DictWriter(
            f, fieldnames=["method", "knob", "knob_value", "coverage", "faithfulness"]
        )
        w.writeheader()
        w.writerows(rows)
    with open(corr_path, "w") as f:
        json.dump({"correlation_faithfulness_vs_neg_coverage": correlations},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(manifest_path, "tradeoff", cfg_hash, cfg.train_seed,
                    [csv_path, corr_path])
    print(f"tradeoff: wrote {len(rows)} points; "
          f"correlations {correlations}")
    return 0


# -- entry point -----------------------------------------------------------

STAGES = {
    "generate": cmd_generate,
    "train": cmd_train,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "tradeoff": cmd_tradeoff,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="rejgen",
        description="rejection-learning experiment pipeline",
    )
    parser.add_argument("stage", choices=sorted(STAGES))
    parser.add_argument("--config", required=True, help="flat key = value file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override train_seed from the config")
    parser.add_argument("--out", default=None,
                        help="override out_dir from the config")
    args = parser.parse_args(argv)
    try:
        cfg = build_config(parse_config(args.config))
        if args.seed is not None:
            cfg = cfg.replace(train_seed=args.seed)
        out = args.out or cfg.out_dir
        os.makedirs(out, exist_ok=True)
        return STAGES[args.stage](cfg, out)
    except (HarnessError, ValueError, OSError) as e:
        print(f"rejgen {args.stage}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
