"""Train an MLE baseline and a rejection-loss model on the same noisy
corpus, then compare oracle factuality of their beam-searched summaries.

The corpus injects unsupported entities into a fraction of the reference
summaries, so a model trained with plain MLE is rewarded for guessing
entities that the source does not support. The rejection objective lets
the model divert probability mass to a REJ class at those positions
instead of memorizing the noise.

Runs in a few minutes on one CPU core. Scale `N_TRAIN` / `STEPS` up for
sharper numbers.
"""

import time

from rejgen.corpus import GenConfig, generate
from rejgen.decoding import DecodeConfig, beam_search
from rejgen.losses import RejectionLossConfig
from rejgen.metrics import factuality_report
from rejgen.trainer import TrainConfig, train

N_TRAIN = 1200
STEPS = 700
SEED = 0


def decode_all(model, examples, lam=0.0, beam=6):
    return {
        ex.id: beam_search(model, ex.source, DecodeConfig(beam_size=beam, lam=lam))[0].tokens
        for ex in examples
    }


def main():
    print(f"generating corpus (n_train={N_TRAIN}, noise_rate=0.3) ...")
    corpus = generate(GenConfig(n_train=N_TRAIN, n_valid=100, n_test=100, seed=SEED))
    print(f"  realized noise fraction: {corpus.realized_noise_fraction:.3f}")

    train_cfg = TrainConfig(steps=STEPS, batch_size=32)
    reports = {}
    for name, objective, obj_cfg in [
        ("mle", "mle", None),
        ("rejection", "rejection", RejectionLossConfig(alpha=1.0)),
    ]:
        t0 = time.time()
        print(f"training {name} ({STEPS} steps) ...")
        model, log = train(corpus.train, corpus.vocab, objective, obj_cfg,
                           train_cfg, seed=SEED)
        print(f"  done in {time.time() - t0:.0f}s, final loss {log[-1]['total']:.3f}, "
              f"mean entity REJ prob {log[-1]['mean_entity_rej_prob']:.3f}")
        decodes = decode_all(model, corpus.test)
        reports[name] = factuality_report(decodes, corpus.test, corpus.vocab,
                                          references=corpus.test_clean)

    print()
    print(f"{'model':<12}{'sentence-factual':>18}{'entity-halluc':>15}{'rouge1-f':>10}")
    for name, rep in reports.items():
        print(f"{name:<12}{rep.sentence_factuality_rate:>18.3f}"
              f"{rep.entity_hallucination_rate:>15.3f}{rep.rouge1_f:>10.3f}")
    gain = (reports["rejection"].sentence_factuality_rate
            - reports["mle"].sentence_factuality_rate)
    print(f"\nrejection-training factuality gain: {gain:+.3f}")


if __name__ == "__main__":
    main()
