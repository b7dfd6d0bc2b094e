"""Inspect where a rejection-trained model places its REJ mass.

For a balanced set of reference prefixes cut just before an entity token
(half of them before an injected, unsupported entity; half before a clean
one), ask the model for its next-token argmax in diagnostic mode (REJ
emission allowed) and classify the outcome:

    same_entity            reproduces the reference entity
    different_supported    swaps in another source-supported entity
    different_unsupported  hallucinates a different unsupported entity
    remove_entity          emits a non-entity token
    rejection              puts the argmax on REJ

A well-calibrated model rejects mostly at the noisy positions. Raising
alpha makes rejection more expensive, so the low-entropy noise is
absorbed back into the ordinary distribution first.
"""

import time

from rejgen.corpus import GenConfig, build_probes, generate
from rejgen.losses import RejectionLossConfig
from rejgen.metrics import ALIGNMENT_CATEGORIES, alignment_analysis
from rejgen.trainer import TrainConfig, train


def main():
    corpus = generate(GenConfig(n_train=1200, n_valid=200, n_test=100, seed=0))
    probes = build_probes(corpus.valid, corpus.vocab, 200, seed=1)

    for alpha in (1.0, 2.0):
        print(f"training rejection model, alpha={alpha} ...")
        t0 = time.time()
        model, _ = train(corpus.train, corpus.vocab, "rejection",
                         RejectionLossConfig(alpha=alpha),
                         TrainConfig(steps=700), seed=0)
        print(f"  done in {time.time() - t0:.0f}s")
        dist = alignment_analysis(model, probes, corpus.valid, corpus.vocab)

        print(f"{'probe label':<22}" + "".join(f"{c:>23}" for c in ALIGNMENT_CATEGORIES))
        for label in ("nonfactual_entity", "factual_entity"):
            row = "".join(f"{dist.rate(label, c):>23.2f}" for c in ALIGNMENT_CATEGORIES)
            print(f"{label:<22}{row}")
        gap = (dist.rate("nonfactual_entity", "rejection")
               - dist.rate("factual_entity", "rejection"))
        print(f"rejection-rate gap (nonfactual - factual): {gap:+.2f}\n")


if __name__ == "__main__":
    main()
