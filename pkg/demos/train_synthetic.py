"""End-to-end episodic training on a synthetic corpus, via the library API.

Builds three disjoint Gaussian corpora (train/valid/test classes), trains
the label-conditioned attention adapter with per-episode AdamW steps and
early stopping, then evaluates the best checkpoint on unseen test classes.
Finishes with a small ablation over the two switchable pieces: the adapter
and the transport-based query augmentation.

This is the scripted twin of `fewtext train` / `fewtext ablate`; the CLI
drives exactly the same functions from a JSON config.

Run with:  python3 demos/train_synthetic.py   (about half a minute)
"""

import dataclasses

import numpy as np

from fewtext import episodes, trainer

DIM = 8

CONFIG = trainer.TrainConfig(
    n_way=5, k_shot=1, m_query=10, r=4,
    epochs=10, episodes_train=15, episodes_val=15, episodes_test=100,
    learning_rate=3e-3, warmup_steps=20, patience=5,
    dim=DIM, heads=2, seed=1)


def build_corpora():
    """Disjoint class sets for meta-train, meta-valid, and meta-test."""
    corpora, centers = [], {}
    for split, n_classes, seed in (("train", 12, 1), ("valid", 6, 2),
                                   ("test", 8, 3)):
        corpus, c = episodes.gen_synthetic_corpus(
            n_classes, samples_per_class=40, dim=DIM,
            class_center_scale=1.5, intra_class_stddev=1.0,
            rng=np.random.default_rng(seed), split=split,
            label_prefix=split)
        corpora.append(corpus)
        centers.update(c)
    return corpora, episodes.center_label_embedder(centers)


def main():
    (train_c, valid_c, test_c), embedder = build_corpora()
    print(f"training: {CONFIG.n_way}-way {CONFIG.k_shot}-shot, "
          f"{CONFIG.episodes_train} episodes/epoch, R={CONFIG.r}\n")

    checkpoint, report = trainer.train(CONFIG, train_c, valid_c,
                                       label_embedder=embedder)
    print(f"{'epoch':>5} {'train loss':>11} {'val acc':>8}")
    for i, row in enumerate(report.per_epoch, start=1):
        marker = "  <- best" if i == report.best_epoch else ""
        print(f"{i:>5} {row['train_loss']:>11.4f} {row['val_acc']:>8.4f}"
              f"{marker}")

    test = trainer.evaluate(checkpoint, test_c, CONFIG,
                            label_embedder=embedder)
    print(f"\ntest accuracy on unseen classes: "
          f"{test.test_acc_mean:.4f} +/- {test.test_acc_ci95:.4f} "
          f"({CONFIG.episodes_test} episodes)\n")

    print("ablation (same data, same seeds):")
    print(f"{'variant':<10} {'accuracy':>9} {'ci95':>8}")
    for flags in ({"bypass_adapter": False, "bypass_qda": False},
                  {"bypass_adapter": False, "bypass_qda": True},
                  {"bypass_adapter": True, "bypass_qda": False},
                  {"bypass_adapter": True, "bypass_qda": True}):
        cfg = dataclasses.replace(CONFIG, **flags)
        if cfg.bypass_adapter:
            ck = trainer.Checkpoint(
                params=trainer.init_params(cfg, DIM), config=cfg)
        else:
            ck, _ = trainer.train(cfg, train_c, valid_c,
                                  label_embedder=embedder)
        rep = trainer.evaluate(ck, test_c, cfg, label_embedder=embedder)
        print(f"{cfg.variant():<10} {rep.test_acc_mean:>9.4f} "
              f"{rep.test_acc_ci95:>8.4f}")


if __name__ == "__main__":
    main()
