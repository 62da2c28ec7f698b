"""Fine-tune a subject or body model on a one-sample-per-line corpus."""

from __future__ import annotations

import os

from .model import TextModel, train_model

KINDS = ("subject", "body")


def fine_tune(corpus_path, kind, out_dir, base_dir=None, epochs=3, seed=0,
              d_embed=32, d_hidden=64, lr=5e-3):
    """Train a text model for `kind` and write artifacts to `out_dir`.

    `base_dir` may point at previously saved artifacts to continue from;
    without it training starts from a fresh initialization. Body corpora
    may prefix each sample with prior-thread context on the same line.
    """
    if kind not in KINDS:
        raise ValueError("kind must be one of %s, got %r" % (KINDS, kind))
    if not os.path.exists(corpus_path):
        raise FileNotFoundError("corpus not found: %s" % corpus_path)
    with open(corpus_path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    base = TextModel.load(base_dir) if base_dir else None
    model = train_model(lines, kind, epochs=epochs, seed=seed,
                        d_embed=d_embed, d_hidden=d_hidden, lr=lr, base=base)
    model.save(out_dir)
    return model
