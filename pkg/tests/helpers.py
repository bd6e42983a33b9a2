"""Small shared builders for the test suite."""

import numpy as np

from cake.corpus import SyntheticSpec, build_vocab, encode_corpus, generate_synthetic


def toy_corpus(n, seed=0, facts=2, vocab_cap=30):
    spec = SyntheticSpec(num_examples=n, facts_per_background=facts, seed=seed, num_entities=20,
                         vocab_seen_size=10, value_token_pool_size=50, filler_turns=1)
    raw = generate_synthetic(spec)
    vocab = build_vocab(raw, vocab_cap)
    return raw, vocab


def toy_examples(n, seed=0, facts=2, vocab_cap=30):
    """Encoded toy examples (with copy-only tokens) and the vocabulary size."""
    raw, vocab = toy_corpus(n, seed, facts, vocab_cap)
    return encode_corpus(raw, vocab), len(vocab)


def perturb(model, scale=0.5, seed=0):
    """Replace every parameter with a larger random draw."""
    rng = np.random.default_rng(seed)
    for name in model.params.names():
        p = model.params[name]
        p.data = rng.uniform(-scale, scale, p.shape).astype(p.dtype)
    return model
