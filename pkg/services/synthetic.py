"""
Seeded multi-domain polarity-flip corpus generator.

Vocabulary layout (s = shared_signal_words, f = flipped_words):

    [0, s)            shared positive words
    [s, 2s)           shared negative words
    [2s, 2s+f)        block A: positive in even domains, negative in odd ones
    [2s+f, 2s+2f)     block B: the mirror of block A
    [2s+2f, vocab)    background words, uniform in every domain

An example switches on words of its own polarity blocks with signal_on_rate,
words of the opposite blocks with signal_off_rate and background words with
background_rate. The same block A word therefore means "positive" in domain 0
and "negative" in domain 1, which a single pooled classifier cannot absorb.
"""

import logging
from typing import Dict, List, Tuple

import numpy as np

from models import SynthSpec
from .data import DomainPools, MultiDomainDataset, SparseExample

logger = logging.getLogger(__name__)

_POOL_STREAM = {"labeled": 0, "unlabeled": 1, "valid": 2, "test": 3}


def word_roles(spec: SynthSpec) -> Dict[str, Tuple[int, int]]:
    s, f = spec.shared_signal_words, spec.flipped_words
    return {
        "shared_positive": (0, s),
        "shared_negative": (s, 2 * s),
        "block_a": (2 * s, 2 * s + f),
        "block_b": (2 * s + f, 2 * s + 2 * f),
        "background": (2 * s + 2 * f, spec.vocab_size),
    }


def domain_polarity(domain: int) -> int:
    """+1 when block A is positive (the reference polarity of domain 0), -1 when flipped"""
    return 1 if domain % 2 == 0 else -1


def _sample_pool(spec: SynthSpec, domain: int, kind: str, count: int, roles: Dict[str, Tuple[int, int]]) -> List[SparseExample]:
    rng = np.random.default_rng([spec.seed, domain, _POOL_STREAM[kind]])
    labeled = kind != "unlabeled"
    polarity = domain_polarity(domain)

    def _block(name: str) -> np.ndarray:
        lo, hi = roles[name]
        return np.arange(lo, hi)

    positive_words = np.concatenate([_block("shared_positive"), _block("block_a" if polarity > 0 else "block_b")])
    negative_words = np.concatenate([_block("shared_negative"), _block("block_b" if polarity > 0 else "block_a")])
    background = _block("background")

    examples = []
    for i in range(count):
        truth = int(rng.integers(0, 2))
        own, opposite = (positive_words, negative_words) if truth == 1 else (negative_words, positive_words)
        present = np.concatenate(
            [
                own[rng.random(len(own)) < spec.signal_on_rate],
                opposite[rng.random(len(opposite)) < spec.signal_off_rate],
                background[rng.random(len(background)) < spec.background_rate],
            ]
        )
        indices = np.sort(present)
        values = rng.integers(1, 4, size=len(indices)).astype(np.float64)
        observed = 1 - truth if rng.random() < spec.noise_rate else truth
        examples.append(
            SparseExample(
                indices,
                values,
                label=observed if labeled else None,
                domain=domain,
                uid=f"domain{domain}/{kind}/{i}",
            )
        )
    return examples


def generate_synthetic(spec: SynthSpec) -> MultiDomainDataset:
    """Deterministic in (spec, seed): every domain and pool draws from its own seeded stream"""
    roles = word_roles(spec)
    counts = {
        "labeled": spec.labeled_per_domain,
        "unlabeled": spec.unlabeled_per_domain,
        "valid": spec.valid_per_domain,
        "test": spec.test_per_domain,
    }
    domains = []
    for m in range(spec.domains):
        pools = DomainPools(f"domain{m}")
        for kind, count in counts.items():
            setattr(pools, kind, _sample_pool(spec, m, kind, count, roles))
        domains.append(pools)

    meta = {
        "generator": "polarity-flip",
        "spec": spec.model_dump(mode="json"),
        "roles": {name: list(bounds) for name, bounds in roles.items()},
        "polarity": [domain_polarity(m) for m in range(spec.domains)],
        "expected_density": spec.expected_density(),
    }
    dataset = MultiDomainDataset(spec.vocab_size, domains, meta)
    logger.info(f"Generated synthetic corpus (seed {spec.seed}): {dataset.summary()}")
    return dataset
