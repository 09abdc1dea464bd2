"""Seed derivation for reproducible Monte Carlo streams.

Every stream is keyed by a base seed plus integer keys, so results never depend on the
order in which independent trials, items or users are evaluated.
"""

import hashlib

import numpy as np

# Trials per Monte Carlo block; each block owns one stream.
BLOCK_SIZE = 1000


def stable_key(identifier: str) -> int:
    """Map a string identifier to a stable non-negative 64-bit integer.

    Args:
        identifier: User id, item id or any other label.

    Returns:
        Integer key derived from the SHA-256 digest of the identifier.
    """
    digest = hashlib.sha256(identifier.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Create an independent generator for a (seed, keys...) stream.

    Args:
        seed: Non-negative base seed.
        *keys: Non-negative integer keys identifying the stream.

    Returns:
        A numpy Generator seeded from the combined entropy.
    """
    if seed < 0 or any(key < 0 for key in keys):
        raise ValueError(f"Seeds and stream keys must be non-negative: {(seed, *keys)}")
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a child base seed for a (seed, keys...) stream.

    Args:
        seed: Non-negative base seed.
        *keys: Non-negative integer keys.

    Returns:
        A non-negative integer usable as a base seed.
    """
    state = np.random.SeedSequence([seed, *keys]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


def trial_blocks(n_trials: int, block_size: int = BLOCK_SIZE) -> list[tuple[int, int]]:
    """Split a trial count into fixed-size blocks.

    Args:
        n_trials: Total number of trials.
        block_size: Trials per block.

    Returns:
        List of (block_index, trials_in_block).
    """
    blocks = []
    for index, start in enumerate(range(0, n_trials, block_size)):
        blocks.append((index, min(block_size, n_trials - start)))
    return blocks
