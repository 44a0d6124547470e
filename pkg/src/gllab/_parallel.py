"""Deterministic block-parallel execution for trajectory Monte Carlo.

Trajectories are partitioned into fixed-size blocks. Each block draws its
randomness from a substream keyed by the block index (never by the worker
that happens to run it), and results are reduced in block order. Output is
therefore bitwise independent of the thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

# Block size is a constant, not a knob: it participates in stream derivation,
# so changing it changes the sample path.
BLOCK_SIZE = 16384


def iter_blocks(total: int):
    """Yield (block_index, start, stop) covering range(total) in BLOCK_SIZE chunks."""
    nblocks = (total + BLOCK_SIZE - 1) // BLOCK_SIZE
    for b in range(nblocks):
        yield b, b * BLOCK_SIZE, min(total, (b + 1) * BLOCK_SIZE)


def run_blocks(total: int, fn, threads: int = 1) -> list:
    """Apply fn(block_index, start, stop) to every block; return results in block order."""
    blocks = list(iter_blocks(total))
    if threads <= 1:
        return [fn(*blk) for blk in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda blk: fn(*blk), blocks))


def merge_moments(parts):
    """Fold (count, mean, m2) block summaries in order; mean/m2 may be ndarrays.

    m2 is the sum of squared deviations from the block mean. The pairwise
    update keeps exact zeros exact, which one-pass sum-of-squares does not.
    """
    n = 0
    mean = None
    m2 = None
    for c, m, s in parts:
        if c == 0:
            continue
        if n == 0:
            n, mean, m2 = c, m, s
            continue
        tot = n + c
        delta = m - mean
        mean = mean + delta * (c / tot)
        m2 = m2 + s + delta * delta * (n * c / tot)
        n = tot
    if n == 0:
        raise ValueError("no data to merge")
    return n, mean, m2
