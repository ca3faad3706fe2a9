"""Seed plumbing for Monte Carlo work.

Work is cut into fixed-size blocks, each with its own spawned seed, so the
numbers produced never depend on how many threads process the blocks.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

DEFAULT_BLOCK = 4096


def as_seedseq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        return np.random.SeedSequence(int(seed.integers(0, 2**63)))
    return np.random.SeedSequence(int(seed))


def substream(root, name: str) -> np.random.SeedSequence:
    """Named child stream of a root seed; stable across runs and step additions."""
    root = as_seedseq(root)
    return np.random.SeedSequence(root.entropy, spawn_key=tuple(root.spawn_key) + (zlib.crc32(name.encode()),))


def rng(seed, name: str | None = None) -> np.random.Generator:
    ss = as_seedseq(seed) if name is None else substream(seed, name)
    return np.random.default_rng(ss)


def blocks(total: int, block: int = DEFAULT_BLOCK) -> list:
    sizes = [block] * (total // block)
    if total % block:
        sizes.append(total % block)
    return sizes


def run_blocks(fn, seed, total: int, block: int = DEFAULT_BLOCK, threads: int = 1) -> list:
    """Call fn(rng, size) for each block; results come back in block order."""
    sizes = blocks(total, block)
    children = as_seedseq(seed).spawn(len(sizes))
    jobs = [(np.random.default_rng(c), s) for c, s in zip(children, sizes)]
    if threads <= 1 or len(jobs) <= 1:
        return [fn(g, s) for g, s in jobs]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda js: fn(*js), jobs))
