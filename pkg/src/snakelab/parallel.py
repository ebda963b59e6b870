"""Deterministic replicate fan-out."""
from concurrent.futures import ProcessPoolExecutor

import numpy as np


def as_seedseq(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def replicate_map(fn, args, workers=1):
    """map(fn, args) in input order; results do not depend on the worker count."""
    args = list(args)
    if workers is None or workers <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, args, chunksize=max(1, len(args) // (4 * workers))))
