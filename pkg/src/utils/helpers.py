from typing import Any, Dict, Sequence

import numpy as np


def derive_rng(seed: int, *stream: int) -> np.random.Generator:
    # Streams keyed by (seed, index, ...) so generation order never matters.

    return np.random.default_rng([int(seed), *[int(s) for s in stream]])


def mean_std(values: Sequence[float]) -> Dict[str, float]:

    array = np.asarray(values, dtype=np.float64)

    if array.size == 0:
        return {'mean': 0.0, 'std': 0.0}

    return {'mean': float(np.mean(array)), 'std': float(np.std(array))}


def safe_dict_get(dictionary: Dict, *keys, default=None) -> Any:

    current = dictionary

    for key in keys:
        if isinstance(current, dict) and key in current:
            current = current[key]
        else:
            return default

    return current
