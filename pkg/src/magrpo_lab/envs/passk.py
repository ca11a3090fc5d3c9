from __future__ import annotations

from math import comb
from typing import Sequence

from ..core import ContractError


def pass_at_k(samples: Sequence[bool], k: int) -> float:
    """Unbiased pass@k: ``1 - C(m-c, k) / C(m, k)`` for m samples with c passes."""
    m = len(samples)
    if not 1 <= k <= m:
        raise ContractError(f"pass@k needs 1 <= k <= {m}, got k={k}")
    c = sum(bool(s) for s in samples)
    return 1.0 - comb(m - c, k) / comb(m, k)
