"""Attention FLOP metering.

Counts only the attention-matrix multiplies (QK^T and attn@V), the part
whose cost the windowing bounds to O(tokens * window^2) instead of
O(tokens^2). Linear projections scale with token count regardless and are
excluded.
"""

from __future__ import annotations

from contextlib import contextmanager

from stmae.model import attention


class FlopMeter:
    def __init__(self):
        self.flops = 0

    def add(self, n: int) -> None:
        self.flops += n


@contextmanager
def measure_attention_flops():
    """Context manager yielding a meter filled by attention forwards inside."""
    meter = FlopMeter()
    previous = attention._FLOP_METER
    attention._FLOP_METER = meter
    try:
        yield meter
    finally:
        attention._FLOP_METER = previous
