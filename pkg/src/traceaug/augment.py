"""Tor-trace augmentation: burst manipulations plus a naive flip baseline.

The burst augmenter leaves the first cells of a trace untouched (they
carry the protocol handshake, which is stable per site), picks one of
three burst manipulations uniformly at random, applies it to the signed
burst sequence of the remainder, converts back to cells, shifts the whole
trace right by a random amount, and renormalizes to the fixed model input
length. The manipulations replicate effects of changing network
conditions:

* resizing incoming bursts — content churn of a page;
* inserting outgoing bursts into incoming ones — flow-control cells that
  low-bandwidth circuits emit more often;
* merging incoming bursts (dropping the outgoing bursts between them) —
  fewer control cells on fast circuits, with the incoming volume kept.

All randomness comes from a caller-owned RandomSource; draws happen in
strict left-to-right burst order so outputs are reproducible.
"""

from dataclasses import dataclass

import numpy as np

from .bursts import bursts_to_cells, extract_bursts, normalize_bursts, split_prefix
from .rng import RandomSource
from .traces import DirectionTrace, fit_length


class TraceTooShort(ValueError):
    """Trace has too few nonzero cells to keep the protected prefix."""


class EmptyDistribution(ValueError):
    """Outgoing-burst insertion needs a nonempty burst-size distribution."""


@dataclass(frozen=True)
class AugmentConfig:
    """Burst-augmentation hyperparameters.

    Rates are per-burst probabilities; sizes are in cells. Traces with at
    most ``low_cells`` nonzero cells only grow their incoming bursts,
    traces above ``high_cells`` only shrink them, anything between picks a
    direction at random.
    """

    shift_max: int = 10
    r_upsample: float = 1.0
    r_downsample: float = 0.5
    r_insert: float = 0.3
    burst_size_threshold: int = 10
    n_merge: int = 5
    r_merge: float = 0.1
    preserve_prefix: int = 20
    p_flip: float = 0.1
    low_cells: int = 1000
    high_cells: int = 4000

    def __post_init__(self):
        if not 0.0 < self.r_upsample <= 1.0 or not 0.0 < self.r_downsample <= 1.0:
            raise ValueError("r_upsample and r_downsample must be in (0, 1]")
        for name in ("r_insert", "r_merge", "p_flip"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.shift_max < 0 or self.preserve_prefix < 0:
            raise ValueError("shift_max and preserve_prefix must be >= 0")
        if self.n_merge < 2:
            raise ValueError("n_merge must be >= 2")
        if self.low_cells >= self.high_cells:
            raise ValueError("low_cells must be below high_cells")


def _round_away(x: float) -> int:
    """Round to nearest integer, ties away from zero."""
    return int(np.sign(x) * np.floor(abs(x) + 0.5))


def modify_incoming_burst_sizes(
    bursts: np.ndarray, nonzero_count: int, cfg: AugmentConfig, rng: RandomSource
) -> np.ndarray:
    """Scale large incoming bursts up or down.

    Short traces (nonzero_count <= low_cells) are always upsampled, long
    ones (> high_cells) downsampled, anything between chooses uniformly.
    Each incoming burst at least burst_size_threshold cells large is
    scaled by (1 + u*delta) with a fresh uniform u per burst, rounded to
    the nearest integer and floored at magnitude 1 so that no burst
    vanishes or flips direction. Outgoing and small incoming bursts pass
    through untouched.
    """
    bursts = np.asarray(bursts, dtype=np.int64)
    if nonzero_count <= cfg.low_cells:
        delta = cfg.r_upsample
    elif nonzero_count > cfg.high_cells:
        delta = -cfg.r_downsample
    else:
        delta = cfg.r_upsample if rng.randbelow(2) == 0 else -cfg.r_downsample

    eligible = bursts <= -cfg.burst_size_threshold
    if not eligible.any():
        return bursts.copy()
    u = rng.uniforms(int(eligible.sum()))
    scaled = bursts[eligible] * (1.0 + u * delta)
    out = bursts.copy()
    out[eligible] = [
        max(1, abs(_round_away(s))) * int(np.sign(b))
        for s, b in zip(scaled, bursts[eligible])
    ]
    return out


def insert_outgoing_bursts(
    bursts: np.ndarray, cfg: AugmentConfig, dist, rng: RandomSource
) -> np.ndarray:
    """Split incoming bursts around sampled outgoing bursts.

    Each incoming burst of at least 7 cells fires with probability
    r_insert; a burst of -m cells becomes [-p, +s, -(m-p)] with the split
    position p uniform in {3, ..., m-3} and the inserted size s sampled
    from the empirical outgoing-burst-size distribution. The incoming
    cell count is preserved exactly.
    """
    if dist is None or dist.total == 0:
        raise EmptyDistribution("need a nonempty outgoing-burst-size distribution")
    out: list[int] = []
    for b in np.asarray(bursts, dtype=np.int64):
        b = int(b)
        if b > -7:  # outgoing bursts and too-small incoming bursts
            out.append(b)
            continue
        if rng.uniform() >= cfg.r_insert:
            out.append(b)
            continue
        size = dist.sample(rng)
        position = rng.randint(3, -b - 3)
        out += [-position, size, b + position]
    return np.array(out, dtype=np.int64)


def merge_incoming_bursts(
    bursts: np.ndarray, cfg: AugmentConfig, rng: RandomSource
) -> np.ndarray:
    """Merge runs of incoming bursts, dropping outgoing bursts in between.

    Scanning left to right, each incoming burst fires with probability
    r_merge; k is then drawn uniformly from {2, ..., n_merge} and the next
    k incoming bursts (including the current one) collapse into their
    signed sum. Outgoing bursts strictly between merged incoming bursts
    are removed; if fewer than k incoming bursts remain, whatever remains
    is merged. The total incoming cell count is preserved exactly.
    """
    bursts = np.asarray(bursts, dtype=np.int64)
    out: list[int] = []
    i = 0
    n = len(bursts)
    while i < n:
        b = int(bursts[i])
        if b > 0:
            out.append(b)
            i += 1
            continue
        if rng.uniform() >= cfg.r_merge:
            out.append(b)
            i += 1
            continue
        k = rng.randint(2, cfg.n_merge)
        merged = 0
        taken = 0
        last_incoming = i
        j = i
        while j < n and taken < k:
            if bursts[j] < 0:
                merged += int(bursts[j])
                taken += 1
                last_incoming = j
            j += 1
        out.append(merged)
        i = last_incoming + 1
    return np.array(out, dtype=np.int64)


def net_augment(
    t: DirectionTrace, cfg: AugmentConfig, dist, rng: RandomSource
) -> DirectionTrace:
    """Apply one burst manipulation plus a shift to a direction trace.

    The first ``preserve_prefix`` cells are kept verbatim; one of the
    three manipulations (chosen uniformly, one draw, before any
    manipulation-local draws) rewrites the burst sequence of the
    remainder; the result is converted back to cells and the whole trace
    shifted right by n cells (n uniform in {0, ..., shift_max}): the last
    n cells are dropped and n zero cells inserted at the beginning.
    The output is truncated or zero-padded back to the input length.
    """
    nonzero_count = t.nonzero_count
    if nonzero_count <= cfg.preserve_prefix:
        raise TraceTooShort(
            f"need more than {cfg.preserve_prefix} nonzero cells, got {nonzero_count}"
        )
    prefix, rest = split_prefix(t.cells, cfg.preserve_prefix)
    bursts = extract_bursts(rest)

    manipulation = rng.randbelow(3)
    if manipulation == 0:
        bursts = modify_incoming_burst_sizes(bursts, nonzero_count, cfg, rng)
    elif manipulation == 1:
        bursts = insert_outgoing_bursts(bursts, cfg, dist, rng)
    else:
        bursts = merge_incoming_bursts(bursts, cfg, rng)
    bursts = normalize_bursts(bursts)

    natural = int(np.abs(bursts).sum()) if len(bursts) else 0
    suffix_cells = bursts_to_cells(bursts, natural)
    # fixed length first: shifting the padded trace drops tail padding for
    # short traces instead of real cells
    cells = fit_length(np.concatenate((prefix, suffix_cells)), len(t))

    n = rng.randbelow(cfg.shift_max + 1)
    if n > 0:
        cells = np.concatenate((np.zeros(n, dtype=np.int8), cells[: len(cells) - n]))
    return DirectionTrace(cells, label=t.label)


def flip_augment(t: DirectionTrace, p_flip: float, rng: RandomSource) -> DirectionTrace:
    """Negate each nonzero cell independently with probability p_flip."""
    if not 0.0 <= p_flip <= 1.0:
        raise ValueError("p_flip must be in [0, 1]")
    cells = t.cells.copy()
    nz = np.flatnonzero(cells)
    if len(nz):
        u = rng.uniforms(len(nz))
        flip = nz[u < p_flip]
        cells[flip] = -cells[flip]
    return DirectionTrace(cells, label=t.label)
