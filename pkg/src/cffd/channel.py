"""Small-scale Rayleigh fading for every link class.

Array layout (all complex128):

========  =====================  ===========================================
name      shape                  meaning
========  =====================  ===========================================
``f``     (M, K, Nt)             AP transmit antennas to DL user
``f_bar`` (M, K, Nr)             DL user to AP receive antennas
``g``     (M, L, Nr)             UL user to AP receive antennas
``g_bar`` (M, L, Nt)             AP transmit antennas to UL user
``h``     (K, L)                 UL user to DL user
``Q``     (M, M, Nr, Nt)         ``Q[m, n]`` carries AP n's transmission
                                 into AP m's receiver; ``Q[m, m]`` is the
                                 residual self-interference channel
========  =====================  ===========================================

Each link owns a random stream keyed by ``(seed, class tag, i, j)``, so the
draw for one link never depends on how many other users exist. Batched
draws pull consecutive samples from the same streams, which makes block
``b`` of a batch independent of block ``b`` of any other seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .scenario import Scenario

CLASS_TAGS = {"f": 0, "f_bar": 1, "g": 2, "g_bar": 3, "h": 4, "Q": 5}
ALL_CLASSES = tuple(CLASS_TAGS)

_MAGIC = b"CFFD"


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """One coherence block of fading. See the module docstring for layout."""

    f: np.ndarray
    f_bar: np.ndarray
    g: np.ndarray
    g_bar: np.ndarray
    h: np.ndarray
    Q: np.ndarray

    def equals(self, other: "ChannelRealization") -> bool:
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in ALL_CLASSES)


def link_rng(seed: int, cls: str, i: int, j: int) -> np.random.Generator:
    """Generator dedicated to link ``(i, j)`` of class ``cls``."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(CLASS_TAGS[cls], i, j))
    return np.random.default_rng(ss)


def _shapes(sc: Scenario):
    M, K, L, Nt, Nr = sc.M, sc.K, sc.L, sc.Nt, sc.Nr
    return {
        "f": ((M, K), (Nt,), sc.zeta_f),
        "f_bar": ((M, K), (Nr,), sc.zeta_f),
        "g": ((M, L), (Nr,), sc.zeta_g),
        "g_bar": ((M, L), (Nt,), sc.zeta_g),
        "h": ((K, L), (), sc.zeta_h),
        "Q": ((M, M), (Nr, Nt), sc.zeta_Q),
    }


def cn_draw(rng: np.random.Generator, size, var=1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with variance ``var``."""
    size = (int(size),) if np.isscalar(size) else tuple(size)
    z = rng.standard_normal(size + (2,))
    return np.sqrt(var / 2.0) * (z[..., 0] + 1j * z[..., 1])


class ChannelStream:
    """Chunked source of i.i.d. fading blocks for one scenario and seed.

    Parameters
    ----------
    scenario : Scenario
    seed : int
        Block seed. ``ChannelStream(sc, s).next(1)`` reproduces
        :func:`draw_channels` ``(sc, s)``.
    classes : iterable of str, optional
        Link classes to draw; the others come back as ``None``. Skipping
        ``Q`` saves most of the work on large networks.
    """

    def __init__(self, scenario: Scenario, seed: int, classes=ALL_CLASSES):
        self.scenario = scenario
        self.seed = int(seed)
        self.classes = tuple(c for c in ALL_CLASSES if c in set(classes))
        shapes = _shapes(scenario)
        self._links = {}
        for cls in self.classes:
            grid, inner, zeta = shapes[cls]
            rngs = [[link_rng(self.seed, cls, i, j) for j in range(grid[1])]
                    for i in range(grid[0])]
            self._links[cls] = (grid, inner, np.asarray(zeta, dtype=float), rngs)

    def next(self, n: int) -> dict:
        """Draw ``n`` further blocks; arrays gain a leading axis of size n."""
        out = dict.fromkeys(ALL_CLASSES)
        for cls, (grid, inner, zeta, rngs) in self._links.items():
            arr = np.empty((n,) + grid + inner, dtype=complex)
            for i in range(grid[0]):
                for j in range(grid[1]):
                    arr[:, i, j] = cn_draw(rngs[i][j], (n,) + inner, zeta[i, j])
            out[cls] = arr
        return out


def draw_channel_batch(scenario: Scenario, seed: int, n_blocks: int,
                       classes=ALL_CLASSES) -> dict:
    """``n_blocks`` consecutive blocks from the streams of ``seed``."""
    return ChannelStream(scenario, seed, classes).next(n_blocks)


def draw_channels(scenario: Scenario, block_seed: int) -> ChannelRealization:
    """Draw one block of every link class.

    Every entry is CN(0, zeta) with zeta taken from the matching large-scale
    map; the result is a pure function of ``(scenario, block_seed)``.
    """
    batch = draw_channel_batch(scenario, block_seed, 1)
    return ChannelRealization(**{k: v[0] for k, v in batch.items()})


def empirical_moment_check(scenario: Scenario, n_draws: int, seed: int = 0,
                           chunk: int = 2000) -> float:
    """Largest relative error of the sample second moment over all links.

    For each link the mean of ``|entry|**2`` over all its antenna entries
    and ``n_draws`` blocks is compared with its zeta. Links with zero
    variance are skipped.
    """
    if n_draws < 1000:
        raise ValueError("n_draws must be >= 1000")
    stream = ChannelStream(scenario, seed)
    shapes = _shapes(scenario)
    sums = {c: np.zeros(shapes[c][0]) for c in ALL_CLASSES}
    done = 0
    while done < n_draws:
        n = min(chunk, n_draws - done)
        batch = stream.next(n)
        for c in ALL_CLASSES:
            p = np.abs(batch[c]) ** 2
            sums[c] += p.reshape(p.shape[:3] + (-1,)).sum(axis=(0, 3))
        done += n
    worst = 0.0
    for c in ALL_CLASSES:
        grid, inner, zeta = shapes[c]
        zeta = np.asarray(zeta, dtype=float)
        count = n_draws * int(np.prod(inner, dtype=int))
        mask = zeta > 0
        if np.any(mask):
            err = np.abs(sums[c][mask] / count - zeta[mask]) / zeta[mask]
            worst = max(worst, float(err.max()))
    return worst


def dump_realization(real: ChannelRealization) -> bytes:
    """Serialize to a flat little-endian blob.

    Layout: ``b"CFFD"``, then uint32 ``M, K, L, Nt, Nr``, then each of f,
    f_bar, g, g_bar, h, Q as row-major complex128 (real, imag pairs).
    """
    M, K, Nt = real.f.shape
    L, Nr = real.g.shape[1], real.g.shape[2]
    parts = [_MAGIC, struct.pack("<5I", M, K, L, Nt, Nr)]
    for name in ALL_CLASSES:
        parts.append(np.ascontiguousarray(getattr(real, name), dtype="<c16").tobytes())
    return b"".join(parts)


def load_realization(blob: bytes) -> ChannelRealization:
    """Inverse of :func:`dump_realization`."""
    if blob[:4] != _MAGIC:
        raise ValueError("not a channel dump (bad magic)")
    M, K, L, Nt, Nr = struct.unpack_from("<5I", blob, 4)
    shapes = {
        "f": (M, K, Nt), "f_bar": (M, K, Nr), "g": (M, L, Nr),
        "g_bar": (M, L, Nt), "h": (K, L), "Q": (M, M, Nr, Nt),
    }
    offset = 4 + 20
    arrays = {}
    for name in ALL_CLASSES:
        count = int(np.prod(shapes[name], dtype=int))
        arr = np.frombuffer(blob, dtype="<c16", count=count, offset=offset)
        arrays[name] = arr.reshape(shapes[name]).astype(complex)
        offset += 16 * count
    if offset != len(blob):
        raise ValueError("channel dump has trailing or missing bytes")
    return ChannelRealization(**arrays)
