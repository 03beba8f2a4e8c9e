"""Counter-based random numbers keyed by (seed, path_index, counter).

Philox4x32-10 maps a 128-bit counter and 64-bit key to 128 random bits.
The 64-bit seed is the key; the counter packs a 64-bit block index with the
64-bit path index, so every path owns an independent substream and any
block can be generated without touching the others.  One block yields two
uniforms in (0, 1) and, through Box-Muller, two standard normals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

# Reserved block ranges: initial-condition draws and Brownian-bridge uniforms.
INIT_BLOCK = 1 << 63
BRIDGE_BLOCK = 1 << 62


def philox4x32(counter, key, rounds: int = 10):
    """Philox4x32 bijection.  ``counter`` has shape (..., 4) of uint32 words."""
    c = np.asarray(counter, dtype=np.uint64)
    c0, c1, c2, c3 = c[..., 0], c[..., 1], c[..., 2], c[..., 3]
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for _ in range(rounds):
        p0 = c0 * _M0
        p1 = c2 * _M1
        hi0, lo0 = p0 >> _S32, p0 & _MASK
        hi1, lo1 = p1 >> _S32, p1 & _MASK
        c0 = hi1 ^ c1 ^ np.uint64(k0)
        c1 = lo1
        c2 = hi0 ^ c3 ^ np.uint64(k1)
        c3 = lo0
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return np.stack([c0, c1, c2, c3], axis=-1).astype(np.uint32)


def _key(seed: int):
    seed = int(seed)
    if not 0 <= seed < 1 << 64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return seed & 0xFFFFFFFF, seed >> 32


def _words(paths, blocks):
    paths = np.asarray(paths, dtype=np.uint64)
    blocks = np.asarray(blocks, dtype=np.uint64)
    paths, blocks = np.broadcast_arrays(paths, blocks)
    return np.stack([blocks & _MASK, blocks >> _S32, paths & _MASK, paths >> _S32], axis=-1)


def block_uniforms(seed: int, paths, blocks):
    """Two uniforms in (0, 1) per (path, block) pair; output shape (..., 2)."""
    bits = philox4x32(_words(paths, blocks), _key(seed)).astype(np.uint64)
    a = (bits[..., 0] >> np.uint64(5)) * np.uint64(1 << 26) + (bits[..., 1] >> np.uint64(6))
    b = (bits[..., 2] >> np.uint64(5)) * np.uint64(1 << 26) + (bits[..., 3] >> np.uint64(6))
    scale = 1.0 / 9007199254740992.0  # 2**-53
    return np.stack([(a.astype(np.float64) + 0.5) * scale, (b.astype(np.float64) + 0.5) * scale], axis=-1)


def block_normals(seed: int, paths, blocks):
    """Two independent N(0, 1) draws per (path, block) by Box-Muller."""
    u = block_uniforms(seed, paths, blocks)
    r = np.sqrt(-2.0 * np.log(u[..., 0]))
    th = 2.0 * np.pi * u[..., 1]
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)


def path_normals(seed: int, paths, start: int, n: int):
    """Normals number start .. start+n-1 of each path's stream, shape (len(paths), n)."""
    paths = np.asarray(paths, dtype=np.uint64)
    b0, b1 = start // 2, (start + n - 1) // 2
    blocks = np.arange(b0, b1 + 1, dtype=np.uint64)
    z = block_normals(seed, paths[:, None], blocks[None, :]).reshape(len(paths), -1)
    off = start - 2 * b0
    return z[:, off:off + n]


def path_uniforms(seed: int, paths, block: int = INIT_BLOCK):
    """One uniform per path from a reserved block (used for initial conditions)."""
    return block_uniforms(seed, np.asarray(paths, dtype=np.uint64), block)[..., 0]


def path_bridge_uniforms(seed: int, paths, start: int, n: int):
    """Uniforms number start .. start+n-1 of each path's bridge lane, shape (len(paths), n)."""
    paths = np.asarray(paths, dtype=np.uint64)
    b0, b1 = start // 2, (start + n - 1) // 2
    blocks = np.arange(b0, b1 + 1, dtype=np.uint64) + np.uint64(BRIDGE_BLOCK)
    u = block_uniforms(seed, paths[:, None], blocks[None, :]).reshape(len(paths), -1)
    off = start - 2 * b0
    return u[:, off:off + n]


@dataclass
class RngStream:
    """Sequential view of one path's substream; ``counter`` counts blocks consumed."""

    seed: int
    path_index: int = 0
    counter: int = 0

    def _take(self, n, fn):
        nblocks = (n + 1) // 2
        blocks = np.arange(self.counter, self.counter + nblocks, dtype=np.uint64)
        self.counter += nblocks
        return fn(self.seed, np.uint64(self.path_index), blocks).reshape(-1)[:n]

    def random(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        out = self._take(n, block_uniforms)
        return float(out[0]) if size is None else out.reshape(size)

    def normal(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        out = self._take(n, block_normals)
        return float(out[0]) if size is None else out.reshape(size)
