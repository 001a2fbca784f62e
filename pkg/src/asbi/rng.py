"""Deterministic seed handling and the portable seed-to-noise recipe.

Two distinct random-number regimes live in this package:

* Simulator observation noise uses the counter-based recipe implemented
  here: a splitmix64 stream feeding a Box-Muller transform.  The recipe is
  part of the wire contract (see docs/protocol.md) so that an external
  plugin written in any language can reproduce the builtin simulators'
  noise from the seed carried in each request.  All floating-point steps
  are plain IEEE-754 double operations evaluated one element at a time,
  which keeps results independent of batching.
* Everything else (mixture sampling, minibatch draws, rejection sampling)
  uses ``numpy.random.Generator`` seeded through :func:`derive_seed`.

Seeds are unsigned 64-bit integers; arbitrary Python ints are reduced
modulo 2**64.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TWO_NEG53 = 2.0**-53
_TAU = 6.283185307179586


def mix64(value: int) -> int:
    """splitmix64 finalizer: one 64-bit integer in, one out."""
    z = value & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _part_to_int(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        return int(part) & _MASK64
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big")
    raise TypeError(f"seed parts must be ints or strings, got {type(part).__name__}")


def derive_seed(*parts) -> int:
    """Fold run seed, purpose tags, and indices into one child seed.

    Deterministic pure-integer mixing; string tags are hashed so call
    sites can label streams ("train", "sims", ...) without collisions.
    """
    if not parts:
        raise ValueError("derive_seed needs at least one part")
    h = 0x5851F42D4C957F2D
    for part in parts:
        h = mix64((h + _GAMMA + _part_to_int(part)) & _MASK64)
    return h


def _stream_u64(seed: int, count: int) -> np.ndarray:
    """First ``count`` raw outputs of the splitmix64 stream for ``seed``.

    Output k (1-based counter) is mix64(seed + k * GAMMA mod 2**64).
    Integer ops are exact, so vectorizing them is safe.
    """
    counters = np.arange(1, count + 1, dtype=np.uint64)
    state = np.uint64(seed & _MASK64) + counters * np.uint64(_GAMMA)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def uniforms(seed: int, count: int) -> np.ndarray:
    """``count`` doubles in (0, 1]: ((u64 >> 11) + 1) * 2**-53."""
    bits = (_stream_u64(seed, count) >> np.uint64(11)) + np.uint64(1)
    return bits.astype(np.float64) * _TWO_NEG53


def normals(seed: int, count: int) -> np.ndarray:
    """``count`` standard normals from the stream for ``seed``.

    Uniforms are consumed in consecutive pairs (u1, u2); each pair yields
    z0 = sqrt(-2 ln u1) * cos(tau * u2) and z1 = the sin twin.  The trig
    and log steps run element-wise through libm so results never depend
    on how calls are batched.
    """
    if count <= 0:
        return np.empty(0, dtype=np.float64)
    pairs = (count + 1) // 2
    u = uniforms(seed, 2 * pairs)
    out = np.empty(2 * pairs, dtype=np.float64)
    log, sqrt, cos, sin = math.log, math.sqrt, math.cos, math.sin
    for i in range(pairs):
        u1 = u[2 * i]
        u2 = u[2 * i + 1]
        r = sqrt(-2.0 * log(u1))
        phi = _TAU * u2
        out[2 * i] = r * cos(phi)
        out[2 * i + 1] = r * sin(phi)
    return out[:count]


def normals_block(seeds, count: int) -> np.ndarray:
    """Per-seed noise streams, one row per seed: shape (len(seeds), count).

    Row i is bitwise-identical to ``normals(seeds[i], count)``; the
    integer stream is vectorized across rows, the float steps stay
    element-wise.

    Accepts integer arrays or plain int sequences. Float arrays are
    rejected: seeds above 2**53 do not survive a float64 round-trip, and
    numpy silently infers float64 for int lists with mixed magnitudes.
    """
    if isinstance(seeds, np.ndarray) and seeds.dtype.kind not in "iu":
        raise TypeError(f"seeds must be integers, got dtype {seeds.dtype}")
    seeds = np.asarray(seeds, dtype=np.uint64)
    n_seeds = seeds.shape[0]
    if count <= 0:
        return np.empty((n_seeds, 0), dtype=np.float64)
    pairs = (count + 1) // 2
    counters = np.arange(1, 2 * pairs + 1, dtype=np.uint64)
    state = seeds[:, None] + counters[None, :] * np.uint64(_GAMMA)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    z = z ^ (z >> np.uint64(31))
    u = ((z >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * _TWO_NEG53

    flat = u.reshape(-1)
    out = np.empty(flat.shape[0], dtype=np.float64)
    log, sqrt, cos, sin = math.log, math.sqrt, math.cos, math.sin
    for i in range(0, flat.shape[0], 2):
        u1 = flat[i]
        u2 = flat[i + 1]
        r = sqrt(-2.0 * log(u1))
        phi = _TAU * u2
        out[i] = r * cos(phi)
        out[i + 1] = r * sin(phi)
    return out.reshape(n_seeds, 2 * pairs)[:, :count]


def generator(*parts) -> np.random.Generator:
    """numpy Generator seeded from derive_seed(*parts)."""
    return np.random.default_rng(derive_seed(*parts))
