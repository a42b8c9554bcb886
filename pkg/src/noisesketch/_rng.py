"""Counter-based random streams.

Every random value is a pure function of ``(seed, stream, position)``: the
Philox key is ``(seed, stream)`` and the position selects the counter block.
Any slice of a stream can therefore be produced independently, in any order
and on any thread, with identical results.
"""

import numpy as np

_MASK64 = (1 << 64) - 1

# stream domains (top byte of the stream id)
NOISE = 1
PROBE = 2
ACQUISITION = 3
WEIGHTS = 4
PHANTOM = 5
MASK = 6
SOURCES = 7


def stream_id(domain, index=0):
    return ((domain & 0xFF) << 56) | (index & ((1 << 56) - 1))


def uniforms(seed, stream, start, count):
    """``count`` doubles in [0, 1) from positions ``start, start+1, ...``."""
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    block, skip = divmod(int(start), 4)
    counter = np.array([block & _MASK64, block >> 64, 0, 0], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
    return gen.random(skip + count)[skip:]


def complex_normal(seed, stream, start, count):
    """Circular CN(0, 1) draws; element k uses uniform positions 2(start+k), 2(start+k)+1."""
    u = uniforms(seed, stream, 2 * start, 2 * count)
    radius = np.sqrt(-np.log1p(-u[0::2]))
    return radius * np.exp(2j * np.pi * u[1::2])


def random_phase(seed, stream, start, count):
    return np.exp(2j * np.pi * uniforms(seed, stream, start, count))


def real_normal(seed, stream, start, count):
    """Standard normal reals (the real parts of scaled complex normals)."""
    z = complex_normal(seed, stream, start, (count + 1) // 2) * np.sqrt(2.0)
    return np.stack([z.real, z.imag], axis=-1).reshape(-1)[:count]
