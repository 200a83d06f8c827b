# Recomputes the seed-0 baseline parameter checksum without the C++ code:
# SplitMix64 draws, Kaiming-uniform bounds, binary tensor encoding, SHA-256.
import hashlib, math, struct
M = (1 << 64) - 1
class SM:
    def __init__(s, seed): s.x = seed
    def next(s):
        s.x = (s.x + 0x9E3779B97F4A7C15) & M
        z = s.x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M
        return z ^ (z >> 31)
    def uniform(s, lo, hi): return lo + (hi - lo) * ((s.next() >> 11) * 2.0**-53)
def enc(shape, vals):
    b = b"BPLAB-TENSOR\0\0\0\0" + struct.pack("<I", len(shape)) + b"".join(struct.pack("<I", e) for e in shape)
    return b + b"".join(struct.pack("<d", v) for v in vals)
rng = SM(0)
layers = [((8,1,3,3),6.0), ((16,8,3,3),6.0), ((16,16,3,3),6.0), ((4,16),3.0)]
out = b""
for shape, gain in layers:
    n = math.prod(shape); fan = n // shape[0]; bound = math.sqrt(gain / fan)
    out += enc(shape, [rng.uniform(-bound, bound) for _ in range(n)]) + enc((shape[0],), [0.0]*shape[0])
print(hashlib.sha256(out).hexdigest())
