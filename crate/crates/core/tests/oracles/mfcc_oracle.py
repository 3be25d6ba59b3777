"""Independent reference for the pooled 39-d MFCC of a 1 s, 440 Hz unit sine.

Direct O(N^2) DFT, explicit triangular mel filters and a textbook DCT-II.
Shares no code with the Rust extractor. Prints the 39 values used to freeze
tests/mfcc_oracle.rs.
"""
import math

SR, WIN, HOP, NFFT, NMELS, NCEPS, DW, FLOOR, PRE = 16000, 400, 160, 512, 26, 13, 2, 1e-10, 0.97


def mel(f):
    return 2595.0 * math.log10(1.0 + f / 700.0)


def inv_mel(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


x = [math.sin(2 * math.pi * 440.0 * n / SR) for n in range(SR)]
y = [x[0]] + [x[n] - PRE * x[n - 1] for n in range(1, len(x))]
ham = [0.54 - 0.46 * math.cos(2 * math.pi * n / (WIN - 1)) for n in range(WIN)]

top = mel(SR / 2)
edges = [inv_mel(top * i / (NMELS + 1)) for i in range(NMELS + 2)]


def tri(k, f):
    lo, c, hi = edges[k], edges[k + 1], edges[k + 2]
    if lo < f <= c:
        return (f - lo) / (c - lo)
    if c < f < hi:
        return (hi - f) / (hi - c)
    return 0.0


nbins = NFFT // 2 + 1
fb = [[tri(k, b * SR / NFFT) for b in range(nbins)] for k in range(NMELS)]
cos_tab = [[math.cos(2 * math.pi * b * n / NFFT) for n in range(WIN)] for b in range(nbins)]
sin_tab = [[math.sin(2 * math.pi * b * n / NFFT) for n in range(WIN)] for b in range(nbins)]

frames = []
nfr = 1 + (len(y) - WIN) // HOP
for t in range(nfr):
    seg = [y[t * HOP + n] * ham[n] for n in range(WIN)]
    pw = []
    for b in range(nbins):
        re = sum(s * c for s, c in zip(seg, cos_tab[b]))
        im = sum(s * c for s, c in zip(seg, sin_tab[b]))
        pw.append(re * re + im * im)
    lm = [math.log(max(sum(w * p for w, p in zip(fb[k], pw)), FLOOR)) for k in range(NMELS)]
    ce = []
    for q in range(NCEPS):
        s = math.sqrt((1 if q == 0 else 2) / NMELS)
        ce.append(s * sum(lm[j] * math.cos(math.pi * q * (2 * j + 1) / (2 * NMELS)) for j in range(NMELS)))
    frames.append(ce)


def deltas(fr):
    T = len(fr)
    den = 2 * sum(n * n for n in range(1, DW + 1))
    out = []
    for t in range(T):
        row = []
        for i in range(len(fr[t])):
            acc = 0.0
            for n in range(1, DW + 1):
                acc += n * (fr[min(t + n, T - 1)][i] - fr[max(t - n, 0)][i])
            row.append(acc / den)
        out.append(row)
    return out


d1 = deltas(frames)
d2 = deltas(d1)
full = [a + b + c for a, b, c in zip(frames, d1, d2)]
mean = [sum(f[i] for f in full) / len(full) for i in range(39)]
print(",\n".join(repr(v) for v in mean))
