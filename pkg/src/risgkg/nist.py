"""The nine SP 800-22 randomness tests used for key streams, with a pass-ratio report."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc, gammaincc, ndtr

ALPHA = 0.01

# report order and display names
TESTS = ("approximate_entropy", "block_frequency", "cumulative_sums", "fft", "frequency",
         "rank", "runs", "longest_run", "serial")
DISPLAY = {
    "approximate_entropy": "Approximate Entropy",
    "block_frequency": "Block Frequency",
    "cumulative_sums": "Cumulative Sums",
    "fft": "FFT",
    "frequency": "Frequency",
    "rank": "Rank",
    "runs": "Runs",
    "longest_run": "Longest Run",
    "serial": "Serial",
}
MIN_LENGTH = {
    "approximate_entropy": 100, "block_frequency": 100, "cumulative_sums": 100,
    "fft": 1000, "frequency": 100, "rank": 1024, "runs": 100, "longest_run": 128,
    "serial": 100,
}
RANK_STANDARD_MIN = 38 * 1024


def _bits(x) -> np.ndarray:
    if isinstance(x, str):
        x = [int(c) for c in x]
    b = np.asarray(x, dtype=np.int8).ravel()
    if b.size and (b.min() < 0 or b.max() > 1):
        raise ValueError("bitstream must contain only 0 and 1")
    return b


def frequency(bits) -> float:
    b = _bits(bits)
    s = abs(int(np.sum(2 * b.astype(np.int64) - 1)))
    return float(erfc(s / math.sqrt(2 * b.size)))


def default_block_m(n: int) -> int:
    """128-bit blocks once the stream holds ten of them, else ``max(20, n // 10)``."""
    return 128 if n >= 1280 else max(20, n // 10)


def block_frequency(bits, M: int | None = None) -> float:
    b = _bits(bits)
    M = default_block_m(b.size) if M is None else M
    N = b.size // M
    if N < 1:
        raise ValueError("stream shorter than one block")
    pi = b[:N * M].reshape(N, M).mean(axis=1)
    chi2 = 4.0 * M * float(np.sum((pi - 0.5) ** 2))
    return float(gammaincc(N / 2.0, chi2 / 2.0))


def _cusum_p(z: float, n: int) -> float:
    sq = math.sqrt(n)
    # summation bounds truncate toward zero, as in the reference implementation
    k1 = np.arange(int((-n / z + 1) / 4), int((n / z - 1) / 4) + 1)
    k2 = np.arange(int((-n / z - 3) / 4), int((n / z - 1) / 4) + 1)
    s1 = np.sum(ndtr((4 * k1 + 1) * z / sq) - ndtr((4 * k1 - 1) * z / sq))
    s2 = np.sum(ndtr((4 * k2 + 3) * z / sq) - ndtr((4 * k2 + 1) * z / sq))
    return float(1.0 - s1 + s2)


def cumulative_sums(bits) -> tuple[float, float]:
    """``(forward, backward)`` p-values."""
    b = _bits(bits)
    x = 2 * b.astype(np.int64) - 1
    fwd = int(np.abs(np.cumsum(x)).max())
    bwd = int(np.abs(np.cumsum(x[::-1])).max())
    return _cusum_p(fwd, b.size), _cusum_p(bwd, b.size)


def runs(bits) -> float:
    b = _bits(bits)
    n = b.size
    pi = b.mean()
    if abs(pi - 0.5) >= 2.0 / math.sqrt(n):
        return 0.0  # frequency prerequisite fails
    v = 1 + int(np.count_nonzero(b[1:] != b[:-1]))
    num = abs(v - 2 * n * pi * (1 - pi))
    return float(erfc(num / (2 * math.sqrt(2 * n) * pi * (1 - pi))))


_LONGEST = {
    8: ((1, 2, 3, 4), (0.21484375, 0.3671875, 0.23046875, 0.1875)),
    128: ((4, 5, 6, 7, 8, 9),
          (0.1174035788, 0.242955959, 0.249363483, 0.17517706, 0.102701071, 0.112398847)),
    10000: ((10, 11, 12, 13, 14, 15, 16),
            (0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727)),
}


def longest_run(bits) -> float:
    b = _bits(bits)
    n = b.size
    M = 8 if n < 6272 else 128 if n < 750000 else 10000
    cats, probs = _LONGEST[M]
    N = n // M
    blocks = b[:N * M].reshape(N, M)
    longest = np.zeros(N, dtype=int)
    cur = np.zeros(N, dtype=int)
    for j in range(M):
        cur = np.where(blocks[:, j] == 1, cur + 1, 0)
        longest = np.maximum(longest, cur)
    idx = np.clip(np.searchsorted(cats, longest), 0, len(cats) - 1)
    v = np.bincount(idx, minlength=len(cats))
    p = np.asarray(probs)
    chi2 = float(np.sum((v - N * p) ** 2 / (N * p)))
    return float(gammaincc((len(cats) - 1) / 2.0, chi2 / 2.0))


def gf2_rank(mat: np.ndarray) -> int:
    m = (np.asarray(mat) & 1).astype(np.uint8).copy()
    rows, cols = m.shape
    r = 0
    for c in range(cols):
        piv = np.flatnonzero(m[r:, c])
        if piv.size == 0:
            continue
        p = r + piv[0]
        if p != r:
            m[[r, p]] = m[[p, r]]
        hit = np.flatnonzero(m[:, c])
        hit = hit[hit != r]
        m[hit] ^= m[r]
        r += 1
        if r == rows:
            break
    return r


def _rank_prob(r: int, M: int, Q: int) -> float:
    p = 2.0 ** (r * (Q + M - r) - M * Q)
    for i in range(r):
        p *= (1 - 2.0 ** (i - Q)) * (1 - 2.0 ** (i - M)) / (1 - 2.0 ** (i - r))
    return p


def rank(bits, M: int = 32, Q: int = 32) -> float:
    b = _bits(bits)
    N = b.size // (M * Q)
    if N < 1:
        raise ValueError("stream shorter than one matrix")
    ranks = np.array([gf2_rank(b[i * M * Q:(i + 1) * M * Q].reshape(M, Q)) for i in range(N)])
    full = min(M, Q)
    p_full, p_minus = _rank_prob(full, M, Q), _rank_prob(full - 1, M, Q)
    probs = np.array([p_full, p_minus, 1.0 - p_full - p_minus])
    counts = np.array([np.sum(ranks == full), np.sum(ranks == full - 1), np.sum(ranks < full - 1)])
    chi2 = float(np.sum((counts - N * probs) ** 2 / (N * probs)))
    return float(math.exp(-chi2 / 2.0))


def fft(bits) -> float:
    b = _bits(bits)
    n = b.size
    x = 2.0 * b - 1.0
    mod = np.abs(np.fft.fft(x))[: n // 2]
    T = math.sqrt(math.log(1 / 0.05) * n)
    n0 = 0.95 * n / 2.0
    n1 = float(np.count_nonzero(mod < T))
    d = (n1 - n0) / math.sqrt(n * 0.95 * 0.05 / 4.0)
    return float(erfc(abs(d) / math.sqrt(2)))


def _pattern_counts(b: np.ndarray, m: int) -> np.ndarray:
    if m == 0:
        return np.zeros(0)
    n = b.size
    ext = np.concatenate([b, b[: m - 1]]).astype(np.int64)
    val = np.zeros(n, dtype=np.int64)
    for j in range(m):
        val = (val << 1) | ext[j:j + n]
    return np.bincount(val, minlength=2 ** m)


def _psi2(b: np.ndarray, m: int) -> float:
    if m <= 0:
        return 0.0
    n = b.size
    c = _pattern_counts(b, m)
    return float((2 ** m / n) * np.sum(c.astype(float) ** 2) - n)


def serial(bits, m: int | None = None) -> tuple[float, float]:
    b = _bits(bits)
    n = b.size
    m = default_serial_m(n) if m is None else m
    p0, p1, p2 = _psi2(b, m), _psi2(b, m - 1), _psi2(b, m - 2)
    d1 = p0 - p1
    d2 = p0 - 2 * p1 + p2
    return float(gammaincc(2 ** (m - 2), d1 / 2)), float(gammaincc(2 ** (m - 3), d2 / 2))


def _phi(b: np.ndarray, m: int) -> float:
    if m == 0:
        return 0.0
    c = _pattern_counts(b, m)
    pi = c[c > 0] / b.size
    return float(np.sum(pi * np.log(pi)))


def approximate_entropy(bits, m: int | None = None) -> float:
    b = _bits(bits)
    n = b.size
    m = default_apen_m(n) if m is None else m
    apen = _phi(b, m) - _phi(b, m + 1)
    chi2 = 2.0 * n * (math.log(2) - apen)
    return float(gammaincc(2 ** (m - 1), chi2 / 2.0))


def default_serial_m(n: int) -> int:
    return max(2, int(math.floor(math.log2(n))) - 3)


def default_apen_m(n: int) -> int:
    return min(10, max(2, int(math.floor(math.log2(n))) - 6))


def run_test(name: str, bits) -> dict:
    """p-value(s) of one test; ``{'p': nan, 'applicable': False}`` below its minimum length."""
    b = _bits(bits)
    if b.size < MIN_LENGTH[name]:
        return {"p": math.nan, "applicable": False}
    if name == "cumulative_sums":
        f, r = cumulative_sums(b)
        return {"p": min(f, r), "forward": f, "backward": r, "applicable": True}
    if name == "serial":
        p1, p2 = serial(b)
        return {"p": min(p1, p2), "p1": p1, "p2": p2, "applicable": True}
    fn = {"approximate_entropy": approximate_entropy, "block_frequency": block_frequency,
          "fft": fft, "frequency": frequency, "rank": rank, "runs": runs,
          "longest_run": longest_run}[name]
    return {"p": fn(b), "applicable": True}


@dataclass
class NistReport:
    p_values: dict  # test -> (streams,) array, NaN where not applicable
    details: dict  # test -> list of per-stream dicts
    stream_count: int
    stream_length: int
    flags: dict = field(default_factory=dict)

    def applicable(self, test: str) -> bool:
        return bool(np.any(np.isfinite(self.p_values[test])))

    def pass_ratio(self, test: str) -> float:
        p = self.p_values[test]
        ok = np.isfinite(p)
        return float(np.mean(p[ok] > ALPHA)) if ok.any() else math.nan

    def pass_ratios(self) -> dict:
        return {t: self.pass_ratio(t) for t in TESTS}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stream"] + list(TESTS))
            for i in range(self.stream_count):
                w.writerow([i] + [repr(float(self.p_values[t][i])) for t in TESTS])

    def table(self, columns: dict | None = None) -> str:
        """Fixed-width pass-ratio table; ``columns`` maps labels to more reports."""
        cols = {"pass ratio": self} if columns is None else columns
        width = max(len(v) for v in DISPLAY.values()) + 2
        head = "Test".ljust(width) + "".join(f"{c:>14}" for c in cols)
        lines = [head, "-" * len(head)]
        for t in TESTS:
            row = DISPLAY[t].ljust(width)
            for rep in cols.values():
                r = rep.pass_ratio(t)
                cell = "n/a" if math.isnan(r) else f"{r:.2f}"
                if t in rep.flags:
                    cell += "*"
                row += f"{cell:>14}"
            lines.append(row)
        notes = {msg for rep in cols.values() for msg in rep.flags.values()}
        lines += [f"* {msg}" for msg in sorted(notes)]
        lines.append(f"streams={self.stream_count} length={self.stream_length} alpha={ALPHA}")
        return "\n".join(lines) + "\n"


def nist_suite(bitstreams) -> NistReport:
    streams = [_bits(s) for s in bitstreams]
    if not streams:
        raise ValueError("no bitstreams")
    n = min(s.size for s in streams)
    details = {t: [run_test(t, s) for s in streams] for t in TESTS}
    pv = {t: np.array([d["p"] for d in details[t]], dtype=float) for t in TESTS}
    flags = {}
    if MIN_LENGTH["rank"] <= n < RANK_STANDARD_MIN:
        flags["rank"] = (f"Rank run on {n // 1024} matrices per stream "
                         f"(standard asks for >= 38, i.e. {RANK_STANDARD_MIN} bits)")
    return NistReport(pv, details, len(streams), n, flags)
