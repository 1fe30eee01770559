"""Dense float64 numerics: probability primitives, a gradient oracle, and
the repository-wide deterministic random source.

Everything here operates on plain ``numpy`` float64 arrays. Public functions
validate their contracts and raise :class:`ContractViolation` on bad input;
non-finite values discovered mid-computation raise :class:`NumericFailure`.

Randomness policy
-----------------
All sampling in the repository flows through :class:`RngStream`, which wraps
the Philox4x64 counter-based bit generator keyed directly by ``(seed, key)``.
Derived quantities use fixed, documented transforms of the raw uniform
stream (Box-Muller for normals, Fisher-Yates for shuffles, floor-scaling for
bounded integers), so identical seeds give identical draw sequences across
runs and platforms.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

# Floor applied before log so degenerate probabilities never produce -inf.
LOG_FLOOR = 1e-300

_U64 = np.uint64
_MASK64 = (1 << 64) - 1


class ContractViolation(ValueError):
    """An operation was called with inputs violating its preconditions."""


class NumericFailure(RuntimeError):
    """A computation produced non-finite values and cannot continue."""


def as_vector(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ContractViolation(f"{name} must be 1-d, got shape {arr.shape}")
    return arr


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractViolation(f"{name} must be 2-d, got shape {arr.shape}")
    return arr


def check_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericFailure(f"{name} contains non-finite entries")
    return arr


def check_prob_vector(p, name: str = "probability vector", sum_tol: float = 1e-9) -> np.ndarray:
    """Validate that ``p`` lies on the probability simplex (entries >= 0,
    sum within ``sum_tol`` of 1). Tiny negative rounding residue below
    1e-12 is tolerated and clipped."""
    arr = as_vector(p, name)
    if arr.size == 0:
        raise ContractViolation(f"{name} must be nonempty")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{name} has non-finite entries")
    if np.any(arr < -1e-12):
        raise ContractViolation(f"{name} has negative entries")
    total = float(arr.sum())
    if abs(total - 1.0) > sum_tol:
        raise ContractViolation(f"{name} sums to {total}, expected 1 +- {sum_tol}")
    return np.clip(arr, 0.0, None)


def round_count(x: float) -> int:
    """Repository-wide count rounding: floor(x + 0.5), half rounds up."""
    return int(math.floor(x + 0.5))


def matvec(m, v) -> np.ndarray:
    """Matrix-vector product with explicit shape checking."""
    mm = as_matrix(m, "matvec matrix")
    vv = as_vector(v, "matvec vector")
    if mm.shape[1] != vv.shape[0]:
        raise ContractViolation(
            f"matvec dimension mismatch: matrix cols {mm.shape[1]} != vector len {vv.shape[0]}"
        )
    return mm @ vv


def softmax(s) -> np.ndarray:
    """Numerically safe softmax (max-subtraction before exponentiation)."""
    arr = as_vector(s, "softmax input")
    if arr.size == 0:
        raise ContractViolation("softmax input must be nonempty")
    if not np.all(np.isfinite(arr)):
        raise NumericFailure("softmax input contains non-finite entries")
    shifted = arr - arr.max()
    e = np.exp(shifted)
    return e / e.sum()


def safe_log(p: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(p, LOG_FLOOR))


def cross_entropy(logits, target) -> float:
    """Cross entropy -sum_c target_c * log softmax(logits)_c.

    ``target`` may be any probability vector (soft labels allowed).
    """
    lg = as_vector(logits, "logits")
    tg = check_prob_vector(target, "cross-entropy target")
    if lg.shape[0] != tg.shape[0]:
        raise ContractViolation(
            f"cross-entropy length mismatch: logits {lg.shape[0]} vs target {tg.shape[0]}"
        )
    p = softmax(lg)
    return float(-(tg * safe_log(p)).sum())


def entropy(p) -> float:
    """Shannon entropy -sum p log p with the 0*log0 = 0 convention."""
    arr = check_prob_vector(p, "entropy input")
    val = float(-(arr * safe_log(arr)).sum())
    return max(val, 0.0)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient oracle: (f(x+h e_i) - f(x-h e_i)) / 2h."""
    xx = as_vector(x, "finite-diff point")
    if h <= 0:
        raise ContractViolation("finite-diff step h must be > 0")
    grad = np.empty_like(xx)
    for i in range(xx.shape[0]):
        xp = xx.copy()
        xm = xx.copy()
        xp[i] += h
        xm[i] -= h
        fp = float(f(xp))
        fm = float(f(xm))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ContractViolation(f"function non-finite near coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


class RngStream:
    """Deterministic random stream: Philox4x64 keyed by (seed, key).

    The 128-bit Philox key is exactly ``[seed mod 2^64, key mod 2^64]``
    (no seed-sequence scrambling), so a stream is fully identified by the
    two integers. Distinct ``key`` values give independent streams for one
    experiment seed.

    Draw algorithms (fixed for reproducibility):
      * ``uniform``  - raw 53-bit doubles in [0, 1) from the bit generator.
      * ``normal``   - Box-Muller pairs on (1-u1, u2); a stream position is
        never cached across calls.
      * ``index_below`` - ``min(floor(u * bound), bound - 1)``.
      * ``shuffle`` / ``sample_without_replacement`` - Fisher-Yates driven
        by ``index_below``.
    """

    def __init__(self, seed: int, key: int = 0):
        self.seed = int(seed)
        self.key = int(key)
        philox_key = np.array([self.seed & _MASK64, self.key & _MASK64], dtype=_U64)
        self._gen = np.random.Generator(np.random.Philox(counter=0, key=philox_key))

    def uniform(self, n: int) -> np.ndarray:
        if n < 0:
            raise ContractViolation("draw count must be >= 0")
        return self._gen.random(n)

    def normal(self, n: int) -> np.ndarray:
        if n < 0:
            raise ContractViolation("draw count must be >= 0")
        if n == 0:
            return np.empty(0)
        pairs = (n + 1) // 2
        u1 = self.uniform(pairs)
        u2 = self.uniform(pairs)
        r = np.sqrt(-2.0 * np.log1p(-u1))  # 1-u1 in (0,1] keeps log finite
        theta = 2.0 * math.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def index_below(self, bound: int) -> int:
        if bound < 1:
            raise ContractViolation("index_below bound must be >= 1")
        u = float(self.uniform(1)[0])
        return min(int(u * bound), bound - 1)

    def shuffle(self, n: int) -> np.ndarray:
        """Return a permutation of range(n) via Fisher-Yates."""
        idx = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.index_below(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def sample_without_replacement(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), partial Fisher-Yates order."""
        if not 0 <= k <= n:
            raise ContractViolation(f"cannot sample {k} from {n} without replacement")
        idx = np.arange(n)
        for i in range(k):
            j = i + self.index_below(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k].copy()

    def state(self) -> dict:
        """JSON-serializable snapshot of the stream position."""
        st = self._gen.bit_generator.state
        return {
            "seed": self.seed,
            "key": self.key,
            "counter": [int(v) for v in st["state"]["counter"]],
            "philox_key": [int(v) for v in st["state"]["key"]],
            "buffer": [int(v) for v in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    @classmethod
    def from_state(cls, state: dict) -> "RngStream":
        stream = cls(state["seed"], state.get("key", 0))
        bg = stream._gen.bit_generator
        st = bg.state
        st["state"]["counter"] = np.array(state["counter"], dtype=_U64)
        st["state"]["key"] = np.array(state["philox_key"], dtype=_U64)
        st["buffer"] = np.array(state["buffer"], dtype=_U64)
        st["buffer_pos"] = state["buffer_pos"]
        st["has_uint32"] = state["has_uint32"]
        st["uinteger"] = state["uinteger"]
        bg.state = st
        return stream
