"""Adversarial feature memory bank.

The bank holds ``n_mem`` (feature, soft label) pairs. A query feature reads
from it through scaled dot-product attention; the convex combination of bank
features it returns ("augmenting feature") lives in the span of the bank.
The bank is seeded from k-means clusters of warm-start features, sampled per
cluster in proportion to cluster size, and refreshed every epoch by evicting
the most confidently-predicted entries and inserting features pushed
outward by noisy gradient ascent (Langevin dynamics) on the classifier loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import (
    ContractViolation,
    NumericFailure,
    RngStream,
    as_vector,
    check_prob_vector,
    cross_entropy,
    entropy,
    round_count,
    softmax,
)
from .model import HeadParams, duplicated_weight


@dataclass
class MemoryBank:
    features: np.ndarray  # (n_mem, d_z)
    labels: np.ndarray    # (n_mem, n_classes), rows on the simplex

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def d_feature(self) -> int:
        return self.features.shape[1]


@dataclass
class AttentionReadout:
    alpha: np.ndarray       # (n_mem,), softmax weights
    augmenting: np.ndarray  # (d_z,), sum_i alpha_i z_i


@dataclass
class LangevinConfig:
    steps: int = 10
    eta0: float = 0.1
    noise_enabled: bool = True


def validate_bank(bank: MemoryBank) -> None:
    if bank.features.ndim != 2 or bank.labels.ndim != 2:
        raise ContractViolation("bank features and labels must be 2-d")
    if bank.features.shape[0] != bank.labels.shape[0]:
        raise ContractViolation("bank features and labels disagree in length")
    if bank.size == 0:
        raise ContractViolation("bank is empty")
    if not np.all(np.isfinite(bank.features)):
        raise ContractViolation("bank features contain non-finite entries")
    for i in range(bank.size):
        check_prob_vector(bank.labels[i], f"bank label {i}")


def validate_langevin(cfg: LangevinConfig) -> None:
    if cfg.steps < 1:
        raise ContractViolation("langevin steps must be >= 1")
    if cfg.eta0 <= 0:
        raise ContractViolation("langevin eta0 must be > 0")


def attention_scores(z, bank: MemoryBank, proj) -> np.ndarray:
    """(W_q z) . (W_k z_i) / sqrt(d_h) for every bank entry."""
    zz = as_vector(z, "query feature")
    q = proj.w_query @ zz                    # (d_h,)
    keys = bank.features @ proj.w_key.T      # (n_mem, d_h)
    return keys @ q / np.sqrt(proj.d_hidden)


def attention_read(z, bank: MemoryBank, proj) -> AttentionReadout:
    """Attention over the bank: alpha = softmax(scores), augmenting feature
    is the alpha-weighted combination of bank features."""
    if bank.size == 0:
        raise ContractViolation("attention read over an empty bank")
    alpha = softmax(attention_scores(z, bank, proj))
    return AttentionReadout(alpha=alpha, augmenting=alpha @ bank.features)


def attention_backward(
    readout: AttentionReadout,
    z,
    bank: MemoryBank,
    proj,
    d_augmenting,
    d_alpha_direct: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients for the projection matrices.

    ``d_augmenting`` is the loss gradient at the augmenting feature;
    ``d_alpha_direct`` optionally carries an additional loss gradient applied
    straight to the attention weights (the mixed-label path). Bank features
    and the query feature are treated as constants: the read augments, it
    does not train the encoder or the stored memories.
    """
    if readout.alpha.shape[0] != bank.size:
        raise ContractViolation("readout does not match bank size")
    zz = as_vector(z, "query feature")
    da = as_vector(d_augmenting, "augmenting gradient")
    d_alpha = bank.features @ da             # (n_mem,)
    if d_alpha_direct is not None:
        d_alpha = d_alpha + as_vector(d_alpha_direct, "alpha gradient")
    alpha = readout.alpha
    # softmax backward: ds_i = a_i (dalpha_i - sum_j a_j dalpha_j)
    d_scores = alpha * (d_alpha - float(alpha @ d_alpha))
    scale = 1.0 / np.sqrt(proj.d_hidden)
    q = proj.w_query @ zz
    keys = bank.features @ proj.w_key.T
    d_q = scale * (d_scores @ keys)
    d_wq = np.outer(d_q, zz)
    d_wk = scale * np.outer(q, d_scores @ bank.features)
    return d_wq, d_wk


def kmeans(features: np.ndarray, k: int, rng: RngStream, max_iter: int = 100) -> list:
    """Lloyd's algorithm with k-means++ seeding.

    Returns k index arrays (ascending within each cluster). Empty clusters
    are repaired by stealing the farthest-from-center point of the largest
    cluster. Ties in assignment go to the lowest center index.
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ContractViolation(f"kmeans needs 1 <= k <= n, got k={k}, n={n}")

    # k-means++ seeding
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.index_below(n)]
    dist2 = ((x - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = float(dist2.sum())
        if total <= 0.0:
            pick = rng.index_below(n)  # all remaining points coincide
        else:
            u = float(rng.uniform(1)[0]) * total
            pick = int(np.searchsorted(np.cumsum(dist2), u, side="right"))
            pick = min(pick, n - 1)
        centers[c] = x[pick]
        dist2 = np.minimum(dist2, ((x - centers[c]) ** 2).sum(axis=1))

    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)  # (n, k)
        new_assign = np.argmin(d2, axis=1)

        # repair empty clusters before accepting the assignment
        for c in range(k):
            if np.any(new_assign == c):
                continue
            sizes = np.bincount(new_assign, minlength=k)
            donor = int(np.argmax(sizes))
            members = np.flatnonzero(new_assign == donor)
            far = members[int(np.argmax(d2[members, donor]))]
            new_assign[far] = c

        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            centers[c] = x[assign == c].mean(axis=0)

    return [np.flatnonzero(assign == c) for c in range(k)]


def allocate_largest_remainder(sizes: list, total: int, population: int) -> list:
    """Integer allocation of ``total`` slots proportional to ``sizes`` over a
    population: floor quotas, leftovers to the largest fractional parts
    (ties to the lower index). Sums to ``total`` exactly."""
    if population <= 0 or total < 0:
        raise ContractViolation("allocation needs population > 0 and total >= 0")
    quotas = [total * s / population for s in sizes]
    counts = [int(np.floor(q)) for q in quotas]
    leftover = total - sum(counts)
    order = sorted(range(len(sizes)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def init_bank(
    features: np.ndarray,
    labels: np.ndarray,
    k: int,
    n_mem: int,
    rng: RngStream,
) -> MemoryBank:
    """Build the initial bank: cluster all features, then sample from each
    cluster in proportion to its size (largest-remainder rounding), copying
    labels from the source instances."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n = x.shape[0]
    if n_mem > n:
        raise ContractViolation(f"bank size {n_mem} exceeds dataset size {n}")
    if n_mem < 1:
        raise ContractViolation("bank size must be >= 1")
    clusters = kmeans(x, k, rng)
    counts = allocate_largest_remainder([len(c) for c in clusters], n_mem, n)
    rows = []
    for cluster, take in zip(clusters, counts):
        chosen = rng.sample_without_replacement(len(cluster), take)
        rows.extend(int(cluster[j]) for j in sorted(chosen))
    bank = MemoryBank(features=x[rows].copy(), labels=y[rows].copy())
    validate_bank(bank)
    return bank


def langevin_generate(
    z0,
    y,
    head: HeadParams,
    cfg: LangevinConfig,
    rng: RngStream | None = None,
    with_trace: bool = False,
):
    """Adversarial feature from noisy gradient ascent on the classifier loss.

    Starting at z0, repeat for t = 0 .. steps-1 with eta = eta0 / (t + 1):

        z <- z + eta * grad_z ce(h([z; z]), y) + sqrt(2 eta) * noise

    The duplicated-slot gradient is (W1 + W2)^T (softmax(logits) - y). Ascent
    raises the loss, pushing the feature outside the training distribution.
    """
    validate_langevin(cfg)
    z = as_vector(z0, "langevin start").copy()
    target = check_prob_vector(y, "langevin label")
    w = duplicated_weight(head, z.shape[0])
    if w.shape[0] != target.shape[0]:
        raise ContractViolation("label length does not match head classes")
    if cfg.noise_enabled and rng is None:
        raise ContractViolation("noise-enabled langevin needs an RngStream")
    trace = [cross_entropy(w @ z + head.bias, target)] if with_trace else None
    for t in range(cfg.steps):
        eta = cfg.eta0 / (t + 1)
        p = softmax(w @ z + head.bias)
        z = z + eta * (w.T @ (p - target))
        if cfg.noise_enabled:
            z = z + np.sqrt(2.0 * eta) * rng.normal(z.shape[0])
        if not np.all(np.isfinite(z)):
            raise NumericFailure(f"langevin feature diverged at step {t}")
        if with_trace:
            trace.append(cross_entropy(w @ z + head.bias, target))
    return (z, trace) if with_trace else z


def prediction_entropies(bank: MemoryBank, head: HeadParams) -> np.ndarray:
    """Entropy of softmax(h([z_i; z_i])) for every bank entry."""
    w = duplicated_weight(head, bank.d_feature)
    return np.array(
        [entropy(softmax(w @ bank.features[i] + head.bias)) for i in range(bank.size)]
    )


def update_bank(
    bank: MemoryBank,
    fresh_features: np.ndarray,
    fresh_labels: np.ndarray,
    head: HeadParams,
    gamma: float,
    rng: RngStream | None = None,
) -> MemoryBank:
    """Replace the round(gamma * n_mem) lowest-entropy entries with fresh
    adversarial pairs. Entropy ties evict the lower index; when more fresh
    pairs are offered than vacancies, a uniform random subset is used."""
    if not 0.0 < gamma <= 1.0:
        raise ContractViolation("gamma must lie in (0, 1]")
    fresh_x = np.asarray(fresh_features, dtype=np.float64).reshape(-1, bank.d_feature)
    fresh_y = np.asarray(fresh_labels, dtype=np.float64).reshape(-1, bank.labels.shape[1])
    m = fresh_x.shape[0]
    r = round_count(gamma * bank.size)
    if m < r:
        raise ContractViolation(f"need at least {r} fresh pairs, got {m}")
    if r == 0:
        return MemoryBank(features=bank.features.copy(), labels=bank.labels.copy())

    entropies = prediction_entropies(bank, head)
    evict = np.argsort(entropies, kind="stable")[:r]  # stable: ties keep low index

    if m > r:
        if rng is None:
            raise ContractViolation("fresh oversupply needs an RngStream to subsample")
        chosen = np.sort(rng.sample_without_replacement(m, r))
    else:
        chosen = np.arange(m)

    features = bank.features.copy()
    labels = bank.labels.copy()
    for slot, src in zip(np.sort(evict), chosen):
        features[slot] = fresh_x[src]
        labels[slot] = fresh_y[src]
    new_bank = MemoryBank(features=features, labels=labels)
    validate_bank(new_bank)
    return new_bank
