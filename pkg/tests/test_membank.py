import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advmem.numcore import ContractViolation, RngStream, cross_entropy, entropy, finite_diff_grad, softmax
from advmem.model import HeadParams, ProjectionParams, init_head
from advmem.membank import (
    LangevinConfig,
    MemoryBank,
    allocate_largest_remainder,
    attention_backward,
    attention_read,
    attention_scores,
    init_bank,
    kmeans,
    langevin_generate,
    prediction_entropies,
    update_bank,
    validate_bank,
)

from conftest import random_prob_vector, small_instance


def make_bank(rng: RngStream, n_mem: int, d_z: int, n_classes: int) -> MemoryBank:
    feats = rng.normal(n_mem * d_z).reshape(n_mem, d_z)
    labels = np.stack([random_prob_vector(rng, n_classes) for _ in range(n_mem)])
    return MemoryBank(features=feats, labels=labels)


class TestAttentionRead:
    def test_single_entry(self):
        rng = RngStream(0)
        bank = make_bank(rng, 1, 4, 3)
        proj = ProjectionParams(w_query=rng.normal(12).reshape(3, 4),
                                w_key=rng.normal(12).reshape(3, 4))
        out = attention_read(rng.normal(4), bank, proj)
        assert np.array_equal(out.alpha, [1.0])
        assert np.array_equal(out.augmenting, bank.features[0])

    def test_identical_entries_give_uniform_weights(self):
        rng = RngStream(1)
        row = rng.normal(4)
        bank = MemoryBank(features=np.tile(row, (6, 1)),
                          labels=np.tile(random_prob_vector(rng, 3), (6, 1)))
        proj = ProjectionParams(w_query=rng.normal(12).reshape(3, 4),
                                w_key=rng.normal(12).reshape(3, 4))
        out = attention_read(rng.normal(4), bank, proj)
        assert np.allclose(out.alpha, 1 / 6, atol=1e-12)

    def test_worked_example(self):
        # identity projections in 2-d: scores (1/sqrt(2), 0)
        bank = MemoryBank(features=np.array([[1.0, 0.0], [0.0, 1.0]]),
                          labels=np.eye(2))
        proj = ProjectionParams(w_query=np.eye(2), w_key=np.eye(2))
        out = attention_read([1.0, 0.0], bank, proj)
        expected = softmax([1.0 / math.sqrt(2.0), 0.0])
        assert np.allclose(out.alpha, expected, atol=1e-12)
        assert np.allclose(out.alpha, [0.6698, 0.3302], atol=1e-3)
        assert np.allclose(out.augmenting, out.alpha, atol=1e-12)

    def test_permutation_equivariance(self):
        rng = RngStream(2)
        bank = make_bank(rng, 7, 4, 3)
        proj = ProjectionParams(w_query=rng.normal(12).reshape(3, 4),
                                w_key=rng.normal(12).reshape(3, 4))
        z = rng.normal(4)
        base = attention_read(z, bank, proj)
        perm = rng.shuffle(7)
        permuted = MemoryBank(features=bank.features[perm], labels=bank.labels[perm])
        out = attention_read(z, permuted, proj)
        assert np.allclose(out.alpha, base.alpha[perm], atol=1e-15)
        assert np.allclose(out.augmenting, base.augmenting, atol=1e-12)

    def test_convex_hull_norm_bound(self):
        rng = RngStream(3)
        for _ in range(50):
            bank = make_bank(rng, 5, 4, 2)
            proj = ProjectionParams(w_query=rng.normal(12).reshape(3, 4),
                                    w_key=rng.normal(12).reshape(3, 4))
            out = attention_read(rng.normal(4), bank, proj)
            max_norm = np.linalg.norm(bank.features, axis=1).max()
            assert np.linalg.norm(out.augmenting) <= max_norm + 1e-12

    def test_empty_bank_rejected(self):
        proj = ProjectionParams(w_query=np.eye(2), w_key=np.eye(2))
        empty = MemoryBank(features=np.empty((0, 2)), labels=np.empty((0, 2)))
        with pytest.raises(ContractViolation):
            attention_read([1.0, 0.0], empty, proj)


class TestAttentionBackward:
    def test_single_entry_zero_gradients(self):
        rng = RngStream(4)
        bank = make_bank(rng, 1, 4, 3)
        proj = ProjectionParams(w_query=rng.normal(12).reshape(3, 4),
                                w_key=rng.normal(12).reshape(3, 4))
        z = rng.normal(4)
        out = attention_read(z, bank, proj)
        d_wq, d_wk = attention_backward(out, z, bank, proj, rng.normal(4), rng.normal(1))
        assert np.allclose(d_wq, 0.0, atol=1e-18)
        assert np.allclose(d_wk, 0.0, atol=1e-18)

    def test_matches_finite_differences(self):
        rng = RngStream(5)
        d_z, d_h, n_mem = 4, 3, 5
        bank = make_bank(rng, n_mem, d_z, 3)
        proj = ProjectionParams(w_query=rng.normal(d_h * d_z).reshape(d_h, d_z),
                                w_key=rng.normal(d_h * d_z).reshape(d_h, d_z))
        z = rng.normal(d_z)
        c = rng.normal(d_z)   # loss = c . augmenting + d . alpha
        d = rng.normal(n_mem)

        def loss_for(w_q, w_k):
            out = attention_read(z, bank, ProjectionParams(w_query=w_q, w_key=w_k))
            return float(c @ out.augmenting + d @ out.alpha)

        out = attention_read(z, bank, proj)
        d_wq, d_wk = attention_backward(out, z, bank, proj, c, d)

        num_q = finite_diff_grad(
            lambda th: loss_for(th.reshape(d_h, d_z), proj.w_key), proj.w_query.ravel(), h=1e-6
        ).reshape(d_h, d_z)
        num_k = finite_diff_grad(
            lambda th: loss_for(proj.w_query, th.reshape(d_h, d_z)), proj.w_key.ravel(), h=1e-6
        ).reshape(d_h, d_z)
        assert np.allclose(d_wq, num_q, rtol=1e-4, atol=1e-9)
        assert np.allclose(d_wk, num_k, rtol=1e-4, atol=1e-9)

    def test_hidden_dim_scaling(self):
        # zero-padding the projections to double d_h rescales scores by sqrt(d_h/d_h')
        rng = RngStream(6)
        d_z, d_h = 4, 3
        bank = make_bank(rng, 5, d_z, 2)
        proj = ProjectionParams(w_query=rng.normal(d_h * d_z).reshape(d_h, d_z),
                                w_key=rng.normal(d_h * d_z).reshape(d_h, d_z))
        padded = ProjectionParams(
            w_query=np.vstack([proj.w_query, np.zeros((d_h, d_z))]),
            w_key=np.vstack([proj.w_key, np.zeros((d_h, d_z))]),
        )
        z = rng.normal(d_z)
        s_small = attention_scores(z, bank, proj)
        s_big = attention_scores(z, bank, padded)
        assert np.allclose(s_big, s_small * math.sqrt(d_h / (2 * d_h)), atol=1e-12)


class TestKmeans:
    def test_single_cluster(self):
        rng = RngStream(7)
        clusters = kmeans(rng.normal(20).reshape(10, 2), 1, rng)
        assert len(clusters) == 1
        assert sorted(clusters[0].tolist()) == list(range(10))

    def test_separated_blobs(self):
        rng = RngStream(8)
        a = rng.normal(20).reshape(10, 2) * 0.1 + np.array([50.0, 0.0])
        b = rng.normal(16).reshape(8, 2) * 0.1 + np.array([-50.0, 0.0])
        pts = np.vstack([a, b])
        clusters = kmeans(pts, 2, rng)
        # oracle: exhaustive nearest-blob-center assignment
        memberships = [set(c.tolist()) for c in clusters]
        assert {frozenset(range(10)), frozenset(range(10, 18))} == {
            frozenset(m) for m in memberships
        }

    def test_duplicated_points_zero_variance(self):
        pts = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 5.0], [5.0, 5.0], [9.0, -1.0]])
        rng = RngStream(9)
        clusters = kmeans(pts, 3, rng)
        for c in clusters:
            assert np.allclose(pts[c].var(axis=0), 0.0, atol=1e-18)

    def test_k_larger_than_n_rejected(self):
        with pytest.raises(ContractViolation):
            kmeans(np.zeros((3, 2)), 4, RngStream(0))

    def test_every_point_assigned_once(self):
        rng = RngStream(10)
        pts = rng.normal(60).reshape(30, 2)
        clusters = kmeans(pts, 5, rng)
        all_idx = np.concatenate(clusters)
        assert sorted(all_idx.tolist()) == list(range(30))
        assert all(len(c) > 0 for c in clusters)

    def test_deterministic(self):
        pts = RngStream(11).normal(40).reshape(20, 2)
        a = kmeans(pts, 4, RngStream(12))
        b = kmeans(pts, 4, RngStream(12))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


class TestAllocation:
    def test_sixty_forty(self):
        assert allocate_largest_remainder([60, 40], 10, 100) == [6, 4]

    def test_fifty_thirty_twenty(self):
        # quotas 3.5 / 2.1 / 1.4, leftover goes to the largest fraction
        assert allocate_largest_remainder([50, 30, 20], 7, 100) == [4, 2, 1]

    @given(
        st.lists(st.integers(min_value=1, max_value=500), min_size=1, max_size=12),
        st.data(),
    )
    @settings(max_examples=100)
    def test_sums_and_bounds(self, sizes, data):
        population = sum(sizes)
        total = data.draw(st.integers(min_value=0, max_value=population))
        counts = allocate_largest_remainder(sizes, total, population)
        assert sum(counts) == total
        assert all(0 <= c <= s for c, s in zip(counts, sizes))


class TestInitBank:
    def test_single_cluster_uniform_sample(self):
        rng = RngStream(13)
        feats = rng.normal(40).reshape(20, 2)
        labels = np.tile([1.0, 0.0], (20, 1))
        bank = init_bank(feats, labels, 1, 10, rng)
        assert bank.size == 10
        # every bank row is one of the source rows
        for row in bank.features:
            assert any(np.array_equal(row, f) for f in feats)

    def test_proportional_allocation_on_blobs(self):
        rng = RngStream(14)
        a = rng.normal(120).reshape(60, 2) * 0.05 + np.array([30.0, 0.0])
        b = rng.normal(80).reshape(40, 2) * 0.05 + np.array([-30.0, 0.0])
        feats = np.vstack([a, b])
        labels = np.vstack([np.tile([1.0, 0.0], (60, 1)), np.tile([0.0, 1.0], (40, 1))])
        bank = init_bank(feats, labels, 2, 10, rng)
        from_a = sum(1 for f in bank.features if f[0] > 0)
        assert bank.size == 10
        assert from_a == 6  # 60/100 * 10

    def test_labels_copied_from_sources(self):
        rng = RngStream(15)
        feats = rng.normal(30).reshape(15, 2)
        labels = np.stack([random_prob_vector(rng, 3) for _ in range(15)])
        bank = init_bank(feats, labels, 3, 7, rng)
        for f, l in zip(bank.features, bank.labels):
            src = next(i for i in range(15) if np.array_equal(feats[i], f))
            assert np.array_equal(labels[src], l)

    def test_oversized_bank_rejected(self):
        rng = RngStream(16)
        with pytest.raises(ContractViolation):
            init_bank(rng.normal(10).reshape(5, 2), np.tile([1.0, 0.0], (5, 1)), 2, 6, rng)


class TestLangevin:
    def test_zero_combined_weight_is_identity(self):
        head = HeadParams(weight=np.hstack([np.eye(2), -np.eye(2)]), bias=np.zeros(2))
        cfg = LangevinConfig(steps=5, eta0=0.1, noise_enabled=False)
        z = langevin_generate([0.3, -0.7], [1.0, 0.0], head, cfg)
        assert np.array_equal(z, [0.3, -0.7])

    def test_hand_computed_single_step(self):
        # combined weight [[1,0],[-1,0]]: one ascent step of size eta0
        head = HeadParams(weight=np.array([[0.5, 0.0, 0.5, 0.0],
                                           [-0.5, 0.0, -0.5, 0.0]]), bias=np.zeros(2))
        cfg = LangevinConfig(steps=1, eta0=0.1, noise_enabled=False)
        z, trace = langevin_generate([0.0, 0.0], [1.0, 0.0], head, cfg, with_trace=True)
        assert np.allclose(z, [-0.1, 0.0], atol=1e-12)
        assert trace[0] == pytest.approx(0.6931, abs=1e-4)
        assert trace[-1] == pytest.approx(0.7981, abs=1e-4)

    def test_noise_free_ascent_is_monotone(self):
        rng = RngStream(17)
        cfg = LangevinConfig(steps=10, eta0=1e-2, noise_enabled=False)
        for _ in range(100):
            head = init_head(3, 8, rng)
            z0 = rng.normal(4)
            y = np.zeros(3)
            y[rng.index_below(3)] = 1.0
            _, trace = langevin_generate(z0, y, head, cfg, with_trace=True)
            diffs = np.diff(trace)
            assert diffs.min() >= -1e-9

    def test_noise_is_reproducible(self):
        rng_a, rng_b = RngStream(18), RngStream(18)
        head = init_head(2, 6, RngStream(19))
        cfg = LangevinConfig(steps=4, eta0=0.05, noise_enabled=True)
        za = langevin_generate([0.1, 0.2, 0.3], [0.0, 1.0], head, cfg, rng_a)
        zb = langevin_generate([0.1, 0.2, 0.3], [0.0, 1.0], head, cfg, rng_b)
        assert np.array_equal(za, zb)

    def test_noise_requires_rng(self):
        head = init_head(2, 4, RngStream(20))
        with pytest.raises(ContractViolation):
            langevin_generate([0.0, 0.0], [1.0, 0.0], head, LangevinConfig(noise_enabled=True))


def bank_with_confidences(temps) -> tuple[MemoryBank, HeadParams]:
    """Entries whose duplicated-feature predictions have entropy increasing
    with decreasing |temp|: logits = (t, 0)."""
    n = len(temps)
    feats = np.array([[t, 0.0] for t in temps])
    labels = np.tile([0.5, 0.5], (n, 1))
    head = HeadParams(
        weight=np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]]), bias=np.zeros(2)
    )  # combined weight rows: (1,0), (0,0) -> logits (z0, 0)
    return MemoryBank(features=feats, labels=labels), head


class TestUpdateBank:
    def test_zero_eviction_keeps_bank(self):
        bank, head = bank_with_confidences([3.0, 1.0, 0.5])
        out = update_bank(bank, np.empty((0, 2)), np.empty((0, 2)), head, gamma=0.1)
        assert np.array_equal(out.features, bank.features)  # round(0.1*3) = 0

    def test_lowest_entropy_evicted_first(self):
        bank, head = bank_with_confidences([3.0, 1.5, 0.8, 0.1])
        ents = prediction_entropies(bank, head)
        oracle_order = np.argsort(ents, kind="stable")
        assert oracle_order[:2].tolist() == [0, 1]  # most confident first
        fresh_x = np.full((2, 2), 99.0)
        fresh_y = np.tile([1.0, 0.0], (2, 1))
        out = update_bank(bank, fresh_x, fresh_y, head, gamma=0.5)
        assert np.array_equal(out.features[0], [99.0, 99.0])
        assert np.array_equal(out.features[1], [99.0, 99.0])
        assert np.array_equal(out.features[2], bank.features[2])
        assert np.array_equal(out.features[3], bank.features[3])

    def test_entropy_ties_evict_lower_index(self):
        bank, head = bank_with_confidences([2.0, 2.0, 2.0, 0.1])
        fresh_x = np.full((1, 2), -5.0)
        fresh_y = np.tile([0.0, 1.0], (1, 1))
        out = update_bank(bank, fresh_x, fresh_y, head, gamma=0.25)
        assert np.array_equal(out.features[0], [-5.0, -5.0])
        assert np.array_equal(out.features[1], bank.features[1])

    def test_one_hot_evicted_before_uniform(self):
        bank, head = bank_with_confidences([60.0, 0.0])  # entropy ~0 vs ln 2
        fresh_x = np.array([[7.0, 7.0]])
        fresh_y = np.array([[0.5, 0.5]])
        out = update_bank(bank, fresh_x, fresh_y, head, gamma=0.5)
        assert np.array_equal(out.features[0], [7.0, 7.0])
        assert np.array_equal(out.features[1], bank.features[1])

    def test_oversupply_subsamples_uniformly(self):
        bank, head = bank_with_confidences([3.0, 1.0, 0.5, 0.2])
        rng = RngStream(21)
        fresh_x = np.arange(12.0).reshape(6, 2)
        fresh_y = np.tile([0.5, 0.5], (6, 1))
        out = update_bank(bank, fresh_x, fresh_y, head, gamma=0.5, rng=rng)
        assert out.size == 4
        replaced = [out.features[i] for i in range(2)]
        for row in replaced:
            assert any(np.array_equal(row, f) for f in fresh_x)

    def test_undersupply_rejected(self):
        bank, head = bank_with_confidences([3.0, 1.0, 0.5, 0.2])
        with pytest.raises(ContractViolation):
            update_bank(bank, np.zeros((1, 2)), np.tile([0.5, 0.5], (1, 1)), head, gamma=0.5)

    def test_invariants_after_update(self):
        rng = RngStream(22)
        _, head, _, bank, _, _ = small_instance(23)
        fresh_x = rng.normal(4 * bank.d_feature).reshape(4, bank.d_feature)
        fresh_y = np.stack([random_prob_vector(rng, 3) for _ in range(4)])
        out = update_bank(bank, fresh_x, fresh_y, head, gamma=0.7, rng=rng)
        assert out.size == bank.size
        validate_bank(out)  # simplex labels + finite features
        assert np.array_equal(bank.features[0], bank.features[0])  # input untouched
