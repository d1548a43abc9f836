import numpy as np
import pytest

from zslrac.data import SyntheticConfig, class_means, synthesize_dataset
from zslrac.embed import (EmbeddingNet, RelationalMatrix, TrainConfig, forward, gradients,
                          pairwise_sq_dists, pointwise_loss, read_trace, relational_loss,
                          relational_matrices, total_loss, train, write_trace)
from zslrac.errors import DataError, DivergenceError


def _hand_net():
    # h = 2, s = 2, d = 1
    return EmbeddingNet(W1=np.array([[1.0, -1.0], [0.5, 2.0]]), b1=np.array([0.0, -1.0]),
                        W2=np.array([[2.0, 3.0]]), b2=np.array([0.5]))


def test_forward_hand_value():
    # z = (1 - 2, 0.5 + 4 - 1) = (-1, 3.5) -> relu (0, 3.5) -> 2*0 + 3*3.5 + 0.5
    assert forward(_hand_net(), np.array([1.0, 2.0])) == pytest.approx([11.0])


def test_forward_batch_matches_rows():
    net = _hand_net()
    a = np.array([[1.0, 2.0], [-1.0, 0.5], [0.0, 0.0]])
    batch = forward(net, a)
    for i in range(3):
        np.testing.assert_array_equal(batch[i], forward(net, a[i]))


def test_forward_rejects_wrong_width():
    with pytest.raises(ValueError, match="does not match"):
        forward(_hand_net(), np.ones(3))


def test_pointwise_loss_hand_value():
    net = _hand_net()
    # prediction 11 vs target 10, plus lambda * (1+1+0.25+4 + 4+9)
    assert pointwise_loss(net, [[1.0, 2.0]], [[10.0]], 0.1) == pytest.approx(1.0 + 0.1 * 19.25)


def test_pairwise_sq_dists_properties(rng):
    x = rng.standard_normal((5, 3))
    D = pairwise_sq_dists(x)
    assert np.all(np.diag(D) == 0)
    np.testing.assert_array_equal(D, D.T)
    assert D[1, 3] == pytest.approx(np.sum((x[1] - x[3]) ** 2))


def test_relational_loss_hand_value():
    D_a = np.array([[0.0, 2.0], [2.0, 0.0]])
    D_phi = np.array([[0.0, 5.0], [5.0, 0.0]])
    assert relational_loss(D_a, D_phi) == 18.0


def test_relational_loss_checks_class_order():
    a = RelationalMatrix(np.zeros((2, 2)), (1, 2))
    b = RelationalMatrix(np.zeros((2, 2)), (2, 1))
    with pytest.raises(ValueError, match="class orders"):
        relational_loss(a, b)


def test_relational_loss_zero_when_embedding_matches_means(rng):
    net = EmbeddingNet.initialize(3, 6, 4, rng)
    seen = rng.standard_normal((4, 3))
    D_a, D_phi = relational_matrices(net, seen, forward(net, seen))
    assert relational_loss(D_a, D_phi) == 0.0


def test_total_loss_ignores_structure_at_rho_zero(rng):
    net = EmbeddingNet.initialize(3, 5, 2, rng)
    x, y = rng.standard_normal((4, 3)), rng.standard_normal((4, 2))
    cfg = TrainConfig(rho=0.0)
    big = np.full((3, 3), 1e9)
    assert total_loss(net, x, y, big, np.zeros((3, 3)), cfg) == pointwise_loss(net, x, y, cfg.lambda_r)


def test_gradient_is_zero_through_dead_units():
    net = _hand_net()
    net.b1[:] = -100.0
    g = gradients(net, [[1.0, 2.0]], [[10.0]], [[1.0, 0.0], [0.0, 1.0]], [[0.0], [1.0]],
                  TrainConfig(lambda_r=0.0, rho=0.5))
    assert np.all(g["W1"] == 0) and np.all(g["b1"] == 0) and np.all(g["W2"] == 0)
    assert g["b2"] == pytest.approx([2.0 * (0.5 - 10.0)])


def test_gradient_matches_central_differences(rng):
    net = EmbeddingNet.initialize(4, 5, 3, rng)
    net.b1[:] = 0.3
    x, y = rng.standard_normal((3, 4)), rng.standard_normal((3, 3))
    seen, means = rng.standard_normal((3, 4)), rng.standard_normal((3, 3))
    cfg = TrainConfig(lambda_r=0.01, rho=0.1)

    def loss():
        return total_loss(net, x, y, pairwise_sq_dists(forward(net, seen)), pairwise_sq_dists(means), cfg)

    g = gradients(net, x, y, seen, means, cfg)
    for name, p in net.params().items():
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + 1e-6
            up = loss()
            p[idx] = orig - 1e-6
            down = loss()
            p[idx] = orig
            assert g[name][idx] == pytest.approx((up - down) / 2e-6, rel=1e-4, abs=1e-6)


def test_net_save_load_round_trip(tmp_path, rng):
    net = EmbeddingNet.initialize(3, 7, 2, rng)
    net.b1[:] = rng.standard_normal(7)
    net.save(tmp_path / "n.bin")
    back = EmbeddingNet.load(tmp_path / "n.bin")
    for k, v in net.params().items():
        np.testing.assert_array_equal(getattr(back, k), v)
    assert back.dims == (3, 7, 2)


def test_net_load_rejects_garbage(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"NOTANET!" + bytes(40))
    with pytest.raises(DataError, match="not a"):
        EmbeddingNet.load(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(b"ZSLNET01" + bytes(12))
    with pytest.raises(DataError, match="bad dimensions"):
        EmbeddingNet.load(tmp_path / "short.bin")


def test_glorot_limits(rng):
    net = EmbeddingNet.initialize(10, 30, 20, rng)
    assert np.abs(net.W1).max() <= np.sqrt(6 / 40)
    assert np.abs(net.W2).max() <= np.sqrt(6 / 50)
    assert np.all(net.b1 == 0) and np.all(net.b2 == 0)


def _fast_cfg(**kw):
    base = dict(epochs=30, hidden_dim=16, learning_rate=1e-3, batch_size=16, lambda_r=1e-4)
    base.update(kw)
    return TrainConfig(**base)


def test_training_reduces_loss(small_split):
    train_ds, _ = small_split
    result = train(train_ds, _fast_cfg())
    assert result.trace[0][0] == 0
    assert len(result.trace) == 31
    assert result.trace[-1][3] < result.trace[0][3]
    assert result.seen_class_ids == (0, 1, 2)


def test_training_is_deterministic(small_split):
    train_ds, _ = small_split
    a = train(train_ds, _fast_cfg(seed=4))
    b = train(train_ds, _fast_cfg(seed=4))
    c = train(train_ds, _fast_cfg(seed=5))
    np.testing.assert_array_equal(a.net.W1, b.net.W1)
    assert a.trace == b.trace
    assert not np.array_equal(a.net.W1, c.net.W1)


def test_training_does_not_mutate_start_net(small_split, rng):
    train_ds, _ = small_split
    start = EmbeddingNet.initialize(3, 16, 4, rng)
    before = start.W1.copy()
    train(train_ds, _fast_cfg(epochs=2), net=start)
    np.testing.assert_array_equal(start.W1, before)


def test_divergence_is_raised(small_split):
    train_ds, _ = small_split
    with pytest.raises(DivergenceError) as info:
        train(train_ds, _fast_cfg(learning_rate=1e300, rho=1.0, epochs=5))
    assert info.value.epoch >= 1


def test_training_needs_seen_samples(small_split):
    _, test_ds = small_split
    unseen_only = test_ds.subset(test_ds.labels >= 3)
    with pytest.raises(DataError):
        train(unseen_only, _fast_cfg(), seen_class_ids=(0, 1, 2))


def test_trace_csv_round_trip(tmp_path):
    trace = [(0, 1.5, 0.25, 1.525), (1, 1.0 / 3.0, 0.0, 1.0 / 3.0)]
    write_trace(tmp_path / "t.csv", trace)
    assert read_trace(tmp_path / "t.csv") == trace


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(rho=-1)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_structural_term_improves_relational_fit():
    train_ds, _ = synthesize_dataset(SyntheticConfig(seed=2))
    seen = train_ds.manifest.seen_class_ids
    desc, means = train_ds.descriptors_for(seen), class_means(train_ds, seen)

    def l2(rho):
        net = train(train_ds, _fast_cfg(rho=rho, epochs=60)).net
        return relational_loss(*relational_matrices(net, desc, means))

    assert l2(1.0) < l2(0.0)
