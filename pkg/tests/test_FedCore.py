import numpy as np
import pytest

from FedFV.DataGen import ClientDataset, FederationSpec, shard_partition, synth_classification
from FedFV.FedCore import FEDAVG, FEDFV, LOSS_ASCENDING, RANDOM_ORDER, REVERSE_ORDER, ORDER_MODES, \
    GradientHistory, FedFVConfig, FederatedRun, uniform_weights, size_weights, sample_clients, \
    apply_dropout, weighted_sum, fedavg_aggregate, build_projecting_order, arrange_projecting_order, \
    projection_steps, mitigate_internal, mitigate_external, count_conflict_pairs, fedfv_round, fedavg_round, \
    run_round
from FedFV.Models import SOFTMAX_REGRESSION, ClientUpdate, LocalTrainConfig, Model, FULL_BATCH, init_model
from FedFV.Utility import EmptyDataError, UsageError
from FedFV.VecMath import dot, norm


def _update(client_id: int, grad, loss: float, round_index: int = 0) -> ClientUpdate:
    return ClientUpdate(client_id=client_id, grad=np.asarray(grad, dtype=np.float64), loss=loss, round=round_index)


def _dummy_datasets(count: int):
    return [ClientDataset(client_id=k, train_features=np.zeros((1, 1)), train_labels=np.zeros(1, dtype=np.int64),
                          test_features=np.zeros((1, 1)), test_labels=np.zeros(1, dtype=np.int64))
            for k in range(count)]


def _table_trainer(table, losses):
    """
    trainer returning fixed gradients: table[client_id] (or table[round][client_id] for a list of tables)
    """
    def trainer(model, dataset, round_index, client_id):
        grads = table[round_index] if isinstance(table, list) else table
        return _update(client_id, grads[client_id], losses[client_id], round_index)
    return trainer


def _injected_run(trainer, theta0, num_clients: int, sample_count: int, alpha: float = 0.0, tau: int = 0,
                  dropout: float = 0.0, rounds: int = 1, order_mode: str = LOSS_ASCENDING,
                  algorithm: str = FEDFV, seed: int = 0) -> FederatedRun:
    config = FedFVConfig(alpha=alpha, tau=tau, sample_count=sample_count, dropout_prob=dropout,
                         total_rounds=rounds, weights=uniform_weights(num_clients), order_mode=order_mode)
    params = np.asarray(theta0, dtype=np.float64)
    model = Model(kind=SOFTMAX_REGRESSION, input_dim=params.size - 1, num_classes=1, params=params)
    return FederatedRun(config=config, model=model, datasets=_dummy_datasets(num_clients),
                        train_config=LocalTrainConfig(epochs=1, batch_size=FULL_BATCH, learning_rate=0.1),
                        seed=seed, algorithm=algorithm, trainer=trainer)


def test_sample_clients():
    assert sample_clients(uniform_weights(5), 5, 0, 1) == [0, 1, 2, 3, 4]
    assert all(sample_clients([1.0, 0.0, 0.0], 1, t, 3) == [0] for t in range(20))
    assert sample_clients([1.0, 0.0, 0.0], 2, 0, 3)[0] == 0
    assert sample_clients(uniform_weights(10), 4, 7, 2) == sample_clients(uniform_weights(10), 4, 7, 2)
    assert len(set(sample_clients(uniform_weights(10), 4, 7, 2))) == 4
    with pytest.raises(UsageError):
        sample_clients(uniform_weights(3), 4, 0, 0)


def test_sample_clients_frequencies():
    draws = 100000
    counts = np.zeros(3)
    for t in range(draws):
        counts[sample_clients([0.5, 0.25, 0.25], 1, t, 11)[0]] += 1
    assert np.all(np.abs(counts / draws - [0.5, 0.25, 0.25]) <= 0.01)


def test_apply_dropout():
    assert apply_dropout([4, 1, 7], 0.0, 3, 0) == [1, 4, 7]
    assert apply_dropout([4, 1, 7], 1.0, 3, 0) == [1]
    assert apply_dropout([], 0.5, 0, 0) == []
    assert apply_dropout(range(10), 0.5, 2, 9) == apply_dropout(range(10), 0.5, 2, 9)


def test_apply_dropout_rate():
    rounds, clients = 2000, 10
    dropped = sum(clients - len(apply_dropout(range(clients), 0.3, t, 5)) for t in range(rounds))
    assert abs(dropped / (rounds * clients) - 0.3) <= 0.02


def test_weighted_sum():
    assert np.array_equal(weighted_sum([np.array([1.0, 2.0]), np.array([3.0, 4.0])], [1.0, 0.5]), [2.5, 4.0])
    with pytest.raises(EmptyDataError):
        weighted_sum([], [])


def test_fedavg_aggregate():
    assert np.array_equal(fedavg_aggregate([_update(0, [1.0, -2.0], 0.1)], [5]), [1.0, -2.0])
    assert np.allclose(fedavg_aggregate([_update(0, [1.0, 0.0], 0.1), _update(1, [0.0, 1.0], 0.1)], [2, 2]),
                       [0.5, 0.5])
    assert np.allclose(fedavg_aggregate([_update(0, [4.0, 0.0], 0.1), _update(1, [0.0, 4.0], 0.1)], [3, 1]),
                       [3.0, 1.0])
    with pytest.raises(EmptyDataError):
        fedavg_aggregate([], [])


def test_size_weights():
    features, labels = synth_classification(2, 10, 2, 1.0, seed=0)
    spec = FederationSpec(num_clients=4, shards_per_client=1, num_classes=2, examples_per_class=10, feature_dim=2,
                          seed=0)
    assert size_weights(shard_partition(features, labels, spec)) == (0.25, 0.25, 0.25, 0.25)


def test_build_projecting_order():
    updates = [_update(7, [0.0], 0.9), _update(2, [0.0], 0.1), _update(5, [0.0], 0.5)]
    assert build_projecting_order(updates).client_ids == [2, 5, 7]
    ties = [_update(3, [0.0], 0.4), _update(1, [0.0], 0.4), _update(2, [0.0], 0.4)]
    assert build_projecting_order(ties).client_ids == [1, 2, 3]
    assert build_projecting_order([_update(4, [1.0], 2.0)]).client_ids == [4]
    with pytest.raises(EmptyDataError):
        build_projecting_order([])


def test_arrange_projecting_order():
    updates = [_update(k, [0.0], loss) for k, loss in enumerate([0.3, 0.1, 0.9, 0.5, 0.7])]
    assert arrange_projecting_order(updates, LOSS_ASCENDING, 0, 0).client_ids == [1, 0, 3, 4, 2]
    assert arrange_projecting_order(updates, REVERSE_ORDER, 0, 0).client_ids == [2, 4, 3, 0, 1]
    shuffled = arrange_projecting_order(updates, RANDOM_ORDER, 4, 6).client_ids
    assert sorted(shuffled) == [0, 1, 2, 3, 4]
    assert shuffled == arrange_projecting_order(updates, RANDOM_ORDER, 4, 6).client_ids
    with pytest.raises(UsageError):
        arrange_projecting_order(updates, "sideways", 0, 0)


def test_mitigate_internal_hand_example():
    updates = [_update(1, [1.0, 0.0], 0.5), _update(2, [-1.0, 1.0], 1.0)]
    order = build_projecting_order(updates)
    assert np.allclose(mitigate_internal(updates, order, 0.0), [0.25, 0.75], atol=1.e-15)
    assert np.allclose(mitigate_internal(updates, order, 1.0), [0.0, 0.5], atol=1.e-15)
    # α = 0.5 keeps the gradient of the higher-loss client 2
    assert np.allclose(mitigate_internal(updates, order, 0.5), [-0.25, 0.75], atol=1.e-15)


def test_mitigate_internal_without_conflicts():
    updates = [_update(0, [1.0, 0.0], 0.3), _update(1, [0.5, 0.5], 0.1), _update(2, [0.0, 2.0], 0.2)]
    order = build_projecting_order(updates)
    plain = np.mean([update.grad for update in updates], axis=0)
    for alpha in (0.0, 0.1, 0.5, 1.0):
        assert np.allclose(mitigate_internal(updates, order, alpha), plain, atol=1.e-15)


def test_mitigate_internal_uses_original_targets():
    updates = [_update(0, [1.0, 0.2], 0.1), _update(1, [-1.0, 0.4], 0.2), _update(2, [0.3, -1.0], 0.3)]
    order = build_projecting_order(updates)
    expected = []
    for update in updates:
        v = update.grad.copy()
        for target in order.ordered:
            if target.client_id != update.client_id and v @ target.grad < 0.0:
                v = v - (v @ target.grad) / (target.grad @ target.grad) * target.grad
        expected.append(v)
    assert np.allclose(mitigate_internal(updates, order, 0.0), np.mean(expected, axis=0), atol=1.e-14)


def test_projection_steps_invariants():
    rng = np.random.default_rng(3)
    for _ in range(200):
        m, d = int(rng.integers(2, 8)), int(rng.integers(2, 6))
        updates = [_update(k, rng.standard_normal(d), float(rng.random())) for k in range(m)]
        order = build_projecting_order(updates)
        last = order.ordered[-1]
        for update in updates:
            current = update.grad
            for target, projected in projection_steps(update.grad, update.client_id, order):
                assert dot(projected, target.grad) >= -1.e-9 * norm(projected) * norm(target.grad)
                assert norm(projected) <= norm(current) * (1.0 + 1.e-12)
                current = projected
            if update.client_id != last.client_id:
                assert dot(current, last.grad) >= -1.e-9 * norm(current) * norm(last.grad)


def test_gradient_history():
    history = GradientHistory()
    history.update(3, np.array([1.0, 0.0]), 0)
    history.update(1, np.array([0.0, 1.0]), 0)
    history.update(2, np.array([1.0, 1.0]), 1)
    assert len(history) == 3
    assert 3 in history and 4 not in history
    assert [client_id for client_id, _ in history.from_round(0)] == [1, 3]
    history.update(3, np.array([2.0, 0.0]), 2)
    assert history[3].round == 2
    assert [client_id for client_id, _ in history.from_round(0)] == [1]
    with pytest.raises(UsageError):
        history.update(3, np.array([2.0, 0.0]), 2)


def test_mitigate_external():
    history = GradientHistory()
    g = np.array([1.0, 0.5])
    assert np.array_equal(mitigate_external(g, history, 5, 0), g)
    history.update(4, np.array([-1.0, 0.0]), 0)
    assert np.allclose(mitigate_external(g, history, 1, 1), [0.0, 0.5], atol=1.e-15)
    # the entry is older than the window
    assert np.array_equal(mitigate_external(g, history, 2, 1), g)
    with pytest.raises(UsageError):
        mitigate_external(g, history, 0, 1)


def test_mitigate_external_sum_of_conflicting():
    history = GradientHistory()
    history.update(0, np.array([-1.0, 0.3]), 4)
    history.update(1, np.array([1.0, 0.3]), 4)
    g = np.array([1.0, 0.5])
    target = np.array([-1.0, 0.3])
    expected = g - (-0.85 / 1.09) * target
    assert np.allclose(mitigate_external(g, history, 5, 1), expected, atol=1.e-15)


def test_mitigate_external_oldest_lag_first():
    history = GradientHistory()
    history.update(0, np.array([-1.0, 0.0]), 1)
    history.update(1, np.array([0.0, -1.0]), 2)
    history.update(2, np.array([-1.0, -1.0]), 2)
    g = np.array([1.0, 1.0])
    after_lag2 = g - (g @ [-1.0, 0.0]) * np.array([-1.0, 0.0])
    summed = np.array([-1.0, -2.0])
    expected = after_lag2 - (after_lag2 @ summed) / (summed @ summed) * summed
    assert np.allclose(mitigate_external(g, history, 3, 2), expected, atol=1.e-15)


def test_count_conflict_pairs():
    assert count_conflict_pairs([np.array([1.0, 0.0]), np.array([-1.0, 1.0]), np.array([0.0, 1.0])]) == 1
    assert count_conflict_pairs([np.array([1.0, 0.0])]) == 0


def test_fedfv_round_hand_example():
    trainer = _table_trainer({0: [1.0, 0.0], 1: [-1.0, 1.0]}, {0: 0.5, 1: 1.0})
    state = fedfv_round(_injected_run(trainer, [0.0, 0.0], num_clients=2, sample_count=2))
    mean = np.array([0.25, 0.75])
    assert np.allclose(state.model.params, -mean * 0.5 / np.linalg.norm(mean), rtol=0.0, atol=1.e-15)
    record = state.logs[0]
    assert record.selected == (0, 1) and record.survivors == (0, 1)
    assert record.conflict_pairs == 1
    assert record.internal_projections == 2
    assert record.update_norm == pytest.approx(0.5, rel=1.e-12)
    assert state.round == 1


def test_fedfv_round_three_client_trace():
    grads = {0: np.array([1.0, 0.0]), 1: np.array([-1.0, 1.0]), 2: np.array([0.5, -1.0])}
    losses = {0: 0.5, 1: 1.0, 2: 0.2}
    theta0 = np.array([0.3, -0.2])
    state = fedfv_round(_injected_run(_table_trainer(grads, losses), theta0, num_clients=3, sample_count=3))

    order = [2, 0, 1]
    projected = []
    for k in range(3):
        v = grads[k].copy()
        for j in order:
            if j != k and v @ grads[j] < 0.0:
                v = v - (v @ grads[j]) / (grads[j] @ grads[j]) * grads[j]
        projected.append(v)
    mean = (projected[0] + projected[1] + projected[2]) / 3.0
    plain = (grads[0] + grads[1] + grads[2]) / 3.0
    step = mean * (np.linalg.norm(plain) / np.linalg.norm(mean))
    assert np.allclose(state.model.params, theta0 - step, rtol=0.0, atol=1.e-12)


def test_fedfv_round_zero_update():
    trainer = _table_trainer({0: [1.0, 0.0], 1: [-1.0, 0.0]}, {0: 0.1, 1: 0.2})
    state = fedfv_round(_injected_run(trainer, [0.5, 0.5], num_clients=2, sample_count=2))
    assert np.array_equal(state.model.params, [0.5, 0.5])
    assert state.logs[0].skipped
    assert state.round == 1
    with pytest.raises(UsageError):
        fedfv_round(state)


def test_fedfv_round_zero_plain_mean():
    # the survivors cancel out, but projecting client 0 leaves a nonzero mitigated mean
    trainer = _table_trainer({0: [1.0, 0.0], 1: [0.0, 1.0], 2: [-1.0, -1.0]}, {0: 0.1, 1: 0.2, 2: 0.3})
    state = fedfv_round(_injected_run(trainer, [0.5, 0.5], num_clients=3, sample_count=3, alpha=0.5))
    record = state.logs[0]
    assert record.internal_projections == 1
    assert record.mean_norm == 0.0
    assert record.skipped and record.update_norm == 0.0
    assert np.array_equal(state.model.params, [0.5, 0.5])


def _random_tables(rounds: int, clients: int, d: int, seed: int):
    rng = np.random.default_rng(seed)
    return [{k: rng.standard_normal(d) for k in range(clients)} for _ in range(rounds)], \
        {k: float(rng.random()) for k in range(clients)}


def test_fedfv_rescale_contract():
    tables, losses = _random_tables(30, 8, 3, seed=1)
    state = _injected_run(_table_trainer(tables, losses), np.zeros(3), num_clients=8, sample_count=4, alpha=0.25,
                          tau=3, dropout=0.3, rounds=30, seed=3)
    previous = state.model.params
    for _ in range(30):
        run_round(state)
        record = state.logs[-1]
        plain = np.mean([tables[record.round][k] for k in record.survivors], axis=0)
        assert record.mean_norm == pytest.approx(norm(plain), rel=1.e-12)
        assert not record.skipped
        assert norm(previous - state.model.params) == pytest.approx(norm(plain), rel=1.e-9)
        assert record.update_norm == pytest.approx(record.mean_norm, rel=1.e-9)
        previous = state.model.params
    assert any(record.external_projections > 0 for record in state.logs)


def test_history_after_rounds():
    tables, losses = _random_tables(12, 6, 2, seed=4)
    state = _injected_run(_table_trainer(tables, losses), [0.0, 0.0], num_clients=6, sample_count=3, tau=2,
                          dropout=0.4, rounds=12, seed=8)
    latest = {}
    for _ in range(12):
        run_round(state)
        record = state.logs[-1]
        for client_id in record.survivors:
            latest[client_id] = record.round
        assert set(record.losses) == set(record.survivors)
        assert set(record.survivors) <= set(record.selected)
    assert {k: state.history[k].round for k in range(6) if k in state.history} == latest
    for client_id, round_index in latest.items():
        assert np.array_equal(state.history[client_id].grad, tables[round_index][client_id])


def test_fedavg_equivalence_injected():
    def trainer(model, dataset, round_index, client_id):
        direction = np.array([np.cos(client_id + round_index), np.sin(3.0 * client_id)])
        return _update(client_id, direction + 0.1 * model.params, 0.1 * client_id, round_index)

    fedavg = _injected_run(trainer, [1.0, -1.0], num_clients=6, sample_count=3, alpha=1.0, tau=0, rounds=20,
                           algorithm=FEDAVG, seed=2)
    fedfv = _injected_run(trainer, [1.0, -1.0], num_clients=6, sample_count=3, alpha=1.0, tau=0, rounds=20,
                          algorithm=FEDFV, seed=2)
    for _ in range(20):
        run_round(fedavg)
        run_round(fedfv)
        assert np.array_equal(fedavg.model.params, fedfv.model.params)


def test_fedavg_round_size_weights():
    features, labels = synth_classification(2, 10, 2, 1.0, seed=0)
    spec = FederationSpec(num_clients=2, shards_per_client=1, num_classes=2, examples_per_class=10, feature_dim=2,
                          seed=0)
    datasets = shard_partition(features, labels, spec)
    config = FedFVConfig(alpha=0.0, tau=0, sample_count=2, dropout_prob=0.0, total_rounds=1,
                         weights=size_weights(datasets))
    state = FederatedRun(config=config, model=init_model(SOFTMAX_REGRESSION, 2, 2, seed=0), datasets=datasets,
                         train_config=LocalTrainConfig(epochs=1, batch_size=FULL_BATCH, learning_rate=0.1),
                         seed=0, algorithm=FEDAVG)
    before = state.model.params
    fedavg_round(state)
    record = state.logs[0]
    assert record.algorithm == FEDAVG and record.internal_projections == 0
    assert norm(before - state.model.params) == pytest.approx(record.update_norm, rel=1.e-12)


def test_order_modes_without_conflicts():
    rng = np.random.default_rng(0)
    tables = [{k: np.abs(rng.standard_normal(2)) + 0.1 for k in range(5)} for _ in range(6)]
    losses = {k: float(k) / 10.0 for k in range(5)}
    finals = []
    for mode in ORDER_MODES:
        state = _injected_run(_table_trainer(tables, losses), [0.0, 0.0], num_clients=5, sample_count=3, rounds=6,
                              order_mode=mode, seed=1)
        for _ in range(6):
            run_round(state)
        finals.append(state.model.params)
    assert all(np.array_equal(finals[0], final) for final in finals[1:])


def test_workers_do_not_change_results():
    tables, losses = _random_tables(5, 6, 2, seed=6)
    serial = _injected_run(_table_trainer(tables, losses), [0.0, 0.0], num_clients=6, sample_count=4, rounds=5)
    threaded = _injected_run(_table_trainer(tables, losses), [0.0, 0.0], num_clients=6, sample_count=4, rounds=5)
    threaded.workers = 3
    for _ in range(5):
        run_round(serial)
        run_round(threaded)
    assert np.array_equal(serial.model.params, threaded.model.params)


def test_fedfv_config_validation():
    with pytest.raises(UsageError):
        FedFVConfig(alpha=1.5, tau=0, sample_count=1, dropout_prob=0.0, total_rounds=1, weights=(1.0,))
    with pytest.raises(UsageError):
        FedFVConfig(alpha=0.5, tau=0, sample_count=2, dropout_prob=0.0, total_rounds=1, weights=(1.0,))
    with pytest.raises(UsageError):
        FedFVConfig(alpha=0.5, tau=0, sample_count=1, dropout_prob=1.0, total_rounds=1, weights=(1.0,))
    with pytest.raises(UsageError):
        FedFVConfig(alpha=0.5, tau=0, sample_count=1, dropout_prob=0.0, total_rounds=1, weights=(0.5, 0.4))
    with pytest.raises(UsageError):
        FederatedRun(config=FedFVConfig(alpha=0.5, tau=0, sample_count=1, dropout_prob=0.0, total_rounds=1,
                                        weights=(0.5, 0.5)),
                     model=init_model(SOFTMAX_REGRESSION, 1, 1, seed=0), datasets=_dummy_datasets(3),
                     train_config=LocalTrainConfig(epochs=1, batch_size=FULL_BATCH, learning_rate=0.1), seed=0)
