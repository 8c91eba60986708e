import numpy as np
import pytest

from sessprop.core import InvalidInputError, MissingItemError, Session
from sessprop.recommenders import (
    GRU4Rec,
    Gru4RecConfig,
    Popularity,
    SKNN,
    SknnConfig,
    gru4rec_score,
    gru4rec_train,
    gru_cell_forward,
    load_model,
    save_model,
)
from sessprop.recommenders.gru4rec import (
    AdagradMomentum,
    GRUParams,
    NumericError,
    gru_step,
    gru_step_backward,
    init_params,
)
from sessprop.recommenders.persistence import ModelFormatError, read_header


def test_zero_weights_halve_state():
    params = GRUParams.zeros(4, 3)
    h = np.array([0.2, -0.6, 1.0])
    np.testing.assert_array_equal(gru_cell_forward(params, np.eye(4)[1], h), 0.5 * h)
    np.testing.assert_array_equal(gru_cell_forward(params, np.eye(4)[2], np.zeros(3)), np.zeros(3))


def test_forward_deterministic_and_bounded():
    params = init_params(10, 6, np.random.default_rng(0), scale=3.0)
    x = np.eye(10)[3]
    a = gru_cell_forward(params, x, np.zeros(6))
    assert np.array_equal(a, gru_cell_forward(params, x, np.zeros(6)))
    assert np.all(np.abs(a) < 1)
    batched, _ = gru_step(params, np.array([3]), np.zeros((1, 6)))
    np.testing.assert_allclose(batched[0], a, rtol=0, atol=1e-15)


def test_step_backward_matches_finite_differences():
    rng = np.random.default_rng(4)
    n_items, H, B = 5, 4, 3
    params = init_params(n_items, H, rng, scale=0.8)
    params.b = rng.normal(0, 0.3, size=3 * H)
    x = np.array([1, 3, 1])
    h = rng.uniform(-0.9, 0.9, size=(B, H))
    w = rng.normal(size=(B, H))

    def loss():
        return float(np.sum(w * gru_step(params, x, h)[0]))

    _, cache = gru_step(params, x, h)
    grads = GRUParams.zeros(n_items, H)
    gru_step_backward(params, cache, w, grads)
    eps = 1e-6
    for name in ("Wx", "Wh", "b"):
        p, g = getattr(params, name), getattr(grads, name)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            up = loss()
            p[idx] = old - eps
            dn = loss()
            p[idx] = old
            assert abs((up - dn) / (2 * eps) - g[idx]) < 1e-7, (name, idx)


def test_adagrad_momentum_update_rule():
    params = GRUParams.zeros(3, 1)
    opt = AdagradMomentum(params, lr=0.1, momentum=0.5, eps=1e-300)
    grads = GRUParams.zeros(3, 1)
    grads.Wh[:] = 2.0
    opt.step(params, grads, np.array([], dtype=np.int64), np.array([], dtype=np.int64))
    # acc = 4, v = -0.1 * 2 / 2 = -0.1
    np.testing.assert_allclose(params.Wh, -0.1)
    opt.step(params, grads, np.array([], dtype=np.int64), np.array([], dtype=np.int64))
    # acc = 8, v = 0.5 * -0.1 - 0.1 * 2 / sqrt(8)
    np.testing.assert_allclose(params.Wh, -0.1 + (-0.05 - 0.2 / np.sqrt(8)))
    grads.Wx[1] = 1.0
    opt.step(params, grads, np.array([1]), np.array([], dtype=np.int64))
    assert params.Wx[0, 0] == 0.0 and params.Wx[1, 0] != 0.0


def _mk(sid, items):
    return Session(sid, tuple(int(v) for v in items), tuple(float(t) for t in range(len(items))))


def _corpus(n=40, items=12, seed=0):
    rng = np.random.default_rng(seed)
    return [_mk(f"s{i}", rng.integers(0, items, size=int(rng.integers(2, 7)))) for i in range(n)]


def test_seeded_training_reproducible():
    sessions = _corpus()
    cfg = Gru4RecConfig(hidden_size=8, epochs=2, batch_size=5, seed=7)
    a, b = gru4rec_train(sessions, cfg, 12), gru4rec_train(sessions, cfg, 12)
    for name, arr in a.params.as_dict().items():
        assert np.array_equal(arr, b.params.as_dict()[name])
    assert a.loss_history == b.loss_history
    c = gru4rec_train(sessions, Gru4RecConfig(hidden_size=8, epochs=2, batch_size=5, seed=8), 12)
    assert not np.array_equal(a.params.Wy, c.params.Wy)


def test_epochs_zero_is_init_only():
    sessions = _corpus()
    cfg = Gru4RecConfig(hidden_size=8, epochs=0, seed=3)
    a, b = gru4rec_train(sessions, cfg, 12), gru4rec_train(sessions, cfg, 12)
    assert not a.trained and a.meta()["untrained"]
    assert np.array_equal(a.score([1, 2]).values, b.score([1, 2]).values)


def test_score_shape_and_distinct(small_gru):
    a = gru4rec_score(small_gru, [0])
    assert len(a) == small_gru.n_items
    assert np.array_equal(a.values, gru4rec_score(small_gru, [0]).values)
    assert not np.array_equal(a.values, gru4rec_score(small_gru, [1]).values)
    with pytest.raises(MissingItemError):
        small_gru.score([small_gru.n_items])
    with pytest.raises(InvalidInputError):
        small_gru.score([])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_aborts_with_context():
    with pytest.raises(NumericError, match="epoch 1 step"):
        gru4rec_train(_corpus(), Gru4RecConfig(hidden_size=4, epochs=1, init_scale=1e300, dropout=0.0), 12)


def test_config_validation():
    with pytest.raises(InvalidInputError):
        Gru4RecConfig(dropout=1.0)
    with pytest.raises(InvalidInputError):
        Gru4RecConfig(hidden_size=0)


@pytest.mark.parametrize("kind", ["sknn", "gru4rec", "popularity"])
def test_persistence_round_trip(tmp_path, kind):
    sessions = _corpus()
    model = {
        "sknn": lambda: SKNN(SknnConfig(k=5, sample_size=10)),
        "gru4rec": lambda: GRU4Rec(Gru4RecConfig(hidden_size=6, epochs=1, batch_size=4)),
        "popularity": Popularity,
    }[kind]().fit(sessions, 12)
    save_model(model, tmp_path / "a.model", extra={"note": "x"})
    loaded = load_model(tmp_path / "a.model")
    assert type(loaded) is type(model) and loaded.config == model.config
    for prefix in ([0], [3, 4], [11, 2, 2]):
        assert np.array_equal(loaded.score(prefix).values, model.score(prefix).values)
    save_model(loaded, tmp_path / "b.model", extra={"note": "x"})
    assert (tmp_path / "a.model").read_bytes() == (tmp_path / "b.model").read_bytes()
    assert read_header(tmp_path / "a.model")["kind"] == kind


def test_corrupt_model_file(tmp_path):
    (tmp_path / "bad.model").write_bytes(b"not a model")
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "bad.model")
