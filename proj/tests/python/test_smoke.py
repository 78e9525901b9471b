"""Smoke tests for the python bindings: import, basic operations, and one
round trip through dataset generation, identification, policy action and
evaluation at a miniature scale."""

import json

import pytest

kmpc = pytest.importorskip("kmpc")


def test_prices_and_cosine():
    prices = kmpc.synth_prices(48, seed=7)
    assert len(prices) == 48
    assert all(v >= 0.0 for v in prices.values)
    again = kmpc.synth_prices(48, seed=7)
    assert prices.values == again.values

    assert kmpc.cosine_similarity([1.0, 2.0], [1.0, 2.0]) == pytest.approx(1.0)
    assert kmpc.cosine_similarity([1.0, 0.0], [0.0, 3.0]) == pytest.approx(0.0)
    with pytest.raises(RuntimeError):
        kmpc.cosine_similarity([1.0], [0.0])


def test_env_steady_state():
    env = kmpc.CstrEnv()
    state = env.reset()
    assert state.c == pytest.approx(0.1367)
    assert state.T == pytest.approx(0.7293)
    nxt, reward = env.step(1.0, 390.0)
    assert reward["r_con"] == 0.0
    assert reward["r_cost"] == 0.0
    assert nxt.c == pytest.approx(0.1367, abs=1e-5)


def test_pipeline_roundtrip(tmp_path):
    cfg = {
        "seed": 5,
        "run_dir": str(tmp_path / "run"),
        "prices": {"synth_hours": 400},
        "koopman": {
            "dataset": {"n_traj": 8, "steps": 120, "n_train": 6},
            "si": {"epochs": 6, "patience": 6, "batches_per_epoch": 25},
            "si_seeds": 1,
        },
        "eval": {"hours": 6},
    }
    cfg_json = json.dumps(cfg)

    dataset_path = str(tmp_path / "dataset.ntc")
    info = kmpc.generate_dataset(cfg_json, dataset_path)
    assert info["n_traj"] == 8

    model_path = str(tmp_path / "model.ntc")
    si = kmpc.train_si(cfg_json, dataset_path, model_path)
    assert len(si["val_losses"]) == 1

    model = kmpc.KoopmanModel.load(model_path)
    pred = model.rollout((0.1367, 0.7293), [(1.0, 390.0)] * 4)
    assert len(pred) == 4
    assert all(abs(c) < 10 and abs(T) < 10 for c, T in pred)

    policy = kmpc.MpcPolicy(model, cfg_json)
    state = kmpc.PlantState()
    state.c, state.T, state.storage = 0.14, 0.73, 2.0
    u = policy.act(state, [10.0] * 9)
    assert 0.8 <= u.rho <= 1.2
    assert 0.0 <= u.F <= 700.0

    report = kmpc.evaluate(cfg_json, model_path)
    assert report["steps"] == 6
    assert report["cost_ratio"] >= 0.0
