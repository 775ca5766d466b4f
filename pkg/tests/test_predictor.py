"""Learned trajectory predictor: auto-labeled data collection, MSE
pretraining against the constant-velocity oracle, and the learned prediction
mode of the per-tick predictor."""

import numpy as np
import pytest

from occlusim import scenario as scn
from occlusim.env import Env, EnvConfig
from occlusim.obs import POS_SCALE, SPEED_SCALE
from occlusim.rl import (collect_prediction_data, prediction_ade,
                         pretrain_predictor)
from occlusim.safety import TrajectoryPredictor, predict_cv


def overtake_config():
    return EnvConfig(scenario=scn.ScenarioConfig.default_for("overtake"),
                     safety_enabled=False)


def cv_oracle_ade(data):
    """ADE of a constant-velocity predictor built from the last history node of
    each labeled agent polyline; independent of the network stack."""
    errs = []
    for batch, row, target in data:
        n = int(batch.node_mask[row].sum())
        feat = batch.nodes[row, n - 1]
        v = feat[2] / SPEED_SCALE
        psi = feat[3]                      # heading relative to the ego frame
        step = np.array([v * 0.1 * np.cos(psi), v * 0.1 * np.sin(psi)])
        pred = np.cumsum(np.tile(step, (20, 1)), axis=0)
        true = np.cumsum(target / POS_SCALE, axis=0)
        errs.append(float(np.mean(np.linalg.norm(pred - true, axis=1))))
    return float(np.mean(errs))


@pytest.fixture(scope="module")
def cv_data():
    # straight-lane overtake traffic moves at near-constant velocity
    return collect_prediction_data(overtake_config(), n_episodes=5, seed=4)


@pytest.fixture(scope="module")
def trained(cv_data):
    cfg = overtake_config()
    params = None
    for epochs, lr in ((60, 3e-3), (60, 3e-4), (40, 1e-4)):
        params, loss = pretrain_predictor(cfg, n_episodes=5, seed=4,
                                          epochs=epochs, lr=lr, params=params)
    return params, loss


def test_collected_samples_are_well_formed(cv_data):
    assert len(cv_data) > 100
    for batch, row, target in cv_data:
        assert target.shape == (20, 2)
        assert batch.poly_mask[row]
        assert np.all(np.isfinite(target))


def test_cv_oracle_is_accurate_on_cv_data(cv_data):
    # the traffic really is near constant-velocity over the 2 s horizon
    assert cv_oracle_ade(cv_data) < 0.5


def test_trained_predictor_matches_cv_oracle(cv_data, trained):
    params, loss = trained
    assert np.isfinite(loss)
    ade = prediction_ade(params, cv_data)
    assert ade <= cv_oracle_ade(cv_data) + 0.2


def test_learned_mode_predicts_world_frame_tracks(trained):
    params, _ = trained
    env = Env(overtake_config(), seed=0, predictor_params=params)
    obs = env.reset(mode="early", progress=1.0, episode_seed=5)
    visible = env._visible_agents()
    assert visible
    pred = TrajectoryPredictor("learned", params=params).predict(
        env.world, visible, batch=obs)
    cv = predict_cv(visible)
    for a in visible:
        assert pred[a.id].shape == (20, 2)
        assert np.all(np.isfinite(pred[a.id]))
        # starts at the agent and stays near the CV track on straight lanes
        assert np.linalg.norm(pred[a.id][0] - a.position) < 2.0
        assert np.mean(np.linalg.norm(pred[a.id] - cv[a.id], axis=1)) < 3.0


def test_learned_mode_requires_params():
    with pytest.raises(ValueError):
        TrajectoryPredictor("learned")
    with pytest.raises(ValueError):
        TrajectoryPredictor("kalman")
