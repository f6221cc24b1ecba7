import numpy as np
import pytest

from posedp.data import generate_demonstrations
from posedp.diffusion import ddpm_sample
from posedp.envs import TaskSpec
from posedp.harness import (
    Checkpoint,
    EpisodeReport,
    ExperimentConfig,
    build_training_set,
    denormalize_action,
    evaluate,
    evaluate_detailed,
    load_checkpoint,
    mean_epoch_seconds,
    normalize_actions,
    rollout,
    save_checkpoint,
    train,
)
from posedp.perception import TrackerConfig

TINY = dict(epochs=4, n_demos=8, n_eval_rollouts=4, t_max=40)


@pytest.fixture(scope="module")
def reach_dataset():
    cfg = ExperimentConfig(task_id="reach", **TINY)
    return generate_demonstrations(cfg.task_spec(), cfg.n_demos, cfg.tracker, seed=3)


@pytest.fixture(scope="module")
def tiny_checkpoint(reach_dataset):
    cfg = ExperimentConfig(task_id="reach", mode="gt_pose", hidden_width=32, **TINY)
    return train(cfg, reach_dataset)


# ---------------------------------------------------------------------------
# config


def test_config_validates_horizons():
    with pytest.raises(ValueError, match="act_horizon"):
        ExperimentConfig(act_horizon=9, pred_horizon=8)
    with pytest.raises(ValueError, match="obs_horizon"):
        ExperimentConfig(obs_horizon=0)
    with pytest.raises(ValueError, match="mode"):
        ExperimentConfig(mode="rgb")


def test_config_mapping_round_trip():
    cfg = ExperimentConfig(task_id="push_to_goal", mode="est_pose", hidden_width=48,
                           epochs=9, tracker=TrackerConfig(sigma_pos=0.002, first_visible_frame=5))
    again = ExperimentConfig.from_mapping(cfg.to_mapping())
    assert again == cfg


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_mapping({"train.optimizer": "sgd"})


def test_obs_dim_per_mode():
    pose = ExperimentConfig(task_id="stack", mode="gt_pose")
    grid = ExperimentConfig(task_id="stack", mode="grid_image", resolution=32)
    assert pose.obs_dim() == 7 + 8 * 2
    assert grid.obs_dim() == 7 + 32 * 32


# ---------------------------------------------------------------------------
# normalization and slicing


def test_action_normalization_round_trip():
    rng = np.random.default_rng(0)
    amin = np.array([-1, -0.5, 0.0, -1], dtype=np.float32)
    amax = np.array([1, 0.5, 0.0, 1], dtype=np.float32)  # zero-range dim exercises the floor
    actions = rng.uniform(-1, 1, size=(50, 4)).astype(np.float32) * (amax - amin) / 2 + (amax + amin) / 2
    norm = normalize_actions(actions, amin, amax)
    assert np.all(norm >= -1.000001) and np.all(norm <= 1.000001)
    back = denormalize_action(norm, amin, amax)
    np.testing.assert_allclose(back, actions, atol=1e-5)


def test_training_set_shapes_and_padding(reach_dataset):
    cfg = ExperimentConfig(task_id="reach", obs_horizon=3, pred_horizon=6, act_horizon=2, **TINY)
    amin, amax = reach_dataset.action_min, reach_dataset.action_max
    x0, cond = build_training_set(reach_dataset, cfg, amin, amax)
    assert x0.shape == (reach_dataset.n_frames, 6 * 4)
    assert cond.shape == (reach_dataset.n_frames, 3 * cfg.obs_dim())
    # first chunk of an episode: window rows all equal the first frame
    w = cfg.obs_dim()
    np.testing.assert_array_equal(cond[0][:w], cond[0][w:2 * w])
    # last chunk repeats the terminal action
    ep0 = reach_dataset.episodes[0]
    t_last = len(ep0) - 1
    last_chunk = x0[t_last].reshape(6, 4)
    np.testing.assert_array_equal(last_chunk[1], last_chunk[5])


# ---------------------------------------------------------------------------
# training


def test_train_smoke_and_progress(tiny_checkpoint):
    losses = tiny_checkpoint.metrics["epoch_loss"]
    assert len(losses) == TINY["epochs"]
    assert np.isfinite(losses).all()
    assert losses[-1] < losses[0]
    assert mean_epoch_seconds(tiny_checkpoint) > 0


def test_train_rejects_task_mismatch(reach_dataset):
    cfg = ExperimentConfig(task_id="push_to_goal", **TINY)
    with pytest.raises(ValueError, match="task"):
        train(cfg, reach_dataset)


def test_train_twice_same_seed_bitwise_identical(reach_dataset):
    cfg = ExperimentConfig(task_id="reach", hidden_width=24, epochs=2, n_demos=8, seed=11)
    a = train(cfg, reach_dataset)
    b = train(cfg, reach_dataset)
    for (na, ta), (nb, tb) in zip(a.params.named(), b.params.named()):
        assert na == nb
        np.testing.assert_array_equal(ta.data, tb.data)
    for ta, tb in zip(a.ema_params.tensors(), b.ema_params.tensors()):
        np.testing.assert_array_equal(ta.data, tb.data)


# ---------------------------------------------------------------------------
# checkpoint persistence


def test_checkpoint_round_trip_bitwise_sampling(tmp_path, tiny_checkpoint):
    path = tmp_path / "p.ckpt"
    save_checkpoint(tiny_checkpoint, path)
    loaded = load_checkpoint(path)
    assert loaded.config == tiny_checkpoint.config
    for (na, ta), (nb, tb) in zip(tiny_checkpoint.params.named(), loaded.params.named()):
        assert na == nb
        np.testing.assert_array_equal(ta.data, tb.data)
    np.testing.assert_array_equal(tiny_checkpoint.action_min, loaded.action_min)

    cfg = tiny_checkpoint.config
    sched = cfg.schedule()
    cond = np.random.default_rng(5).normal(size=cfg.obs_horizon * cfg.obs_dim()).astype(np.float32)
    a = ddpm_sample(tiny_checkpoint.sampling_params(), cond, sched, np.random.default_rng(77))
    b = ddpm_sample(loaded.sampling_params(), cond, sched, np.random.default_rng(77))
    np.testing.assert_array_equal(a, b)


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"garbage!" * 8)
    with pytest.raises(ValueError, match="bad magic"):
        load_checkpoint(path)


# ---------------------------------------------------------------------------
# rollouts


def test_rollout_deterministic(tiny_checkpoint):
    a = rollout(tiny_checkpoint, seed=42)
    b = rollout(tiny_checkpoint, seed=42)
    assert a == b


def test_rollout_receding_horizon_step_contract(tiny_checkpoint):
    rep = rollout(tiny_checkpoint, seed=1)
    h_a = tiny_checkpoint.config.act_horizon
    assert rep.sampler_calls == -(-rep.steps // h_a)  # ceil division
    assert rep.steps <= tiny_checkpoint.config.task_spec().t_max


def test_rollout_task_mismatch_rejected(tiny_checkpoint):
    with pytest.raises(ValueError, match="task"):
        rollout(tiny_checkpoint, spec=TaskSpec.for_task("stack"), seed=0)


def test_observation_mode_isolation(reach_dataset):
    gt_cfg = ExperimentConfig(task_id="reach", mode="gt_pose", hidden_width=16, epochs=1,
                              n_demos=4, t_max=20)
    grid_cfg = ExperimentConfig(task_id="reach", mode="grid_image", hidden_width=8, epochs=1,
                                n_demos=4, t_max=20)
    gt_rep = rollout(train(gt_cfg, reach_dataset), seed=2)
    grid_rep = rollout(train(grid_cfg, reach_dataset), seed=2)
    assert gt_rep.render_calls == 0 and gt_rep.pose_encodings > 0
    assert grid_rep.pose_encodings == 0 and grid_rep.render_calls > 0


def test_est_mode_logs_pose_errors(reach_dataset):
    cfg = ExperimentConfig(task_id="reach", mode="est_pose", hidden_width=16, epochs=1,
                           n_demos=4, t_max=20)
    rep = rollout(train(cfg, reach_dataset), seed=3)
    assert len(rep.position_errors) == rep.pose_encodings
    assert all(e >= 0 for e in rep.orientation_errors)


# ---------------------------------------------------------------------------
# evaluation


def _stub_rollout(result: bool):
    def fn(checkpoint, spec=None, tracker_cfg=None, seed=0):
        return EpisodeReport(success=result, steps=int(seed), sampler_calls=1)
    return fn


def test_evaluate_all_success_stub(tiny_checkpoint):
    assert evaluate(tiny_checkpoint, n=7, seed=0, rollout_fn=_stub_rollout(True)) == 1.0


def test_evaluate_all_fail_stub(tiny_checkpoint):
    assert evaluate(tiny_checkpoint, n=7, seed=0, rollout_fn=_stub_rollout(False)) == 0.0


def test_evaluate_seed_block(tiny_checkpoint):
    seen = []
    def spy(checkpoint, spec=None, tracker_cfg=None, seed=0):
        seen.append(seed)
        return EpisodeReport(success=seed % 2 == 0, steps=1, sampler_calls=1)
    sr, reports = evaluate_detailed(tiny_checkpoint, n=6, seed=100, rollout_fn=spy)
    assert seen == list(range(100, 106))
    assert sr == 0.5


def test_evaluate_rejects_nonpositive_n(tiny_checkpoint):
    with pytest.raises(ValueError):
        evaluate(tiny_checkpoint, n=0)
