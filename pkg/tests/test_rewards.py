import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reward_states import perfect_state
from synthetic import H1, h1_motion
from skilltransfer.rewards import (
    RewardError,
    TrackState,
    build_observation,
    early_termination,
    observation_layout,
    observation_size,
    reward_tracking,
    rewards_to_csv,
    score_motion,
    track_states,
)
from skilltransfer.rotations import rotvec_to_matrix

rng0 = np.random.default_rng


def test_perfect_tracking_values():
    s = perfect_state(rng0(0))
    for task in ("SC", "SS", "LB", "LS", "T", "L"):
        r = reward_tracking(task, s, torques=np.zeros(19))
        assert (r.r_pos, r.r_ori, r.r_root, r.r_wrist, r.r_w2o, r.r_object) == (1.0, 20.0, 5.0, 2.0, 2.0, 1.0)
        assert (r.r_action, r.r_vel, r.r_acc, r.r_energy) == (0.0, 0.0, 0.0, 0.0)
    assert reward_tracking("T", s).r_overall == 52.0
    assert reward_tracking("L", s).r_overall == 26.0 * 2.0 * 1.0
    assert reward_tracking("SC", s).r_overall == 26.0


def test_position_error_example():
    s = perfect_state(rng0(1))
    t = s.body_pos.copy()
    t[3, 0] += math.sqrt(0.2)
    r = reward_tracking("SC", dataclasses.replace(s, body_pos=t))
    assert r.r_pos == pytest.approx(math.exp(-1.0), rel=1e-12)
    assert r.r_pos == pytest.approx(0.3679, abs=1e-4)


def test_root_height_weight():
    s = perfect_state(rng0(2))
    low = dataclasses.replace(s, root_pos=s.root_pos - [0, 0, 0.1])
    sit = reward_tracking("SC", low)
    lie = reward_tracking("LB", low)
    assert sit.r_root == pytest.approx(5 * math.exp(-1.0) - 100 * 0.01)
    assert lie.r_root == pytest.approx(5 * math.exp(-1.0) - 10 * 0.01)
    assert reward_tracking("SC", low, lambda_height=0.0).r_root == pytest.approx(5 * math.exp(-1.0))


def test_regularizers():
    s = perfect_state(rng0(3))
    tau = np.full(19, 2.0)
    jd = np.full(19, 3.0)
    s2 = dataclasses.replace(s, joint_vel=jd, target_joint_vel=jd.copy(), action=s.prev_action + 1.0,
                             joint_acc=s.target_joint_acc + 2.0)
    r = reward_tracking("SC", s2, torques=tau)
    assert r.r_action == pytest.approx(-1e-3 * 19)
    assert r.r_acc == pytest.approx(-5e-7 * 4 * 19)
    assert r.r_energy == pytest.approx(-1e-6 * 36 * 19)
    assert r.r_energy < 0
    s3 = dataclasses.replace(s, joint_vel=s.target_joint_vel + 1.0)
    assert reward_tracking("SC", s3).r_vel == pytest.approx(-2e-3 * 19)
    phc = reward_tracking("SC", s2, torques=tau, variant="phc")
    assert phc.r_reg == 0.0 and phc.r_overall == phc.r_human


def _perturbed(s, which, scale):
    rng = rng0(11)
    d = rng.normal(size=3)
    d /= np.abs(d).sum()
    if which == "pos":
        return dataclasses.replace(s, body_pos=s.body_pos + scale * d)
    if which == "ori":
        return dataclasses.replace(s, body_rot=s.body_rot @ rotvec_to_matrix(scale * d))
    if which == "wrist":
        return dataclasses.replace(s, wrist_pos=s.wrist_pos + scale * d)
    if which == "w2o":
        return dataclasses.replace(s, wrist_pos=s.wrist_pos + scale * d)
    return dataclasses.replace(s, object_state=s.object_state + scale * np.r_[d, np.zeros(9)])


FIELD = {"pos": "r_pos", "ori": "r_ori", "wrist": "r_wrist", "w2o": "r_w2o", "object": "r_object"}


@pytest.mark.parametrize("which", sorted(FIELD))
def test_monotone_decrease(which):
    s = perfect_state(rng0(4))
    scales = [0.0] + list(np.geomspace(1e-3, 1.0, 10))
    vals = [getattr(reward_tracking("L", _perturbed(s, which, k)), FIELD[which]) for k in scales]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_missing_task_fields():
    s = perfect_state(rng0(5), object_state=None, object_target=None)
    with pytest.raises(RewardError):
        reward_tracking("L", s)
    with pytest.raises(RewardError):
        reward_tracking("T", perfect_state(rng0(5), wrist_pos=None))
    with pytest.raises(RewardError):
        build_observation("hst", s, "L")


def test_state_validation():
    with pytest.raises(RewardError):
        perfect_state(rng0(6), gravity=np.array([0.0, 0.0, -2.0]))
    with pytest.raises(RewardError):
        perfect_state(rng0(6), body_pos=np.zeros((19, 3)))


def test_early_termination():
    s = perfect_state(rng0(7))
    assert not early_termination(s, 0.3)
    assert early_termination(dataclasses.replace(s, root_pos=s.root_pos + [0.6, 0, 0]), 0.3)
    at = dataclasses.replace(s, root_pos=np.array([0.5, 0.0, 1.0]), target_root_pos=np.array([0.0, 0.0, 1.0]))
    assert not early_termination(at, 0.3)
    past = dataclasses.replace(at, root_pos=np.array([np.nextafter(0.5, 1.0), 0.0, 1.0]))
    assert early_termination(past, 0.3)
    assert early_termination(s, 1.0)


def test_observation_sizes():
    assert observation_size("hst") == 578 == 2 * (19 + 19 + 60 + 60 + 60 + 60) + 19 + 3
    assert observation_size("phc") == 698
    assert observation_size("hst", "T") == 584
    assert observation_size("hst", "L") == 578 + 24
    assert observation_size("phc", "L") == 698 + 24


def test_wrist_targets_observed_for_task_t():
    s = perfect_state(rng0(10))
    obs = build_observation("hst", s, "T")
    np.testing.assert_array_equal(obs[578:], s.wrist_targets.ravel())


def test_gravity_slot_for_identity_root():
    s = perfect_state(rng0(8))
    obs = build_observation("hst", s)
    slots = dict(observation_layout("hst"))
    np.testing.assert_array_equal(obs[slots["g"]], [0.0, 0.0, -1.0])
    assert slots["g"] == slice(575, 578)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_observation_is_injective_per_field(seed):
    s = perfect_state(rng0(seed))
    base = build_observation("phc", s, "L")
    for f in dataclasses.fields(TrackState):
        if f.name in ("root_pos", "target_root_pos", "action", "joint_acc", "target_joint_acc", "wrist_pos",
                      "wrist_targets"):
            continue  # not observed for task L
        value = getattr(s, f.name)
        if f.name == "gravity":
            changed = np.array([0.0, 1.0, 0.0])
        elif f.name.endswith("body_rot"):
            changed = value @ rotvec_to_matrix(np.array([0.0, 0.0, 0.1]))
        else:
            changed = value + 0.5
        obs = build_observation("phc", dataclasses.replace(s, **{f.name: changed}), "L")
        assert not np.array_equal(obs, base), f.name


def test_states_from_logs_and_csv():
    rng = rng0(9)
    m = h1_motion(rng, 12, torques=np.zeros((12, 19)))
    rows = score_motion("SC", m, m, H1)
    assert all(r.r_pos == 1.0 and r.r_ori == 20.0 and r.r_root == 5.0 for r in rows)
    states = track_states(m, m, H1)
    np.testing.assert_allclose(states[0].body_pos[0], 0.0, atol=1e-15)
    text = rewards_to_csv(rows)
    assert text.splitlines()[0].startswith("frame,r_pos,r_ori,r_root")
    assert len(text.splitlines()) == 13
    with pytest.raises(RewardError):
        track_states(m, h1_motion(rng, 5), H1)
