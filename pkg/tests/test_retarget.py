import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthetic import H1, TWIN_MAPPED, as_twin_motion, h1_motion, human_motion, twin_mapping, twin_skeleton
from skilltransfer.motion import MotionSequence
from skilltransfer.retarget import (
    PRESETS,
    DegenerateMappingError,
    JointMapping,
    MappingError,
    RetargetConfig,
    RetargetConfigError,
    align_skeleton_shape,
    bone_targets,
    copy_rotation,
    decompose_onto_axes,
    load_mapping,
    loss_optim,
    optimize_motion,
    reference_targets,
    retarget_optimize,
    save_mapping,
)
from skilltransfer.retarget.optimize import Adam, learning_rate_at
from skilltransfer.retarget.shape import bone_lengths
from skilltransfer.rotations import axis_angle_to_matrix, rotvec_to_matrix
from skilltransfer.skeleton import load_skeleton

X, Y, Z = np.eye(3)


# -- mapping ---------------------------------------------------------------


@pytest.mark.parametrize("preset", PRESETS)
def test_presets_validate(preset, tmp_path):
    m = load_mapping(preset)
    m.validate(load_skeleton(m.human_skeleton), load_skeleton(m.humanoid_skeleton))
    save_mapping(m, tmp_path / "m.json")
    assert load_mapping(tmp_path / "m.json") == m


def test_unknown_preset_lists_choices():
    with pytest.raises(LookupError, match="unihsi"):
        load_mapping("nope")


def test_mapping_rejects_duplicate_humanoid_target():
    with pytest.raises(MappingError):
        JointMapping(((1, 2), (3, 2)))


def test_mapping_out_of_range():
    with pytest.raises(MappingError):
        JointMapping(((99, 1),)).validate(load_skeleton("unihsi"), H1)


# -- copy rotation ---------------------------------------------------------


@settings(max_examples=100)
@given(st.floats(-3.0, 3.0))
def test_single_axis_twist_is_exact(angle):
    rot = axis_angle_to_matrix(Y, angle)
    assert decompose_onto_axes(rot, Y[None])[0] == pytest.approx(angle, abs=1e-12)


@settings(max_examples=100)
@given(st.floats(-3.0, 3.0), st.floats(-1.5, 1.5), st.floats(-3.0, 3.0))
def test_three_orthogonal_axes_are_exact(a, b, c):
    axes = np.array([Z, X, Y])
    rot = axis_angle_to_matrix(Z, a) @ axis_angle_to_matrix(X, b) @ axis_angle_to_matrix(Y, c)
    angles = decompose_onto_axes(rot, axes)
    recon = axis_angle_to_matrix(Z, angles[0]) @ axis_angle_to_matrix(X, angles[1]) @ axis_angle_to_matrix(Y, angles[2])
    np.testing.assert_allclose(recon, rot, atol=1e-9)


@settings(max_examples=100)
@given(st.floats(-3.0, 3.0), st.floats(-1.5, 1.5))
def test_two_axes_exact_when_in_span(a, b):
    rot = axis_angle_to_matrix(Y, a) @ axis_angle_to_matrix(X, b)
    t = decompose_onto_axes(rot, np.array([Y, X]))
    np.testing.assert_allclose(axis_angle_to_matrix(Y, t[0]) @ axis_angle_to_matrix(X, t[1]), rot, atol=1e-9)


def test_twist_ignores_swing():
    rot = axis_angle_to_matrix(X, 0.4) @ axis_angle_to_matrix(Z, 0.3)
    assert decompose_onto_axes(axis_angle_to_matrix(Z, 0.3), Z[None])[0] == pytest.approx(0.3)
    assert abs(decompose_onto_axes(axis_angle_to_matrix(X, 0.4), Z[None])[0]) < 1e-12
    assert np.isfinite(decompose_onto_axes(rot, Z[None])).all()


def test_parallel_consecutive_axes_rejected():
    with pytest.raises(DegenerateMappingError):
        decompose_onto_axes(np.eye(3), np.array([Y, Y]))


def test_copy_rotation_recovers_twin_motion():
    rng = np.random.default_rng(0)
    m = h1_motion(rng, 8)
    out = copy_rotation(as_twin_motion(m), twin_mapping(), twin_skeleton(), H1)
    np.testing.assert_array_equal(out.root_pos, m.root_pos)
    np.testing.assert_array_equal(out.root_quat, m.root_quat)
    mapped = [b - 1 for b in TWIN_MAPPED if b]
    np.testing.assert_allclose(out.joints[:, mapped], m.joints[:, mapped], atol=1e-9)
    unmapped = [i for i in range(19) if i not in mapped]
    np.testing.assert_array_equal(out.joints[:, unmapped], 0.0)


@pytest.mark.parametrize("preset", PRESETS)
def test_copy_rotation_presets(preset):
    mapping = load_mapping(preset)
    human = load_skeleton(mapping.human_skeleton)
    m = human_motion(np.random.default_rng(3), human, 6)
    out = copy_rotation(m, mapping, human, H1, clamp=True)
    assert out.skeleton_id == "h1" and out.joints.shape == (6, 19)
    lo, hi = H1.limits
    assert np.all((out.joints >= lo) & (out.joints <= hi))


# -- shape alignment -------------------------------------------------------


@pytest.mark.parametrize("preset", PRESETS)
def test_alignment_matches_targets(preset):
    mapping = load_mapping(preset)
    human = load_skeleton(mapping.human_skeleton)
    aligned = align_skeleton_shape(human, H1, mapping)
    targets = bone_targets(human, H1, mapping)
    lengths = bone_lengths(aligned, targets)
    for a, (_, length) in targets.items():
        assert lengths[a] == pytest.approx(length, abs=1e-9)
    again = align_skeleton_shape(aligned, H1, mapping)
    np.testing.assert_array_equal(again.offsets, aligned.offsets)
    # only offsets change
    assert [(j.name, j.parent, j.kind) for j in aligned.joints] == [(j.name, j.parent, j.kind) for j in human.joints]


# -- optimization ----------------------------------------------------------


def test_config_validation():
    with pytest.raises(RetargetConfigError):
        RetargetConfig(task_id="SC", lambda_hand=0.5)
    with pytest.raises(RetargetConfigError):
        RetargetConfig(lambda_pos=-1.0)
    with pytest.raises(RetargetConfigError):
        RetargetConfig(task_id="XX")
    assert RetargetConfig(task_id="T").hand_weight == 1.0
    assert RetargetConfig(task_id="SC").hand_weight == 0.0
    assert RetargetConfig(task_id="L", lambda_hand=0.5).hand_weight == 0.5


def test_learning_rate_schedule():
    cfg = RetargetConfig(epochs=11, learning_rate=0.1, lr_final_ratio=0.01)
    assert learning_rate_at(cfg, 1) == pytest.approx(0.1)
    assert learning_rate_at(cfg, 11) == pytest.approx(0.001)
    assert learning_rate_at(RetargetConfig(lr_schedule="constant"), 500) == 0.02


def test_adam_first_step_is_lr_times_sign():
    adam = Adam([(3,)], lr=0.5)
    (d,) = adam.step([np.array([2.0, -0.1, 0.0])])
    np.testing.assert_allclose(d, [-0.5, 0.5, 0.0], atol=1e-6)


def test_loss_is_zero_for_exact_match():
    m = h1_motion(np.random.default_rng(4), 10)
    targets = reference_targets(as_twin_motion(m), twin_skeleton(), twin_mapping())
    terms = loss_optim(m, targets, twin_mapping(), RetargetConfig(lambda_acc=0.0), H1)
    assert terms.pos < 1e-24 and terms.ori < 1e-7 and terms.total < 1e-7


def test_hand_term_only_for_hand_tasks():
    m = h1_motion(np.random.default_rng(5), 6)
    targets = reference_targets(as_twin_motion(m), twin_skeleton(), twin_mapping())
    shifted = type(targets)(targets.positions, targets.orientations, targets.wrists + 0.1)
    sc = loss_optim(m, shifted, twin_mapping(), RetargetConfig(task_id="SC"), H1)
    t = loss_optim(m, shifted, twin_mapping(), RetargetConfig(task_id="T"), H1)
    assert sc.hand == 0.0 and t.hand > 0.0


def test_optimizer_never_worse_than_init_and_respects_limits():
    rng = np.random.default_rng(6)
    human = load_skeleton("unihsi")
    mapping = load_mapping("unihsi")
    m = human_motion(rng, human, 12)
    res = retarget_optimize(m, human, H1, mapping, RetargetConfig(epochs=150))
    assert res.loss.total <= res.initial_loss.total
    lo, hi = H1.limits
    assert np.all((res.motion.joints >= lo) & (res.motion.joints <= hi))
    losses = [c[1] for c in res.checkpoints]
    assert losses == sorted(losses, reverse=True)


def test_optimizer_is_deterministic():
    rng = np.random.default_rng(7)
    human = load_skeleton("unihsi")
    mapping = load_mapping("unihsi")
    m = human_motion(rng, human, 8)
    a = retarget_optimize(m, human, H1, mapping, RetargetConfig(epochs=60))
    b = retarget_optimize(m, human, H1, mapping, RetargetConfig(epochs=60))
    np.testing.assert_array_equal(a.motion.joints, b.motion.joints)
    np.testing.assert_array_equal(a.motion.root_quat, b.motion.root_quat)


def test_zero_epochs_returns_initialization():
    m = h1_motion(np.random.default_rng(8), 5)
    targets = reference_targets(as_twin_motion(m), twin_skeleton(), twin_mapping())
    res = optimize_motion(m, H1, twin_mapping(), targets, RetargetConfig(epochs=0))
    assert res.best_epoch == 0
    np.testing.assert_array_equal(res.motion.joints, np.clip(m.joints, *H1.limits))
