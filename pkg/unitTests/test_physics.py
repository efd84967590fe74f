"""
Module to test the contact masks and the physical guidance losses.
"""
import numpy as np
import pytest

from hoiModule.autodiff import tensor as tn
from hoiModule.autodiff.gradcheck import check_gradient
from hoiModule.bodyModel.body_model import mini_body
from hoiModule.bodyModel.object_model import SphereSdf
from hoiModule.bodyModel.params import HoiParams, as_array, flatten
from hoiModule.bodyModel.registry import builtin_template
from hoiModule.physics.contact import ContactMasks, predict_contact_masks
from hoiModule.physics.losses import (GuidanceContext, GuidanceObjective, GuidanceWeights,
                                      loss_ho, loss_of, loss_pt, loss_total)
from hoiModule.utils.errors import DataError


@pytest.fixture
def sphere_sdf():
    sdf = SphereSdf(0.15)

    def world(points):
        return sdf(tn.as_tensor(points))
    return world


@pytest.fixture
def context():
    return GuidanceContext(mini_body(), builtin_template("box_carry"))


@pytest.fixture
def rest_x():
    return as_array(flatten(HoiParams.rest()))


# ========================== masks ==========================
def test_predict_contact_masks(sphere_sdf):
    """Hard masks: near the surface, near the other mesh, on the floor"""
    v_h = np.array([[0.0, 0.0, 0.0], [0.18, 0.0, 0.0], [1.0, 1.0, 1.0]])
    v_o = np.array([[0.2, 0.02, 0.0], [0.0, -0.1, 0.0], [3.0, 3.0, 3.0]])
    masks = predict_contact_masks(v_h, v_o, lambda p: sphere_sdf(p).data)
    np.testing.assert_array_equal(masks.m_h, [0.0, 1.0, 0.0])
    np.testing.assert_array_equal(masks.m_o, [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(masks.m_f, [0.0, 1.0, 0.0])
    assert masks.sizes() == {"m_h": 1, "m_o": 1, "m_f": 1}
    assert masks.to_dict() == {"m_h": [1], "m_o": [0], "m_f": [1]}


def test_predict_contact_masks_rejects_empty_meshes(sphere_sdf):
    with pytest.raises(DataError):
        predict_contact_masks(np.zeros((0, 3)), np.ones((2, 3)), sphere_sdf)


def test_contact_masks_validation():
    with pytest.raises(DataError):
        ContactMasks(np.array([1.5]), np.zeros(2), np.zeros(2))
    with pytest.raises(DataError):
        ContactMasks(np.zeros(1), np.zeros(2), np.zeros(3))
    empty = ContactMasks.empty(4, 2)
    assert empty.equals(ContactMasks(np.zeros(4), np.zeros(2), np.zeros(2)))
    with pytest.raises(ValueError):
        empty.m_h[0] = 1.0


# ========================== losses ==========================
def test_loss_ho_hard_min():
    """Root of the masked squared nearest distances, both directions"""
    v_h = np.array([[0.0, 0.0, 0.0], [5.0, 5.0, 5.0]])
    v_o = np.array([[0.3, 0.0, 0.0], [0.0, 0.4, 0.0]])
    human_only = ContactMasks(np.array([1.0, 0.0]), np.zeros(2), np.zeros(2))
    assert loss_ho(v_h, v_o, human_only, hard_min=True).item() == pytest.approx(0.3)
    both = ContactMasks(np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.zeros(2))
    assert loss_ho(v_h, v_o, both, hard_min=True).item() == pytest.approx(np.sqrt(0.18))


def test_loss_ho_soft_min_approaches_hard_min():
    """At a small temperature the soft minimum is close to the nearest distance"""
    v_h = np.array([[0.0, 0.0, 0.0]])
    v_o = np.array([[0.3, 0.0, 0.0], [0.0, 0.4, 0.0]])
    masks = ContactMasks(np.array([1.0]), np.zeros(2), np.zeros(2))
    soft = loss_ho(v_h, v_o, masks, temperature=0.01).item()
    assert soft == pytest.approx(0.3, rel=1e-3)
    assert soft >= 0.3


def test_empty_masks_give_zero_losses():
    v = np.ones((3, 3))
    masks = ContactMasks.empty(3, 3)
    assert loss_ho(v, v, masks).item() == 0.0
    assert loss_of(v, masks).item() == 0.0


def test_loss_of():
    """L1 height of the floor-masked object vertices"""
    v_o = np.array([[0.0, -0.02, 0.0], [0.0, 0.5, 0.0], [0.0, 0.03, 0.0]])
    masks = ContactMasks(np.zeros(1), np.zeros(3), np.array([1.0, 0.0, 1.0]))
    assert loss_of(v_o, masks).item() == pytest.approx(0.05)


def test_loss_pt(sphere_sdf):
    """Mean penetration depth over all human vertices"""
    v_h = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    assert loss_pt(v_h, sphere_sdf).item() == pytest.approx(0.075)


def test_mask_length_mismatch():
    with pytest.raises(DataError):
        loss_ho(np.ones((3, 3)), np.ones((2, 3)), ContactMasks.empty(2, 2))
    with pytest.raises(DataError):
        loss_of(np.ones((3, 3)), ContactMasks.empty(1, 2))


def test_loss_ho_gradient():
    """The soft-min contact term differentiates to the human vertices"""
    rng = np.random.default_rng(3)
    v_o = tn.Tensor(rng.normal(scale=0.1, size=(6, 3)))
    masks = ContactMasks(np.array([1.0, 0.0, 0.5, 1.0]), np.array([0, 1, 0, 0, 1, 0.0]),
                         np.zeros(6))
    err = check_gradient(lambda v: loss_ho(v, v_o, masks, temperature=0.05),
                         rng.normal(scale=0.1, size=(4, 3)))
    assert err < 1e-4


def test_guidance_weights_must_be_non_negative():
    with pytest.raises(DataError):
        GuidanceWeights(lambda_ho=-1.0)
    with pytest.raises(DataError):
        GuidanceWeights(rho=float("nan"))
    assert not GuidanceWeights(0.0, 0.0, 0.0).any_loss


# ========================== full objective ==========================
def test_context_poses_rest_scene(context, rest_x):
    """Rest parameters give the template body and the canonical object"""
    v_h, v_o, sdf = context.pose_np(rest_x)
    np.testing.assert_allclose(v_h, context.body.template_vertices, atol=1e-12)
    np.testing.assert_allclose(v_o, context.template.vertices, atol=1e-12)
    assert sdf(np.zeros((1, 3)))[0] == pytest.approx(-0.12)


def test_context_rejects_wrong_length(context):
    with pytest.raises(DataError):
        context.split(np.zeros(114))


def test_loss_total_without_weights_is_zero(context, rest_x):
    masks = ContactMasks.empty(context.body.n_vertices, context.template.n_vertices)
    assert loss_total(rest_x, masks, GuidanceWeights(0.0, 0.0, 0.0), context).item() == 0.0


def test_objective_is_weighted_sum_of_components(context, rest_x):
    """L_P equals the weighted sum of the reported components"""
    x = rest_x.copy()
    x[context.layout.trans_o] = [0.0, 0.9, 0.15]
    v_h, v_o, sdf = context.pose_np(x)
    masks = predict_contact_masks(v_h, v_o, sdf, threshold=0.1)
    weights = GuidanceWeights(lambda_ho=1.0, lambda_of=2.0, lambda_pt=3.0)
    objective = GuidanceObjective(context, masks, weights)
    parts = objective.components(x)
    expected = parts["l_ho"] + 2.0 * parts["l_of"] + 3.0 * parts["l_pt"]
    assert objective(x).item() == pytest.approx(expected, rel=1e-12)
    assert objective.is_active


def test_objective_gradient_reaches_object_translation(context, rest_x):
    """Moving the object changes the loss the way its gradient predicts"""
    x = rest_x.copy()
    x[context.layout.trans_o] = [0.0, 0.9, 0.2]
    v_h, v_o, sdf = context.pose_np(x)
    masks = predict_contact_masks(v_h, v_o, sdf, threshold=0.15)
    objective = GuidanceObjective(context, masks, GuidanceWeights(), hard_min=True)
    trans = context.layout.trans_o

    def f(t):
        full = tn.concat([tn.Tensor(x[:trans.start]), t])
        return objective(full)

    assert check_gradient(f, x[trans]) < 1e-4
