"""
Module to test the evaluation metrics: Procrustes alignment, chamfer distance and contact
precision / recall / F-score.
"""
import numpy as np
import pytest

from hoiModule.bodyModel.body_model import mini_body
from hoiModule.bodyModel.params import HoiParams, as_array, flatten
from hoiModule.bodyModel.registry import builtin_template
from hoiModule.bodyModel.rotation import axis_angle_to_matrix
from hoiModule.metrics.evaluation import (REPORT_FIELDS, EvalReport, aggregate_reports,
                                          chamfer_cm, contact_prf, evaluate_meshes,
                                          evaluate_scene, procrustes_align)
from hoiModule.physics.losses import GuidanceContext
from hoiModule.utils.errors import DataError, NumericalError


@pytest.fixture
def rng():
    return np.random.default_rng(21)


@pytest.fixture
def gt_meshes(rng):
    """Random human points, the box_carry object and its SDF"""
    template = builtin_template("box_carry")
    human = rng.uniform(-0.3, 0.3, size=(40, 3))
    return human, np.array(template.vertices), template.sdf_np


def test_procrustes_recovers_a_similarity(rng):
    source = rng.normal(size=(30, 3))
    rotation = axis_angle_to_matrix([0.4, -1.1, 0.7])
    target = 2.5 * source @ rotation.T + np.array([1.0, -2.0, 0.5])
    transform = procrustes_align(source, target)
    assert transform.scale == pytest.approx(2.5)
    np.testing.assert_allclose(transform.rotation, rotation, atol=1e-10)
    np.testing.assert_allclose(transform.apply(source), target, atol=1e-10)


def test_procrustes_never_reflects(rng):
    """A mirrored target still gets a proper rotation"""
    source = rng.normal(size=(30, 3))
    target = source * np.array([-1.0, 1.0, 1.0])
    transform = procrustes_align(source, target)
    assert np.linalg.det(transform.rotation) == pytest.approx(1.0)


def test_procrustes_rigid_mode(rng):
    source = rng.normal(size=(10, 3))
    assert procrustes_align(source, 3.0 * source, with_scale=False).scale == 1.0


def test_procrustes_errors():
    with pytest.raises(DataError):
        procrustes_align(np.zeros((4, 3)), np.zeros((5, 3)))
    with pytest.raises(DataError):
        procrustes_align(np.zeros((0, 3)), np.zeros((0, 3)))
    with pytest.raises(NumericalError):
        procrustes_align(np.ones((4, 3)), np.zeros((4, 3)))


def test_chamfer_in_centimeters():
    """Half the sum of the two mean nearest distances, times 100"""
    a = np.array([[0.0, 0.0, 0.0]])
    b = np.array([[0.03, 0.0, 0.0], [0.0, 0.04, 0.0]])
    assert chamfer_cm(a, b) == pytest.approx(3.25)
    assert chamfer_cm(b, a) == pytest.approx(3.25)
    assert chamfer_cm(b, b) == 0.0
    with pytest.raises(DataError):
        chamfer_cm(np.zeros((0, 3)), b)


@pytest.mark.parametrize("pred, gt, expected", [
    ([1, 1, 0, 0], [1, 0, 1, 0], (0.5, 0.5, 0.5)),
    ([0, 0, 0], [0, 0, 0], (1.0, 1.0, 1.0)),
    ([1, 0, 0], [0, 0, 0], (0.0, 0.0, 0.0)),
    ([0, 0, 0], [0, 1, 0], (0.0, 0.0, 0.0)),
    ([1, 1, 1], [0, 1, 0], (1 / 3, 1.0, 0.5)),
])
def test_contact_prf_conventions(pred, gt, expected):
    assert contact_prf(pred, gt) == pytest.approx(expected)


def test_contact_prf_length_mismatch():
    with pytest.raises(DataError):
        contact_prf([1, 0], [1, 0, 0])


def test_identical_meshes_score_perfectly(gt_meshes):
    report = evaluate_meshes(gt_meshes, gt_meshes)
    assert report.cd_human == pytest.approx(0.0, abs=1e-9)
    assert report.cd_object == pytest.approx(0.0, abs=1e-9)
    assert (report.contact_p, report.contact_r, report.contact_f) == (1.0, 1.0, 1.0)


def test_rigidly_moved_prediction_is_aligned_away(gt_meshes):
    """A global rigid motion of the whole scene costs nothing"""
    human, obj, sdf = gt_meshes
    rotation = axis_angle_to_matrix([0.0, 0.9, 0.2])
    shift = np.array([0.5, 0.1, -0.3])

    def moved_sdf(points):
        return sdf((np.asarray(points) - shift) @ rotation)

    pred = (human @ rotation.T + shift, obj @ rotation.T + shift, moved_sdf)
    report = evaluate_meshes(pred, gt_meshes)
    assert report.cd_human == pytest.approx(0.0, abs=1e-8)
    assert report.cd_object == pytest.approx(0.0, abs=1e-8)
    assert report.contact_f == 1.0


def test_topology_mismatch(gt_meshes):
    human, obj, sdf = gt_meshes
    with pytest.raises(DataError):
        evaluate_meshes((human[:-1], obj, sdf), gt_meshes)


def test_evaluate_scene_on_the_ground_truth():
    context = GuidanceContext(mini_body(), builtin_template("box_seat"))
    x = as_array(flatten(HoiParams.rest()))
    x[context.layout.trans_o] = [0.0, 0.42, 0.3]
    report = evaluate_scene(x, x, context)
    assert report.cd_human == pytest.approx(0.0, abs=1e-9)
    assert report.contact_f == 1.0


def test_aggregate_reports():
    reports = [EvalReport(1.0, 2.0, 1.0, 0.0, 0.0), EvalReport(3.0, 4.0, 0.0, 1.0, 0.0),
               EvalReport(8.0, 6.0, 1.0, 1.0, 1.0)]
    summary = aggregate_reports(reports)
    assert summary["n"] == 3
    assert summary["mean"]["cd_human"] == pytest.approx(4.0)
    assert summary["median"]["cd_human"] == 3.0
    assert set(summary["mean"]) == set(REPORT_FIELDS)
    assert EvalReport.from_dict(reports[0].to_dict()) == reports[0]
    with pytest.raises(DataError):
        aggregate_reports([])
