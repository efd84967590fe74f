"""
Module to test the neural denoiser, its weight files and the training loop.
"""
import numpy as np
import pytest

from hoiModule.autodiff.gradcheck import check_gradient
from hoiModule.autodiff import tensor as tn
from hoiModule.binFiles.read_weights import (MAGIC, ReadWeights, load_weights, save_weights,
                                             write_tensor_file)
from hoiModule.denoiser.neural import (Conditions, DenoiserConfig, DenoiserWeights,
                                       NeuralDenoiser, default_obs_dim, init_weights,
                                       parameter_shapes)
from hoiModule.denoiser.training import (CHECKPOINT_NAME, AdamState, Trainer, TrainingSet,
                                         adam_update, held_out_mse, load_checkpoint,
                                         noise_batch, train_step)
from hoiModule.diffusion.schedule import NoiseSchedule
from hoiModule.utils.errors import (ConfigError, DataError, NonFiniteError, ShapeError,
                                    WeightsFormatError)


@pytest.fixture(scope="module")
def sched():
    return NoiseSchedule()


@pytest.fixture
def small_config():
    """Smallest architecture that still has every block"""
    return DenoiserConfig(width=8, heads=2, layers=1, time_dim=8, n_obs_tokens=2,
                          n_geo_tokens=1, ffn_mult=1)


@pytest.fixture
def rng():
    return np.random.default_rng(5)


@pytest.fixture
def conds(rng):
    return Conditions(rng.normal(size=default_obs_dim(16)), rng.normal(scale=0.1, size=(64, 3)))


@pytest.fixture
def training_set(rng):
    """Eight scenes around a fixed pattern"""
    pattern = np.linspace(-0.5, 0.5, 115)
    x0 = pattern + 0.05 * rng.normal(size=(8, 115))
    return TrainingSet(x0, rng.normal(size=(8, 52)), rng.normal(scale=0.1, size=(8, 64, 3)))


# ========================== architecture ==========================
@pytest.mark.parametrize("kwargs", [
    {"width": 10, "heads": 4}, {"time_dim": 7}, {"layers": 0}, {"heads": True},
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        DenoiserConfig(**kwargs)


def test_default_obs_dim():
    assert default_obs_dim(16) == 52
    assert DenoiserConfig().obs_dim == 52


def test_arch_hash_tracks_the_architecture(small_config):
    """Equal configurations hash equally, any change alters the hash"""
    assert small_config.arch_hash() == DenoiserConfig(**small_config.to_dict()).arch_hash()
    assert small_config.arch_hash() != DenoiserConfig(
        **{**small_config.to_dict(), "width": 16}).arch_hash()
    with pytest.raises(DataError):
        DenoiserConfig.from_dict({"width": 8, "depth": 3})


def test_disabled_conditions_use_learned_tokens(small_config):
    """Without conditions the tensor set has null tokens instead of encoders"""
    config = DenoiserConfig(**{**small_config.to_dict(), "use_obs": False, "use_geo": False})
    shapes = parameter_shapes(config)
    assert shapes["obs.null"] == (2, 8)
    assert shapes["geo.null"] == (1, 8)
    assert not any(name.startswith(("obs.l", "geo.point")) for name in shapes)


def test_weights_check_names_and_shapes(small_config):
    tensors = dict(init_weights(small_config).tensors)
    tensors.pop("head.rot.b")
    with pytest.raises(DataError, match="head.rot.b"):
        DenoiserWeights(small_config, tensors)
    tensors = dict(init_weights(small_config).tensors)
    tensors["head.rot.b"] = np.zeros(5)
    with pytest.raises(ShapeError, match="head.rot.b"):
        DenoiserWeights(small_config, tensors)
    tensors = dict(init_weights(small_config).tensors)
    tensors["extra"] = np.zeros(1)
    with pytest.raises(DataError, match="extra"):
        DenoiserWeights(small_config, tensors)


def test_init_is_seeded(small_config):
    assert init_weights(small_config, seed=3).equals(init_weights(small_config, seed=3))
    assert not init_weights(small_config, seed=3).equals(init_weights(small_config, seed=4))


# ========================== forward pass ==========================
def test_zero_heads_predict_zero_noise(small_config, conds, rng):
    denoiser = NeuralDenoiser(init_weights(small_config, zero_heads=True))
    out = denoiser.eval(rng.normal(size=115), 500, conds)
    assert out.shape == (115,)
    np.testing.assert_array_equal(out.data, np.zeros(115))


def test_point_order_does_not_matter(small_config, conds, rng):
    """The geometry encoder pools over points, so their order is irrelevant"""
    denoiser = NeuralDenoiser(init_weights(small_config, seed=1))
    x = rng.normal(size=115)
    shuffled = Conditions(conds.c_I, conds.c_G[rng.permutation(64)])
    np.testing.assert_allclose(denoiser.eval(x, 30, conds).data,
                               denoiser.eval(x, 30, shuffled).data, atol=1e-12)


def test_conditions_change_the_prediction(small_config, conds, rng):
    denoiser = NeuralDenoiser(init_weights(small_config, seed=1))
    x = rng.normal(size=115)
    other = Conditions(conds.c_I + 1.0, conds.c_G)
    assert not np.allclose(denoiser.eval(x, 30, conds).data, denoiser.eval(x, 30, other).data)


def test_single_and_batched_evaluation_agree(small_config, conds, rng):
    denoiser = NeuralDenoiser(init_weights(small_config, seed=2))
    x = rng.normal(size=(3, 115))
    t = [1, 400, 999]
    batched = denoiser.eval_batch(x, t, np.tile(conds.c_I, (3, 1)),
                                  np.tile(conds.c_G, (3, 1, 1)))
    for i in range(3):
        np.testing.assert_allclose(denoiser.eval(x[i], t[i], conds).data, batched[i],
                                   atol=1e-12)


def test_denoiser_gradient_wrt_latent(small_config, conds, rng):
    """Gradients through the whole network match finite differences"""
    denoiser = NeuralDenoiser(init_weights(small_config, seed=3))
    weights = tn.Tensor(rng.normal(size=115))
    err = check_gradient(lambda x: (denoiser.eval(x, 250, conds) * weights).sum(),
                         rng.normal(size=115))
    assert err < 1e-4


def test_condition_errors(small_config, rng):
    denoiser = NeuralDenoiser(init_weights(small_config))
    with pytest.raises(ShapeError):
        denoiser.conditions(np.zeros(51), np.zeros((64, 3)))
    with pytest.raises(ShapeError):
        Conditions(np.zeros(52), np.zeros((64, 2)))
    with pytest.raises(DataError):
        Conditions(np.full(52, np.nan), np.zeros((64, 3)))
    with pytest.raises(DataError):
        denoiser.eval(np.zeros(115), 10, None)
    with pytest.raises(ShapeError):
        denoiser.eval(np.zeros(114), 10, None)


# ========================== weight files ==========================
def test_weights_file_round_trip(tmp_path, small_config):
    """A saved bundle loads back bit for bit"""
    weights = init_weights(small_config, seed=9)
    path = str(tmp_path / "denoiser.shoi")
    save_weights(weights, path)
    assert load_weights(path).equals(weights)
    with open(path, "rb") as f:
        assert f.read(4) == MAGIC


def test_architecture_mismatch_names_the_tensor(tmp_path, small_config):
    path = str(tmp_path / "denoiser.shoi")
    save_weights(init_weights(small_config), path)
    wider = DenoiserConfig(**{**small_config.to_dict(), "width": 16, "heads": 2})
    with pytest.raises(WeightsFormatError, match="embed.joint.w"):
        load_weights(path, wider)
    no_obs = DenoiserConfig(**{**small_config.to_dict(), "use_obs": False})
    with pytest.raises(WeightsFormatError, match="obs.null"):
        load_weights(path, no_obs)


def test_truncated_weights_file(tmp_path, small_config):
    path = tmp_path / "denoiser.shoi"
    save_weights(init_weights(small_config), str(path))
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(WeightsFormatError, match="truncated"):
        load_weights(str(path))


def test_trailing_bytes_and_bad_magic(tmp_path, small_config):
    path = tmp_path / "denoiser.shoi"
    save_weights(init_weights(small_config), str(path))
    content = path.read_bytes()
    path.write_bytes(content + b"\0")
    with pytest.raises(WeightsFormatError, match="trailing"):
        load_weights(str(path))
    path.write_bytes(b"NOPE" + content[4:])
    with pytest.raises(WeightsFormatError, match="magic"):
        load_weights(str(path))
    with pytest.raises(WeightsFormatError):
        load_weights(str(tmp_path / "missing.shoi"))


def test_architecture_hash_must_match_header(tmp_path, small_config):
    weights = init_weights(small_config)
    path = str(tmp_path / "denoiser.shoi")
    write_tensor_file(path, {"config": small_config.to_dict(), "kind": "weights"},
                      weights.tensors, bytes(32))
    with pytest.raises(WeightsFormatError, match="architecture hash"):
        ReadWeights(path).read()


# ========================== training ==========================
def test_adam_first_step_moves_by_learning_rate():
    """The first bias-corrected step is lr * g / (|g| + eps)"""
    tensors = {"w": np.array([1.0, -2.0, 0.5])}
    grads = {"w": np.array([0.3, -4.0, 0.0])}
    new, state = adam_update(tensors, grads, AdamState(), lr=0.1)
    np.testing.assert_allclose(new["w"], [0.9, -1.9, 0.5], atol=1e-7)
    assert state.step == 1
    np.testing.assert_array_equal(tensors["w"], [1.0, -2.0, 0.5])


def test_train_step_needs_noise(small_config, training_set, sched):
    with pytest.raises(ConfigError):
        train_step(init_weights(small_config), training_set, sched, AdamState(), 1e-3)


def test_train_step_reduces_loss_on_a_fixed_draw(small_config, training_set, sched):
    """Repeated steps on one (t, eps) draw fit it better"""
    t, eps = noise_batch(len(training_set), 115, sched, np.random.default_rng(0))
    weights, state = init_weights(small_config), AdamState()
    losses = []
    for _ in range(5):
        weights, state, loss = train_step(weights, training_set, sched, state, 1e-2, t=t,
                                          eps=eps)
        losses.append(loss)
    assert losses[-1] < losses[0]


def test_divergence_is_reported(small_config, sched):
    data = TrainingSet(np.full((2, 115), 1e300), np.zeros((2, 52)), np.zeros((2, 64, 3)))
    with pytest.raises(NonFiniteError, match="training step 1"):
        train_step(init_weights(small_config), data, sched, AdamState(), 1e-3,
                   np.random.default_rng(0))


def test_held_out_mse_of_zero_heads(small_config, training_set, sched):
    """A zero predictor scores the mean squared noise of the fixed draw"""
    weights = init_weights(small_config, zero_heads=True)
    _, eps = noise_batch(len(training_set), 115, sched, np.random.default_rng(7))
    assert held_out_mse(weights, training_set, sched, seed=7) == pytest.approx(
        np.mean(eps ** 2), rel=1e-12)


def test_training_set_validation():
    with pytest.raises(DataError):
        TrainingSet(np.zeros((0, 115)), np.zeros((0, 52)), np.zeros((0, 64, 3)))
    with pytest.raises(DataError):
        TrainingSet(np.zeros((2, 115)), np.zeros((3, 52)), np.zeros((2, 64, 3)))


def test_trainer_is_deterministic(tmp_path, small_config, training_set, sched):
    """Same seed, same data, same weights"""
    runs = []
    for name in ("a", "b"):
        trainer = Trainer(small_config, sched, epochs=2, batch_size=4, lr=1e-3, seed=1,
                          checkpoint_dir=str(tmp_path / name))
        runs.append((trainer.fit(training_set), trainer.history))
    assert runs[0][0].equals(runs[1][0])
    assert runs[0][1] == runs[1][1]
    assert len(runs[0][1]) == 4


def test_resume_matches_uninterrupted_run(tmp_path, small_config, training_set, sched):
    """Stopping after 3 steps and resuming gives the 6-step result exactly"""
    full = Trainer(small_config, sched, epochs=3, batch_size=4, lr=1e-3, seed=2,
                   checkpoint_dir=str(tmp_path / "full"), checkpoint_every=1)
    expected = full.fit(training_set)

    first = Trainer(small_config, sched, epochs=3, batch_size=4, lr=1e-3, seed=2,
                    checkpoint_dir=str(tmp_path / "split"), checkpoint_every=1)
    first.fit(training_set, max_steps=3)
    _, state, header = load_checkpoint(str(tmp_path / "split" / CHECKPOINT_NAME))
    assert state.step == 3
    assert header["seed"] == 2

    second = Trainer(small_config, sched, epochs=3, batch_size=4, lr=1e-3, seed=2,
                     checkpoint_dir=str(tmp_path / "split"), checkpoint_every=1)
    resumed = second.fit(training_set)
    assert resumed.equals(expected)
    assert second.history == full.history[3:]


def test_resume_rejects_another_architecture(tmp_path, small_config, training_set, sched):
    Trainer(small_config, sched, epochs=1, batch_size=8,
            checkpoint_dir=str(tmp_path)).fit(training_set)
    other = DenoiserConfig(**{**small_config.to_dict(), "layers": 2})
    with pytest.raises(ConfigError):
        Trainer(other, sched, epochs=1, batch_size=8,
                checkpoint_dir=str(tmp_path)).fit(training_set)


def test_trainer_parameter_validation(small_config, sched):
    with pytest.raises(ConfigError):
        Trainer(small_config, sched, epochs=0)
    with pytest.raises(ConfigError):
        Trainer(small_config, sched, lr=0.0)


@pytest.mark.slow
def test_training_lowers_held_out_error(small_config, training_set, sched):
    """A few hundred steps on a tight cluster beat the untrained network"""
    config = DenoiserConfig(**{**small_config.to_dict(), "width": 16})
    initial = init_weights(config, seed=0)
    trainer = Trainer(config, sched, epochs=300, batch_size=8, lr=1e-3, seed=0)
    trained = trainer.fit(training_set, initial)
    assert held_out_mse(trained, training_set, sched, seed=99) < \
        0.9 * held_out_mse(initial, training_set, sched, seed=99)
