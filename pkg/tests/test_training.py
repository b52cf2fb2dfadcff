import numpy as np
import pytest

from transdeno.pipeline import TransDenoConfig, init_params
from transdeno.specklesim import SceneSpec, apply_speckle, gen_clean
from transdeno.training import DivergenceError, TrainConfig, dataset_loss, train_denoiser

CFG = TransDenoConfig(H=8, W=8, C=2, reduction=2, group_counts=(2, 4))


def pairs(n, seed=0):
    out = []
    for i in range(n):
        clean = gen_clean(SceneSpec(H=8, W=8, C=2, n_targets=1, background_level=0.2, seed=seed + i))
        out.append((apply_speckle(clean, 1, 1000 + seed + i), clean))
    return out


def test_zero_learning_rate_changes_nothing():
    p = init_params(CFG, 0)
    trained, hist = train_denoiser(TrainConfig(learning_rate=0.0, steps=5, batch=2), pairs(4), p)
    for k, v in p.named_arrays().items():
        assert trained.named_arrays()[k].tobytes() == v.tobytes()
    assert len(hist) == 6 and len(set(hist)) == 1


def test_input_params_not_mutated():
    p = init_params(CFG, 0)
    before = {k: v.copy() for k, v in p.named_arrays().items()}
    train_denoiser(TrainConfig(steps=3, batch=2), pairs(4), p)
    for k, v in p.named_arrays().items():
        np.testing.assert_array_equal(v, before[k])


def test_seeded_runs_are_bit_identical():
    data = pairs(6)
    cfg = TrainConfig(steps=20, batch=3, seed=11)
    p = init_params(CFG, 4)
    _, h1 = train_denoiser(cfg, data, p)
    _, h2 = train_denoiser(cfg, data, p)
    assert np.array(h1).tobytes() == np.array(h2).tobytes()
    _, h3 = train_denoiser(TrainConfig(steps=20, batch=3, seed=12), data, p)
    assert h3 != h1


def test_identity_data_loss_decreases():
    data = [(c, c) for _, c in pairs(6)]
    _, hist = train_denoiser(TrainConfig(steps=100, batch=3), data, init_params(CFG, 0))
    assert hist[-1] < hist[0]


def test_denoising_loss_decreases():
    data = pairs(8)
    p = init_params(CFG, 1)
    trained, hist = train_denoiser(TrainConfig(steps=150, batch=4), data, p)
    assert hist[-1] < 0.9 * hist[0]
    assert dataset_loss(data, trained) == pytest.approx(hist[-1])


def test_divergence_reports_step():
    data = pairs(2)
    with pytest.raises(DivergenceError) as err:
        train_denoiser(TrainConfig(learning_rate=1e30, steps=50, batch=2), data, init_params(CFG, 0))
    assert 0 < err.value.step <= 50


@pytest.mark.parametrize("kw", [dict(learning_rate=-1.0), dict(steps=0), dict(batch=0), dict(loss="l1")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_mismatched_pairs_rejected():
    data = pairs(2)
    data.append((np.zeros((2, 4, 4)), np.zeros((2, 4, 4))))
    with pytest.raises(ValueError):
        train_denoiser(TrainConfig(steps=1), data, init_params(CFG, 0))
