import json

import pytest

from wpnode.presets import (
    METHODS,
    NOISE_PERCENTS,
    SYSTEMS,
    ExperimentPreset,
    preset,
    preset_names,
)


def test_l63_noise5_wp():
    p = preset("l63-noise5-wp")
    t = p.train
    assert (t.subdomain_size, t.n_subdomains, t.p, t.lam, t.rollout_T) == (60, 5000, 16, 0.5, 2)
    assert (t.batch_size, t.lr_init, t.max_epochs) == (1024, 0.02, 20_000)
    assert (p.evaluation.eps, p.evaluation.lyapunov_exponent, p.evaluation.n_starts) == (0.3, 0.91, 30)
    assert p.n_samples == 10_000 and p.duration == pytest.approx(100.0)
    assert p.noise == 0.05


def test_ks_noise20_wp_uses_five_rollouts():
    p = preset("ks-noise20-wp")
    assert p.train.rollout_T == 5 and p.train.batch_size == 2048
    assert p.evaluation.kl_duration == 600.0


def test_l96_noise0_wp():
    p = preset("l96-noise0-wp")
    assert (p.train.rollout_T, p.train.subdomain_size) == (1, 80)
    assert (p.evaluation.eps, p.evaluation.lyapunov_exponent) == (0.5, 1.68)
    assert p.system.dim == 40 and p.n_samples == 100_000


@pytest.mark.parametrize(
    "system,rollouts",
    [("l63", [1, 2, 2, 1, 2]), ("l96", [1, 1, 2, 2, 1]), ("ks", [1, 1, 1, 1, 5])],
)
def test_rollout_table(system, rollouts):
    assert [preset(f"{system}-noise{n}-wp").train.rollout_T for n in NOISE_PERCENTS] == rollouts


def test_strong_baseline_settings():
    for system, epochs in (("l63", 150), ("l96", 200), ("ks", 300)):
        t = preset(f"{system}-noise0-strong").train
        assert (t.loss_mode, t.rollout_T, t.max_epochs) == ("strong", 25, epochs)


def test_every_preset_constructs_and_round_trips():
    names = preset_names()
    assert len(names) == len(SYSTEMS) * len(NOISE_PERCENTS) * len(METHODS)
    for name in names:
        p = preset(name)
        assert p.name == name
        back = ExperimentPreset.from_json(p.to_json())
        assert back == p
        assert json.loads(back.to_json()) == json.loads(p.to_json())


def test_unknown_preset_lists_available():
    with pytest.raises(LookupError) as info:
        preset("l63-noise7-wp")
    assert "l63-noise5-wp" in str(info.value)
    with pytest.raises(LookupError):
        preset("l63-noise05-wp")


def test_scaled_keeps_half_ratio(tmp_path):
    p = preset("l96-noise5-wp").scaled(n_samples=20_000, max_epochs=50)
    assert p.train.n_subdomains == 10_000 and p.train.max_epochs == 50
    p.save(tmp_path / "p.json")
    assert ExperimentPreset.load(tmp_path / "p.json") == p
