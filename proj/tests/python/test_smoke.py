import numpy as np
import pytest

import cgmmsep


def small_config():
    cfg = cgmmsep.Config()
    cfg.set("simulate.duration_s=0.5")
    cfg.set("em.iterations=3")
    return cfg


def test_config_round_trip_and_overrides():
    cfg = small_config()
    cfg.set("simulate.snr_db=none")
    back = cgmmsep.Config.parse(cfg.serialize())
    assert back == cfg
    assert back.mics == 4
    assert back.sources == 2
    assert back.directions == 72
    assert back.sample_rate == 8000


def test_config_errors_carry_kind_and_exit_code():
    with pytest.raises(cgmmsep.Error) as info:
        cgmmsep.Config.parse("[em]\nsorces = 2\n", "bad.toml")
    assert info.value.kind == "invalid config"
    assert info.value.exit_code == 1
    assert "bad.toml:2" in str(info.value)
    with pytest.raises(cgmmsep.Error) as info:
        cgmmsep.Config.load("/nonexistent/config.toml")
    assert info.value.exit_code == 3


def test_simulate_is_seeded():
    cfg = small_config()
    a = cgmmsep.simulate(cfg, 7)
    b = cgmmsep.simulate(cfg, 7)
    assert a["mixture"].shape == (4, 4000)
    assert a["references"].shape == (2, 4000)
    np.testing.assert_array_equal(a["mixture"], b["mixture"])
    masks = a["oracle_masks"]
    np.testing.assert_allclose(masks.sum(axis=-1), 1.0, atol=1e-12)


def test_separate_returns_normalised_posteriors():
    cfg = small_config()
    scene = cgmmsep.simulate(cfg, 3)
    out = cgmmsep.separate(cfg, scene["mixture"])
    assert out["sources"].shape == (2, 4000)
    np.testing.assert_allclose(out["masks"].sum(axis=-1), 1.0, atol=1e-9)
    np.testing.assert_allclose(out["doa"].sum(axis=-1), 1.0, atol=1e-9)
    assert len(out["elbo_trace"]) == 3
    objective = np.asarray(out["objective_trace"])
    assert np.all(np.diff(objective) >= -1e-6 * np.abs(objective[:-1]))
    with pytest.raises(cgmmsep.Error) as info:
        cgmmsep.separate(cfg, scene["mixture"][:3])
    assert info.value.exit_code == 1


def test_stft_round_trip():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3000))
    spec = cgmmsep.stft(x, 8000)
    assert spec.shape[1:] == (257, 2)
    assert spec.shape[0] == 1 + (3000 - 512) // 128
    y = cgmmsep.istft(spec, 8000, length=3000)
    assert y.shape == (2, 3000)
    # Samples covered by a full window overlap reconstruct exactly.
    np.testing.assert_allclose(y[:, 512:2400], x[:, 512:2400], atol=1e-9)


def test_si_sdr_and_alignment():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal(2000), rng.standard_normal(2000)
    assert cgmmsep.si_sdr(3.0 * a, a) == pytest.approx(cgmmsep.si_sdr(a, a))
    noisy = a + 0.1 * b
    assert cgmmsep.si_sdr(noisy, a) == pytest.approx(20.0, abs=1.0)
    res = cgmmsep.permutation_align(np.stack([b, a]), np.stack([a, b]))
    assert list(res["permutation"]) == [1, 0]


def test_gradcheck_passes():
    report = cgmmsep.gradcheck()
    assert report["passed"]
    assert report["reference"]["max_rel_error"] <= 1e-4
