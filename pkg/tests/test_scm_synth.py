import numpy as np
import pytest

from causal_seq2seq.scm_synth import (BLOCKS, OBSERVATIONS, SCMDataset, align_block, check_variety,
                                      evaluate_identifiability, generate_scm_dataset, invert_observations,
                                      leaky_softplus, leaky_softplus_inverse, sample_scm, variety_matrix)


def test_sample_scm_deterministic():
    a, b = sample_scm(k_u=5, seed=3), sample_scm(k_u=5, seed=3)
    for blk in BLOCKS:
        assert np.array_equal(a.means[blk], b.means[blk]) and np.array_equal(a.variances[blk], b.variances[blk])
    for o in OBSERVATIONS:
        assert np.array_equal(a.maps[o].A, b.maps[o].A)


def test_sample_scm_validation():
    with pytest.raises(ValueError):
        sample_scm(k_u=0)
    with pytest.raises(ValueError):
        sample_scm(dims={"cc": 0, "sc": 1, "ds": 1, "ss": 1})
    with pytest.raises(ValueError):
        sample_scm(family="poisson")


def test_mixing_maps_well_conditioned_and_invertible():
    p = sample_scm(k_u=5, seed=0)
    rng = np.random.default_rng(0)
    for o, parents in OBSERVATIONS.items():
        f = p.maps[o]
        assert f.condition_number < 20
        lat = rng.normal(scale=2.0, size=(1000, p.obs_dim(o)))
        assert np.abs(f.inverse(f(lat)) - lat).max() < 1e-8


def test_leaky_softplus_inverse_extremes():
    z = np.array([-40.0, -5.0, 0.0, 5.0, 40.0])
    assert np.abs(leaky_softplus_inverse(leaky_softplus(z, 0.2), 0.2) - z).max() < 1e-10


def test_natural_parameters_encode_mean_and_variance():
    p = sample_scm(k_u=3, seed=1)
    lam = p.natural_parameters("cc")
    var = -0.5 / lam[..., 1]
    assert np.allclose(var, p.variances["cc"]) and np.allclose(lam[..., 0] * var, p.means["cc"])


def test_variety_identity_columns_pass():
    v = check_variety(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    assert v.passed and v.rank == 2 and v.n_columns == 2


def test_variety_equal_rows_fail():
    v = check_variety(np.ones((3, 2)))
    assert not v.passed and v.rank == 0


def test_variety_collinear_fail():
    v = check_variety(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))
    assert not v.passed and v.rank == 1


def test_variety_single_confounder_fails():
    v = check_variety(sample_scm(k_u=1, seed=0))
    assert not v.passed and v.n_columns == 0


def test_variety_five_confounders_pass():
    v = check_variety(sample_scm(k_u=5, seed=0))
    assert v.passed and v.rank == 4
    assert all(b["passed"] for b in v.per_block.values())


@pytest.mark.parametrize("seed", range(4))
def test_variety_base_invariance(seed):
    rng = np.random.default_rng(seed)
    tables = [rng.normal(size=(4, 6)), np.vstack([rng.normal(size=(3, 6)), np.zeros((1, 6))])]
    tables.append(np.array([[0, 0], [1, 1], [2, 2], [3, 3.0]]))
    for t in tables:
        verdicts = {check_variety(t, base=b).passed for b in range(t.shape[0])}
        assert len(verdicts) == 1


def test_variety_matrix_columns():
    L = variety_matrix(np.array([[1.0, 2.0], [3.0, 5.0], [0.0, 0.0]]))
    assert np.array_equal(L, np.array([[2.0, -1.0], [3.0, -2.0]]))


def test_noiseless_generation_matches_mixing_and_inverts():
    p = sample_scm(k_u=3, seed=2, noise=0.0)
    d = generate_scm_dataset(p, 200, seed=0)
    x = p.maps["x"](np.concatenate([d.latents["sc"], d.latents["cc"], d.latents["ds"]], axis=1))
    assert np.array_equal(d.observations["x"], x)
    for obs, rec in invert_observations(p, d).items():
        for blk, v in rec.items():
            assert np.abs(v - d.latents[blk]).max() < 1e-8


def test_generation_deterministic_and_sized():
    p = sample_scm(k_u=3, seed=2)
    a, b = generate_scm_dataset(p, 50, 7), generate_scm_dataset(p, 50, 7)
    assert len(a) == 150 and np.array_equal(a.observation_matrix(), b.observation_matrix())
    assert a.observation_matrix().shape == (150, 12 + 8 + 4 + 4)


def test_sample_means_match_family_moments():
    p = sample_scm(k_u=2, seed=5)
    d = generate_scm_dataset(p, 10000, 1)
    for u in range(2):
        x = d.latents["cc"][d.u == u]
        se = np.sqrt(p.variances["cc"][u] / x.shape[0])
        assert (np.abs(x.mean(axis=0) - p.means["cc"][u]) < 3 * se).all()


def test_dataset_save_load(tmp_path):
    p = sample_scm(k_u=2, seed=0)
    d = generate_scm_dataset(p, 10, 0)
    d.save(tmp_path / "ds")
    r = SCMDataset.load(tmp_path / "ds")
    assert np.array_equal(r.u, d.u) and np.array_equal(r.latent_matrix(), d.latent_matrix())
    assert np.array_equal(r.observation_matrix(), d.observation_matrix())


def test_mcc_permutation_and_shift():
    rng = np.random.default_rng(0)
    true = {b: rng.normal(size=(500, 4)) for b in BLOCKS}
    learned = {b: v[:, [2, 0, 3, 1]] + 5.0 for b, v in true.items()}
    r = evaluate_identifiability(learned, true)
    assert r.mcc == pytest.approx(1.0)
    a = r.blocks["cc"]
    assert (a.A.sum(0) == 1).all() and (a.A.sum(1) == 1).all()
    assert np.allclose(a.v, -5.0)


def test_mcc_swapped_pair():
    rng = np.random.default_rng(1)
    t = rng.normal(size=(300, 3))
    assert align_block(t, t[:, [1, 0, 2]]).mcc == pytest.approx(1.0)


def test_mcc_independent_noise_low():
    rng = np.random.default_rng(2)
    true = {b: rng.normal(size=(10000, 4)) for b in BLOCKS}
    learned = {b: rng.normal(size=(10000, 4)) for b in BLOCKS}
    assert evaluate_identifiability(learned, true).mcc < 0.2


def test_mcc_zero_variance_dimension():
    rng = np.random.default_rng(3)
    t = rng.normal(size=(100, 2))
    learned = t.copy()
    learned[:, 1] = 4.0
    a = align_block(t, learned)
    assert a.correlations[1, 1] == 0.0 and a.mcc == pytest.approx(0.5)


def test_mcc_shape_mismatch():
    with pytest.raises(ValueError):
        align_block(np.zeros((5, 2)), np.zeros((5, 3)))
    with pytest.raises(ValueError):
        evaluate_identifiability({"cc": np.zeros((4, 2))}, {"cc": np.zeros((5, 2))})
