import math

import numpy as np
import pytest

from frechet_quotient import noise as nz
from frechet_quotient.noise import FiniteMixture, IsotropicGaussian, SampleStream, UniformBall


def test_mixture_draws_are_reproducible():
    mix = FiniteMixture([[1, -1], [-1, 1]], [0.5, 0.5])
    a = nz.sample_noise(mix, SampleStream(7), 4)
    b = nz.sample_noise(mix, SampleStream(7), 4)
    assert np.array_equal(a, b)
    assert set(map(tuple, a)) <= {(1.0, -1.0), (-1.0, 1.0)}


def test_gaussian_energy():
    e = nz.draw_noise(IsotropicGaussian(1.0, 2), SampleStream(0), 10**6)
    assert ((e * e).sum(1).mean()) == pytest.approx(2.0, rel=0.01)


def test_gaussian_mean_within_four_stderr():
    e = nz.draw_noise(IsotropicGaussian(2.0, 3), SampleStream(1), 10**6)
    se = e.std(axis=0, ddof=1) / math.sqrt(len(e))
    assert np.all(np.abs(e.mean(axis=0)) < 4 * se)


@pytest.mark.parametrize("dim", [1, 2, 10, 50])
def test_ball_support_and_moments(dim):
    noise = UniformBall(0.7, dim)
    e = nz.draw_noise(noise, SampleStream(dim), 200_000)
    r = np.linalg.norm(e, axis=1)
    assert r.max() <= 0.7 * (1 + 1e-15)
    assert (r**2).mean() == pytest.approx(nz.second_moment(noise), rel=0.01)
    assert r.mean() == pytest.approx(nz.expected_norm(noise), rel=0.01)


def test_chi_mean_and_expected_norm():
    assert nz.chi_mean(2) == pytest.approx(math.sqrt(math.pi / 2))
    assert nz.chi_mean(1) == pytest.approx(math.sqrt(2 / math.pi))
    e = nz.draw_noise(IsotropicGaussian(1.5, 10), SampleStream(3), 400_000)
    assert np.linalg.norm(e, axis=1).mean() == pytest.approx(nz.expected_norm(IsotropicGaussian(1.5, 10)), rel=2e-3)


def test_normalize_examples():
    spec, sigma = nz.normalize_to_unit_energy(IsotropicGaussian(0.5, 8))
    assert sigma == pytest.approx(0.5 * math.sqrt(8))
    assert nz.second_moment(spec) == pytest.approx(1.0)
    mix = FiniteMixture([[1, -1], [-1, 1]], [0.5, 0.5])
    spec, sigma = nz.normalize_to_unit_energy(mix)
    assert sigma == pytest.approx(math.sqrt(2))
    np.testing.assert_allclose(spec.points, mix.points / math.sqrt(2))
    spec, sigma = nz.normalize_to_unit_energy(FiniteMixture([[1.0], [-1.0]], [0.5, 0.5]))
    assert sigma == 1.0


@pytest.mark.parametrize("noise", [IsotropicGaussian(0.3, 4), UniformBall(2.0, 3),
                                   FiniteMixture([[2, 0], [-1, 1], [-1, -1]], [1 / 3, 1 / 3, 1 / 3])])
def test_normalize_then_rescale_roundtrip(noise):
    spec, sigma = nz.normalize_to_unit_energy(noise)
    assert nz.second_moment(nz.scaled(spec, sigma)) == pytest.approx(nz.second_moment(noise), rel=1e-12)


def test_noise_validation():
    with pytest.raises(nz.NoiseError):
        FiniteMixture([[1, 0], [0, 1]], [0.5, 0.5])  # mean is not zero
    with pytest.raises(nz.NoiseError):
        FiniteMixture([[1.0], [-1.0]], [0.6, 0.6])
    with pytest.raises(nz.NoiseError):
        IsotropicGaussian(0.0, 2)
    with pytest.raises(nz.NoiseError):
        UniformBall(1.0, 0)
    with pytest.raises(nz.NoiseError):
        nz.normalize_to_unit_energy(nz.point_mass(3))


def test_streams_are_addressed_by_lane_and_chunk():
    s = SampleStream(11)
    g = IsotropicGaussian(1.0, 2)
    base = nz.sample_noise(g, s, 5)
    assert not np.array_equal(base, nz.sample_noise(g, s.chunk(1), 5))
    assert not np.array_equal(base, nz.sample_noise(g, s.with_lane(nz.LANE_BOOT), 5))
    assert not np.array_equal(base, nz.sample_noise(g, SampleStream(12), 5))


def test_chunking_is_independent_of_workers():
    g = UniformBall(1.0, 3)
    one = nz.draw_noise(g, SampleStream(4), 10_000, chunk_size=777, workers=1)
    four = nz.draw_noise(g, SampleStream(4), 10_000, chunk_size=777, workers=4)
    assert np.array_equal(one, four)
    assert nz.chunk_layout(10, 4) == [4, 4, 2]
    with pytest.raises(nz.NoiseError):
        nz.chunk_layout(0)
