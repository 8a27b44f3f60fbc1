import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.signal import chirp

from src.dsp import (RECIPES, Signal, Spectrogram, class_average_spectrum, euclidean_norm,
                     log_power, parse_recipe, power_spectrum, preprocess, representation_shape,
                     rescale, stft, trim_full_size)
from src.errors import ConfigurationError, EngineStateError, NumericError

TIME = np.arange(6000) / 100.0


def naive_power(values):
    n = values.size
    k = np.arange(n)
    basis = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return np.abs(basis @ values.astype(np.float64)) ** 2


# --- power spectrum ---

@settings(max_examples=100, deadline=None)
@given(st.integers(16, 512).flatmap(
    lambda n: arrays(np.float64, n, elements=st.floats(-10, 10))))
def test_power_spectrum_matches_direct_dft(values):
    power = power_spectrum(values, dtype=np.float64)
    expected = naive_power(values)
    assert power.shape == values.shape
    assert power.dtype == np.float64
    np.testing.assert_allclose(power, expected, rtol=1e-6, atol=1e-9 * max(expected.max(), 1.0))


def test_power_spectrum_defaults_to_single_precision(rng):
    assert power_spectrum(rng.normal(size=64)).dtype == np.float32


def test_constant_signal_has_only_dc():
    power = power_spectrum(Signal(np.full(6000, 2.0)))
    assert power[0] == pytest.approx((2.0 * 6000) ** 2, rel=1e-6)
    assert power[1:].max() < 1e-6 * power[0]


def test_one_hertz_sinusoid_peaks_at_mirrored_bins():
    power = power_spectrum(Signal(np.sin(2 * np.pi * TIME)))
    assert set(np.argsort(power)[-2:].tolist()) == {60, 5940}
    others = np.delete(power, [60, 5940])
    assert others.max() < 1e-6 * power[60]


def test_parseval(rng):
    values = rng.normal(size=6000).astype(np.float32)
    power = power_spectrum(values)
    assert power.sum() == pytest.approx(6000 * np.sum(values.astype(np.float64) ** 2), rel=1e-4)


# --- STFT ---

def test_stft_geometry(rng):
    spec = stft(Signal(rng.normal(size=6000)))
    assert spec.shape == (551, 251)
    assert spec.bin_freqs[-1] == pytest.approx(50.0)
    assert trim_full_size(spec).shape == (550, 250)


def test_stft_shift_by_one_hop_shifts_one_frame(rng):
    values = rng.normal(size=6010).astype(np.float32)
    base = stft(values[:6000])
    shifted = stft(values[10:6010])
    assert shifted.shape == base.shape
    np.testing.assert_allclose(shifted.power[:-1], base.power[1:], rtol=1e-6, atol=1e-6)


def test_stft_of_constant_keeps_power_in_the_lowest_bins():
    spec = stft(Signal(np.full(6000, 1.5)))
    # the Hann taper spreads DC into the first neighbouring bin only
    assert (spec.power[:, 2:] < 1e-9 * spec.power[:, :1]).all()


def test_chirp_peak_frequency_rises():
    values = chirp(TIME, f0=1.0, t1=TIME[-1], f1=10.0, method="linear")
    peaks = stft(Signal(values)).power.argmax(axis=1)
    assert (np.diff(peaks) >= -1).all()
    assert (np.maximum.accumulate(peaks) - peaks <= 1).all()
    assert peaks[-1] > peaks[0]


def test_window_longer_than_signal_is_rejected():
    with pytest.raises(ConfigurationError):
        stft(Signal(np.zeros(400)))


# --- log power and rescaling ---

def _spectrogram(power):
    power = np.asarray(power, dtype=np.float32)
    frames, bins = power.shape
    return Spectrogram(power, np.arange(frames) * 0.1 + 2.5,
                       np.linspace(0.0, 50.0, bins))


def test_log_power_values():
    logged = log_power(_spectrogram([[1.0, 0.0], [np.e, 1e-10]]))
    np.testing.assert_allclose(logged.power, [[0.0, np.log(1e-10)], [1.0, np.log(2e-10)]],
                               rtol=1e-5, atol=1e-6)
    assert logged.power_scale == "log"


def test_log_power_twice_is_a_state_error():
    with pytest.raises(EngineStateError):
        log_power(log_power(_spectrogram(np.ones((3, 3)))))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(0, 1e6), unique=True))
def test_log_power_is_monotone(power):
    order = np.argsort(power)
    logged = log_power(_spectrogram(power[order][None, :])).power[0]
    assert (np.diff(logged) >= 0).all()


@pytest.mark.parametrize("freq_mode", ["linear", "log"])
def test_rescaling_a_constant_image(freq_mode):
    resized = rescale(_spectrogram(np.full((551, 251), 3.0)), (48, 48), freq_mode)
    assert resized.shape == (48, 48)
    np.testing.assert_allclose(resized.power, 3.0, rtol=1e-6)


def test_log_frequency_axis_favours_low_frequencies():
    resized = rescale(_spectrogram(np.ones((551, 251))), (48, 48), "log", f_min=0.2, f_max=10.0)
    assert (resized.bin_freqs < 1.58).sum() > 24
    ratios = resized.bin_freqs[1:] / resized.bin_freqs[:-1]
    np.testing.assert_allclose(ratios, ratios[0])


def test_linear_frequency_axis_is_uniform():
    resized = rescale(_spectrogram(np.ones((551, 251))), (48, 48), "linear")
    np.testing.assert_allclose(np.diff(resized.bin_freqs), 50.0 / 47)


def test_rescale_cannot_upsample():
    with pytest.raises(ConfigurationError):
        rescale(_spectrogram(np.ones((40, 251))), (48, 48))
    with pytest.raises(ConfigurationError):
        rescale(_spectrogram(np.ones((551, 251))), (48, 48), "cubic")


# --- recipes ---

@pytest.mark.parametrize("name", list(RECIPES))
def test_every_recipe_produces_its_declared_shape(name, rng):
    representation = preprocess(Signal(rng.normal(size=6000), "Acc_x"), name)
    expected = {"temporal": (1, 6000), "fft": (1, 6000),
                "spectrogram-full-linear": (1, 550, 250),
                "spectrogram-full-log": (1, 550, 250)}.get(name, (1, 48, 48))
    assert representation.tensor.shape == expected
    assert representation_shape(name) == expected
    assert representation.tensor.dtype == np.float32
    assert representation.provenance["recipe"] == name


def test_table_form_recipe_names():
    assert parse_recipe("spectrogram / log-freq / log / 48,48") is RECIPES["spectrogram-logfreq-log"]
    assert parse_recipe("Spectrogram / lin-freq / linear") is RECIPES["spectrogram-linfreq-linear"]
    assert parse_recipe("spectrogram / none / log / 550,250") is RECIPES["spectrogram-full-log"]
    assert parse_recipe("FFT") is RECIPES["fft"]


@pytest.mark.parametrize("name", ["wavelet", "spectrogram / log-freq / cubic", "spectrogram-logfreq"])
def test_unknown_recipe(name):
    with pytest.raises(ConfigurationError):
        parse_recipe(name)


# --- signals ---

def test_euclidean_norm():
    norm = euclidean_norm([np.array([3.0, 0.0]), np.array([4.0, 0.0]), np.array([0.0, 0.0])])
    np.testing.assert_allclose(norm.values, [5.0, 0.0])
    with pytest.raises(ConfigurationError):
        euclidean_norm([np.zeros(3), np.zeros(4)])


def test_signal_validation():
    with pytest.raises(ConfigurationError):
        Signal(np.array([]))
    with pytest.raises(NumericError):
        Signal(np.array([1.0, np.inf]))
    assert len(Signal(np.ones(10))) == 10


def test_class_average_spectrum_peaks():
    signals = [np.sin(2 * np.pi * 2.0 * TIME) + 5.0, np.sin(2 * np.pi * 3.0 * TIME)]
    freqs, spectra = class_average_spectrum(signals, [2, 3])
    assert freqs[np.argmax(spectra[2])] == pytest.approx(2.0)
    assert freqs[np.argmax(spectra[3])] == pytest.approx(3.0)
