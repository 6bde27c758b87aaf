"""Speaker perturbation and additive noise / reverberation distortions.

Every function here is pure given an explicit seed or generator, so training
views can be produced in parallel without changing their values.
"""

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

from ._validation import check_random_state


@dataclass(frozen=True)
class Waveform:
    """Mono audio stored as float64 samples."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("waveform must be mono (1-D)")
        if samples.size < 1:
            raise ValueError("waveform is empty")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    def power(self):
        return float(np.mean(self.samples ** 2))


@dataclass(frozen=True)
class SpeakerPerturbParams:
    """Ranges the pitch shift (semitones) and formant warp factor are drawn from.

    The warp is applied on top of the pitch shift: resampling moves the spectral
    envelope together with the pitch, and the warp then rescales the envelope
    by an extra factor while leaving the harmonics in place.
    """

    pitch_shift_range: tuple = (-4.0, 4.0)
    formant_warp_range: tuple = (0.85, 1.18)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.pitch_shift_range
        if lo > hi:
            raise ValueError(f"empty pitch_shift_range {self.pitch_shift_range}")
        lo, hi = self.formant_warp_range
        if lo > hi:
            raise ValueError(f"empty formant_warp_range {self.formant_warp_range}")
        if lo <= 0:
            raise ValueError("formant warp factors must be strictly positive")

    def sample(self, rng=None):
        """Draw ``(pitch_ratio, formant_warp)``; degenerate ranges are returned exactly."""
        rng = check_random_state(self.seed if rng is None else rng)
        semitones = _draw(rng, *self.pitch_shift_range)
        warp = _draw(rng, *self.formant_warp_range)
        return 2.0 ** (semitones / 12.0), warp


def _draw(rng, lo, hi):
    lo, hi = float(lo), float(hi)
    return lo if lo == hi else float(rng.uniform(lo, hi))


class NoiseKind(enum.Enum):
    """Colored noise families, valued by their PSD exponent (PSD ~ f**beta)."""

    WHITE = 0
    PINK = -1
    BROWN = -2
    BLUE = 1
    VIOLET = 2

    @property
    def beta(self):
        return float(self.value)

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls[str(name).upper()]
        except KeyError:
            choices = ", ".join(k.name.lower() for k in cls)
            raise ValueError(f"unknown noise kind {name!r}; choose from {choices}") from None


# ---------------------------------------------------------------------------
# speaker perturbation


def _resample(x, ratio):
    """Play ``x`` ``ratio`` times faster (linear interpolation)."""
    n_out = max(1, int(round(x.size / ratio)))
    t = np.arange(n_out) * ratio
    return np.interp(t, np.arange(x.size), x)


def time_stretch(x, n_out, frame=1024, tolerance=256):
    """WSOLA time-scale modification of ``x`` to exactly ``n_out`` samples.

    Grains are taken around the nominal analysis position and shifted by up
    to ``tolerance`` samples to best continue the previous output grain, which
    keeps periodic components phase-coherent without a phase vocoder.
    """
    x = np.asarray(x, dtype=np.float64)
    frame = int(min(frame, 2 ** int(np.log2(max(x.size, 4)))))
    frame -= frame % 2
    hop = frame // 2
    tolerance = min(tolerance, hop // 2)
    window = np.hanning(frame + 2)[1:-1]
    rate = x.size / max(n_out, 1)
    pad = frame + tolerance
    xp = np.concatenate([np.zeros(pad), x, np.zeros(2 * pad + frame)])

    n_frames = int(np.ceil(n_out / hop)) + 1
    out = np.zeros(n_frames * hop + frame)
    norm = np.zeros_like(out)
    prev = pad - 0  # analysis start of previous grain in padded coordinates
    for k in range(n_frames):
        nominal = pad + int(round(k * hop * rate)) - hop
        if k == 0:
            start = nominal
        else:
            # Natural continuation of the previous grain, one synthesis hop later.
            target = xp[prev + hop: prev + hop + frame]
            lo = max(0, nominal - tolerance)
            seg = xp[lo: nominal + tolerance + frame]
            corr = np.correlate(seg, target, mode="valid")
            start = lo + int(np.argmax(corr))
        grain = xp[start: start + frame]
        out[k * hop: k * hop + frame] += grain * window
        norm[k * hop: k * hop + frame] += window
        prev = start
    norm[norm < 1e-8] = 1.0
    out /= norm
    # Grain k is centered on nominal + hop, i.e. output index k*hop corresponds
    # to input index k*hop*rate - hop; drop the leading half grain.
    return out[hop: hop + n_out]


def _cepstral_envelope(log_mag, n_lifter):
    cep = np.fft.irfft(log_mag, axis=0)
    cep[n_lifter: cep.shape[0] - n_lifter + 1] = 0.0
    return np.fft.rfft(cep, axis=0).real


def warp_formants(x, rate, warp, n_fft=1024, n_lifter=30):
    """Scale the spectral envelope of ``x`` along frequency by ``warp``.

    The fine structure (harmonics) stays put; the cepstrally smoothed envelope
    is moved so a formant at f ends up at ``warp * f``.
    """
    n_fft = int(min(n_fft, 2 ** int(np.log2(max(x.size, 8)))))
    _, _, spec = sps.stft(x, fs=rate, nperseg=n_fft, noverlap=3 * n_fft // 4)
    mag = np.abs(spec)
    log_mag = np.log(mag + 1e-10)
    env = _cepstral_envelope(log_mag, min(n_lifter, n_fft // 4))
    bins = np.arange(mag.shape[0], dtype=np.float64)
    src = np.clip(bins / warp, 0, bins[-1])
    warped = np.stack([np.interp(src, bins, env[:, j]) for j in range(env.shape[1])], axis=1)
    spec = spec * np.exp(warped - env)
    _, y = sps.istft(spec, fs=rate, nperseg=n_fft, noverlap=3 * n_fft // 4)
    return _fit_length(y, x.size)


def _fit_length(y, n):
    if y.size >= n:
        return y[:n]
    return np.concatenate([y, np.zeros(n - y.size)])


def shift_pitch(x, ratio):
    """Multiply every frequency in ``x`` by ``ratio`` while keeping its length."""
    if ratio == 1.0:
        return x.copy()
    return time_stretch(_resample(x, ratio), x.size)


def perturb_speaker(w, params, rng=None):
    """Return ``w`` re-voiced with a random pitch ratio and formant warp.

    Parameters
    ----------
    w : Waveform
    params : SpeakerPerturbParams
        Ranges and seed. ``rng`` overrides the seed when given, which is how
        per-utterance streams are threaded through.

    The output keeps the sample rate and length of ``w``. When both sampled
    factors are 1 the samples are returned unchanged.
    """
    if not isinstance(w, Waveform):
        w = Waveform(np.asarray(w), 16000)
    ratio, warp = params.sample(rng)
    x = w.samples
    if ratio == 1.0 and warp == 1.0:
        return Waveform(x.copy(), w.sample_rate)
    y = shift_pitch(x, ratio)
    if warp != 1.0:
        y = warp_formants(y, w.sample_rate, warp)
    peak = np.max(np.abs(y))
    if peak > 1.0:
        y = y / peak
    return Waveform(y, w.sample_rate)


# ---------------------------------------------------------------------------
# noise and reverberation


def gen_colored_noise(kind, n, rate, seed=None):
    """Gaussian noise with PSD proportional to ``f**beta``, scaled to unit RMS."""
    kind = NoiseKind.parse(kind)
    n = int(n)
    if n < 256:
        raise ValueError(f"need at least 256 samples to shape a spectrum, got {n}")
    rng = check_random_state(seed)
    spectrum = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    freqs = np.fft.rfftfreq(n, d=1.0 / rate)
    gain = np.zeros_like(freqs)
    gain[1:] = freqs[1:] ** (kind.beta / 2.0)
    y = np.fft.irfft(spectrum * gain, n=n)
    y /= np.sqrt(np.mean(y ** 2))
    return Waveform(y, rate)


def fit_noise_to_length(noise, n, rng=None):
    """Tile a short noise or cut a random window out of a long one."""
    x = noise.samples
    if x.size == n:
        return x.copy()
    if x.size < n:
        reps = int(np.ceil(n / x.size))
        return np.tile(x, reps)[:n]
    rng = check_random_state(rng)
    offset = int(rng.integers(0, x.size - n + 1))
    return x[offset: offset + n].copy()


def noise_gain(signal_power, noise_power, snr_db):
    """Gain applied to the noise so the mix has the requested SNR."""
    return float(np.sqrt(signal_power / (noise_power * 10.0 ** (snr_db / 10.0))))


def mix_noise_at_snr(signal, noise, snr_db, rng=None):
    """Add ``noise`` to ``signal`` at ``snr_db`` decibels.

    ``rng`` only matters when the noise is longer than the signal and a window
    has to be chosen.
    """
    if signal.sample_rate != noise.sample_rate:
        raise ValueError(
            f"sample rate mismatch: signal {signal.sample_rate} Hz, noise {noise.sample_rate} Hz")
    n = fit_noise_to_length(noise, len(signal), rng)
    p_noise = float(np.mean(n ** 2))
    if not p_noise > 0:
        raise ValueError("noise is silent; cannot reach a finite SNR")
    alpha = noise_gain(signal.power(), p_noise, snr_db)
    return Waveform(signal.samples + alpha * n, signal.sample_rate)


def measure_snr(signal, mixture):
    """SNR in dB of ``mixture`` relative to the clean ``signal`` it contains."""
    s = np.asarray(getattr(signal, "samples", signal), dtype=np.float64)
    m = np.asarray(getattr(mixture, "samples", mixture), dtype=np.float64)
    resid = m - s
    return 10.0 * np.log10(np.mean(s ** 2) / np.mean(resid ** 2))


def apply_reverb(w, rir):
    """Convolve ``w`` with a room impulse response.

    The result is truncated to ``len(w)`` and rescaled to the input's peak
    level so reverberant tails cannot clip.
    """
    if w.sample_rate != rir.sample_rate:
        raise ValueError(
            f"sample rate mismatch: signal {w.sample_rate} Hz, RIR {rir.sample_rate} Hz")
    y = sps.fftconvolve(w.samples, rir.samples, mode="full")[: len(w)]
    peak_in = np.max(np.abs(w.samples))
    peak_out = np.max(np.abs(y))
    if peak_out > 0:
        y = y * (peak_in / peak_out)
    return Waveform(y, w.sample_rate)


def sample_snr(rng, low=-10.0, high=10.0):
    """Draw an SNR in dB uniformly from ``[low, high]``."""
    if not low < high:
        raise ValueError(f"need low < high, got [{low}, {high}]")
    return float(check_random_state(rng).uniform(low, high))


@dataclass
class Distortion:
    """Random distortion applied after speaker perturbation.

    Picks a noise kind uniformly from ``kinds`` and an SNR uniformly from
    ``snr_range`` for each call.
    """

    kinds: tuple = tuple(NoiseKind)
    snr_range: tuple = (-10.0, 10.0)
    noises: list = field(default_factory=list)

    def __call__(self, w, rng):
        rng = check_random_state(rng)
        snr = sample_snr(rng, *self.snr_range)
        if self.noises:
            noise = self.noises[int(rng.integers(len(self.noises)))]
        else:
            kind = self.kinds[int(rng.integers(len(self.kinds)))]
            noise = gen_colored_noise(kind, max(len(w), 256), w.sample_rate, rng)
        return mix_noise_at_snr(w, noise, snr, rng)


# ---------------------------------------------------------------------------
# WAV I/O


def read_wav(path):
    """Read a mono PCM16 or float32 WAV file into a float64 :class:`Waveform`."""
    try:
        rate, data = wavfile.read(path)
    except (ValueError, EOFError) as exc:
        raise ValueError(f"{path}: not a readable WAV file ({exc})") from exc
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype.kind == "f":
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(samples, rate)


def write_wav(path, w, fmt="float32"):
    """Write ``w`` as ``float32`` or ``pcm16`` (clipped to [-1, 1])."""
    if fmt == "float32":
        wavfile.write(path, w.sample_rate, w.samples.astype(np.float32))
    elif fmt == "pcm16":
        pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype(np.int16)
        wavfile.write(path, w.sample_rate, pcm)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
