import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import roll_by, textured
from phasetrack.registration import (
    Displacement,
    DisplacementTable,
    GrayFrame,
    IndeterminateDisplacement,
    PairResult,
    auto_downscale,
    correlation_surface,
    cross_power_spectrum,
    decode_peak,
    phase_correlate,
    register_sequence,
)
from phasetrack.synth import SynthConfig, constant_pan, generate


def direct_dft(img, inverse=False):
    """O(N^4) DFT: one explicit kernel entry per (input, output) sample pair."""
    h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w]
    sign = 1.0 if inverse else -1.0
    phase = np.outer(ys.ravel(), ys.ravel()) / h + np.outer(xs.ravel(), xs.ravel()) / w
    kernel = np.exp(sign * 2j * np.pi * phase)
    out = kernel @ img.ravel()
    if inverse:
        out /= h * w
    return out.reshape(h, w)


def direct_cps(a, b, eps=1e-12):
    out = np.empty(a.shape, dtype=complex)
    for idx in np.ndindex(a.shape):
        p = complex(a[idx]) * complex(b[idx]).conjugate()
        out[idx] = p / max(abs(p), eps)
    return out


def brute_argmax(surface):
    best, where = -1.0, None
    for idx in np.ndindex(surface.shape):
        if abs(surface[idx]) > best:
            best, where = abs(surface[idx]), idx
    return where


# cross_power_spectrum

def test_cps_identical_spectra_unit_phase_zero():
    spec = np.fft.fft2(textured(32, 3))
    out = cross_power_spectrum(spec, spec)
    live = np.abs(spec * spec.conj()) > 1e-12
    assert np.allclose(np.abs(out[live]), 1.0)
    assert np.allclose(np.angle(out[live]), 0.0, atol=1e-12)


def test_cps_recovers_phase_ramp():
    n, x0, y0 = 32, 5, -3
    base = np.fft.fft2(textured(n, 4))
    eta, xi = np.meshgrid(np.fft.fftfreq(n), np.fft.fftfreq(n), indexing="ij")
    ramp = np.exp(-2j * np.pi * (xi * x0 + eta * y0))
    out = cross_power_spectrum(ramp * base, base)
    live = np.abs(base) > 1e-9
    assert np.allclose(out[live], ramp[live], atol=1e-10)
    # the ramp is exactly the spectrum of the shifted image
    shifted = np.fft.fft2(roll_by(textured(n, 4), x0, y0))
    assert np.allclose(cross_power_spectrum(shifted, base)[live], ramp[live], atol=1e-9)


def test_cps_matches_direct_formula():
    rng = np.random.default_rng(8)
    a = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    b = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    assert np.max(np.abs(cross_power_spectrum(a, b) - direct_cps(a, b))) < 1e-12


def test_cps_magnitude_bounded_and_zero_bins_safe():
    a = np.zeros((4, 4), complex)
    a[0, 1] = 3 + 4j
    out = cross_power_spectrum(a, np.ones((4, 4)))
    assert np.all(np.abs(out) <= 1 + 1e-15)
    assert np.all(np.isfinite(out))


def test_cps_shape_mismatch():
    with pytest.raises(ValueError):
        cross_power_spectrum(np.ones((4, 4)), np.ones((4, 5)))


# decode_peak

@pytest.mark.parametrize(
    "index, dims, expected",
    [((0, 0), (128, 128), (0, 0)), ((127, 1), (128, 128), (-1, 1)), ((64, 64), (128, 128), (64, 64)),
     ((65, 63), (128, 128), (-63, 63)), ((3, 4), (17, 9), (3, 4)), ((9, 5), (17, 9), (-8, -4))],
)
def test_decode_peak(index, dims, expected):
    assert decode_peak(index, dims) == expected


def test_decode_peak_out_of_range():
    with pytest.raises(ValueError):
        decode_peak((128, 0), (128, 128))


# phase_correlate

def test_identity(texture):
    d = phase_correlate(texture, texture)
    assert (d.dx, d.dy) == (0, 0)
    assert d.peak_score == pytest.approx(1.0)


def test_circular_shift_exact(texture):
    g = roll_by(texture, 7, -3)
    surface = correlation_surface(texture, g)
    row, col = brute_argmax(surface)
    assert decode_peak((row, col), surface.shape) == (-3, 7)
    d = phase_correlate(GrayFrame(texture), GrayFrame(g))
    assert (d.dx, d.dy) == (7, -3)


def test_crop_with_sensor_noise():
    world = textured(256, 11)
    rng = np.random.default_rng(2)
    f = world[60:188, 60:188] + rng.normal(0, 0.01, (128, 128))
    g = world[56:184, 50:178] + rng.normal(0, 0.01, (128, 128))  # content moves by (+10, +4)
    for window in (False, True):
        d = phase_correlate(f, g, window=window)
        assert abs(d.dx - 10) <= 1 and abs(d.dy - 4) <= 1


def test_size_mismatch():
    with pytest.raises(ValueError):
        phase_correlate(np.ones((16, 16)), np.ones((16, 17)))


def test_constant_frames_indeterminate():
    with pytest.raises(IndeterminateDisplacement):
        phase_correlate(np.full((32, 32), 0.5), np.full((32, 32), 0.5))


def test_flat_surface_scores_low():
    rng = np.random.default_rng(3)
    d = phase_correlate(rng.random((128, 128)), rng.random((128, 128)))
    assert d.peak_score < 0.01


shift = st.integers(-32, 32)


@settings(max_examples=40, deadline=None)
@given(shift, shift, st.integers(0, 10_000))
def test_exact_recovery_and_antisymmetry(dx, dy, seed):
    f = textured(128, seed)
    g = roll_by(f, dx, dy)
    fwd = phase_correlate(f, g)
    back = phase_correlate(g, f)
    assert (fwd.dx, fwd.dy) == (dx, dy)
    assert (back.dx, back.dy) == (-dx, -dy)


@settings(max_examples=20, deadline=None)
@given(shift, shift, st.floats(0.01, 100))
def test_brightness_invariance(dx, dy, scale):
    f = textured(64, 5)
    g = roll_by(f, dx // 2, dy // 2)
    a = phase_correlate(f, g)
    b = phase_correlate(f * scale, g * scale)
    assert (a.dx, a.dy) == (b.dx, b.dy)


def test_surface_matches_direct_inverse_transform():
    rng = np.random.default_rng(21)
    f = rng.random((32, 32))
    g = roll_by(f, 4, -9) + rng.normal(0, 0.05, (32, 32))
    oracle = direct_dft(direct_cps(direct_dft(g), direct_dft(f)), inverse=True)
    surface = correlation_surface(f, g)
    assert np.max(np.abs(surface - oracle)) < 1e-6
    assert brute_argmax(oracle) == np.unravel_index(np.argmax(np.abs(surface)), surface.shape)


# GrayFrame / Displacement / table

def test_gray_frame_validation():
    with pytest.raises(ValueError):
        GrayFrame(np.zeros((15, 32)))
    with pytest.raises(ValueError):
        GrayFrame(np.full((16, 16), np.nan))
    fr = GrayFrame(np.zeros((20, 30)), 4)
    assert (fr.width, fr.height, fr.frame_index) == (30, 20, 4)


def test_displacement_arithmetic():
    a, b = Displacement(1, 2, 0.5), Displacement(3, -1, 0.9)
    assert (a + b).as_tuple() == (4, 1)
    assert (a - b).as_tuple() == (-2, 3)
    assert (-a).as_tuple() == (-1, -2)


def test_table_from_pairs_and_between():
    pairs = [PairResult(0, 30, Displacement(3, 0)), PairResult(30, 60, Displacement(-1, 2))]
    t = DisplacementTable.from_pairs(pairs)
    assert t.frames == [0, 30, 60]
    assert t[60].as_tuple() == (2, 2)
    assert t.between(30, 60).as_tuple() == (-1, 2)
    assert t.next_frame(30) == 60 and t.next_frame(60) is None
    with pytest.raises(KeyError):
        t[15]


def test_table_rejects_broken_chain():
    with pytest.raises(ValueError):
        DisplacementTable.from_pairs([PairResult(0, 1, Displacement(0, 0)), PairResult(2, 3, Displacement(0, 0))])


# register_sequence

def frames_of(images, start=0, step=1):
    return [GrayFrame(im, start + i * step) for i, im in enumerate(images)]


def test_identical_frames(texture):
    t = register_sequence(frames_of([texture] * 3))
    assert {k: v.as_tuple() for k, v in t.entries.items()} == {0: (0, 0), 1: (0, 0), 2: (0, 0)}


def test_cumulative_additivity(texture):
    f1 = roll_by(texture, 3, 0)
    f2 = roll_by(f1, -1, 2)
    t = register_sequence(frames_of([texture, f1, f2]))
    assert {k: v.as_tuple() for k, v in t.entries.items()} == {0: (0, 0), 1: (3, 0), 2: (2, 2)}
    for k in t.frames:
        chain = [p.displacement for p in t.pairs if p.to_frame <= k]
        assert t[k].as_tuple() == (sum(d.dx for d in chain), sum(d.dy for d in chain))


def test_synthetic_pan_recovered_exactly():
    cfg = SynthConfig(world_size=(256, 256), frame_size=(128, 128), camera_origin=(20, 50),
                      camera_path=constant_pan(10, (5, 1)), texture_seed=9)
    scene = generate(cfg)
    t = register_sequence(scene.frames)
    for k in range(10):
        # camera pans (+5, +1) per frame, so content moves by (-5, -1)
        assert t[k].as_tuple() == (-5 * k, -k)
        assert t[k].as_tuple() == scene.true_table[k].as_tuple()


def test_stride_and_ordinals(texture):
    imgs = [roll_by(texture, k, 0) for k in range(7)]
    t = register_sequence(frames_of(imgs, step=10), stride=3)
    assert t.frames == [0, 30, 60]
    assert t[60].as_tuple() == (6, 0)


def test_low_confidence_pair_is_flagged(texture):
    rng = np.random.default_rng(0)
    t = register_sequence(frames_of([texture, rng.random((128, 128)), rng.random((128, 128))]))
    assert t.flagged == [1, 2]
    assert t[2].as_tuple() == (0, 0)
    assert t.pairs[0].displacement.peak_score < 0.05


def test_downscale_rescales(texture):
    t = register_sequence(frames_of([texture, roll_by(texture, 8, -12)]), downscale=2)
    assert t[1].as_tuple() == (8, -12)


def test_parallel_matches_sequential(texture):
    imgs = [roll_by(texture, 2 * k, -k) for k in range(6)]
    a = register_sequence(frames_of(imgs))
    b = register_sequence(frames_of(imgs), workers=3)
    assert a.entries == b.entries


def test_auto_downscale():
    assert auto_downscale(3840, 2160) == 4
    assert auto_downscale(4096, 2160) == 4
    assert auto_downscale(1920, 1080) == 1


def test_register_errors(texture):
    with pytest.raises(ValueError):
        register_sequence(frames_of([texture]))
    with pytest.raises(ValueError):
        register_sequence([GrayFrame(texture, 0), GrayFrame(texture[:64], 1)])
    with pytest.raises(ValueError):
        register_sequence(frames_of([texture] * 3), stride=0)
