import math
import struct

import numpy as np
import pytest
from scipy.io import wavfile

from decayrate.audio import (Segment, SegmentManifest, convolve, estimate_segment,
                             export_rows, export_segments, load_wav,
                             make_burst_fixture, mix_noise, noise_gain,
                             noise_power, parse_manifest, read_manifest,
                             run_experiment, write_wav)
from decayrate.errors import ParameterError, WavFormatError
from decayrate.model import SampledSignal


def raw_wav(path, tag, bits, payload, channels=1, rate=8000):
    align = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * align, align, bits)
    body = (b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"data" + struct.pack("<I", len(payload)) + payload)
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    return path


def sig(x, fs=8000):
    return SampledSignal(np.asarray(x, dtype=float), fs)


class TestWav:
    def test_zeros(self, tmp_path):
        wavfile.write(tmp_path / "z.wav", 8000, np.zeros(100, np.int16))
        s = load_wav(tmp_path / "z.wav")
        assert len(s) == 100 and s.sample_rate_hz == 8000
        assert np.all(s.samples == 0)

    def test_full_scale_square(self, tmp_path):
        q = np.tile(np.array([32767, -32768], np.int16), 50)
        wavfile.write(tmp_path / "sq.wav", 16000, q)
        x = load_wav(tmp_path / "sq.wav").samples
        assert x.min() == -1.0
        assert x.max() == pytest.approx(1.0, abs=1 / 32768)

    def test_round_trip(self, tmp_path):
        x = sig(np.sin(np.linspace(0, 20, 500)) * 0.5)
        write_wav(tmp_path / "r.wav", x)
        y = load_wav(tmp_path / "r.wav")
        np.testing.assert_allclose(y.samples, x.samples, atol=1 / 32768)

    def test_24bit(self, tmp_path):
        vals = [0, 2 ** 23 - 1, -2 ** 23, 2 ** 22]
        payload = b"".join(struct.pack("<i", v)[:3] for v in vals)
        s = load_wav(raw_wav(tmp_path / "p24.wav", 1, 24, payload))
        np.testing.assert_allclose(s.samples, [0, 1 - 2 ** -23, -1, 0.5])

    def test_float32(self, tmp_path):
        x = np.array([0.25, -0.5, 1.0], np.float32)
        wavfile.write(tmp_path / "f.wav", 8000, x)
        np.testing.assert_array_equal(load_wav(tmp_path / "f.wav").samples, x)

    def test_uint8(self, tmp_path):
        wavfile.write(tmp_path / "u.wav", 8000, np.array([0, 128, 192], np.uint8))
        np.testing.assert_array_equal(load_wav(tmp_path / "u.wav").samples,
                                      [-1.0, 0.0, 0.5])

    def test_multichannel(self, tmp_path):
        q = np.array([[100, -1], [200, -2]], np.int16)
        wavfile.write(tmp_path / "st.wav", 8000, q)
        s = load_wav(tmp_path / "st.wav")
        np.testing.assert_allclose(s.samples, [100 / 32768, 200 / 32768])
        assert any("channel" in n for n in s.notes)

    def test_unsupported_encoding(self, tmp_path):
        p = raw_wav(tmp_path / "adpcm.wav", 2, 4, b"\x00" * 8)
        with pytest.raises(WavFormatError, match="'fmt '"):
            load_wav(p)

    def test_not_riff(self, tmp_path):
        (tmp_path / "x.wav").write_bytes(b"hello world, not audio")
        with pytest.raises(WavFormatError):
            load_wav(tmp_path / "x.wav")

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_wav(tmp_path / "nope.wav")


class TestSignalOps:
    def test_identity(self):
        x = sig(np.random.default_rng(0).standard_normal(64))
        y = convolve(x, sig([1.0]))
        np.testing.assert_allclose(y.samples, x.samples)

    def test_small(self):
        np.testing.assert_allclose(convolve(sig([1, 1]), sig([1, 2, 3])).samples,
                                   [1, 3, 5, 3])

    def test_energy_ratio(self):
        rng = np.random.default_rng(1)
        x = sig(rng.standard_normal(100_000))
        h = sig(np.exp(-0.01 * np.arange(400)) * rng.standard_normal(400))
        y = convolve(x, h).samples
        ratio = np.sum(y ** 2) / np.sum(x.samples ** 2)
        assert ratio == pytest.approx(np.sum(h.samples ** 2), rel=0.05)

    def test_rate_mismatch(self):
        with pytest.raises(ParameterError):
            convolve(sig([1.0], 8000), sig([1.0], 16000))

    def test_high_snr(self):
        rng = np.random.default_rng(2)
        c, n = sig(rng.standard_normal(1000)), sig(rng.standard_normal(1000))
        np.testing.assert_allclose(mix_noise(c, n, 200).samples, c.samples,
                                   atol=1e-9)

    def test_unit_gain(self):
        c = sig(np.ones(10) * 2)
        n = sig(np.ones(10) * 2)
        assert noise_gain(c, n, 0.0) == pytest.approx(1.0)

    @pytest.mark.parametrize("snr", [-5.0, 0.0, 12.0, 30.0])
    def test_target_snr(self, snr):
        rng = np.random.default_rng(3)
        c = sig(rng.standard_normal(5000))
        n = sig(3 * rng.standard_normal(5000))
        m = mix_noise(c, n, snr).samples
        d = m - c.samples
        got = 10 * math.log10(np.mean(c.samples ** 2) / np.mean(d ** 2))
        assert got == pytest.approx(snr, abs=0.01)

    def test_loop_note(self):
        m = mix_noise(sig(np.ones(100)), sig([1.0, -1.0]), 10.0)
        assert len(m) == 100 and any("loop" in t for t in m.notes)

    def test_silent_clean(self):
        with pytest.raises(ParameterError):
            mix_noise(sig(np.zeros(10)), sig(np.ones(10)), 10.0)


class TestManifest:
    def test_parse(self):
        m = parse_manifest("# header\n10 20 a\n\n0 5 silence  # lead\n30 40\n")
        assert m.entries == (Segment(10, 20, "a"), Segment(0, 5, "silence"),
                             Segment(30, 40, "seg03"))
        assert [s.label for s in m.decay_segments] == ["a", "seg03"]
        assert len(m.silence_segments) == 1

    @pytest.mark.parametrize("text", ["5", "a b c", "10 5 x", "-1 4 x"])
    def test_bad_lines(self, text):
        with pytest.raises(ParameterError):
            parse_manifest(text)

    def test_validate(self):
        m = parse_manifest("0 10 a\n")
        m.validate(10)
        with pytest.raises(ParameterError, match="'a'"):
            m.validate(9)

    def test_noise_power_from_silence(self):
        x = np.concatenate([0.1 * np.ones(100), np.ones(100)])
        m = parse_manifest("0 100 silence\n")
        assert noise_power(sig(x), m).sigma_d2_hat == pytest.approx(0.01)


@pytest.fixture(scope="module")
def fixture_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("burst")
    return make_burst_fixture(d, t60s=(0.2, 0.4), n_segments=6)


class TestExperiment:
    def test_runs(self, fixture_files):
        f = fixture_files
        man = read_manifest(f["manifest"])
        rows, recs = run_experiment(f["dry"], f["rirs"], man,
                                    noise_seed=f["noise_seed"])
        assert [r.rir_id for r in rows] == ["rir_t60_0200ms", "rir_t60_0400ms"]
        for r, t in zip(rows, (0.2, 0.4)):
            assert not r.flagged
            assert r.t60_ground_truth_s == pytest.approx(t, rel=0.05)
            assert r.n_segments == 6
            assert r.n_valid["ni"] + r.n_invalid["ni"] == 6
        assert len(recs) == 2 * 6 * 4

    def test_segment_restriction(self, fixture_files):
        # each record must equal the estimator applied to its slice alone
        f = fixture_files
        man = read_manifest(f["manifest"])
        rows, recs = run_experiment(f["dry"], f["rirs"][:1], man,
                                    noise_seed=f["noise_seed"], estimators=("ni",))
        dry, rir = load_wav(f["dry"]), load_wav(f["rirs"][0])
        wet = convolve(dry, rir)
        noise = sig(np.random.default_rng(f["noise_seed"]).standard_normal(len(wet)))
        mixed = mix_noise(wet, noise, 12.0)
        ne = noise_power(mixed, man)
        assert ne.sigma_d2_hat == rows[0].sigma_d2_hat
        for rec in recs:
            direct = estimate_segment("ni", mixed.segment(rec.start, rec.end), ne)
            assert rec.rho_hat == direct.rho_hat

    def test_deterministic(self, fixture_files, tmp_path):
        f = fixture_files
        man = read_manifest(f["manifest"])
        out = []
        for k, w in enumerate((1, 2)):
            rows, recs = run_experiment(f["dry"], f["rirs"], man, workers=w)
            export_rows(rows, tmp_path / f"r{k}.csv")
            export_segments(recs, tmp_path / f"s{k}.csv")
            out.append(((tmp_path / f"r{k}.csv").read_bytes(),
                        (tmp_path / f"s{k}.csv").read_bytes()))
        assert out[0] == out[1]

    def test_empty_manifest_flags(self, fixture_files, tmp_path):
        f = fixture_files
        rows, recs = run_experiment(f["dry"], f["rirs"][:1], SegmentManifest(()))
        assert rows[0].flagged and rows[0].n_segments == 0 and recs == []
        export_rows(rows, tmp_path / "e.csv")
        assert (tmp_path / "e.csv").read_text().count("\n") == 2

    def test_missing_rir_attached(self, fixture_files, tmp_path):
        f = fixture_files
        man = read_manifest(f["manifest"])
        rows, _ = run_experiment(f["dry"], [tmp_path / "gone.wav", f["rirs"][0]], man)
        assert "FileNotFoundError" in rows[0].error and rows[0].flagged
        assert rows[1].error is None

    def test_manifest_longer_than_dry(self, fixture_files):
        f = fixture_files
        with pytest.raises(ParameterError):
            run_experiment(f["dry"], f["rirs"], parse_manifest("0 99999999 x\n"))

    def test_unknown_estimator(self, fixture_files):
        f = fixture_files
        with pytest.raises(ParameterError):
            run_experiment(f["dry"], f["rirs"], SegmentManifest(()),
                           estimators=("schroeder",))
