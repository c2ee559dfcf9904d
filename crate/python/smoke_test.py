"""Smoke test for the periodgrad Python bindings.

Build and stage the extension first:

    cargo build --release -p periodgrad-py
    cp target/release/libperiodgrad_py.so python/periodgrad_py.so
    python3 python/smoke_test.py [path/to/checkpoint.ckpt]
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import periodgrad_py as pg  # noqa: E402


def main() -> None:
    train = pg.NoiseSchedule.training()
    fast = pg.NoiseSchedule.inference()
    assert len(train) == 50 and len(fast) == 12
    bars = train.alpha_bars
    assert all(a > b for a, b in zip(bars, bars[1:]))

    sr, f0 = 16000, 220.0
    tone = [0.5 * math.sin(2 * math.pi * f0 * n / sr) for n in range(sr)]
    track = pg.extract_f0(tone, sr, 80)
    voiced = [f for f in track if f > 0]
    assert len(voiced) > 0.9 * len(track)
    rmse, n = pg.pitch_rmse([f0] * len(track), track)
    assert n == len(voiced) and rmse < 0.05, rmse
    shifted = [f * 2 ** (3 / 12) for f in track]
    assert abs(pg.pitch_rmse(track, shifted)[0] - 3.0) < 1e-9
    assert pg.vuv_error(track, track) == 0.0

    feats = pg.extract_features(tone, sr)
    assert len(feats) == 200 and len(feats[0]) == 82
    assert pg.stft_distance(tone, tone, sr) == 0.0

    with tempfile.TemporaryDirectory() as tmp:
        manifest = pg.make_corpus(tmp, n_utts=2, seconds=0.5, seed=1)
        assert os.path.exists(manifest)
        samples, rate = pg.read_wav(os.path.join(tmp, "wav", "utt0000.wav"))
        assert rate == sr and len(samples) == sr // 2
        out = os.path.join(tmp, "copy.wav")
        pg.write_wav(out, samples, rate)
        assert pg.read_wav(out)[0] == samples

    try:
        pg.NoiseSchedule([0.5, 1.5])
    except ValueError:
        pass
    else:
        raise AssertionError("invalid betas accepted")

    if len(sys.argv) > 1:
        ckpt = pg.Checkpoint.load(sys.argv[1])
        print(f"checkpoint: {ckpt.mode} at step {ckpt.step}")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
