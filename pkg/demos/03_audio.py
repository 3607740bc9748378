"""Regress a waveform from every fifth sample.

Derivative targets come from two-sided differences of the full-rate signal.
The default input is a synthetic chirp; pass a 16-bit mono WAV to use your own.

    python demos/03_audio.py [clip.wav] [--iters 2000]
"""

import argparse

from sobolev_inr.io import read_wav
from sobolev_inr.pipelines import AudioTask, audio_config, chirp, run_audio_regression

parser = argparse.ArgumentParser()
parser.add_argument("wav", nargs="?")
parser.add_argument("--iters", type=int, default=2000)
args = parser.parse_args()
wave, rate = read_wav(args.wav) if args.wav else (chirp(1.0, 8000), 8000)

for sobolev in (False, True):
    cfg = audio_config(iterations=args.iters, hidden_layers=3, width=64, use_sobolev=sobolev,
                       log_interval=max(1, args.iters // 4))
    rep = run_audio_regression(AudioTask(wave, rate, 5, cfg))
    print(f"{'Sobolev   ' if sobolev else 'value-only'} held-out PSNR {rep.psnr:6.2f} dB")
