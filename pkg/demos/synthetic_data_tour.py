"""Tour of the skeleton data pipeline on the synthetic benchmark.

Generates a small separable dataset, then walks through the transforms a
clip goes through on its way into the model: motion derivation, cropping,
resampling, and temporal segmentation.

Run:  python3 demos/synthetic_data_tour.py
"""

import tempfile

import numpy as np

from tssan.data import (center_crop, compute_motion, load_samples,
                        make_synthetic_dataset, random_crop, resample_sequence)
from tssan.segments import segment_spans

with tempfile.TemporaryDirectory() as workdir:
    manifest = make_synthetic_dataset(workdir, num_labels=3, samples_per_label=4,
                                      frames=48, joints=5, persons=2, coords=3,
                                      noise=0.05, seed=7)
    samples = load_samples(manifest)
    print(f"dataset: {len(samples)} samples, {manifest.num_labels} classes")

    clip = samples[0].clip
    print(f"\nclip shape (F, S, J, C) = {clip.positions.shape}, "
          f"label = {samples[0].label}")

    # motion is the frame-to-frame difference, zero-padded at the end
    motion = compute_motion(clip)
    print(f"motion magnitude: mean {np.abs(motion.deltas).mean():.4f}, "
          f"last frame all-zero: {not motion.deltas[-1].any()}")

    # dyadic-grid coordinates make the reconstruction exact, not just close
    recon = clip.positions[0].copy()
    exact = True
    for t in range(1, clip.frames):
        recon = recon + motion.deltas[t - 1]
        exact &= np.array_equal(recon, clip.positions[t])
    print(f"prefix-sum reconstructs positions exactly: {exact}")

    # augmentation: random crop (train) vs center crop (eval), then resample
    rng = np.random.default_rng(0)
    cropped = random_crop(clip, rng)
    print(f"\nrandom crop kept {cropped.frames}/{clip.frames} frames")
    centered = center_crop(clip, 0.9)
    print(f"center crop (0.9) kept {centered.frames} frames")
    fixed = resample_sequence(cropped, 32)
    print(f"resampled to fixed length: {fixed.frames} frames")

    spans = segment_spans(clip.frames, 3)
    print(f"\ntemporal segments of a {clip.frames}-frame clip: {spans}")
