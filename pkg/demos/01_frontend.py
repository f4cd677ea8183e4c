# %% [markdown]
# # From waveform to log-mel batches
#
# A tour of the audio front end on the synthetic four-class corpus, from raw
# recordings to masked log-mel segments that are split by source.
#
# Run with `python3 demos/01_frontend.py`; every cell also works in an
# editor that understands `# %%` markers.

# %%
from pathlib import Path

import numpy as np

from texdistill.containers import save_pgm
from texdistill.frontend import (CLASS_NAMES, Waveform, featurize, log_mel, resample, segment,
                                 spec_augment, split_by_source, synth_corpus)

out = Path("demo_output/frontend")
out.mkdir(parents=True, exist_ok=True)

# %% [markdown]
# Two recordings per class, 10 seconds each, at the default -3 dB SNR.
# Each waveform carries its own source id, which later drives the split.

# %%
corpus = synth_corpus(2, rng_seed=0, seconds=10.0)
for w in corpus[::2]:
    print(f"{w.source_id:12s} label={w.label} {w.duration:.1f}s rms={np.sqrt(np.mean(w.samples ** 2)):.3f}")

# %% [markdown]
# The corpus is generated at 32 kHz already. Real recordings rarely are, so
# here is the resampler on a 16 kHz copy: the round trip keeps the length to
# within one sample.

# %%
half = Waveform(corpus[0].samples[::2], 16000, corpus[0].source_id, corpus[0].label)
back = resample(half, 32000)
print("16 kHz samples:", len(half.samples), "-> 32 kHz samples:", len(back.samples))

# %% [markdown]
# Ten seconds cut into 5-second segments gives two non-overlapping chunks,
# each 64 mel bands by 501 frames.

# %%
segments = segment(corpus[0], 5.0)
spec = log_mel(segments[0])
print(len(segments), "segments; spectrogram", spec.values.shape)
for label in range(4):
    s = log_mel(segment(corpus[2 * label], 5.0)[0])
    save_pgm(out / f"logmel_{CLASS_NAMES[label]}.pgm", s.values[::-1], scale=2)
    band_energy = s.values.mean(axis=1)
    print(f"{CLASS_NAMES[label]:7s} loudest mel band {band_energy.argmax():2d}, "
          f"frame-to-frame std {s.values.std(axis=1).mean():.2f}")

# %% [markdown]
# Masking replaces two random time stripes (up to 64 frames) and two
# frequency stripes (up to 8 bands) with the spectrogram mean. The same seed
# always gives the same masks.

# %%
masked = spec_augment(spec, rng_seed=42)
changed = np.count_nonzero(masked.values != spec.values)
print(f"{changed} of {spec.values.size} cells masked")
save_pgm(out / "masked.pgm", masked.values[::-1], scale=2)
assert np.array_equal(spec_augment(spec, 42).values, masked.values)

# %% [markdown]
# The split works on source ids, so both segments of a recording always land
# in the same partition.

# %%
specs = featurize(synth_corpus(10, rng_seed=1, seconds=10.0))
split = split_by_source(specs)
print("segments train/val/test:", len(split.train), len(split.val), len(split.test))
for part in ("train", "val", "test"):
    sources = {specs[i].source_id for i in getattr(split, part)}
    print(f"  {part:5s} {len(sources):2d} sources")
print("images written to", out)
