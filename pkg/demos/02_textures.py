# %% [markdown]
# # Statistical and structural texture of a feature map
#
# Both texture descriptors act on any (batch, channels, height, width) map.
# This demo feeds them the compass edge responses of one log-mel spectrogram
# per class, so the effect of each class's texture is visible.

# %%
from pathlib import Path

import numpy as np

from texdistill.containers import save_pgm
from texdistill.core import Tensor, precision
from texdistill.frontend import CLASS_NAMES, featurize, synth_corpus
from texdistill.stat_texture import quant_levels, similarity_map, stat_texture
from texdistill.struct_texture import SOBEL_BANK, build_pyramid, struct_texture

out = Path("demo_output/textures")
out.mkdir(parents=True, exist_ok=True)
np.set_printoptions(precision=3, suppress=True)
specs = featurize(synth_corpus(1, rng_seed=0))

# %% [markdown]
# ## The compass bank
# Eight 3x3 kernels; each one rotates the outer ring of the previous by one
# position, so kernel k + 4 is the negative of kernel k.

# %%
print(SOBEL_BANK[0], SOBEL_BANK[1], sep="\n\n")
print("opposites cancel:", np.allclose(SOBEL_BANK[:4] + SOBEL_BANK[4:], 0))

# %% [markdown]
# ## Laplacian pyramid
# Each level keeps the detail lost by blurring and halving; adding the
# levels back up recovers the input exactly.

# %%
with precision(np.float64):
    x = Tensor(((specs[0].values - specs[0].values.mean()) / specs[0].values.std())[None, None])
    pyr = build_pyramid(x, 4)
    print("level shapes:", [L.shape[-2:] for L in pyr.laplacians])
    print("reconstruction error:", np.abs(pyr.reconstruct().data - x.data).max())

# %% [markdown]
# ## Per-class textures
# The statistical descriptor needs channels, so the 64 mel bands are grouped
# into 8 channels of 8 neighbouring bands. Every (band offset, frame)
# position is compared with the average vector, the cosine similarity is binned onto N = 4 levels and
# adjacent bins are counted.
#
# With RBF binning the bandwidth is 2 / N, which is wide: every level gets a
# weight of at least exp(-1) wherever the similarity lies, so the matrix sits
# close to uniform and the class signal lives in deviations of about a
# hundredth. Triangular binning gives each position to at most two
# neighbouring levels and the matrices become far more distinct.

# %%
with precision(np.float64):
    for s in specs:
        name = CLASS_NAMES[s.label]
        z = (s.values - s.values.mean()) / s.values.std()
        bands = Tensor(z.reshape(8, 8, -1)[None])
        q = quant_levels(similarity_map(bands), 4)
        rbf = stat_texture(bands, 4, "rbf").counts.data[0]
        lin = stat_texture(bands, 4, "linear").counts.data[0]
        print(f"{name:7s} levels {q.levels.data[0]}")
        print(f"        rbf max |count - 1/16| {np.abs(rbf - 1 / 16).max():.4f}   "
              f"linear row mass {lin.sum(axis=1)}")
        save_pgm(out / f"cooc_linear_{name}.pgm", lin, scale=32, vmin=0.0)
        x = Tensor(z[None, None])
        for k, m in enumerate(struct_texture(x, 4, "max")):
            save_pgm(out / f"struct_{name}_L{k}.pgm", np.abs(m.data[0, 0])[::-1], scale=2 ** (k + 1))

# %% [markdown]
# The structural descriptor is the fused edge response at every pyramid
# level; the PGM files show one image per level and class next to the
# co-occurrence matrices.

# %%
print("images written to", out)
