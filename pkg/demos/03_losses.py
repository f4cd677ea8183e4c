# %% [markdown]
# # The four losses and how they are weighted
#
# Small hand-sized inputs make each loss easy to reason about.

# %%
import math

import numpy as np

from texdistill.core import Tensor, precision
from texdistill.losses import (LossBundle, Temperature, UncertaintyWeights, cls_loss, distill_loss,
                               stat_loss, struct_loss, total_loss)
from texdistill.stat_texture import stat_texture

precision(np.float64).__enter__()  # exact arithmetic for the whole demo
rng = np.random.default_rng(0)

# %% [markdown]
# ## Classification
# Uniform logits over four classes cost exactly ln 4.

# %%
print(cls_loss(Tensor(np.zeros((2, 4))), [0, 3]).item(), math.log(4))

# %% [markdown]
# ## Response distillation
# Softmax outputs become cumulative distributions; the loss is the mean
# squared gap between them. A confident teacher saying class 0 against a
# confident student saying class 1 gives 0.5, and raising the temperature
# flattens both distributions towards agreement.

# %%
student = Tensor(np.array([[-30.0, 30.0]]))
teacher = np.array([[30.0, -30.0]])
for T in (1.0, 10.0, 100.0, 1000.0):
    print(f"T={T:6g}  loss={distill_loss(student, teacher, T).item():.4f}")
learned = Temperature(2.0, learnable=True)
print("learnable temperature starts at", learned.value)

# %% [markdown]
# ## Structural texture
# One minus the channel-wise cosine, averaged over positions and levels:
# 0 for identical maps, 1 for orthogonal ones, 2 for opposite ones.

# %%
maps = [Tensor(rng.standard_normal((1, 4, 6, 6))) for _ in range(3)]
print(struct_loss(maps, maps).item(), struct_loss(maps, [Tensor(-m.data) for m in maps]).item())

# %% [markdown]
# ## Statistical texture
# Every teacher bin is compared with every student bin, weighted by the
# distance between their level pairs. Because all pairs contribute, the loss
# is not zero for identical textures and need not be smallest there: the
# second pair below scores lower than the self comparison.

# %%
a = stat_texture(Tensor(rng.standard_normal((1, 3, 8, 8))), 4)
b = stat_texture(Tensor(rng.standard_normal((1, 3, 8, 8)) + 2.0), 4)
print(f"self {stat_loss(a, a).item():.4f}   other {stat_loss(a, b).item():.4f}")

# %% [markdown]
# ## Weighting
# Each term is multiplied by alpha = exp(-s) + s with a learnable s. The
# derivative of alpha vanishes at s = 0, which is also its minimum, so the
# weights start at 1 and stay there. The alternative form exp(-s) * L + s
# lets s settle at log L instead.

# %%
bundle = LossBundle(*[Tensor(np.array(v)) for v in (1.2, 0.3, 0.6, 0.1)])
w = UncertaintyWeights(4)
print("literal:", total_loss(bundle, w.log_vars, "literal").item(), "alphas", bundle.alphas)
w.log_vars.data[:] = np.log([1.2, 0.3, 0.6, 0.1])
print("kendall at s = log L:", total_loss(bundle, w.log_vars, "kendall").item())
