# %% [markdown]
# Generators that depend on Z
#
# When f involves z, the Z update is implicit and is solved by fixed-point
# iteration. A small mesh makes the map contract; a large coupling makes it
# blow up, which the solver reports instead of returning garbage.

# %%
import numpy as np

from volterra_euler import (BsvieProblem, LsmcBackend, PicardDivergenceError, TreeBackend,
                            example_section5, make_uniform, sample, solve_backward, solve_forward)

svie, bsvie, _ = example_section5()
ens = sample(make_uniform(1.0, 32), 2 ** 14, seed=7)
x = solve_forward(svie, ens)

for alpha in (0.5, 1.0, 2.0):
    coupled = BsvieProblem(1, f=lambda t, s, x, y, z, a=alpha: 0.5 * t * np.sin(x) + a * y * z,
                           g=bsvie.g, depends_on_y=True, depends_on_z=True,
                           feature_map=bsvie.feature_map)
    sol = solve_backward(coupled, x, ens, LsmcBackend())
    print(f"alpha={alpha}: Picard iterations avg {sol.picard_stats.average:.2f}, "
          f"max {sol.picard_stats.maximum}, mean Y(0.5)={sol.y_diag[16][:, 0].mean():.4f}")

# %%
grid = make_uniform(1.0, 8)
strong = 10 / grid.delta
bad = BsvieProblem(1, f=lambda t, s, x, y, z: strong * y * z, g=lambda t, x: x + 0 * t,
                   depends_on_y=True, depends_on_z=True)
try:
    solve_backward(bad, None, None, TreeBackend(svie, grid))
except PicardDivergenceError as exc:
    print("diverged as expected:", exc)
