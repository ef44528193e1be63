# %% [markdown]
# Convergence in the mesh
#
# One master Brownian ensemble is coarsened to every grid size, so sampling
# noise is shared across N and the error differences reflect the mesh. The
# full-size study (M = 2^17, N up to 128) lives in the CLI:
#
#     volterra-euler converge --problem section5 --n-list 8,16,32,64,128 --m 131072 --seed 7
#
# Here we use a smaller ensemble, which flattens the tail into Monte Carlo noise.

# %%
from volterra_euler import example_section5
from volterra_euler.analysis import convergence_study
from volterra_euler.svg import Series, write_chart

svie, bsvie, oracle = example_section5()
res = convergence_study(svie, bsvie, oracle, [8, 16, 32, 64], 2 ** 14, seed=7)

for r in res.reports:
    print(f"N={r.N:4d}  y={r.y_error:.2e}  z={r.z_error:.2e}  total={r.total:.2e} "
          f"(+/- {r.total_stderr:.1e})")
for name, fit in res.fits.items():
    print(f"{name:>5}: slope {fit.slope:.3f}  r^2 {fit.r_squared:.4f}")

# %%
deltas = [1 / r.N for r in res.reports]
write_chart("convergence_demo.svg",
            [Series("total", deltas, [r.total for r in res.reports], markers=True),
             Series("Z part", deltas, [r.z_error for r in res.reports], markers=True)],
            title="error against mesh", xlabel="mesh", ylabel="error", logx=True, logy=True)
print("wrote convergence_demo.svg")
