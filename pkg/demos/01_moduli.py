"""How regular is a map near a point?

We estimate the regularity modulus of three maps on nested grids and watch
the estimates settle. For a linear map the answer is its smallest singular
value; for u -> u^3 the order-1/3 modulus is 4^(-1/3). The last block
checks that regularity of F matches Hölder continuity of its inverse.
"""
import numpy as np

from regulab import LinearMap, ModulusQuery, Smooth, estimate_rg_q
from regulab.functions import scalar_poly
from regulab.moduli import check_inverse_duality

A = np.array([[2.0, 0.5], [0.0, 1.0]])
est = estimate_rg_q(LinearMap(A), ModulusQuery(1.0, [0, 0], [0, 0], 0.5, resolution=11))
print("linear map, grid trace:", [round(v, 4) for _, v in est.trace])
print("  smallest singular value:", round(np.linalg.svd(A, compute_uv=False).min(), 4))

cube = Smooth(scalar_poly([0, 0, 0, 1]))
est = estimate_rg_q(cube, ModulusQuery(1 / 3, [0.0], [0.0], 0.5))
print("cubic, order 1/3:", round(est.tau_hat, 5), "vs 4^(-1/3) =", round(4 ** (-1 / 3), 5))
print("  worst pair (x, y):", est.witness[0], est.witness[1], "- note y = -x^3")

# the plain order-1 modulus of the cubic vanishes: regularity needs the Hölder order
flat = estimate_rg_q(cube, ModulusQuery(1.0, [0.0], [0.0], 0.5, resolution=11))
print("cubic, order 1:", round(flat.tau_hat, 5))

rep = check_inverse_duality(cube, ModulusQuery(1 / 3, [0.0], [0.0], 0.5, resolution=11, refinement_levels=2))
print("duality:", {k: round(v, 5) if isinstance(v, float) else v for k, v in rep.to_dict().items()})
