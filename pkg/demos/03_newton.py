"""Newton's method on generalized equations, and why regularity matters.

Three runs: the classical equation u^2 = 2, a complementarity problem on
[0, inf), and the degenerate u^2 = 0 where regularity fails. The first two
fit an exponent near 2; the degenerate one is linear with ratio 1/2.
"""
import math
import os
import tempfile

from regulab.functions import scalar_poly
from regulab.geometry import INF
from regulab.io import emit_convergence_table
from regulab.mappings import NormalConeOfBox, ZeroMap
from regulab.newton import GeneralizedEquation, NewtonConfig, josephy_newton

runs = [
    ("u^2 - 2 = 0", GeneralizedEquation(scalar_poly([-2, 0, 1]), ZeroMap()), 3.0, math.sqrt(2)),
    ("u^2 + u - 3 + N(u) ∋ 0", GeneralizedEquation(scalar_poly([-3, 1, 1]), NormalConeOfBox([0.0], [INF])),
     2.0, (-1 + math.sqrt(13)) / 2),
    ("u^2 = 0 (degenerate)", GeneralizedEquation(scalar_poly([0, 0, 1]), ZeroMap()), 1.0, 0.0),
]
for title, ge, x0, root in runs:
    t = josephy_newton(ge, NewtonConfig([x0]), xstar=[root], monitor=True)
    print(f"{title}: {len(t.iterates) - 1} steps, x = {t.x[0]:.15f}")
    print(f"  regularity at the root ~ {t.regularity['tau_hat']:.4f}")
    print(f"  rate fit: exponent {t.rate.exponent_hat:.3f}, constant {t.rate.gamma_hat:.3f}")

path = os.path.join(tempfile.gettempdir(), "sqrt2_table.csv")
emit_convergence_table(josephy_newton(runs[0][1], NewtonConfig([3.0]), xstar=[math.sqrt(2)]), path)
print("\nconvergence table written to", path)
print(open(path).read())
