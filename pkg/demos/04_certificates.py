"""Primal and dual certificates of regularity.

The slope test samples the descent rate of the residual function; the
coderivative test samples dual vectors on the graph's normal cone. Both
should accept a modulus just below the truth and reject one above it,
returning the offending sample. The Ekeland step is the finite engine
behind the slope test.
"""
import numpy as np

from regulab.catalog import cubic
from regulab.conditions import (
    CoderivativeConditionQuery,
    EkelandQuery,
    check_coderivative_sufficiency,
    check_slope_sufficiency,
    ekeland_point,
)
from regulab.mappings import LinearMap

c = 4 ** (-1 / 3)
for tau in (0.9 * c, 1.5 * c):
    v = check_slope_sufficiency(cubic(), [0.0], [0.0], 1 / 3, tau, 0.5, 0.5, resolution=21)
    print(f"cubic slope test, tau={tau:.3f}:", v.to_dict()["verdict"], "worst slope", round(v.min_estimate, 4))

A = LinearMap(np.diag([2.0, 1.0]))
for tau in (0.9, 1.5):
    v = check_coderivative_sufficiency(A, [0, 0], [0, 0], CoderivativeConditionQuery(1.0, tau, 0.5, 0.5))
    d = v.to_dict()
    print(f"diag(2,1) coderivative test, tau={tau}:", d["verdict"], "min", round(v.min_value, 4))
    if d["witness"]:
        print("  witness y*:", np.round(d["witness"]["ystar"], 3))

rng = np.random.default_rng(0)
P = rng.normal(size=(30, 2))
D = np.linalg.norm(P[:, None] - P[None, :], axis=2)
f = (P ** 2).sum(axis=1)
# start at the worst point; epsilon must exceed f(x0) - min f
top = int(np.argmax(f))
cert = ekeland_point(EkelandQuery(D, f, top, epsilon=f.max() - f.min() + 0.1, lam=3.0))
print("Ekeland point", cert.index, "after", cert.iterations, "descents; certificate ok:", cert.ok)
