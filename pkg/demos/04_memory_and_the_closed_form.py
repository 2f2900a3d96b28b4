"""Why the closed-form trajectory for commuting jumps needs alpha = 1.

When every D_k commutes with A one is tempted to pull all jump factors in
front of a single solution operator, as one does for a semigroup.  The
rearrangement uses S(t - s) S(s) = S(t).  Mittag-Leffler operators do not
compose like that, so for alpha < 1 the closed form and the step-by-step
propagation part ways after the first impulse.
"""

from __future__ import annotations

import numpy as np

from fracimpulse import FractionalOrder, ImpulseEvent, SystemSpec, make_grid, propagate, validate, zero_bundle
from fracimpulse.propagator import propagate_commutative
from fracimpulse.specfun import ml_array

lam = 2.0
for alpha in (1.0, 0.9, 0.75, 0.6):
    spec = validate(SystemSpec(A=np.array([[-lam]]), B=np.array([[1.0]]),
                               impulses=(ImpulseEvent(0.5, np.array([[-0.5]]), np.array([[0.0]])),),
                               horizon=1.0, order=FractionalOrder(alpha)))
    bundle = zero_bundle(spec, make_grid(spec, 128))
    general = propagate(spec, [1.0], bundle).final[0]
    closed = propagate_commutative(spec, [1.0], bundle).final[0]
    # the semigroup defect for this scalar example
    S = lambda t: ml_array(alpha, 1.0, np.array([-lam * t**alpha]))[0]
    print(f"alpha={alpha}: general {general:.6f}  closed form {closed:.6f}  "
          f"S(1/2)^2 - S(1) = {S(0.5) ** 2 - S(1.0):+.2e}")
