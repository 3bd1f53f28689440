"""Fields, delay segments and the product norm on the interval (0, pi).

A state is a current field u plus its recent past u_t on [-h, 0]. The
product norm combines the L2 norm of the head with the L2-in-time norm of
the segment.
"""

import math

import numpy as np

from sfde import DelaySegment, DomainSpec, Field, FullState, build_basis, norm_b, norm_b0, norm_b1

domain = DomainSpec(length=math.pi, grid_points=64)
basis = build_basis(domain, 16)
print("first eigenvalues:", basis.eigenvalues[:4])

# sin(x) is exactly the first normalized mode times sqrt(pi/2)
u = Field.from_function(basis, np.sin)
print("modes of sin(x):", np.round(u.values[:3], 12), " norm:", norm_b0(u), "~", math.sqrt(math.pi / 2))

# a history that decays like e^{theta} on [-1, 0]
h, dt = 1.0, 0.01
seg = DelaySegment.from_function(basis, lambda th: Field.mode(basis, 1, math.exp(th)), h, dt)
print("segment norm:", norm_b1(seg), " closed form:", math.sqrt((1 - math.exp(-2)) / 2))

state = FullState.from_history(seg)
print("product norm:", norm_b(state), "=", math.hypot(norm_b0(state.head), norm_b1(seg)))
