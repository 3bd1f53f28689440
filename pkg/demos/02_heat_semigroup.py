"""The heat semigroup on both geometries and the delayed Hilbert-Schmidt norm.

On the interval each mode decays like exp(-lambda_k t). On the weighted whole
line the semigroup is Gaussian convolution and we compare against the
closed-form spreading of a Gaussian bump.
"""

import math

import numpy as np

from sfde import DomainSpec, Field, build_basis
from sfde.semigroup_kernel import (
    apply_semigroup,
    hilbert_schmidt_norm_delay_op,
    verify_kernel_bound,
    verify_semigroup_law,
    verify_weighted_smoothing,
)

basis = build_basis(DomainSpec(length=math.pi, grid_points=64), 16)
e2 = Field.mode(basis, 2)
print("mode 2 after t=1:", apply_semigroup(basis, e2, 1.0).values[1], "vs", math.exp(-4))
print("semigroup law:", verify_semigroup_law(basis, [(0.3, 0.7)]).to_json())

line = DomainSpec("whole_line_weighted", truncation_radius=20.0, grid_points=801, weight_exponent=2.0)
lb = build_basis(line, 16)
x = line.grid
bump = Field(np.exp(-x * x / 2) / math.sqrt(2 * math.pi), line, "grid")
spread = apply_semigroup(lb, bump, 0.5).values
print("Gaussian spreading error:", np.max(np.abs(spread - np.exp(-x * x / 4) / math.sqrt(4 * math.pi))))
print("kernel envelope constants:", verify_kernel_bound(line, lb, 1.0, seed=0).constants)
print("weighted smoothing worst ratio:", verify_weighted_smoothing(line, lb, [0.1, 1.0]).worst_ratio)

# lambda_k = k^2, T0 = 1, h = 0.5
sq = build_basis(DomainSpec(length=math.pi, grid_points=64), 16, [float(k * k) for k in range(1, 17)])
print("squared HS norm of the delay operator:", hilbert_schmidt_norm_delay_op(sq, 1.0, 0.5))
