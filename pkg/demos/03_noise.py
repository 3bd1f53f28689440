"""Q-Wiener increments, reproducible streams and a stochastic convolution.

Every trajectory draws from its own counter-based stream keyed by
(seed, member, branch), so results do not depend on how work is split.
"""

import math

import numpy as np

from sfde import DomainSpec, QWienerSpec, RngStream, build_basis
from sfde.stochastic_driver import NoiseSource, StreamFamily, convolution_std, verify_noise_estimate

basis = build_basis(DomainSpec(length=math.pi, grid_points=64), 16)
q = QWienerSpec.geometric(basis, 8, 0.5, trace=0.5)
print("noise coefficients:", np.round(q.coefficients, 4), " trace:", q.trace)

a = RngStream(42, 7).normal(3)
b = RngStream(42, 7).normal(3)
print("same key, same draws:", np.array_equal(a, b))

xi = NoiseSource(StreamFamily(42), range(4), 8).next(5)
print("normals for 5 steps, 4 members, 8 modes:", xi.shape)

one = build_basis(DomainSpec(length=math.pi, grid_points=64), 1)
q1 = QWienerSpec([1.0], one)
print("exact one-step convolution std at t=1:", convolution_std(one, q1, 1.0)[0])
rep = verify_noise_estimate(q1, lambda s: np.exp(-(1.0 - s) * one.eigenvalues), 1.0, kind="diagonal",
                            n_samples=5000, n_steps=200, seed=0, analytic=None)
print("E|int S dW|^2:", rep.details["estimate"], "+-", rep.details["standard_error"],
      " closed form:", (1 - math.exp(-2)) / 2)
