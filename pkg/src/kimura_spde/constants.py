"""Constants fitted once on reference grids and frozen.

Each value is reproduced by the fit function named next to it; the tests
refit and compare.
"""
import math

# sup of sqrt(x/2) e^{-x} I_1(x) over x >= 2; the ratio increases to its limit
# 1/(2 sqrt(pi)), which kernel.fit_gaussian_constant reaches to 1e-13
GAUSSIAN_REFINED_C = 1.0 / (2.0 * math.sqrt(math.pi))

# sup over a, b of |Q(a, b) - Q(a', b)| / |a - a'|^(1/2) for the scaled kernel
# difference; attained in the limit b -> 0, a -> 0, a' = 1/2, giving
# sqrt(a') e^{-a'} = (2e)^(-1/2).  Refit by chaos.fit_holder_constant.
HOLDER_M = 1.0 / math.sqrt(2.0 * math.e)

# sup over x of x^(3/2) [e^{-x}(I_0 - I_1)(x) - e^{-2x}]: the smallest C with
# int q_0^2(z, w, s) dw <= C (z s)^(-1/2).  Interior maximum near x = 3.0233,
# located with 30-digit arithmetic.  Refit by chaos.fit_energy_constant.
ENERGY_REFINED_C = 0.22704929733123791
