"""Special functions and the coefficient kernels shared by every solver scheme.

The three weight kernels discretize a fractional derivative or integral of
order ``alpha`` on a uniform grid of spacing ``h``:

* ``l1_weights``    -- piecewise-linear (L1) rows for the derivative form,
                       ``x_{n+1} = sum_j a_j x_j + c * f(t_n, x_n)`` with
                       ``c = Gamma(2-alpha) h^alpha``.
* ``abm_weights``   -- fractional-Euler (rectangle) rows for the integral
                       form, ``x_{n+1} = x_0 + h^alpha/Gamma(1+alpha)
                       * sum_j b_j f(t_j, x_j)``.
* ``corrector_weights`` -- product-trapezoidal rows refining an explicit
                       prediction with the implicit point weighted 1 and
                       scale ``h^alpha / Gamma(alpha+2)``.

Rows satisfy telescoping identities (``sum a_j = 1``,
``sum b_j = (n+1)^alpha``) that the test suite checks to 1e-10.

All kernels apply the convention ``0^e := 0`` (including ``0^0``) so that the
``alpha -> 1`` limit degenerates exactly to the classical one-step schemes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError

EULER_GAMMA = 0.57721566490153286

_POLE_MARGIN = 1e-9


def gamma(x: float) -> float:
    """Gamma function, smooth and exact at small integer arguments.

    Evaluation delegates to the platform's Lanczos/Stirling-class rational
    approximation; exactness at 1, 2, 3 keeps the unit-order weight rows
    collapsing to the classical one-step schemes bit for bit.  Raises
    DomainError within 1e-9 of the poles {0, -1, -2, ...}.
    """
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"gamma: non-finite argument {x!r}")
    if x <= _POLE_MARGIN and abs(x - round(x)) < _POLE_MARGIN:
        raise DomainError(f"gamma: argument {x!r} too close to a pole")
    return math.gamma(x)


# Asymptotic expansion coefficients B_{2k}/(2k) for psi(x) ~ ln x - 1/(2x) - ...
_DIGAMMA_TAIL = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)


def digamma(x: float) -> float:
    """Logarithmic derivative of gamma, psi(x) = d/dx ln Gamma(x), x > 0.

    Recurrence pushes the argument above 10, then the Bernoulli asymptotic
    series finishes the job.
    """
    x = float(x)
    if not (x > _POLE_MARGIN):
        raise DomainError(f"digamma: argument {x!r} must be positive")
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    tail = 0.0
    power = inv2
    for coeff in _DIGAMMA_TAIL:
        tail += coeff * power
        power *= inv2
    return acc + math.log(x) - 0.5 / x - tail


def mittag_leffler(alpha: float, z: float) -> float:
    """One-parameter Mittag-Leffler function E_alpha(z) = sum_k z^k / Gamma(alpha k + 1).

    Direct series with compensated (Kahan) summation. Intended as a test
    oracle on the modest arguments where the float64 series is trustworthy;
    |z| <= 50 is enforced, and failure to converge within 10,000 terms or a
    non-finite partial sum raises NumericError.
    """
    alpha = float(alpha)
    z = float(z)
    if not (0.0 < alpha <= 1.0):
        raise DomainError(f"mittag_leffler: alpha {alpha!r} outside (0, 1]")
    if not (abs(z) <= 50.0):
        raise DomainError(f"mittag_leffler: |z| = {abs(z)!r} exceeds 50")
    total = 0.0
    comp = 0.0
    for k in range(10_000):
        # z^k / Gamma(alpha k + 1), in log space to dodge overflow of z^k.
        if z == 0.0:
            term = 1.0 if k == 0 else 0.0
        else:
            log_mag = k * math.log(abs(z)) - math.lgamma(alpha * k + 1.0)
            try:
                term = math.exp(log_mag)
            except OverflowError:
                raise NumericError(f"mittag_leffler: series term overflow at k={k}") from None
            if z < 0.0 and k % 2 == 1:
                term = -term
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
        if not math.isfinite(total):
            raise NumericError(f"mittag_leffler: series diverged at term {k}")
        if k > 2 and abs(term) < 1e-16 * abs(total):
            return total
    raise NumericError("mittag_leffler: no convergence within 10,000 terms")


def caputo_power_term(n: int, alpha_t: float, t: float) -> float:
    """Fractional derivative of t^n at order alpha_t in (0, 1].

    Zero for n = 0 (constants have no fractional rate of change); otherwise
    Gamma(n+1)/Gamma(n+1-alpha_t) * t^(n-alpha_t).
    """
    if n < 0 or int(n) != n:
        raise DomainError(f"caputo_power_term: n {n!r} must be a non-negative integer")
    alpha_t = float(alpha_t)
    if not (0.0 < alpha_t <= 1.0):
        raise DomainError(f"caputo_power_term: alpha {alpha_t!r} outside (0, 1]")
    if not (t > 0.0):
        raise DomainError(f"caputo_power_term: t {t!r} must be positive")
    n = int(n)
    if n == 0:
        return 0.0
    return gamma(n + 1.0) / gamma(n + 1.0 - alpha_t) * float(t) ** (n - alpha_t)


def zero_safe_pow(base, exponent):
    """Elementwise base**exponent with the convention 0^e := 0 for every e.

    numpy evaluates 0.0**0.0 as 1.0, which would break the alpha -> 1
    degeneracy of the weight rows; kernel bases are >= 0 by construction.
    """
    base = np.asarray(base, dtype=np.float64)
    out = np.power(base, exponent)
    if base.ndim == 0:
        return np.float64(0.0) if base == 0.0 else out
    zero = base == 0.0
    if zero.any():
        out = np.where(zero, 0.0, out)
    return out


@dataclass(frozen=True)
class WeightRow:
    """One row of history weights for advancing a solver by a single step.

    ``weights[j]`` multiplies the j-th history entry (j = 0..n), ``scale`` is
    the per-step multiplier, ``order_used`` the frozen order for the row, and
    ``implicit_weight`` the coefficient of the predicted-point term (nonzero
    only for corrector rows).
    """

    weights: np.ndarray
    scale: float
    order_used: float
    implicit_weight: float = 0.0


def _validate_row_args(n, alpha_n, h):
    if n < 0 or int(n) != n:
        raise DomainError(f"weight row: step index {n!r} must be a non-negative integer")
    alpha_n = float(alpha_n)
    if not (0.0 < alpha_n <= 1.0):
        raise DomainError(f"weight row: order {alpha_n!r} outside (0, 1]")
    if not (h > 0.0):
        raise DomainError(f"weight row: step size {h!r} must be positive")
    return int(n), alpha_n, float(h)


def l1_weights(n: int, alpha_n: float, h: float) -> WeightRow:
    """Piecewise-linear derivative-form row: weights over states x_0..x_n.

    weights[0] = (n+1)^(1-a) - n^(1-a)
    weights[j] = 2(n+1-j)^(1-a) - (n-j)^(1-a) - (n+2-j)^(1-a),  1 <= j <= n
    scale      = Gamma(2-a) h^a

    Rows telescope to sum 1; at a = 1 the row collapses to [0,...,0,1] and the
    update becomes one forward-Euler step.
    """
    n, a, h = _validate_row_args(n, alpha_n, h)
    e = 1.0 - a
    head = zero_safe_pow(np.array([n + 1.0, n]), e)
    w = np.empty(n + 1)
    w[0] = head[0] - head[1]
    if n >= 1:
        j = np.arange(1.0, n + 1.0)
        w[1:] = (
            2.0 * zero_safe_pow(n + 1.0 - j, e)
            - zero_safe_pow(n - j, e)
            - zero_safe_pow(n + 2.0 - j, e)
        )
    scale = gamma(2.0 - a) * h**a
    return WeightRow(weights=w, scale=float(scale), order_used=a)


def abm_weights(n: int, alpha_n: float, h: float) -> WeightRow:
    """Fractional-Euler integral-form row: weights over slopes f_0..f_n.

    weights[j] = (n+1-j)^a - (n-j)^a for 0 <= j <= n (the j = 0 entry extends
    the same difference formula used for j >= 1), scale = h^a / Gamma(1+a).

    Rows telescope to sum (n+1)^a, and every entry is strictly positive for
    a in (0, 1].
    """
    n, a, h = _validate_row_args(n, alpha_n, h)
    j = np.arange(0.0, n + 1.0)
    w = zero_safe_pow(n + 1.0 - j, a) - zero_safe_pow(n - j, a)
    scale = h**a / gamma(1.0 + a)
    return WeightRow(weights=w, scale=float(scale), order_used=a)


def corrector_weights(n: int, alpha_n: float, h: float) -> WeightRow:
    """Product-trapezoidal corrector row refining an explicit prediction.

    weights[0] = n^(a+1) - (n-a)(n+1)^a
    weights[j] = (n-j+2)^(a+1) + (n-j)^(a+1) - 2(n-j+1)^(a+1),  1 <= j <= n
    implicit   = 1 (multiplies f at the predicted point)
    scale      = h^a / Gamma(a+2)

    At a = 1 and n = 0 this is the trapezoidal (Heun) step h/2 (f_0 + f_1^P).
    """
    n, a, h = _validate_row_args(n, alpha_n, h)
    w = np.empty(n + 1)
    w[0] = zero_safe_pow(float(n), a + 1.0) - (n - a) * zero_safe_pow(n + 1.0, a)
    if n >= 1:
        j = np.arange(1.0, n + 1.0)
        w[1:] = (
            zero_safe_pow(n - j + 2.0, a + 1.0)
            + zero_safe_pow(n - j, a + 1.0)
            - 2.0 * zero_safe_pow(n - j + 1.0, a + 1.0)
        )
    scale = h**a / gamma(a + 2.0)
    return WeightRow(weights=w, scale=float(scale), order_used=a, implicit_weight=1.0)
