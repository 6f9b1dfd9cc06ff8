"""Order-of-magnitude calculator for the generalization-gap rate.

All hidden universal constants are set to one (configurable) and the output
is a flat record so every intermediate quantity is auditable.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .sphere import SphereMarginals


@dataclass(frozen=True)
class TheoryBound:
    d: int
    m: int
    J: int
    n: int
    eta: float
    M: float
    delta: float
    D: float
    A: float
    P: float
    eps_min: float
    eps_star: float
    eps_dagger: float
    alpha_A: float
    alpha_J: float
    alpha_M: float
    alpha_n: float
    valid: bool
    eps_min_feasible: bool
    bound: float
    bound_approx_term: float
    bound_estimation_term: float
    c_ep: float
    c_univ: float
    c_L_d: float
    eps_min_exact_cL: float
    constants_note: str

    def as_dict(self) -> dict:
        return asdict(self)


def exponents(d: int, m: int) -> dict:
    P = (d - m) * (d + 3) + 2 * d * d
    return {
        "P": P,
        "alpha_A": d * (d - m) / P,
        "alpha_J": d * (d + m) / P,
        "alpha_M": 4 * d * d / P + 3 * (d + 2) * (d - m) * (d + 3) / ((2 * d + 3) * P),
        "alpha_n": (d - m) * (d + 3) / (2 * P),
    }


def is_valid_regime(d: int, m: int) -> bool:
    return d > 3 and m < d * (d - 3) / (d + 3)


def two_term_bound(eps: float, d: int, m: int, J: int, n: int, A: float, M: float):
    approx = J * M ** 2 * eps ** ((d - m) / 2)
    # (A/J eps^-d)^{d/(d+3)} evaluated in logs; eps^-d overflows for large d
    log_est = (d / (d + 3)) * (math.log(A / J) - d * math.log(eps)) \
        + 3 * (d + 2) / (2 * d + 3) * math.log(M) - 0.5 * math.log(n)
    est = math.exp(min(log_est, 700.0))
    return approx + est, approx, est


def theory_bound(d: int, m: int, J: int, n: int, eta: float, M: float, delta: float = 0.05,
                 D: float = 1.0, c_ep: float = 1.0, c_univ: float = 1.0) -> TheoryBound:
    if not (0 < eta < 2):
        raise ValueError(f"eta must lie in (0, 2), got {eta}")
    if M < D:
        raise ValueError(f"need M >= D, got M={M}, D={D}")
    if not (1 <= m <= d) or J < 1 or n < 1 or not (0 < delta < 1):
        raise ValueError("need 1 <= m <= d, J >= 1, n >= 1, delta in (0, 1)")
    A = 1.0 / eta - 1.0 + 4.0 * M
    ex = exponents(d, m)
    P = ex["P"]
    root = math.sqrt((m + math.log(2 * J / delta)) / n)
    # c_L(d) replaced by its 1/d^2 surrogate
    eps_min = (2 * c_ep * c_univ * d * d * root) ** (1.0 / d)
    if d >= 3:
        cL = SphereMarginals(d).c_L
        eps_min_exact = math.exp((math.log(2 * c_ep * c_univ * root) - math.log(cL)) / d)
    else:
        cL, eps_min_exact = math.nan, math.nan
    log_inner = (d / (d + 3)) * math.log(A) - (2 * d + 3) / (d + 3) * math.log(J) \
        - d / (2 * d + 3) * math.log(M) - 0.5 * math.log(n)
    eps_star = math.exp(log_inner * 2 * (d + 3) / P)
    eps_dag = max(eps_min, eps_star)
    total, approx, est = two_term_bound(eps_dag, d, m, J, n, A, M)
    return TheoryBound(
        d=d, m=m, J=J, n=n, eta=eta, M=M, delta=delta, D=D, A=A, P=P,
        eps_min=eps_min, eps_star=eps_star, eps_dagger=eps_dag,
        alpha_A=ex["alpha_A"], alpha_J=ex["alpha_J"], alpha_M=ex["alpha_M"], alpha_n=ex["alpha_n"],
        valid=is_valid_regime(d, m), eps_min_feasible=eps_min < 1.0,
        bound=total, bound_approx_term=approx, bound_estimation_term=est,
        c_ep=c_ep, c_univ=c_univ, c_L_d=cL, eps_min_exact_cL=eps_min_exact,
        constants_note=("universal constants C_ep and c_univ are unspecified and set to the values "
                        "shown; eps_min uses the surrogate c_L(d) >= 1/d^2; the bound value is an "
                        "order-of-magnitude diagnostic"),
    )
