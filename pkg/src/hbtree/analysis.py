"""Closed-form error rates, costs and parameter planning.

Binomial quantities are evaluated with exact integer arithmetic: every
probability of the form ``sum C(r, i) p^i (1-p)^(r-i)`` with a float ``p`` is
a ratio of two Python integers, and int/int true division is correctly
rounded.  Powers of probabilities close to one go through log1p/expm1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, NamedTuple

from .hb import ProtocolParams

# key lengths that keep the LPN instance hard at each noise level (k_x fixed at 80)
DEFAULT_K_X = 80
DEFAULT_K_Y = {0.25: 330, 0.125: 440}


def _check_r(r: int) -> None:
    if r < 0:
        raise ValueError("r must be non-negative")


def _check_eps(eps: float) -> None:
    if not 0 < eps < 0.5:
        raise ValueError(f"eps must lie in (0, 0.5), got {eps}")


@lru_cache(maxsize=4096)
def _binomials(r: int) -> tuple[int, ...]:
    out = [1] * (r + 1)
    for i in range(1, r + 1):
        out[i] = out[i - 1] * (r - i + 1) // i
    return tuple(out)


@lru_cache(maxsize=1024)
def _true_weights(r: int, eps: float) -> tuple[tuple[int, ...], int]:
    """Integer numerators n_i and common denominator D with P_t(i) = n_i / D."""
    f = Fraction(eps)
    p, q = f.numerator, f.denominator
    c = _binomials(r)
    nums = tuple(c[i] * p**i * (q - p) ** (r - i) for i in range(r + 1))
    return nums, q**r


@lru_cache(maxsize=1024)
def _false_cdf_lt(r: int) -> tuple[int, ...]:
    """Integer prefix sums: S[i] = sum_{j<i} C(r, j), so P_f(D < i) = S[i] / 2^r."""
    c = _binomials(r)
    acc = [0] * (r + 2)
    for i in range(r + 1):
        acc[i + 1] = acc[i] + c[i]
    return tuple(acc)


# ---------------------------------------------------------------- pmfs


def pt_pmf(i: int, r: int, eps: float) -> float:
    """Probability that a genuine r-bit response has exactly i noisy bits."""
    _check_r(r)
    if not 0 <= i <= r:
        raise ValueError("need 0 <= i <= r")
    if not 0 <= eps < 0.5:
        raise ValueError(f"eps must lie in [0, 0.5), got {eps}")
    nums, den = _true_weights(r, eps)
    return nums[i] / den


def pf_pmf(i: int, r: int) -> float:
    """Probability that a uniform r-bit string has weight exactly i."""
    _check_r(r)
    if not 0 <= i <= r:
        raise ValueError("need 0 <= i <= r")
    return _binomials(r)[i] / (1 << r)


# ---------------------------------------------------------------- one descent step


def _pow_complement(cdf_num: int, total: int, exponent: int) -> float:
    """1 - (1 - cdf)^exponent with cdf = cdf_num / total, without cancellation."""
    if cdf_num == 0:
        return 0.0
    if exponent == 1:
        return cdf_num / total
    cdf = cdf_num / total
    if cdf < 0.5:
        return -math.expm1(exponent * math.log1p(-cdf))
    surv = (total - cdf_num) / total
    if surv == 0.0:
        return 1.0
    return -math.expm1(exponent * math.log(surv))


def false_branch_binary(r: int, eps: float) -> float:
    """Chance that the single false sibling is strictly closer than the true child."""
    _check_r(r)
    _check_eps(eps)
    if r == 0:
        return 0.0
    nums, den = _true_weights(r, eps)
    cdf = _false_cdf_lt(r)
    # one exact rational: sum_i n_i * S[i] / (D * 2^r)
    return sum(nums[i] * cdf[i] for i in range(1, r + 1)) / (den << r)


def false_branch_general(
    r: int, eps: float, beta: int, *, siblings: bool = False, exponent: int | None = None
) -> float:
    """Chance that at least one false child is strictly closer than the true one.

    The default raises the per-child miss probability to the power ``beta``;
    ``siblings=True`` uses the actual number of false siblings ``beta - 1``.
    ``exponent`` overrides both.
    """
    _check_r(r)
    _check_eps(eps)
    if beta < 2:
        raise ValueError("beta must be at least 2")
    e = exponent if exponent is not None else (beta - 1 if siblings else beta)
    if e < 1:
        raise ValueError("exponent must be at least 1")
    if r == 0:
        return 0.0
    if e == 1:
        return false_branch_binary(r, eps)
    nums, den = _true_weights(r, eps)
    cdf = _false_cdf_lt(r)
    total = 1 << r
    acc = math.fsum(
        (nums[i] / den) * _pow_complement(cdf[i], total, e) for i in range(1, r + 1)
    )
    return min(acc, 1.0)


def false_branch(r: int, eps: float, beta: int) -> float:
    """Per-level false-branch model used for planning: binary form at beta == 2."""
    if beta == 2:
        return false_branch_binary(r, eps)
    return false_branch_general(r, eps, beta)


def false_branch_reader(r: int, eps: float, beta: int) -> float:
    """Exact wrong-branch rate of the nearest-child reader with uniform tie-breaking.

    With a true-child distance of i, let a = P(false > i) and b = P(false >= i).
    Among the beta - 1 false siblings the true child wins the argmin with
    probability sum_m C(beta-1, m) (b-a)^m a^(beta-1-m) / (m+1)
    = (b^beta - a^beta) / (beta (b - a)).  Lowest-index tie-breaking gives the
    same rate when the true child's position is uniform over the siblings.
    """
    _check_r(r)
    _check_eps(eps)
    if beta < 2:
        raise ValueError("beta must be at least 2")
    if r == 0:
        return 1.0 - 1.0 / beta
    nums, den = _true_weights(r, eps)
    cdf = _false_cdf_lt(r)
    total = 1 << r
    log_total = r * math.log(2.0)
    terms = []
    for i in range(r + 1):
        gt = total - cdf[i + 1]  # count of false weights > i
        ge = total - cdf[i]  # count of false weights >= i
        eq = ge - gt
        if eq == 0:
            # b == a: the limit of the ratio is a^(beta-1)
            win = math.exp((beta - 1) * (math.log(gt) - log_total))
        elif gt == 0:
            win = math.exp((beta - 1) * (math.log(ge) - log_total)) / beta
        else:
            # with q = (b-a)/b: b^(beta-1) * (1 - (1-q)^beta) / (beta q), all factors bounded
            q = eq / ge
            win = math.exp((beta - 1) * (math.log(ge) - log_total)) * -math.expm1(beta * math.log1p(-q)) / (beta * q)
        terms.append((nums[i] / den) * (1.0 - win))
    return math.fsum(terms)


# ---------------------------------------------------------------- Gaussian picture


class GaussianMoments(NamedTuple):
    """Mean and variance of (false distance - true distance) for one sibling."""

    mu: float
    sigma_sq: float


def gaussian_moments(r: int, eps: float) -> GaussianMoments:
    _check_eps(eps)
    if r < 1:
        raise ValueError("r must be positive")
    mu = r * (0.5 - eps)
    sigma_sq = r * (eps * (1 - eps) + 0.25)
    return GaussianMoments(mu, sigma_sq)


def false_branch_normal_approx(r: int, eps: float = 0.25, *, half: bool = False) -> float:
    """Normal approximation of the binary false-branch probability at eps = 1/4.

    The difference of distances has mean r/4 and variance 7r/16, giving
    erfc(sqrt(r/14)).  ``half=True`` returns the conventional Gaussian tail
    0.5 * erfc(sqrt(r/14)).
    """
    if eps != 0.25:
        raise ValueError("the normal approximation is only defined for eps = 0.25")
    if r < 1:
        raise ValueError("r must be positive")
    m = gaussian_moments(r, eps)
    # mu / (sigma sqrt 2) == sqrt(r / 14) at eps = 1/4
    val = math.erfc(m.mu / math.sqrt(2.0 * m.sigma_sq))
    return 0.5 * val if half else val


# ---------------------------------------------------------------- authentication stage


def frr_auth(r: int, tau: int, eps: float) -> float:
    """P[noise weight > tau]: a genuine tag is rejected."""
    _check_r(r)
    if not 0 <= tau <= r:
        raise ValueError("need 0 <= tau <= r")
    if not 0 <= eps < 0.5:
        raise ValueError(f"eps must lie in [0, 0.5), got {eps}")
    nums, den = _true_weights(r, eps)
    return sum(nums[tau + 1:]) / den


def far_auth(r: int, tau: int) -> float:
    """P[uniform r-bit response within distance tau]: an impostor is accepted."""
    _check_r(r)
    if not 0 <= tau <= r:
        raise ValueError("need 0 <= tau <= r")
    return _false_cdf_lt(r)[tau + 1] / (1 << r)


def combined_frr(d: int, p_fb: float, frr_a: float) -> float:
    """Union bound on the whole protocol's false-reject rate."""
    for name, v in (("p_fb", p_fb), ("frr_a", frr_a)):
        if not 0 <= v <= 1:
            raise ValueError(f"{name} must lie in [0, 1]")
    if d < 0:
        raise ValueError("d must be non-negative")
    return min(1.0, d * p_fb + frr_a)


class IteratedRates(NamedTuple):
    frr: float
    far: float
    expected_cost_factor: float
    expected_cost: float


def iterated_rates(gamma: float, delta: float, cost: float, s: int) -> IteratedRates:
    """Rates and expected cost when a run of cost ``cost`` is repeated up to s times."""
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    if not 0 <= delta <= 1:
        raise ValueError("delta must lie in [0, 1]")
    if s < 1:
        raise ValueError("s must be at least 1")
    factor = math.fsum(gamma**j for j in range(s))
    return IteratedRates(gamma**s, min(1.0, s * delta), factor, cost * factor)


# ---------------------------------------------------------------- costs


@dataclass(frozen=True)
class CostReport:
    reader_bitops: float
    tag_bitops: float
    comm_bits: float
    tag_mem_bits: int
    expected_repeat_factor: float
    single_run: tuple[int, int, int] = (0, 0, 0)  # reader, tag, comm before scaling


def single_run_frr(params: ProtocolParams) -> float:
    p = params
    p_fb = false_branch(p.r_tr, p.eps, p.beta) if p.d else 0.0
    return combined_frr(p.d, p_fb, frr_auth(p.r, p.tau, p.eps))


def cost_model(params: ProtocolParams, *, gamma: float | None = None) -> CostReport:
    """Bit-operation, communication and storage costs.

    Per run the tag computes d traversal products (k_y * r_tr each) and the
    two authentication products; the reader does the same for every child it
    compares.  Costs are scaled by the expected number of runs.
    """
    p = params
    auth = (p.k_x + p.k_y) * p.r
    tag = p.d * p.k_y * p.r_tr + auth
    reader = p.beta * p.d * p.k_y * p.r_tr + auth
    comm = p.r * (p.k_x + p.k_y) + p.r_tr * p.d
    mem = p.k_x + (p.d + 1) * p.k_y
    if gamma is None:
        gamma = single_run_frr(p) if p.eps > 0 else 0.0
    factor = iterated_rates(gamma, 0.0, 1.0, p.s).expected_cost_factor
    return CostReport(reader * factor, tag * factor, comm * factor, mem, factor, (reader, tag, comm))


# ---------------------------------------------------------------- response length


def min_response_length(
    beta: int, target_p_fb: float, eps: float, *, r_start: int = 1, r_max: int = 1 << 14,
    siblings: bool = False,
) -> int:
    """Smallest r with false_branch_general(r, eps, beta) <= target.

    A plain upward scan: at very small r the probability is not monotone
    (ties dominate), so bisection could skip the first crossing.
    """
    if not 0 < target_p_fb <= 1:
        raise ValueError("target must lie in (0, 1]")
    for r in range(max(1, r_start), r_max + 1):
        if false_branch_general(r, eps, beta, siblings=siblings) <= target_p_fb:
            return r
    raise ValueError(f"no r <= {r_max} reaches false-branch probability {target_p_fb}")


def beta_grid(beta_max: int, per_decade: int = 10) -> list[int]:
    """Distinct integers from 2 to beta_max, roughly log-spaced."""
    if beta_max < 2:
        raise ValueError("beta_max must be at least 2")
    out = {2, beta_max}
    steps = int(math.ceil(math.log10(beta_max) * per_decade))
    for k in range(steps + 1):
        b = int(round(10 ** (k / per_decade)))
        if 2 <= b <= beta_max:
            out.add(b)
    return sorted(out)


class CurvePoint(NamedTuple):
    target: float
    beta: int
    r: int
    p_fb: float


def response_length_curve(
    targets: Iterable[float], betas: Iterable[int], eps: float = 0.25
) -> list[CurvePoint]:
    """(beta, minimal r) for every target.

    The probability grows with beta at fixed r, so the minimal r is
    non-decreasing in beta and each scan resumes where the previous one ended.
    """
    betas = sorted(set(betas))
    points = []
    for t in targets:
        r = 1
        for b in betas:
            r = min_response_length(b, t, eps, r_start=r)
            points.append(CurvePoint(t, b, r, false_branch_general(r, eps, b)))
    return points


# ---------------------------------------------------------------- planner


@dataclass(frozen=True)
class PlanResult:
    params: ProtocolParams
    frr: float
    far: float
    single_frr: float
    single_far: float
    frr_auth: float
    p_fb: float
    cost: CostReport


class InfeasibleError(ValueError):
    """No parameter set meets the requested targets."""


def integer_root_ceil(n: int, d: int) -> int:
    """Smallest integer b with b**d >= n."""
    if n <= 1:
        return 1
    b = max(1, int(round(n ** (1.0 / d))))
    while b**d < n:
        b += 1
    while b > 1 and (b - 1) ** d >= n:
        b -= 1
    return b


def _max_tau(r: int, far_bound: float) -> int:
    """Largest tau with far_auth(r, tau) <= far_bound, or -1."""
    cdf = _false_cdf_lt(r)
    total = 1 << r
    tau = -1
    while tau + 1 <= r and cdf[tau + 2] / total <= far_bound:
        tau += 1
    return tau


def plan_parameters(
    n: int,
    target_frr: float,
    target_far: float,
    eps: float,
    d: int,
    *,
    k_x: int = DEFAULT_K_X,
    k_y: int | None = None,
    s_max: int = 4,
    frr_auth_max: float = 0.05,
    r_max: int = 4096,
) -> PlanResult:
    """Choose (beta, r, tau, r_tr, s) for a population of n tags.

    1. beta is the smallest integer with beta^d >= n.
    2. For each r, tau is the largest threshold whose single-run FAR stays
       below target_far / s_max; r is the smallest length whose FRR at that
       threshold is at most ``frr_auth_max``.
    3. r_tr is the smallest length with d * P_fb(r_tr) <= FRR_auth(r, tau).
    4. s is the smallest repeat count meeting both targets.
    """
    _check_eps(eps)
    if d < 1:
        raise ValueError("d must be at least 1")
    if n < 2:
        raise ValueError("population must be at least 2")
    if k_y is None:
        if eps not in DEFAULT_K_Y:
            raise ValueError(f"no default k_y for eps={eps}; pass k_y explicitly")
        k_y = DEFAULT_K_Y[eps]
    beta = max(2, integer_root_ceil(n, d))
    far_bound = target_far / s_max

    for r in range(1, r_max + 1):
        tau = _max_tau(r, far_bound)
        if tau >= 0 and frr_auth(r, tau, eps) <= frr_auth_max:
            break
    else:
        raise InfeasibleError(f"no r <= {r_max} meets FAR {far_bound:g} with FRR <= {frr_auth_max}")
    fa = frr_auth(r, tau, eps)
    delta = far_auth(r, tau)

    for r_tr in range(1, r + 1):
        p_fb = false_branch(r_tr, eps, beta)
        if d * p_fb <= fa:
            break
    else:
        raise InfeasibleError("traversal length would exceed the response length")

    gamma = combined_frr(d, p_fb, fa)
    for s in range(1, s_max + 1):
        it = iterated_rates(gamma, delta, 1.0, s)
        if it.frr <= target_frr and it.far <= target_far:
            break
    else:
        raise InfeasibleError(f"targets need more than {s_max} repeats (single-run FRR {gamma:.3g})")

    params = ProtocolParams(eps=eps, k_x=k_x, k_y=k_y, r=r, r_tr=r_tr, tau=tau, d=d, beta=beta, s=s)
    return PlanResult(params, it.frr, it.far, gamma, delta, fa, p_fb, cost_model(params, gamma=gamma))
