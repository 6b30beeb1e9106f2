"""Exact reference computations on finitely supported distributions.

Every expectation here is a finite weighted sum over the atoms of a
:class:`DiscreteDgp`, so the identities the test relies on can be checked to
rounding error.  Builders derive the functionals and their conditional
gradients from a joint probability table, exactly as the estimators would
if they knew the distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .core import ValidationError
from .kernel import FunctionalEvaluations, gamma_matrix, gamma_tu, pair_matrix


class MismatchedSupport(ValidationError):
    pass


def _col(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def group_labels(w: np.ndarray) -> np.ndarray:
    """Integer label per row identifying its distinct covariate value."""
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    _, labels = np.unique(w, axis=0, return_inverse=True)
    return labels.reshape(-1)


@dataclass(frozen=True, eq=False)
class DiscreteDgp:
    """A distribution on m atoms together with R, S and their gradients at each atom.

    ``x_r`` / ``x_s`` label the conditioning value X^R(o) / X^S(o) of each
    atom.  ``rem_r`` / ``rem_s`` are only carried by perturbed distributions
    (see :func:`perturbed`).
    """

    w: np.ndarray
    y: np.ndarray
    probs: np.ndarray
    r: np.ndarray
    s: np.ndarray
    dr: np.ndarray
    ds: np.ndarray
    a: np.ndarray | None = None
    x_r: np.ndarray | None = None
    x_s: np.ndarray | None = None
    rem_r: np.ndarray | None = None
    rem_s: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        m = probs.shape[0]
        if m < 1:
            raise ValidationError("a distribution needs at least one atom")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValidationError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "probs", probs)
        w = np.asarray(self.w, dtype=float)
        object.__setattr__(self, "w", w[:, None] if w.ndim == 1 else w)
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        for name in ("r", "s", "dr", "ds"):
            arr = _col(getattr(self, name))
            if arr.shape[0] != m:
                raise MismatchedSupport(f"{name} has {arr.shape[0]} rows, expected {m}")
            object.__setattr__(self, name, arr)
        if self.x_r is None:
            object.__setattr__(self, "x_r", group_labels(self.w))
        if self.x_s is None:
            object.__setattr__(self, "x_s", group_labels(self.w))

    @property
    def m(self) -> int:
        return self.probs.shape[0]

    def evaluations(self) -> FunctionalEvaluations:
        return FunctionalEvaluations(self.r, self.s, self.dr, self.ds)

    def gradient_mean_residual(self) -> float:
        """Largest |E[D^T | X^T]| over groups, for T in {R, S} (0 under the gradient condition)."""
        worst = 0.0
        for d, x in ((self.dr, self.x_r), (self.ds, self.x_s)):
            for g in np.unique(x):
                mask = x == g
                pg = self.probs[mask].sum()
                if pg > 0:
                    worst = max(worst, float(np.max(np.abs(self.probs[mask] @ d[mask]) / pg)))
        return worst

    def with_probs(self, probs) -> "DiscreteDgp":
        return replace(self, probs=np.asarray(probs, dtype=float))


# ---------------------------------------------------------------------------
# Builders: functionals and gradients from a joint probability table
# ---------------------------------------------------------------------------


def _group_mean(values, probs, labels) -> np.ndarray:
    """Per-atom conditional mean of ``values`` given ``labels``."""
    out = np.zeros_like(values, dtype=float)
    for g in np.unique(labels):
        mask = labels == g
        pg = probs[mask].sum()
        out[mask] = probs[mask] @ values[mask] / pg if pg > 0 else 0.0
    return out


def _arm_quantities(w, a, y, probs):
    """Per-atom P(A=1|W), E[Y|A=1,W], E[Y|A=0,W]."""
    gw = group_labels(w)
    a = np.asarray(a, dtype=int)
    pi1 = _group_mean(a.astype(float), probs, gw)
    mu = {}
    for arm in (0, 1):
        mu_arm = np.zeros(len(probs))
        for g in np.unique(gw):
            mask = gw == g
            sel = mask & (a == arm)
            p_sel = probs[sel].sum()
            if p_sel <= 0:
                raise ValidationError("positivity: every covariate value needs both treatment arms")
            mu_arm[mask] = probs[sel] @ y[sel] / p_sel
        mu[arm] = mu_arm
    return pi1, mu[1], mu[0]


def ex3_dgp(w, y, probs, name="") -> DiscreteDgp:
    """R = E[Y|W], S = 0."""
    probs = np.asarray(probs, dtype=float)
    y = np.asarray(y, dtype=float)
    mu = _group_mean(y, probs, group_labels(w))
    zeros = np.zeros_like(y)
    return DiscreteDgp(w=w, y=y, probs=probs, r=mu, s=zeros, dr=y - mu, ds=zeros, name=name)


def ex1_dgp(w, a, y, probs, name="") -> DiscreteDgp:
    """R = E[Y|A=1,W] - E[Y|A=0,W], S = 0."""
    probs = np.asarray(probs, dtype=float)
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=int)
    pi1, mu1, mu0 = _arm_quantities(w, a, y, probs)
    pi_a = np.where(a == 1, pi1, 1.0 - pi1)
    mu_a = np.where(a == 1, mu1, mu0)
    zeros = np.zeros_like(y)
    return DiscreteDgp(w=w, a=a, y=y, probs=probs, r=mu1 - mu0, s=zeros,
                       dr=(2 * a - 1) / pi_a * (y - mu_a), ds=zeros, name=name)


def ex2_dgp(w, a, y, probs, name="") -> DiscreteDgp:
    """R = E[Y|A=1,W], S = E[Y|A=0,W]."""
    probs = np.asarray(probs, dtype=float)
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=int)
    pi1, mu1, mu0 = _arm_quantities(w, a, y, probs)
    return DiscreteDgp(w=w, a=a, y=y, probs=probs, r=mu1, s=mu0,
                       dr=a / pi1 * (y - mu1), ds=(1 - a) / (1.0 - pi1) * (y - mu0), name=name)


# ---------------------------------------------------------------------------
# Exact parameter values
# ---------------------------------------------------------------------------


def exact_phi(dgp: DiscreteDgp, which: str = "RR") -> float:
    """sum_i sum_j p_i p_j exp(-|T(o_i) - U(o_j)|^2) for (T, U) named by ``which``."""
    pick = {"R": dgp.r, "S": dgp.s}
    which = which.upper()
    if len(which) != 2 or set(which) - set("RS"):
        raise ValueError("which must be one of RR, RS, SR, SS")
    t, u = pick[which[0]], pick[which[1]]
    sq = np.sum((t[:, None, :] - u[None, :, :]) ** 2, axis=-1)
    return float(dgp.probs @ np.exp(-sq) @ dgp.probs)


def exact_psi(dgp: DiscreteDgp) -> float:
    return exact_phi(dgp, "RR") - 2.0 * exact_phi(dgp, "RS") + exact_phi(dgp, "SS")


def gamma_on_support(dgp: DiscreteDgp) -> np.ndarray:
    return gamma_matrix(dgp.evaluations()).values


def exact_gamma_mean(dgp: DiscreteDgp) -> tuple[np.ndarray, float]:
    """Row means of the kernel under ``probs`` and their overall mean.

    The overall mean equals Psi for the distribution's own functionals, and
    the row means vanish identically under the null.
    """
    g = gamma_on_support(dgp)
    rowwise = g @ dgp.probs
    return rowwise, float(dgp.probs @ rowwise)


def first_order_gradient(dgp: DiscreteDgp) -> np.ndarray:
    rowwise, _ = exact_gamma_mean(dgp)
    return 2.0 * (rowwise - exact_psi(dgp))


def same_distribution(r, s, probs, decimals: int = 12) -> bool:
    """Whether R(O) and S(O) have the same law (probability mass aggregated per value)."""
    def law(v):
        v = np.round(np.asarray(v, dtype=float).reshape(len(probs), -1), decimals)
        keys, inv = np.unique(v, axis=0, return_inverse=True)
        mass = np.bincount(inv.reshape(-1), weights=probs, minlength=len(keys))
        keep = mass > 1e-15
        return keys[keep], np.round(mass[keep], decimals)

    kr, mr = law(r)
    ks, ms = law(s)
    return kr.shape == ks.shape and np.array_equal(kr, ks) and np.array_equal(mr, ms)


def taylor_kernel(t, u, dt, du, eps: float = 1e-4) -> np.ndarray:
    """k + dt.grad_t k + du.grad_u k + dt' grad_t grad_u' k du for k(t, u) = exp(-|t - u|^2).

    Derivatives are central finite differences of the Gaussian kernel itself,
    so this shares no algebra with the closed-form kernel.  Inputs are (n, d)
    and (m, d); the result is (n, m).
    """
    def k(a, b):
        return np.exp(-np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1))

    t, u, dt, du = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (t, u, dt, du))
    first_t = (k(t + eps * dt, u) - k(t - eps * dt, u)) / (2 * eps)
    first_u = (k(t, u + eps * du) - k(t, u - eps * du)) / (2 * eps)
    mixed = (k(t + eps * dt, u + eps * du) - k(t + eps * dt, u - eps * du)
             - k(t - eps * dt, u + eps * du) + k(t - eps * dt, u - eps * du)) / (4 * eps * eps)
    return k(t, u) + first_t + first_u + mixed


# ---------------------------------------------------------------------------
# Remainders
# ---------------------------------------------------------------------------


def _check_same_support(p: DiscreteDgp, q: DiscreteDgp) -> None:
    if p.m != q.m or not np.array_equal(p.w, q.w) or not np.array_equal(p.y, q.y):
        raise MismatchedSupport("distributions must share the same atoms")
    if (p.a is None) != (q.a is None) or (p.a is not None and not np.array_equal(p.a, q.a)):
        raise MismatchedSupport("distributions must share the same atoms")


def linearization_remainder(dgp_p: DiscreteDgp, dgp0: DiscreteDgp, which: str = "R") -> np.ndarray:
    """Per-atom T_P(o) - T_0(o) + E_0[D_P^T(O) | X^T = x^T(o)].

    ``dgp_p`` carries P's functionals and gradients on the atoms of ``dgp0``.
    """
    _check_same_support(dgp_p, dgp0)
    if which == "R":
        t_p, t_0, d_p, x = dgp_p.r, dgp0.r, dgp_p.dr, dgp0.x_r
    elif which == "S":
        t_p, t_0, d_p, x = dgp_p.s, dgp0.s, dgp_p.ds, dgp0.x_s
    else:
        raise ValueError("which must be 'R' or 'S'")
    return t_p - t_0 + _group_mean(d_p, dgp0.probs, x)


def perturbed(dgp0: DiscreteDgp, dgp_p: DiscreteDgp) -> DiscreteDgp:
    """P's functionals on P0's atoms and weights, with exact linearization remainders."""
    _check_same_support(dgp_p, dgp0)
    return replace(
        dgp_p, probs=dgp0.probs, x_r=dgp0.x_r, x_s=dgp0.x_s,
        rem_r=linearization_remainder(dgp_p, dgp0, "R"),
        rem_s=linearization_remainder(dgp_p, dgp0, "S"),
        name=f"{dgp0.name}~perturbed",
    )


def _lp_norm(f: np.ndarray, probs: np.ndarray, p: int) -> float:
    return float(probs @ np.abs(f) ** p) ** (1.0 / p)


def exact_remainder_bounds(dgp0: DiscreteDgp, dgp_p: DiscreteDgp) -> tuple[float, float, float]:
    """Exact remainder P0^2 Gamma_P - psi_0 and the two rate bounds built from L and M.

    Returns ``(rem_psi, k0, k1)`` with
    k0 = |L|_2 |M|_2 + |L|_1^2 + |M|_4^4 and k1 = |L|_1 + |M|_2^2
    (norms in L^p(P0)).  ``dgp_p`` must come from :func:`perturbed`.
    """
    _check_same_support(dgp_p, dgp0)
    if not np.array_equal(dgp_p.probs, dgp0.probs):
        raise MismatchedSupport("perturbed distribution must carry P0's probabilities")
    if dgp_p.rem_r is None or dgp_p.rem_s is None:
        raise ValidationError("perturbed distribution must carry remainder values")
    p0 = dgp0.probs
    g_p = gamma_on_support(dgp_p)
    rem_psi = float(p0 @ g_p @ p0) - exact_psi(dgp0)

    def pointwise_max(x, y):
        return np.maximum(np.max(np.abs(x), axis=-1) if x.ndim > 1 else np.abs(x),
                          np.max(np.abs(y), axis=-1) if y.ndim > 1 else np.abs(y))

    big_l = pointwise_max(dgp_p.rem_r, dgp_p.rem_s)
    big_m = pointwise_max(dgp_p.r - dgp0.r, dgp_p.s - dgp0.s)
    k0 = (_lp_norm(big_l, p0, 2) * _lp_norm(big_m, p0, 2) + _lp_norm(big_l, p0, 1) ** 2
          + _lp_norm(big_m, p0, 4) ** 4)
    k1 = _lp_norm(big_l, p0, 1) + _lp_norm(big_m, p0, 2) ** 2
    return rem_psi, k0, k1


def remainder_ex1_by_definition(dgp0: DiscreteDgp, mu_hat: Callable, pi_hat: Callable) -> np.ndarray:
    """Linearization remainder of the blip for fitted (mu_hat, pi_hat), straight from its definition.

    ``mu_hat(a, w)`` and ``pi_hat(a, w)`` are vectorised over atoms.
    """
    a = dgp0.a
    w = dgp0.w
    mu1, mu0 = mu_hat(np.ones_like(a), w), mu_hat(np.zeros_like(a), w)
    mu_a = np.where(a == 1, mu1, mu0)
    pi_a = pi_hat(a, w)
    r_p = mu1 - mu0
    d_p = (2 * a - 1) / pi_a * (dgp0.y - mu_a)
    return r_p - dgp0.r[:, 0] + _group_mean(d_p, dgp0.probs, dgp0.x_r)


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------


def _binary_noise_table(w_vals, arms, means, spread):
    """Atoms (w, a, y) with y = mean +/- spread, equal split within each (w, a) cell."""
    ws, as_, ys = [], [], []
    for w in w_vals:
        for a in arms:
            m = means[(w, a)]
            sp = spread[(w, a)]
            for y in (m - sp, m + sp):
                ws.append(w)
                as_.append(a)
                ys.append(y)
    return np.array(ws, dtype=float), np.array(as_, dtype=int), np.array(ys, dtype=float)


def _cell_probs(w, a, p_w: dict, p_a1: dict) -> np.ndarray:
    probs = np.array([p_w[wi] * (p_a1[wi] if ai == 1 else 1 - p_a1[wi]) / 2.0
                      for wi, ai in zip(w, a)])
    return probs / probs.sum()


def h0_fixtures() -> list[DiscreteDgp]:
    """Distributions under which R_0(O) and S_0(O) have the same law."""
    out = []

    # conditional mean identically zero, skewed noise
    w = np.array([0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 2.0])
    y = np.array([-1.0, 1.0, -2.0, 1.0, 1.0, 0.5, -0.5])
    probs = np.array([0.1, 0.1, 0.1, 0.1, 0.1, 0.25, 0.25])
    out.append(ex3_dgp(w, y, probs, name="ex3_zero_mean"))

    # two populations whose regressions are permutations of each other
    w_vals = (0.0, 1.0)
    means = {(0.0, 1): 0.0, (1.0, 1): 0.6, (0.0, 0): 0.6, (1.0, 0): 0.0}
    spread = {(0.0, 1): 0.3, (1.0, 1): 0.2, (0.0, 0): 0.5, (1.0, 0): 0.1}
    w, a, y = _binary_noise_table(w_vals, (0, 1), means, spread)
    probs = _cell_probs(w, a, {0.0: 0.5, 1.0: 0.5}, {0.0: 0.3, 1.0: 0.6})
    out.append(ex2_dgp(w, a, y, probs, name="ex2_swapped_regressions"))

    # three covariate values, cyclic permutation with equal covariate masses
    w_vals = (0.0, 1.0, 2.0)
    mu1 = {0.0: -0.4, 1.0: 0.1, 2.0: 0.9}
    mu0 = {0.0: 0.1, 1.0: 0.9, 2.0: -0.4}
    means = {**{(k, 1): v for k, v in mu1.items()}, **{(k, 0): v for k, v in mu0.items()}}
    spread = {(k, arm): 0.2 + 0.1 * k + 0.05 * arm for k in w_vals for arm in (0, 1)}
    w, a, y = _binary_noise_table(w_vals, (0, 1), means, spread)
    probs = _cell_probs(w, a, {k: 1 / 3 for k in w_vals}, {0.0: 0.5, 1.0: 0.2, 2.0: 0.7})
    out.append(ex2_dgp(w, a, y, probs, name="ex2_cyclic_permutation"))

    # no treatment effect, non-constant propensity
    w_vals = (-1.0, 0.0, 1.0)
    mu = {-1.0: 0.3, 0.0: -0.2, 1.0: 0.7}
    means = {(k, arm): v for k, v in mu.items() for arm in (0, 1)}
    spread = {(k, arm): 0.4 - 0.1 * arm for k in w_vals for arm in (0, 1)}
    w, a, y = _binary_noise_table(w_vals, (0, 1), means, spread)
    probs = _cell_probs(w, a, {-1.0: 0.2, 0.0: 0.5, 1.0: 0.3}, {-1.0: 0.25, 0.0: 0.5, 1.0: 0.8})
    out.append(ex1_dgp(w, a, y, probs, name="ex1_null_blip"))
    return out


def h1_fixtures() -> list[DiscreteDgp]:
    """Distributions under which the two laws differ."""
    out = []

    w = np.array([0.0, 0.0, 1.0, 1.0])
    y = np.array([0.0, 1.0, -0.5, 0.5])
    out.append(ex3_dgp(w, y, np.full(4, 0.25), name="ex3_nonzero_mean"))

    w_vals = (-1.0, 0.0, 1.0)
    means = {(k, arm): 0.1 * k + 0.5 * arm * k for k in w_vals for arm in (0, 1)}
    spread = {(k, arm): 0.3 for k in w_vals for arm in (0, 1)}
    w, a, y = _binary_noise_table(w_vals, (0, 1), means, spread)
    probs = _cell_probs(w, a, {-1.0: 0.3, 0.0: 0.3, 1.0: 0.4}, {-1.0: 0.4, 0.0: 0.5, 1.0: 0.6})
    out.append(ex1_dgp(w, a, y, probs, name="ex1_linear_blip"))

    w_vals = (0.0, 1.0)
    means = {(0.0, 1): 0.2, (1.0, 1): 0.8, (0.0, 0): 0.0, (1.0, 0): 0.1}
    spread = {(k, arm): 0.25 for k in w_vals for arm in (0, 1)}
    w, a, y = _binary_noise_table(w_vals, (0, 1), means, spread)
    probs = _cell_probs(w, a, {0.0: 0.4, 1.0: 0.6}, {0.0: 0.5, 1.0: 0.5})
    out.append(ex2_dgp(w, a, y, probs, name="ex2_shifted_regressions"))

    out.append(constant_functionals_fixture())
    return out


def constant_functionals_fixture(c_r: float = 0.3, c_s: float = -0.4) -> DiscreteDgp:
    """R and S constant but unequal, with identical gradients."""
    w = np.array([0.0, 0.0, 0.0, 0.0])
    y = np.array([-1.0, -0.2, 0.4, 0.8])
    probs = np.array([0.2, 0.3, 0.3, 0.2])
    d = y - probs @ y
    return DiscreteDgp(w=w, y=y, probs=probs, r=np.full(4, c_r), s=np.full(4, c_s),
                       dr=d, ds=d, name="constant_functionals")


def random_ex3_fixture(rng: np.random.Generator, n_w: int = 3, n_y: int = 3,
                       null: bool = False) -> DiscreteDgp:
    """Random conditional-mean fixture; ``null`` recentres Y within each covariate value."""
    w = np.repeat(np.arange(n_w, dtype=float), n_y)
    y = rng.uniform(-1, 1, size=n_w * n_y)
    probs = rng.dirichlet(np.ones(n_w * n_y))
    if null:
        y = y - _group_mean(y, probs, group_labels(w))
    return ex3_dgp(w, y, probs, name="random_ex3")


def ex3_perturbation_pair(null: bool, eps: float, h=(1.0, -1.0, 1.0)) -> tuple[DiscreteDgp, DiscreteDgp]:
    """A conditional-mean distribution P0 and a tilted P whose regression moves by ~eps*h.

    P keeps P0's covariate law and tilts Y within each covariate value, so
    the regression moves while its linearization remainder stays exactly 0.
    """
    w = np.repeat([0.0, 1.0, 2.0], 3)
    base = np.array([-0.8, 0.1, 0.6, -0.3, 0.2, 0.9, -1.0, 0.4, 0.5])
    p_cell = np.array([0.3, 0.4, 0.3, 0.2, 0.5, 0.3, 0.25, 0.25, 0.5])
    p_w = np.array([0.3, 0.3, 0.4])
    probs0 = p_cell * np.repeat(p_w, 3)
    probs0 = probs0 / probs0.sum()
    labels = group_labels(w)
    y = base - _group_mean(base, probs0, labels)
    if not null:
        y = y + 0.5 * np.repeat([-1.0, 0.2, 1.0], 3)
    dgp0 = ex3_dgp(w, y, probs0, name="ex3_null" if null else "ex3_alt")

    # linear tilt within cells: P(y|w) = P0(y|w) (1 + theta_w (y - E0[Y|w])), so
    # E_P[Y|w] = E0[Y|w] + eps * h_w exactly and the covariate law is unchanged
    tilt = np.repeat(np.asarray(h, dtype=float), 3)
    yc = y - _group_mean(y, probs0, labels)
    var = _group_mean(yc ** 2, probs0, labels)
    probs_p = probs0 * (1.0 + eps * tilt / var * yc)
    if np.any(probs_p < 0):
        raise ValidationError("perturbation too large: negative probabilities")
    dgp_p = ex3_dgp(w, y, probs_p / probs_p.sum(), name="tilted")
    return dgp0, perturbed(dgp0, dgp_p)


# ---------------------------------------------------------------------------
# Identity suite (used by the CLI self-check)
# ---------------------------------------------------------------------------


@dataclass
class IdentityCheck:
    name: str
    passed: bool
    detail: str


def run_identity_checks() -> list[IdentityCheck]:
    checks: list[IdentityCheck] = []

    def add(name, passed, detail):
        checks.append(IdentityCheck(name, bool(passed), detail))

    h0, h1 = h0_fixtures(), h1_fixtures()
    for dgp in h0 + h1:
        _, total = exact_gamma_mean(dgp)
        psi = exact_psi(dgp)
        add(f"kernel mean equals psi [{dgp.name}]", abs(total - psi) <= 1e-12,
            f"|P^2 Gamma - Psi| = {abs(total - psi):.3e}")
    for dgp in h0:
        rowwise, _ = exact_gamma_mean(dgp)
        add(f"one-degenerate under null [{dgp.name}]", np.max(np.abs(rowwise)) <= 1e-10,
            f"max |row mean| = {np.max(np.abs(rowwise)):.3e}")
        add(f"psi zero under null [{dgp.name}]", abs(exact_psi(dgp)) <= 1e-12,
            f"Psi = {exact_psi(dgp):.3e}")
    degenerate_rows = [np.max(np.abs(exact_gamma_mean(d)[0])) for d in h1]
    add("not one-degenerate on some alternative", max(degenerate_rows) > 1e-6,
        f"max row-mean magnitude over alternatives = {max(degenerate_rows):.3e}")
    const = constant_functionals_fixture()
    d1 = first_order_gradient(const)
    add("first-order gradient vanishes for constant R, S with equal gradients",
        np.max(np.abs(d1)) <= 1e-12, f"max |D1| = {np.max(np.abs(d1)):.3e}")

    for null, target in ((True, 16.0), (False, 4.0)):
        rems = []
        for eps in (0.02, 0.04):
            dgp0, dgp_p = ex3_perturbation_pair(null, eps)
            rems.append(exact_remainder_bounds(dgp0, dgp_p)[0])
        ratio = rems[1] / rems[0]
        label = "fourth" if null else "second"
        add(f"remainder is {label} order ({'null' if null else 'alternative'})",
            abs(ratio - target) <= 0.1 * target, f"rem(2e)/rem(e) = {ratio:.4f}, target {target}")

    rng = np.random.default_rng(0)
    for d in (1, 3):
        t, u, dt, du = (rng.uniform(-1.5, 1.5, size=(6, d)) for _ in range(4))
        reference = taylor_kernel(t, u, dt, du)
        err_matrix = np.max(np.abs(pair_matrix(t, u, dt, du) - reference))
        err_pair = np.max(np.abs(gamma_tu(t[:, None, :], u[None, :, :], dt[:, None, :],
                                          du[None, :, :]) - reference))
        add(f"kernel equals Taylor expansion of the Gaussian kernel (d={d})",
            max(err_matrix, err_pair) <= 1e-6,
            f"max deviation: matrix {err_matrix:.2e}, pairwise {err_pair:.2e}")

    z2 = np.array([0.0, 1.0])
    single = DiscreteDgp(w=z2, y=z2, probs=[0.5, 0.5], r=z2, s=np.zeros(2), dr=np.zeros(2),
                         ds=np.zeros(2))
    expect = 0.5 + 0.5 * np.exp(-1.0)
    add("two-atom Phi^RR", abs(exact_phi(single, "RR") - expect) <= 1e-15,
        f"Phi^RR = {exact_phi(single, 'RR'):.15f}")
    return checks
