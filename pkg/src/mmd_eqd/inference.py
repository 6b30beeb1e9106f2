"""Test statistic, null calibration and the accept/reject decision."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg
from scipy import stats

from .core import (ALL, Calibration, NumericalError, RngSeed, TestConfig,
                   ValidationError, iter_chunks)
from .kernel import FunctionalEvaluations, GammaMatrix, centered_gram, gamma_matrix

DENSE_EIGEN_LIMIT = 2000
CHEBYSHEV_CONSTANT = 6.2


class NotDegenerateS(ValidationError):
    pass


class UnsupportedAlpha(ValidationError):
    pass


class EigensolverFailure(NumericalError):
    pass


class ZeroVarianceWarning(RuntimeWarning):
    pass


def _offdiag_sum(m: np.ndarray) -> float:
    # row sums are pairwise-summed by numpy; fsum makes the reduction exact
    return math.fsum(m.sum(axis=1)) - math.fsum(np.diag(m))


def u_statistic(g: GammaMatrix | np.ndarray) -> float:
    """Average of the kernel over the n(n-1) ordered off-diagonal pairs."""
    v = g.values if isinstance(g, GammaMatrix) else np.asarray(g, dtype=float)
    n = v.shape[0]
    if n < 2:
        raise ValidationError("need at least two observations")
    return _offdiag_sum(v) / (n * (n - 1))


def v_statistic(g: GammaMatrix | np.ndarray) -> float:
    v = g.values if isinstance(g, GammaMatrix) else np.asarray(g, dtype=float)
    return math.fsum(v.sum(axis=1)) / v.size


def second_moment(g: GammaMatrix | np.ndarray) -> float:
    """U-statistic of the squared kernel, estimating the second moment under the product law."""
    v = g.values if isinstance(g, GammaMatrix) else np.asarray(g, dtype=float)
    return u_statistic(v * v)


@dataclass(frozen=True)
class EigenSpectrum:
    lambda_hat: np.ndarray
    dropped_negative_count: int = 0

    @property
    def kept_count(self) -> int:
        return len(self.lambda_hat)

    def to_dict(self) -> dict:
        return {"lambda_hat": [float(x) for x in self.lambda_hat],
                "kept_count": self.kept_count,
                "dropped_negative_count": self.dropped_negative_count}


def eigen_spectrum(centered: np.ndarray, eigen_count: int | str = ALL) -> EigenSpectrum:
    """Positive eigenvalues of a centred Gram matrix divided by n, descending.

    With an integer ``eigen_count`` only the algebraically largest
    ``eigen_count`` eigenvalues are computed.  Eigenvalues within rounding
    of zero are treated as zero and dropped silently; clearly negative ones
    are dropped and counted.
    """
    c = np.asarray(centered, dtype=float)
    n = c.shape[0]
    if c.shape != (n, n):
        raise ValidationError("centred Gram matrix must be square")
    scale = float(np.max(np.abs(c))) if c.size else 0.0
    if not np.allclose(c, c.T, rtol=0, atol=1e-9 * max(scale, 1.0)):
        raise ValidationError("centred Gram matrix is not symmetric")
    if scale == 0.0:
        return EigenSpectrum(np.empty(0), 0)

    k = n if eigen_count == ALL else int(eigen_count)
    if k < 1 or k > n:
        raise ValidationError(f"eigen_count must lie in 1..{n}")
    try:
        if k == n:
            nu = scipy.linalg.eigh(c, eigvals_only=True)
        elif n <= DENSE_EIGEN_LIMIT or k >= n - 1:
            nu = scipy.linalg.eigh(c, eigvals_only=True, subset_by_index=[n - k, n - 1])
        else:
            nu = scipy.sparse.linalg.eigsh(c, k=k, which="LA", return_eigenvectors=False)
    except (np.linalg.LinAlgError, scipy.sparse.linalg.ArpackNoConvergence) as exc:
        raise EigensolverFailure(str(exc)) from exc
    if not np.all(np.isfinite(nu)):
        raise EigensolverFailure("eigensolver returned non-finite values")

    tol = n * np.finfo(float).eps * max(scale * n, 1e-300)
    nu = np.sort(nu)[::-1]
    kept = nu[nu > tol]
    dropped = int(np.sum(nu < -tol))
    return EigenSpectrum(kept / n, dropped)


def null_draws(spectrum: EigenSpectrum, mc_draws: int, seed: RngSeed,
               chunk: int = 8192) -> np.ndarray:
    """Independent draws of sum_k lambda_k (Z_k^2 - 1)."""
    lam = np.asarray(spectrum.lambda_hat, dtype=float)
    out = np.zeros(mc_draws)
    if lam.size == 0:
        return out
    rng = seed.generator()
    rows = max(1, min(chunk, (1 << 22) // lam.size))
    for lo, hi in iter_chunks(mc_draws, rows):
        z = rng.standard_normal((hi - lo, lam.size))
        out[lo:hi] = (z * z - 1.0) @ lam
    return out


def quantile_mc(spectrum: EigenSpectrum, alpha: float, mc_draws: int, seed: RngSeed) -> float:
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    if spectrum.kept_count == 0:
        return 0.0
    draws = null_draws(spectrum, mc_draws, seed)
    return float(np.quantile(draws, 1.0 - alpha, method="inverted_cdf"))


def _require_degenerate_s(fe: FunctionalEvaluations) -> None:
    if np.any(fe.s != 0) or np.any(fe.ds != 0):
        raise NotDegenerateS("closed-form cutoff needs S == 0 and D^S == 0")
    if fe.d != 1:
        raise NotDegenerateS("closed-form cutoff is only defined for scalar functionals")


def cutoff_degenerate_s(fe: FunctionalEvaluations, alpha: float) -> tuple[float, float]:
    """Closed-form cutoff 2 (z_{1-alpha/2}^2 - 1) * mean(dr^2) for S == 0."""
    _require_degenerate_s(fe)
    sigma_sq = float(np.mean(fe.dr[:, 0] ** 2))
    if sigma_sq == 0.0:
        warnings.warn("estimated variance of D^R is zero; cutoff set to 0", ZeroVarianceWarning,
                      stacklevel=2)
        return 0.0, 0.0
    z = stats.norm.ppf(1.0 - alpha / 2.0)
    return 2.0 * (z * z - 1.0) * sigma_sq, sigma_sq


def cutoff_chebyshev(second_moment: float, alpha: float = 0.05) -> float:
    if not math.isclose(alpha, 0.05, rel_tol=0, abs_tol=1e-12):
        raise UnsupportedAlpha("the Chebyshev cutoff is only available at alpha = 0.05")
    if second_moment < 0:
        raise ValidationError("second moment must be non-negative")
    return CHEBYSHEV_CONSTANT * math.sqrt(second_moment)


@dataclass
class TestResult:
    __test__ = False

    psi_n: float
    n_psi_n: float
    cutoff: float
    reject: bool
    method: Calibration
    alpha: float
    n: int
    second_moment: float
    p_value: float | None = None
    spectrum: EigenSpectrum | None = None
    sigma_r_sq_hat: float | None = None
    seed: RngSeed | None = None
    bandwidth: float = 1.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "psi_n": self.psi_n,
            "n_psi_n": self.n_psi_n,
            "cutoff": self.cutoff,
            "method": Calibration(self.method).value,
            "alpha": self.alpha,
            "reject": bool(self.reject),
            "second_moment": self.second_moment,
            "n": self.n,
            "bandwidth": self.bandwidth,
        }
        if self.p_value is not None:
            d["p_value"] = self.p_value
        if self.spectrum is not None:
            d["spectrum"] = {"lambda_hat": [float(x) for x in self.spectrum.lambda_hat],
                             "dropped_negative_count": self.spectrum.dropped_negative_count}
        if self.sigma_r_sq_hat is not None:
            d["sigma_r_sq_hat"] = self.sigma_r_sq_hat
        if self.seed is not None:
            d["seed"] = {"seed": self.seed.seed, "stream": self.seed.stream}
        d.update(self.extra)
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def summary(self) -> str:
        return (f"reject H0: {'yes' if self.reject else 'no'} "
                f"(n psi_n = {self.n_psi_n:.6g}, cutoff = {self.cutoff:.6g})")


def run_test(fe: FunctionalEvaluations, config: TestConfig | None = None) -> TestResult:
    """Compute psi_n on ``fe`` and calibrate it with the configured method.

    ``fe`` holds raw (unscaled) evaluations; the bandwidth rescaling is applied here.
    """
    config = config or TestConfig()
    method = config.calibration
    if method is Calibration.DEGENERATE_S:
        _require_degenerate_s(fe)
    scaled = fe.rescaled(config.bandwidth) if config.bandwidth != 1.0 else fe
    g = gamma_matrix(scaled)
    n = g.n
    psi = u_statistic(g)
    m2 = second_moment(g)
    stat = n * psi
    spectrum = None
    sigma_sq = None
    p_value = None

    if method is Calibration.DEGENERATE_S:
        cutoff, sigma_sq = cutoff_degenerate_s(scaled, config.alpha)
        if sigma_sq > 0:
            p_value = float(stats.chi2.sf(1.0 + stat / (2.0 * sigma_sq), df=1))
        else:
            p_value = 0.0 if stat > 0 else 1.0
    elif method is Calibration.GRAM_EIGEN:
        spectrum = eigen_spectrum(centered_gram(g), config.resolved_eigen_count(n))
        if spectrum.kept_count == 0:
            cutoff = 0.0
            p_value = 0.0 if stat > 0 else 1.0
        else:
            draws = null_draws(spectrum, config.mc_draws, config.seed)
            cutoff = float(np.quantile(draws, 1.0 - config.alpha, method="inverted_cdf"))
            p_value = float(np.mean(draws >= stat))
    else:
        cutoff = cutoff_chebyshev(m2, config.alpha)

    return TestResult(
        psi_n=psi, n_psi_n=stat, cutoff=cutoff, reject=bool(stat > cutoff),
        method=method, alpha=config.alpha, n=n, second_moment=m2, p_value=p_value,
        spectrum=spectrum, sigma_r_sq_hat=sigma_sq, seed=config.seed,
        bandwidth=config.bandwidth,
    )
