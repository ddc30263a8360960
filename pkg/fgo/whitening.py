import numpy as np
import scipy.linalg
import structlog

logger = structlog.get_logger()


def sqrt_information(cov: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Matrix S with SᵀS = Σ⁻¹, so that ``S @ r`` is a whitened residual."""
    cov = 0.5 * (cov + cov.T)
    if floor > 0.0:
        cov = cov + floor * np.eye(len(cov))
    try:
        L = scipy.linalg.cholesky(cov, lower=True)
        return scipy.linalg.solve_triangular(L, np.eye(len(cov)), lower=True)
    except scipy.linalg.LinAlgError:
        w, U = scipy.linalg.eigh(cov)
        tiny = max(float(w.max()), 1.0) * 1e-12
        logger.warning("covariance_not_positive_definite", min_eigenvalue=float(w.min()), size=len(cov))
        return (U / np.sqrt(np.maximum(w, tiny))).T
