from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import structlog

from fgo.factors import Factor
from fgo.solver import build_normal_equations
from fgo.states import Key, VariableKind, dimension, local

logger = structlog.get_logger()

EIGEN_TOLERANCE = 1e-10


@dataclass
class MarginalPrior:
    keys: List[Key]
    linearization_point: Dict[Key, np.ndarray]
    information: np.ndarray          # H*, symmetric PSD
    information_vector: np.ndarray   # b*, gradient at the linearization point
    sqrt_information: np.ndarray     # S with SᵀS = H*
    residual0: np.ndarray            # r0 with Sᵀr0 = b*


def schur_complement(H: np.ndarray, b: np.ndarray, n_marginal: int) -> Tuple[np.ndarray, np.ndarray]:
    """Eliminates the leading ``n_marginal`` coordinates from (H, b)."""
    Hmm = H[:n_marginal, :n_marginal]
    Hmr = H[:n_marginal, n_marginal:]
    Hrr = H[n_marginal:, n_marginal:]
    Hmm_inv = scipy.linalg.pinvh(0.5 * (Hmm + Hmm.T), atol=EIGEN_TOLERANCE)
    H_star = Hrr - Hmr.T @ Hmm_inv @ Hmr
    b_star = b[n_marginal:] - Hmr.T @ Hmm_inv @ b[:n_marginal]
    return 0.5 * (H_star + H_star.T), b_star


def factorize_prior(H_star: np.ndarray, b_star: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Square-root form (S, r0) of a quadratic prior, clamping negative eigenvalues."""
    w, U = np.linalg.eigh(H_star)
    scale = max(float(np.abs(w).max()) if w.size else 0.0, 1.0)
    if w.size and w.min() < -EIGEN_TOLERANCE * scale:
        logger.warning("marginal_prior_repaired", min_eigenvalue=float(w.min()), size=len(w))
    keep = w > EIGEN_TOLERANCE * scale
    w, U = w[keep], U[:, keep]
    S = np.sqrt(w)[:, None] * U.T
    r0 = (U.T @ b_star) / np.sqrt(w)
    return S, r0


class MarginalPriorFactor(Factor):
    """Quadratic prior left behind by marginalization, with first-estimate Jacobians."""
    kind = "marginal"

    def __init__(self, prior: MarginalPrior):
        super().__init__(prior.keys)
        self.prior = prior
        self._blocks = []
        offset = 0
        for key in prior.keys:
            n = dimension(key)
            self._blocks.append(prior.sqrt_information[:, offset:offset + n])
            offset += n

    def linearize(self, values):
        dx = np.concatenate([local(k, values[k], self.prior.linearization_point[k]) for k in self.keys])
        r = self.prior.residual0 + self.prior.sqrt_information @ dx
        return r, list(self._blocks)


def _marginal_keys(window, index: int) -> Tuple[List[Key], List[Factor]]:
    keys = [k for k in window.state_keys(index) if k in window.values]
    removed = window.factors_touching(keys)
    removed_ids = {id(f) for f in removed}
    candidates = {k for f in removed for k in f.keys if k[0] == VariableKind.AMBIGUITY}
    kept = [f for f in window.factors if id(f) not in removed_ids]
    # an arc's own prior does not keep it alive
    still_used = {k for f in kept if len(f.keys) > 1 for k in f.keys}
    retired = sorted(candidates - still_used, key=str)
    retired_set = set(retired)
    removed = removed + [f for f in kept if len(f.keys) == 1 and f.keys[0] in retired_set]
    keys.extend(retired)
    return keys, removed


def marginalize(window, huber_delta: float = 1.345, index: Optional[int] = None) -> Optional[MarginalPrior]:
    """Removes the oldest state from ``window`` and replaces its factors by a prior.

    Ambiguity arcs seen only by the removed factors (apart from their own
    prior) are eliminated with it, so a retired arc leaves the window once
    the last state that observed it is marginalized.
    Mount extrinsics and the lever arm always stay in the window.
    """
    index = window.oldest if index is None else index
    if index is None:
        raise ValueError("nothing to marginalize")
    marginal, removed = _marginal_keys(window, index)
    marginal_set = set(marginal)
    retained: List[Key] = []
    for factor in removed:
        for key in factor.keys:
            if key not in marginal_set and key not in window.fixed and key not in retained:
                retained.append(key)
    free_marginal = [k for k in marginal if k not in window.fixed]

    prior = None
    if retained:
        ordering, size = window.ordering(free_marginal + retained)
        _, H, b = build_normal_equations(removed, window.values, ordering, size, huber_delta)
        n_m = sum(dimension(k) for k in free_marginal)
        H_star, b_star = schur_complement(H, b, n_m)
        asymmetry = float(np.abs(H_star - H_star.T).max()) if H_star.size else 0.0
        S, r0 = factorize_prior(H_star, b_star)
        prior = MarginalPrior(
            keys=retained,
            linearization_point={k: window.values[k].copy() for k in retained},
            information=H_star,
            information_vector=b_star,
            sqrt_information=S,
            residual0=r0,
        )
        logger.debug("state_marginalized", index=index, marginal_dim=n_m, retained=len(retained),
                     rank=int(S.shape[0]), asymmetry=asymmetry)

    removed_ids = {id(f) for f in removed}
    window.remove_factors(lambda f: id(f) in removed_ids)
    window.remove_variables([k for k in marginal if k[0] == VariableKind.AMBIGUITY])
    window.drop_state(index)
    if prior is not None and prior.sqrt_information.shape[0] > 0:
        window.add_factor(MarginalPriorFactor(prior))
    return prior
