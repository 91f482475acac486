"""Least-squares channel estimation and the LMMSE baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..airlink import Constellation
from .llr import llr_map


class SolveError(np.linalg.LinAlgError):
    """The LMMSE normal matrix could not be inverted."""


@dataclass(frozen=True)
class ChannelEstimate:
    H_hat: np.ndarray


def chest_ls(Y_pilot, pilots) -> ChannelEstimate:
    """``H_hat = Y_pilot @ pilots^H / P`` for pilots with orthogonal rows."""
    Y_pilot = np.asarray(Y_pilot)
    pilots = np.asarray(pilots)
    return ChannelEstimate(Y_pilot @ pilots.conj().T / pilots.shape[1])


def lmmse_detect(Y_data, H_hat, N0: float, c: Constellation):
    """Jammer-unaware LMMSE equalizer followed by max-log demapping.

    LLRs are computed from the bias-corrected estimate with its effective
    post-equalization noise variance.
    """
    from .sandman import DetectionResult

    Y_data, H_hat = np.asarray(Y_data), np.asarray(H_hat)
    U = H_hat.shape[1]
    es = c.energy
    gram = H_hat.conj().T @ H_hat
    A = gram + (N0 / es) * np.eye(U)
    try:
        W = np.linalg.solve(A, H_hat.conj().T)
    except np.linalg.LinAlgError as exc:
        raise SolveError(str(exc)) from exc
    if not np.all(np.isfinite(W)):
        raise SolveError("non-finite LMMSE filter")
    S_hat = W @ Y_data
    beta = np.real(np.diag(W @ H_hat))
    beta = np.where(beta > 0, beta, 1.0)
    nu = np.maximum(es * (1.0 / beta - 1.0), 1e-12)
    llrs = llr_map(S_hat / beta[:, None], c, 1.0)
    llrs = llrs / nu[:, None, None]
    return DetectionResult(
        S_hat=S_hat,
        llrs=llrs,
        j_hat=np.zeros(H_hat.shape[0], dtype=np.complex128),
        objective_trace=np.zeros(0),
    )
