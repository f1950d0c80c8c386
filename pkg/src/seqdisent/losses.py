"""Objective terms: ELBO, static-consistency triplet, dynamic-factor prediction,
and the static/dynamic mutual-information penalty."""

import math
from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F

from .errors import PreconditionError
from .model import GaussianParams, standard_normal

DEFAULT_LAMBDAS = (1000.0, 100.0, 1.0)
DEFAULT_MARGIN = 1.0


@dataclass
class LossBreakdown:
    recon: torch.Tensor
    kl_f: torch.Tensor
    kl_dyn: torch.Tensor
    scc: torch.Tensor
    dfp: torch.Tensor
    mi: torch.Tensor
    total: torch.Tensor
    lambdas: tuple = DEFAULT_LAMBDAS

    def as_floats(self) -> dict:
        out = {f.name: float(getattr(self, f.name)) for f in fields(self) if f.name != "lambdas"}
        out.update(lambda_scc=self.lambdas[0], lambda_dfp=self.lambdas[1], lambda_mi=self.lambdas[2])
        return out

    @property
    def elbo(self) -> torch.Tensor:
        return self.recon + self.kl_f + self.kl_dyn


def compose_total(recon, kl_f, kl_dyn, scc, dfp, mi, lambdas=DEFAULT_LAMBDAS):
    l1, l2, l3 = lambdas
    return recon + kl_f + kl_dyn + l1 * scc + l2 * dfp + l3 * mi


def reconstruction_loss(x: torch.Tensor, x_hat: torch.Tensor, likelihood: str = "bernoulli") -> torch.Tensor:
    """Negative log-likelihood summed over each sequence, averaged over the batch.

    ``bernoulli``: binary cross-entropy (targets in [0, 1]); ``gaussian``:
    squared error summed over features (unit variance, constants dropped).
    """
    if x.shape != x_hat.shape:
        raise PreconditionError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    B = x.shape[0]
    if likelihood == "bernoulli":
        if (x.min() < 0) or (x.max() > 1) or (x_hat.min() < 0) or (x_hat.max() > 1):
            raise PreconditionError("binary cross-entropy needs values in [0, 1]")
        return F.binary_cross_entropy(x_hat, x, reduction="sum") / B
    if likelihood == "gaussian":
        return ((x - x_hat) ** 2).sum() / B
    raise PreconditionError(f"unknown likelihood {likelihood!r}")


def kl_gaussians(q: GaussianParams, p: GaussianParams) -> torch.Tensor:
    """Closed-form KL(q || p) for diagonal Gaussians, summed over the last axis."""
    if q.mean.shape != p.mean.shape:
        raise PreconditionError(f"dim mismatch {tuple(q.mean.shape)} vs {tuple(p.mean.shape)}")
    var_ratio = torch.exp(q.log_var - p.log_var)
    sq = (q.mean - p.mean) ** 2 * torch.exp(-p.log_var)
    return 0.5 * (var_ratio + sq - 1.0 - (q.log_var - p.log_var)).sum(-1)


def elbo_terms(x, x_hat, q_f: GaussianParams, q_t: GaussianParams, p_t: GaussianParams,
               likelihood: str = "bernoulli"):
    """(recon, kl_f, kl_dyn), each batch-averaged; kl_dyn is summed over time."""
    if q_t.mean.shape[:2] != p_t.mean.shape[:2] or x.shape[:2] != q_t.mean.shape[:2]:
        raise PreconditionError("inconsistent batch/time dims across ELBO inputs")
    recon = reconstruction_loss(x, x_hat, likelihood)
    kl_f = kl_gaussians(q_f, standard_normal(q_f.mean.shape, q_f.mean)).mean()
    kl_dyn = kl_gaussians(q_t, p_t).sum(-1).mean()
    return recon, kl_f, kl_dyn


def elbo_loss(x, x_hat, q_f, q_t, p_t, likelihood: str = "bernoulli") -> torch.Tensor:
    recon, kl_f, kl_dyn = elbo_terms(x, x_hat, q_f, q_t, p_t, likelihood)
    return recon + kl_f + kl_dyn


def scc_triplet(anchor: torch.Tensor, positive: torch.Tensor, negative: torch.Tensor,
                margin: float = DEFAULT_MARGIN) -> torch.Tensor:
    """max(D(a, p) - D(a, n) + margin, 0) with Euclidean D, averaged over the batch."""
    if not (anchor.shape == positive.shape == negative.shape):
        raise PreconditionError("triplet members must share a shape")
    d_pos = torch.linalg.vector_norm(anchor - positive, dim=-1)
    d_neg = torch.linalg.vector_norm(anchor - negative, dim=-1)
    return torch.clamp(d_pos - d_neg + margin, min=0).mean()


def dfp_loss(logits: torch.Tensor, labels: torch.Tensor, multilabel: bool = False) -> torch.Tensor:
    """Cross-entropy of the dynamic-factor head, averaged over batch and time.

    logits: [..., K]. labels: [...] class indices, or [..., k] index sets
    when ``multilabel`` (binary cross-entropy against a k-hot target).
    """
    K = logits.shape[-1]
    labels = labels.long()
    if labels.numel() and (labels.min() < 0 or labels.max() >= K):
        raise PreconditionError(f"label indices must lie in [0, {K})")
    if multilabel:
        target = torch.zeros_like(logits).scatter_(-1, labels, 1.0)
        return F.binary_cross_entropy_with_logits(logits, target, reduction="none").sum(-1).mean()
    if labels.shape == logits.shape[:-1] + (1,):
        labels = labels.squeeze(-1)
    return F.cross_entropy(logits.reshape(-1, K), labels.reshape(-1))


def pairwise_log_density(z: torch.Tensor, q: GaussianParams) -> torch.Tensor:
    """Matrix L[i, j] = log q(z_i | x_j), summing over the latent dims.

    z: [M, d] (one sample per batch row); q: params [M, d].
    """
    mean, log_var = q.mean.unsqueeze(0), q.log_var.unsqueeze(0)
    zi = z.unsqueeze(1)
    return (-0.5 * (math.log(2 * math.pi) + log_var + (zi - mean) ** 2 * torch.exp(-log_var))).sum(-1)


def mws_from_log_density(log_qij: torch.Tensor, dataset_size: int) -> torch.Tensor:
    M = log_qij.shape[0]
    if M < 1 or dataset_size < M:
        raise PreconditionError(f"need 1 <= M <= N, got M={M}, N={dataset_size}")
    if not torch.isfinite(log_qij).all():
        raise PreconditionError("non-finite posterior log-densities in the MI estimator")
    return (torch.logsumexp(log_qij, dim=1) - math.log(dataset_size * M)).mean()


def mws_entropy_term(z: torch.Tensor, q: GaussianParams, dataset_size: int) -> torch.Tensor:
    """Minibatch weighted sampling estimate of E_q(z)[log q(z)]:

        (1/M) sum_i [ logsumexp_j log q(z(x_i) | x_j) - log(N M) ]
    """
    return mws_from_log_density(pairwise_log_density(z, q), dataset_size)


def mws_joint_entropy_term(z_f, q_f: GaussianParams, z_t, q_t: GaussianParams, dataset_size: int):
    """Same estimator for the joint (z_f, z_t) using the factorized posterior."""
    log_qij = pairwise_log_density(z_f, q_f) + pairwise_log_density(z_t, q_t)
    return mws_from_log_density(log_qij, dataset_size)


def mi_loss(z_f: torch.Tensor, q_f: GaussianParams, z_t: torch.Tensor, q_t: GaussianParams,
            dataset_size: int) -> torch.Tensor:
    """sum_t [H(z_f) + H(z_t) - H(z_f, z_t)] with every entropy estimated by MWS.

    z_f: [M, d_zf]; z_t: [M, T, d_zt]; H(z_f) does not depend on t and is
    computed once.
    """
    T = z_t.shape[1]
    log_f = pairwise_log_density(z_f, q_f)
    h_f = -mws_from_log_density(log_f, dataset_size)
    total = T * h_f
    for t in range(T):
        q = GaussianParams(q_t.mean[:, t], q_t.log_var[:, t])
        log_t = pairwise_log_density(z_t[:, t], q)
        h_t = -mws_from_log_density(log_t, dataset_size)
        h_ft = -mws_from_log_density(log_f + log_t, dataset_size)
        total = total + h_t - h_ft
    return total


def total_loss(recon, kl_f, kl_dyn, scc, dfp, mi, lambdas=DEFAULT_LAMBDAS) -> LossBreakdown:
    lambdas = tuple(float(v) for v in lambdas)
    total = compose_total(recon, kl_f, kl_dyn, scc, dfp, mi, lambdas)
    return LossBreakdown(recon, kl_f, kl_dyn, scc, dfp, mi, total, lambdas)
