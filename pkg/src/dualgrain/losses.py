"""Training objectives: supervised contrastive, relational distillation,
paired-view InfoNCE with cross-session alignment, fused-feature
classification, KL alignment, and their weighted composition."""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import DomainError, StateError

EPS = 1e-12
NORM_TOL = 1e-4


def _check_tau(tau):
    if tau <= 0:
        raise DomainError(f"temperature must be positive, got {tau}")


def _check_unit_norm(z, what):
    norms = z.norm(dim=-1)
    err = (norms - 1.0).abs().max().item()
    if err > NORM_TOL:
        raise DomainError(f"{what} must be unit-norm (max deviation {err:.2e})")


def _offdiag_logits(z, tau):
    """Pairwise dot-product logits with the diagonal masked out."""
    logits = z @ z.T / tau
    return logits.masked_fill(torch.eye(len(z), dtype=torch.bool, device=z.device), float("-inf"))


def supcon_loss(z, labels, tau, return_diagnostics=False):
    """Supervised contrastive loss over a multiview batch.

    Sums over anchors; positives are all other views sharing the anchor's
    label.  Anchors with no positive are skipped and counted.
    """
    _check_tau(tau)
    _check_unit_norm(z, "embeddings")
    labels = torch.as_tensor(labels, device=z.device)
    if len(labels) != len(z):
        raise DomainError("labels and embeddings disagree in length")

    logits = _offdiag_logits(z, tau)
    log_prob = logits - torch.logsumexp(logits, dim=1, keepdim=True)
    pos_mask = (labels[:, None] == labels[None, :]) & ~torch.eye(len(z), dtype=torch.bool, device=z.device)
    n_pos = pos_mask.sum(dim=1)
    has_pos = n_pos > 0
    per_anchor = torch.zeros(len(z), dtype=z.dtype, device=z.device)
    if has_pos.any():
        pos_log_prob = torch.where(pos_mask, log_prob, torch.zeros_like(log_prob))
        per_anchor[has_pos] = -pos_log_prob.sum(dim=1)[has_pos] / n_pos[has_pos]
    loss = per_anchor.sum()
    if return_diagnostics:
        return loss, int((~has_pos).sum().item())
    return loss


def similarity_distribution(z, tau):
    """Row-stochastic softmax of pairwise similarities over all other samples."""
    _check_tau(tau)
    _check_unit_norm(z, "embeddings")
    if len(z) < 2:
        raise DomainError("need at least two samples")
    return torch.softmax(_offdiag_logits(z, tau), dim=1)


def rkd_loss(teacher_z, student_z, tau):
    """Relational distillation: cross-entropy between teacher and student
    pairwise similarity distributions, averaged over the view batch."""
    if teacher_z.shape != student_z.shape:
        raise DomainError(f"teacher/student batch mismatch: {tuple(teacher_z.shape)} vs {tuple(student_z.shape)}")
    q_teacher = similarity_distribution(teacher_z.detach(), tau)
    _check_unit_norm(student_z, "student embeddings")
    logits = _offdiag_logits(student_z, tau)
    log_q_student = logits - torch.logsumexp(logits, dim=1, keepdim=True)
    log_q_student = log_q_student.masked_fill(torch.eye(len(student_z), dtype=torch.bool, device=student_z.device), 0.0)
    return -(q_teacher * log_q_student).sum() / len(student_z)


def infonce_loss(z, z_pair, tau, include_positive_in_denominator=True):
    """Paired-view contrastive loss; positives sit on the diagonal.

    The conventional form keeps the positive pair in the denominator, which
    bounds the loss below by 0; `include_positive_in_denominator=False`
    drops it (unbounded below).
    """
    _check_tau(tau)
    if z.shape != z_pair.shape:
        raise DomainError(f"unpaired batches: {tuple(z.shape)} vs {tuple(z_pair.shape)}")
    n = len(z)
    z = F.normalize(z, dim=-1, eps=EPS)
    z_pair = F.normalize(z_pair, dim=-1, eps=EPS)
    logits = z @ z_pair.T / tau
    positive = logits.diagonal()
    if not include_positive_in_denominator:
        if n < 2:
            raise DomainError("literal denominator needs at least two pairs")
        logits = logits.masked_fill(torch.eye(n, dtype=torch.bool, device=z.device), float("-inf"))
    return (torch.logsumexp(logits, dim=1) - positive).sum() / n


def ca_objective(session_index, z_view1, z_view2, tau, z_pred=None, z_prev=None, include_positive_in_denominator=True):
    """Class-agnostic objective: paired-view InfoNCE, plus the cross-session
    prediction alignment term once a frozen anchor exists."""
    loss = infonce_loss(z_view1, z_view2, tau, include_positive_in_denominator)
    if session_index > 0:
        if z_pred is None or z_prev is None:
            raise StateError("incremental session requires predictor output and frozen-anchor embeddings")
        loss = loss + infonce_loss(z_pred, z_prev.detach(), tau, include_positive_in_denominator)
    return loss


def mcls_loss(z_m, target_index, head):
    """Cross-entropy on the fused feature map after global average pooling."""
    logits = head(z_m.mean(dim=2))
    if target_index.max().item() >= logits.shape[1]:
        raise DomainError("label outside the head's class set")
    return F.cross_entropy(logits, target_index)


def kl_align_loss(p_fused, p_specific):
    """KL(stop-grad(p_fused) || p_specific); gradient reaches only p_specific."""
    p_fused = p_fused.detach()
    if p_fused.shape != p_specific.shape:
        raise DomainError("distribution shapes differ")
    kl = (p_fused * ((p_fused + EPS) / (p_specific + EPS)).log()).sum(dim=-1)
    return kl.mean() if kl.dim() > 0 else kl


@dataclass
class LossBreakdown:
    l_scl: float
    l_kd: float
    l_kl: float
    l_ca: float
    l_mcls: float
    lambda_ca: float
    mu_mcls: float

    @property
    def l_cs(self):
        return self.l_scl + self.l_kd + self.l_kl

    @property
    def l_total(self):
        return self.l_cs + self.lambda_ca * self.l_ca + self.mu_mcls * self.l_mcls

    def to_dict(self):
        def scalar(v):
            return float(v.detach()) if hasattr(v, "detach") else float(v)

        return {
            "l_scl": scalar(self.l_scl),
            "l_kd": scalar(self.l_kd),
            "l_kl": scalar(self.l_kl),
            "l_ca": scalar(self.l_ca),
            "l_mcls": scalar(self.l_mcls),
            "l_total": scalar(self.l_total),
        }


def total_loss(l_scl, l_kd, l_kl, l_ca, l_mcls, lambda_ca=0.5, mu_mcls=0.6):
    """Weighted composition; returns the scalar for backprop.

    At the base session the caller passes l_kd = 0 (no teacher exists).
    """
    return (l_scl + l_kd + l_kl) + lambda_ca * l_ca + mu_mcls * l_mcls
