"""Loss functions with analytic gradients for contrastive and
semi-supervised training.

The contrastive loss is the normalized temperature-scaled cross entropy
over a batch of 2N projected embeddings where rows 2k and 2k+1 are the
two augmented views of source trace k:

    l(i,j) = -log( exp(sim(z_i, z_j)/tau) / sum_{k != i} exp(sim(z_i, z_k)/tau) )

averaged over all 2N ordered positive pairs. sim is cosine similarity.
The semi-supervised losses follow the pseudo-labeling scheme: a weakly
augmented view produces a pseudo-label that is retained when its
confidence clears a threshold and then scored against the prediction for
the strongly augmented view.

Everything here is pure float64 math; softmax-style denominators are
log-sum-exp stabilized.
"""

from dataclasses import dataclass

import numpy as np


class ZeroVector(ValueError):
    """Cosine similarity is undefined for zero-norm vectors."""


class ZeroProbability(ValueError):
    """Cross-entropy hit a zero probability on the true class."""


@dataclass(frozen=True)
class SslConfig:
    """Temperatures and weights for the contrastive/semi-supervised losses.

    tau_s: contrastive softmax temperature.
    tau_f: pseudo-label confidence threshold.
    lambda_u: weight of the unlabeled loss term.
    mu: unlabeled-to-labeled batch size ratio.
    """

    tau_s: float = 0.5
    tau_f: float = 0.95
    lambda_u: float = 1.0
    mu: int = 19

    def __post_init__(self):
        if self.tau_s <= 0:
            raise ValueError("tau_s must be positive")
        if not 0.0 < self.tau_f <= 1.0:
            raise ValueError("tau_f must be in (0, 1]")
        if self.lambda_u < 0:
            raise ValueError("lambda_u must be >= 0")
        if self.mu < 1:
            raise ValueError("mu must be >= 1")


def cosine_sim(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity u.v / (|u||v|), in [-1, 1]."""
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine similarity undefined for zero vectors")
    return float(np.dot(u, v) / (nu * nv))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stabilized softmax."""
    logits = np.atleast_2d(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _pair_index(two_n: int) -> np.ndarray:
    """Partner row of each row under the (2k, 2k+1) pairing."""
    idx = np.arange(two_n)
    return idx + 1 - 2 * (idx % 2)


def nt_xent_loss(z: np.ndarray, tau_s: float) -> tuple[float, np.ndarray]:
    """Contrastive loss over 2N paired rows and its gradient w.r.t. z.

    Returns (loss, grad) where grad has the shape of z. With a single
    pair (2N == 2) there are no negatives and the loss is exactly 0.
    """
    z = np.asarray(z, dtype=np.float64)
    two_n, _ = z.shape
    if two_n < 2 or two_n % 2 != 0:
        raise ValueError("need an even number of rows, at least one pair")
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0.0):
        raise ZeroVector("contrastive loss undefined for zero rows")
    zn = z / norms[:, None]
    sims = zn @ zn.T
    logits = sims / tau_s
    np.fill_diagonal(logits, -np.inf)

    row_max = logits.max(axis=1)
    lse = row_max + np.log(np.exp(logits - row_max[:, None]).sum(axis=1))
    partner = _pair_index(two_n)
    losses = lse - logits[np.arange(two_n), partner]
    loss = float(losses.mean())

    # dL/dsims, treating sims[i, k] as it appears in row i's term only;
    # the symmetric contribution is added by the transpose below.
    probs = np.exp(logits - lse[:, None])
    probs[np.arange(two_n), partner] -= 1.0
    g = probs / (tau_s * two_n)
    m = g + g.T
    d_zn = m @ zn
    # back through the row normalization z -> z / |z|
    grad = (d_zn - (d_zn * zn).sum(axis=1, keepdims=True) * zn) / norms[:, None]
    return loss, grad


def cross_entropy(p_true: np.ndarray, q: np.ndarray) -> float:
    """Cross-entropy H(p, q) = -log q[true class] for a one-hot p."""
    p_true = np.asarray(p_true, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p_true.shape != q.shape:
        raise ValueError("probability rows must have matching shapes")
    cls = int(np.argmax(p_true))
    if q[cls] <= 0.0:
        raise ZeroProbability("true class has zero predicted probability")
    return float(-np.log(q[cls]))


def fixmatch_supervised_loss(labels_onehot: np.ndarray, probs_weak: np.ndarray) -> float:
    """Mean cross-entropy of weakly augmented labeled predictions."""
    labels_onehot = np.atleast_2d(labels_onehot)
    probs_weak = np.atleast_2d(probs_weak)
    if labels_onehot.shape != probs_weak.shape:
        raise ValueError("batch shapes must match")
    return float(
        np.mean([cross_entropy(p, q) for p, q in zip(labels_onehot, probs_weak)])
    )


def fixmatch_unsupervised_loss(
    probs_weak: np.ndarray, probs_strong: np.ndarray, tau_f: float
) -> tuple[float, int]:
    """Thresholded pseudo-label consistency loss.

    Pseudo-label = argmax of the weak row (ties break to the lowest class
    index). Rows whose weak confidence reaches tau_f contribute the
    cross-entropy of the strong row against the pseudo-label; the sum is
    divided by the total row count, retained or not. Returns
    (loss, number of retained rows).
    """
    probs_weak = np.atleast_2d(probs_weak)
    probs_strong = np.atleast_2d(probs_strong)
    if probs_weak.shape != probs_strong.shape:
        raise ValueError("weak and strong batches must align")
    pseudo = np.argmax(probs_weak, axis=1)
    retained = probs_weak.max(axis=1) >= tau_f
    total = 0.0
    for b in np.flatnonzero(retained):
        q = probs_strong[b, pseudo[b]]
        if q <= 0.0:
            raise ZeroProbability("pseudo-class has zero predicted probability")
        total -= np.log(q)
    return float(total / len(probs_weak)), int(retained.sum())


def fixmatch_total_loss(loss_s: float, loss_u: float, lambda_u: float) -> float:
    """Combined objective: supervised plus weighted unsupervised term."""
    return loss_s + lambda_u * loss_u


def project(e: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Projection head z = W2 @ relu(W1 @ e) for a single embedding."""
    return w2 @ np.maximum(w1 @ e, 0.0)


def project_batch(embeddings: np.ndarray, w1: np.ndarray, w2: np.ndarray):
    """Batched projection forward pass; returns (z, hidden preactivation)."""
    pre = embeddings @ w1.T
    return np.maximum(pre, 0.0) @ w2.T, pre


def project_backward(
    d_z: np.ndarray, embeddings: np.ndarray, pre: np.ndarray, w1, w2
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (d_embeddings, d_w1, d_w2) of the batched projection."""
    hidden = np.maximum(pre, 0.0)
    d_w2 = d_z.T @ hidden
    d_hidden = (d_z @ w2) * (pre > 0.0)
    d_w1 = d_hidden.T @ embeddings
    d_e = d_hidden @ w1
    return d_e, d_w1, d_w2
