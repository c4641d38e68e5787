"""Shrinkage, ISTA, dictionary learning, and the dual-domain baseline.

The baseline restorer solves, per coding block, a joint DCT/pixel-domain
lasso with a quadratic penalty keeping the DCT reconstruction inside its
quantization interval.  It is deliberately iterative; the feed-forward
network exists to replace it.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .jpegcodec import DCT, DegradedBlock


def shrink(u: np.ndarray, thresholds) -> np.ndarray:
    """Element-wise soft threshold: sign(u) * max(|u| - t, 0)."""
    u = np.asarray(u, dtype=np.float64)
    return np.sign(u) * np.maximum(np.abs(u) - thresholds, 0.0)


def unit_threshold(t: np.ndarray) -> np.ndarray:
    """Double-sided unit-threshold neuron (soft threshold at 1)."""
    return shrink(t, 1.0)


@dataclass(frozen=True)
class SparseDictionary:
    """Unit-norm atom matrix (m x p) with its sparsity weight."""

    atoms: np.ndarray
    sparsity_weight: float

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=np.float64)
        if atoms.ndim != 2 or atoms.shape[1] < 1:
            raise ValidationError(f"atoms must be m x p with p >= 1, got {atoms.shape}")
        norms = np.linalg.norm(atoms, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-10):
            raise ValidationError("dictionary columns must have unit norm")
        if not self.sparsity_weight > 0:
            raise ValidationError(f"sparsity weight must be positive, got {self.sparsity_weight}")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def from_columns(cls, atoms: np.ndarray, sparsity_weight: float) -> "SparseDictionary":
        """Normalize columns to unit norm, then construct."""
        atoms = np.asarray(atoms, dtype=np.float64)
        norms = np.linalg.norm(atoms, axis=0)
        norms[norms == 0] = 1.0
        return cls(atoms / norms, sparsity_weight)

    @property
    def size(self) -> int:
        return self.atoms.shape[1]


def lipschitz_bound(mat: np.ndarray, iters: int = 50, tol: float = 1e-6) -> float:
    """Largest eigenvalue of mat.T @ mat by power iteration."""
    gram = mat.T @ mat
    v = np.ones(gram.shape[0]) / np.sqrt(gram.shape[0])
    prev = 0.0
    for _ in range(iters):
        w = gram @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(norm - prev) <= tol * norm:
            break
        prev = norm
    return float(v @ (gram @ v))


def lasso_objective(y, dictionary: SparseDictionary, alpha) -> float:
    """0.5 ||y - D a||^2 + lam ||a||_1."""
    resid = y - dictionary.atoms @ alpha
    return 0.5 * float(resid @ resid) + dictionary.sparsity_weight * float(
        np.sum(np.abs(alpha))
    )


def ista_step(alpha, y, dictionary: SparseDictionary) -> np.ndarray:
    """One unit-step shrinkage iteration: s_lam(a + D.T (y - D a))."""
    atoms = dictionary.atoms
    return shrink(alpha + atoms.T @ (y - atoms @ alpha), dictionary.sparsity_weight)


def ista(y, dictionary: SparseDictionary, iters: int, tol: float = 0.0) -> np.ndarray:
    """Proximal-gradient solve of the lasso with step 1/L.

    L comes from power iteration on the dictionary Gram matrix.  Stops when
    the iterate moves less than `tol` in max norm, or after `iters`.
    """
    if iters < 1:
        raise ValidationError(f"iters must be >= 1, got {iters}")
    y = np.asarray(y, dtype=np.float64)
    atoms = dictionary.atoms
    lam = dictionary.sparsity_weight
    lips = max(lipschitz_bound(atoms), 1e-12)
    step = 1.0 / lips
    alpha = np.zeros(atoms.shape[1])
    for _ in range(iters):
        grad = atoms.T @ (atoms @ alpha - y)
        new = shrink(alpha - step * grad, lam * step)
        delta = float(np.max(np.abs(new - alpha)))
        alpha = new
        if delta <= tol:
            break
    return alpha


def _batch_ista(ys, atoms, lam, iters, tol=0.0):
    """ista over rows of `ys`, sharing one step size."""
    lips = max(lipschitz_bound(atoms), 1e-12)
    step = 1.0 / lips
    codes = np.zeros((ys.shape[0], atoms.shape[1]))
    for _ in range(iters):
        grad = (codes @ atoms.T - ys) @ atoms
        new = shrink(codes - step * grad, lam * step)
        if tol > 0.0 and np.max(np.abs(new - codes)) <= tol:
            codes = new
            break
        codes = new
    return codes


def learn_dictionary(
    patches,
    p: int,
    sparsity_weight: float,
    rounds: int,
    seed: int,
    ista_iters: int = 50,
    return_history: bool = False,
):
    """Alternating lasso coding / least-squares dictionary fit (MOD).

    Columns are renormalized to unit norm after every round, with the codes
    rescaled inversely so the product is unchanged.  Returns the learned
    dictionary; with `return_history`, also the per-round mean squared
    reconstruction error (measured after each dictionary update).
    """
    if rounds < 1:
        raise ValidationError(f"rounds must be >= 1, got {rounds}")
    data = np.asarray(patches, dtype=np.float64)
    if data.ndim != 2:
        raise ValidationError(f"patches must be (n, m), got {data.shape}")
    n, m = data.shape
    if n < p:
        raise ValidationError(f"need at least p={p} patches, got {n}")
    rng = np.random.default_rng(seed)

    scale = float(np.max(np.abs(data)))
    if scale == 0.0:
        warnings.warn("all-zero patch set; returning a random unit-norm dictionary")
        atoms = rng.standard_normal((m, p))
        result = SparseDictionary.from_columns(atoms, sparsity_weight)
        return (result, []) if return_history else result

    # Seed atoms from distinct training patches (plus noise if degenerate).
    pick = rng.permutation(n)[:p]
    atoms = data[pick].T.copy()
    dead = np.linalg.norm(atoms, axis=0) < 1e-12 * scale
    if np.any(dead):
        atoms[:, dead] = rng.standard_normal((m, int(dead.sum())))
    atoms = atoms / np.linalg.norm(atoms, axis=0)

    codes = np.zeros((n, p))
    history = []
    for _ in range(rounds):
        # Warm-started lasso codes for the current atoms.
        lips = max(lipschitz_bound(atoms), 1e-12)
        step = 1.0 / lips
        for _ in range(ista_iters):
            grad = (codes @ atoms.T - data) @ atoms
            codes = shrink(codes - step * grad, sparsity_weight * step)
        # Least-squares dictionary update on the active atoms.
        active = np.any(codes != 0.0, axis=0)
        if np.any(active):
            sub = codes[:, active]
            gram = sub.T @ sub
            rhs = sub.T @ data
            sol = np.linalg.lstsq(gram, rhs, rcond=None)[0]
            atoms[:, active] = sol.T
        norms = np.linalg.norm(atoms, axis=0)
        collapsed = norms < 1e-12
        if np.any(collapsed):
            atoms[:, collapsed] = rng.standard_normal((m, int(collapsed.sum())))
            norms = np.linalg.norm(atoms, axis=0)
        atoms = atoms / norms
        codes = codes * norms
        resid = data - codes @ atoms.T
        history.append(float(np.mean(resid * resid)))

    result = SparseDictionary(atoms, sparsity_weight)
    return (result, history) if return_history else result


@dataclass(frozen=True)
class DualDomainConfig:
    """Weights and iteration budget for the iterative baseline."""

    lambda1: float = 0.1
    lambda2: float = 0.1
    lambda3: float = 0.1
    box_penalty: float = 1e6
    max_iters: int = 50
    tol: float = 1e-8
    inner_steps: int = 5

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3, self.box_penalty) <= 0:
            raise ValidationError("all weights must be positive")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")


def _box_overshoot(z, lower, upper):
    return np.maximum(z - upper, 0.0), np.maximum(lower - z, 0.0)


def dual_domain_objective(block: DegradedBlock, phi, psi, cfg, alpha, beta) -> float:
    """Joint objective of the penalized dual-domain program."""
    y = DCT.forward @ block.pixels
    z = phi.atoms @ alpha
    pix = DCT.inverse @ z - psi.atoms @ beta
    over, under = _box_overshoot(z, block.intervals.lower, block.intervals.upper)
    resid = y - z
    return (
        float(resid @ resid)
        + cfg.lambda1 * float(np.sum(np.abs(alpha)))
        + cfg.lambda2 * float(pix @ pix)
        + cfg.lambda3 * float(np.sum(np.abs(beta)))
        + cfg.box_penalty * float(over @ over + under @ under)
    )


def dual_domain_restore(
    block: DegradedBlock,
    phi: SparseDictionary,
    psi: SparseDictionary,
    cfg: DualDomainConfig,
    return_codes: bool = False,
):
    """Approximately solve the joint dual-domain program for one block.

    Block-coordinate descent: proximal-gradient (ISTA) passes alternate
    between the DCT code and the pixel code until the joint objective
    stalls or `max_iters` outer rounds elapse.  The DCT-code pass uses
    backtracking steps because the box penalty makes the global Lipschitz
    bound uselessly large; backtracking keeps every accepted step monotone.
    Returns the pixel-domain reconstruction (mean-shifted units).
    """
    y = DCT.forward @ block.pixels
    lower, upper = block.intervals.lower, block.intervals.upper
    a_atoms, b_atoms = phi.atoms, psi.atoms
    ti = DCT.inverse

    alpha = np.zeros(phi.size)
    beta = np.zeros(psi.size)

    # Smooth part of the alpha subproblem and its gradient.
    def alpha_smooth(a):
        z = a_atoms @ a
        resid = y - z
        pix = ti @ z - b_atoms @ beta
        over, under = _box_overshoot(z, lower, upper)
        val = (
            float(resid @ resid)
            + cfg.lambda2 * float(pix @ pix)
            + cfg.box_penalty * float(over @ over + under @ under)
        )
        grad_z = -2.0 * resid + 2.0 * cfg.lambda2 * (ti.T @ pix) + 2.0 * cfg.box_penalty * (
            over - under
        )
        return val, a_atoms.T @ grad_z

    base_step = 1.0 / max(2.0 * (1.0 + cfg.lambda2) * lipschitz_bound(a_atoms), 1e-12)
    beta_step = 1.0 / max(2.0 * cfg.lambda2 * lipschitz_bound(b_atoms), 1e-12)

    def alpha_pass(a, step):
        for _ in range(cfg.inner_steps):
            val, grad = alpha_smooth(a)
            while True:
                cand = shrink(a - step * grad, cfg.lambda1 * step)
                diff = cand - a
                cand_val, _ = alpha_smooth(cand)
                if cand_val <= val + grad @ diff + 0.5 / step * float(diff @ diff) + 1e-12:
                    break
                step *= 0.5
            a = cand
            step *= 2.0  # let the step recover once iterates re-enter the box
        return a, step

    def beta_pass(b):
        target = ti @ (a_atoms @ alpha)
        for _ in range(cfg.inner_steps):
            grad = 2.0 * cfg.lambda2 * (b_atoms.T @ (b_atoms @ b - target))
            b = shrink(b - beta_step * grad, cfg.lambda3 * beta_step)
        return b

    prev = dual_domain_objective(block, phi, psi, cfg, alpha, beta)
    step = base_step
    for _ in range(cfg.max_iters):
        alpha, step = alpha_pass(alpha, step)
        beta = beta_pass(beta)
        current = dual_domain_objective(block, phi, psi, cfg, alpha, beta)
        if prev - current < cfg.tol:
            break
        prev = current
    out = b_atoms @ beta
    return (out, alpha, beta) if return_codes else out
