"""Feed-forward dual-domain restoration network.

Two sparse-inference stages, each a single shrinkage step realized as
analysis layer -> reciprocal scaling -> unit-threshold neuron -> scaling ->
synthesis layer, wrapped between constant DCT/IDCT layers.  The two
diagonal scaling layers of a stage are tied: one positive theta vector is
stored and the pre-scale diagonal is its element-wise reciprocal.

Training runs on data normalized by DATA_SCALE (pixel range compressed to
roughly [-1, 1]); mean-shifted raw patches are divided by the scale on the
way in and multiplied back on the way out.  The scale is a fixed package
convention, not a tunable, so checkpoints stay interchangeable.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import TrainingDivergedError, ValidationError
from .jpegcodec import BLOCK_DIM, DCT, Dct2d
from .sparse import (
    SparseDictionary,
    learn_dictionary,
    lipschitz_bound,
    shrink,
    unit_threshold,
)

DATA_SCALE = 128.0
THETA_FLOOR = 1e-6


@dataclass
class SparseStage:
    """One trainable inference stage: analysis, synthesis, tied thresholds."""

    analysis: np.ndarray  # (p, m)
    synthesis: np.ndarray  # (m, p)
    theta: np.ndarray  # (p,) strictly positive

    def __post_init__(self):
        p, m = self.analysis.shape
        if self.synthesis.shape != (m, p):
            raise ValidationError(
                f"synthesis shape {self.synthesis.shape} does not match analysis {self.analysis.shape}"
            )
        if self.theta.shape != (p,):
            raise ValidationError(f"theta shape {self.theta.shape}, expected ({p},)")
        if np.any(self.theta <= 0):
            raise ValidationError("theta must be strictly positive")

    @property
    def size(self) -> int:
        return self.analysis.shape[0]

    @property
    def theta_recip(self) -> np.ndarray:
        """Pre-scale diagonal; always the exact reciprocal of theta."""
        return 1.0 / self.theta


@dataclass
class DualDomainModel:
    """Constant transform pair plus the two trainable stages."""

    transform: Dct2d
    stage1: SparseStage
    stage2: SparseStage
    meta: dict = field(default_factory=dict)

    kind = "d3"

    def apply_batch(self, patches, lower=None, upper=None, project=False):
        """Restore a batch of raw mean-shifted patches (n, 64).

        With `project` and interval bounds given, the stage-1 DCT
        reconstruction is clamped into its interval before the IDCT.
        """
        x = np.asarray(patches, dtype=np.float64) / DATA_SCALE
        lo = hi = None
        if project and lower is not None:
            lo = np.asarray(lower, dtype=np.float64) / DATA_SCALE
            hi = np.asarray(upper, dtype=np.float64) / DATA_SCALE
        out = backend.kernels().forward_batch(
            self.stage1.analysis, self.stage1.synthesis, self.stage1.theta,
            self.stage2.analysis, self.stage2.synthesis, self.stage2.theta,
            self.transform.forward, self.transform.inverse, x, lo, hi,
        )
        return out * DATA_SCALE


@dataclass
class DenseBaselineModel:
    """Pixel-domain four-layer rectifier network of matching dimensions."""

    weights: list  # [w1 (p,64), w2 (64,p), w3 (p,64), w4 (64,p)]
    dropout_rate: float = 0.5
    meta: dict = field(default_factory=dict)

    kind = "dbase"

    def apply_batch(self, patches, lower=None, upper=None, project=False):
        x = np.asarray(patches, dtype=np.float64) / DATA_SCALE
        out = dbase_forward(self, x, training=False).output
        return out * DATA_SCALE


@dataclass
class ForwardTrace:
    """Per-sample intermediates of one forward pass."""

    x: np.ndarray  # input patches
    y: np.ndarray  # DCT coefficients
    pre1: np.ndarray  # stage-1 pre-activation
    code1: np.ndarray
    z: np.ndarray  # stage-1 DCT reconstruction
    mid: np.ndarray  # pixel-domain intermediate
    pre2: np.ndarray
    code2: np.ndarray
    output: np.ndarray


@dataclass
class Gradients:
    analysis1: np.ndarray
    synthesis1: np.ndarray
    theta1: np.ndarray
    analysis2: np.ndarray
    synthesis2: np.ndarray
    theta2: np.ndarray


def sc_analysis(y, analysis, theta):
    """One-step sparse inference: returns (code, pre_activation).

    The code is theta * s1(pre / theta), identical to a soft threshold of
    the pre-activation at theta.
    """
    y = np.asarray(y, dtype=np.float64)
    pre = y @ analysis.T
    code = theta * unit_threshold(pre / theta)
    return code, pre


def sc_synthesis(code, synthesis):
    """Synthesis layer: plain matrix product."""
    return np.asarray(code, dtype=np.float64) @ synthesis.T


def forward(model: DualDomainModel, x) -> ForwardTrace:
    """Run the full pipeline, recording every intermediate.

    Accepts a single (64,) patch or an (n, 64) batch; trace fields follow
    the input shape.  Samples never interact.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    y = xb @ model.transform.forward.T
    code1, pre1 = sc_analysis(y, model.stage1.analysis, model.stage1.theta)
    z = sc_synthesis(code1, model.stage1.synthesis)
    mid = z @ model.transform.inverse.T
    code2, pre2 = sc_analysis(mid, model.stage2.analysis, model.stage2.theta)
    out = sc_synthesis(code2, model.stage2.synthesis)
    fields = (xb, y, pre1, code1, z, mid, pre2, code2, out)
    if single:
        fields = tuple(f[0] for f in fields)
    return ForwardTrace(*fields)


def l2_loss(out, target) -> float:
    """Squared error ||out - target||^2 (summed over coefficients)."""
    diff = np.asarray(out) - np.asarray(target)
    return float(np.sum(diff * diff))


def box_loss(z, lower, upper) -> float:
    """Quadratic penalty on coefficients leaving their interval."""
    z = np.asarray(z, dtype=np.float64)
    over = np.maximum(z - upper, 0.0)
    under = np.maximum(lower - z, 0.0)
    return float(np.sum(over * over) + np.sum(under * under))


def box_loss_grad(z, lower, upper) -> np.ndarray:
    """Gradient of box_loss in z: 2[z - upper]_+ - 2[lower - z]_+."""
    z = np.asarray(z, dtype=np.float64)
    return 2.0 * np.maximum(z - upper, 0.0) - 2.0 * np.maximum(lower - z, 0.0)


def _as_batch(*arrays):
    out = []
    for a in arrays:
        a = np.asarray(a, dtype=np.float64)
        out.append(a[None, :] if a.ndim == 1 else a)
    return out


def total_loss(trace: ForwardTrace, target, lower, upper, loss_weights=(1.0, 1.0)):
    """Mean per-sample loss over the batch: w_l2 * L2 + w_box * box.

    Returns (total, l2_component, box_component).
    """
    out, tgt, z, lo, hi = _as_batch(trace.output, target, trace.z, lower, upper)
    n = out.shape[0]
    diff = out - tgt
    l2 = float(np.sum(diff * diff)) / n
    over = np.maximum(z - hi, 0.0)
    under = np.maximum(lo - z, 0.0)
    bx = float(np.sum(over * over) + np.sum(under * under)) / n
    return loss_weights[0] * l2 + loss_weights[1] * bx, l2, bx


def _theta_grad(gcode, pre, theta):
    """Both theta paths: post-scale s1(u/theta) plus pre-scale -u/theta^2 route."""
    t = pre / theta
    mask = (np.abs(t) > 1.0).astype(np.float64)
    return np.sum(gcode * (unit_threshold(t) - mask * t), axis=0), mask


def backward(
    trace: ForwardTrace,
    target,
    lower,
    upper,
    model: DualDomainModel,
    loss_weights=(1.0, 1.0),
) -> Gradients:
    """Gradients of the mean batch loss for all six parameter tensors.

    The unit-threshold subgradient is 0 at the kink.  The box term enters
    at the stage-1 reconstruction and flows back through stage 1 only; the
    L2 term flows through stage 2, the inverse transform, and stage 1.
    """
    xb, y, pre1, code1, z, mid, pre2, code2, out = _as_batch(
        trace.x, trace.y, trace.pre1, trace.code1, trace.z, trace.mid,
        trace.pre2, trace.code2, trace.output,
    )
    tgt, lo, hi = _as_batch(target, lower, upper)
    if pre1.shape[1] != model.stage1.size or pre2.shape[1] != model.stage2.size:
        raise ValidationError("trace dimensions do not match the model")
    w_l2, w_box = loss_weights
    n = xb.shape[0]

    d_out = (2.0 * w_l2 / n) * (out - tgt)
    g_syn2 = d_out.T @ code2
    d_code2 = d_out @ model.stage2.synthesis
    g_theta2, mask2 = _theta_grad(d_code2, pre2, model.stage2.theta)
    d_pre2 = d_code2 * mask2
    g_ana2 = d_pre2.T @ mid
    d_mid = d_pre2 @ model.stage2.analysis

    d_z = d_mid @ model.transform.inverse
    d_z += (w_box / n) * (2.0 * np.maximum(z - hi, 0.0) - 2.0 * np.maximum(lo - z, 0.0))

    g_syn1 = d_z.T @ code1
    d_code1 = d_z @ model.stage1.synthesis
    g_theta1, mask1 = _theta_grad(d_code1, pre1, model.stage1.theta)
    d_pre1 = d_code1 * mask1
    g_ana1 = d_pre1.T @ y

    return Gradients(g_ana1, g_syn1, g_theta1, g_ana2, g_syn2, g_theta2)


def init_from_sparse(phi: SparseDictionary, psi: SparseDictionary, meta=None) -> DualDomainModel:
    """Initialize both stages from learned dictionaries.

    Analysis gets the transposed atoms (one shrinkage iteration from zero),
    synthesis the atoms, and theta the scalar sparsity weight.
    """
    if phi.atoms.shape[0] != BLOCK_DIM or psi.atoms.shape[0] != BLOCK_DIM:
        raise ValidationError(
            f"dictionaries must have {BLOCK_DIM} rows, got {phi.atoms.shape[0]} and {psi.atoms.shape[0]}"
        )
    stage1 = SparseStage(
        analysis=phi.atoms.T.copy(),
        synthesis=phi.atoms.copy(),
        theta=np.full(phi.size, phi.sparsity_weight),
    )
    stage2 = SparseStage(
        analysis=psi.atoms.T.copy(),
        synthesis=psi.atoms.copy(),
        theta=np.full(psi.size, psi.sparsity_weight),
    )
    return DualDomainModel(transform=DCT, stage1=stage1, stage2=stage2, meta=dict(meta or {}))


def _uniform(rng, shape, fan_in):
    half = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-half, half, size=shape)


def init_random(p1: int, p2: int, seed: int, meta=None) -> DualDomainModel:
    """Fan-in-scaled uniform weights; theta starts at 0.1."""
    rng = np.random.default_rng(seed)
    stage1 = SparseStage(
        analysis=_uniform(rng, (p1, BLOCK_DIM), BLOCK_DIM),
        synthesis=_uniform(rng, (BLOCK_DIM, p1), p1),
        theta=np.full(p1, 0.1),
    )
    stage2 = SparseStage(
        analysis=_uniform(rng, (p2, BLOCK_DIM), BLOCK_DIM),
        synthesis=_uniform(rng, (BLOCK_DIM, p2), p2),
        theta=np.full(p2, 0.1),
    )
    return DualDomainModel(transform=DCT, stage1=stage1, stage2=stage2, meta=dict(meta or {}))


def init_dbase_random(p1: int, p2: int, seed: int, dropout_rate=0.5, meta=None) -> DenseBaselineModel:
    rng = np.random.default_rng(seed)
    weights = [
        _uniform(rng, (p1, BLOCK_DIM), BLOCK_DIM),
        _uniform(rng, (BLOCK_DIM, p1), p1),
        _uniform(rng, (p2, BLOCK_DIM), BLOCK_DIM),
        _uniform(rng, (BLOCK_DIM, p2), p2),
    ]
    return DenseBaselineModel(weights=weights, dropout_rate=dropout_rate, meta=dict(meta or {}))


@dataclass
class DbaseTrace:
    x: np.ndarray
    pres: list  # pre-activations of the three hidden layers
    acts: list  # post-rectifier (and post-dropout) activations
    masks: list  # dropout masks actually applied (None at inference)
    output: np.ndarray


def dbase_forward(model: DenseBaselineModel, x, training: bool, rng=None, masks=None) -> DbaseTrace:
    """Rectifier chain w4 r(w3 r(w2 r(w1 x))) with inverted dropout.

    Dropout applies to the three hidden activations during training only;
    pass `masks` to freeze them (e.g. for gradient checks).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    keep = 1.0 - model.dropout_rate
    pres, acts, used = [], [], []
    h = xb
    for li, w in enumerate(model.weights):
        pre = h @ w.T
        if li == len(model.weights) - 1:
            out = pre
            break
        act = np.maximum(pre, 0.0)
        if training:
            if masks is not None:
                mask = masks[li]
            else:
                if rng is None:
                    raise ValidationError("training-mode dropout needs an rng or masks")
                mask = (rng.random(act.shape) < keep).astype(np.float64)
            act = act * mask / keep
            used.append(mask)
        else:
            used.append(None)
        pres.append(pre)
        acts.append(act)
        h = act
    fields = DbaseTrace(x=xb, pres=pres, acts=acts, masks=used, output=out)
    if single:
        fields.x = fields.x[0]
        fields.output = fields.output[0]
        fields.pres = [p[0] for p in fields.pres]
        fields.acts = [a[0] for a in fields.acts]
    return fields


def dbase_backward(trace: DbaseTrace, target, model: DenseBaselineModel):
    """Gradients of the mean-batch L2 loss for the four weight matrices."""
    xb, tgt, out = _as_batch(trace.x, target, trace.output)
    pres = [p[None, :] if p.ndim == 1 else p for p in trace.pres]
    acts = [a[None, :] if a.ndim == 1 else a for a in trace.acts]
    n = xb.shape[0]
    keep = 1.0 - model.dropout_rate

    d = (2.0 / n) * (out - tgt)
    grads = [None] * 4
    inputs = [xb] + acts
    for li in range(3, -1, -1):
        grads[li] = d.T @ inputs[li]
        if li == 0:
            break
        d = d @ model.weights[li]
        if trace.masks[li - 1] is not None:
            d = d * trace.masks[li - 1] / keep
        d = d * (pres[li - 1] > 0.0)
    return grads


@dataclass
class TrainConfig:
    """SGD recipe: constant step, fixed batch, no momentum by default."""

    epochs: int
    seed: int
    learning_rate: float = 0.01
    batch_size: int = 128
    momentum: float = 0.0
    init_mode: str = "sparse"  # sparse | random | checkpoint:PATH
    loss_weights: tuple = (1.0, 1.0)
    theta_floor: float = THETA_FLOOR
    val_fraction: float = 0.1
    patience: int = 10
    arch: str = "d3"  # d3 | dbase
    dict_sparsity: float = 0.08
    dict_rounds: int = 8
    dict_sample: int = 6000
    dict_ista_iters: int = 40

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.arch not in ("d3", "dbase"):
            raise ValidationError(f"unknown arch {self.arch!r}")


def _model_params(model):
    if isinstance(model, DualDomainModel):
        return [
            model.stage1.analysis, model.stage1.synthesis, model.stage1.theta,
            model.stage2.analysis, model.stage2.synthesis, model.stage2.theta,
        ]
    return list(model.weights)


def _grad_list(model, grads):
    if isinstance(model, DualDomainModel):
        return [
            grads.analysis1, grads.synthesis1, grads.theta1,
            grads.analysis2, grads.synthesis2, grads.theta2,
        ]
    return list(grads)


def clone_model(model):
    if isinstance(model, DualDomainModel):
        return DualDomainModel(
            transform=model.transform,
            stage1=SparseStage(
                model.stage1.analysis.copy(), model.stage1.synthesis.copy(),
                model.stage1.theta.copy(),
            ),
            stage2=SparseStage(
                model.stage2.analysis.copy(), model.stage2.synthesis.copy(),
                model.stage2.theta.copy(),
            ),
            meta=dict(model.meta),
        )
    return DenseBaselineModel(
        weights=[w.copy() for w in model.weights],
        dropout_rate=model.dropout_rate,
        meta=dict(model.meta),
    )


def _init_model(cfg: TrainConfig, p1, p2, deg_scaled, clean_scaled, meta):
    from .checkpoint import load_model  # local import to avoid a cycle

    if cfg.init_mode == "random":
        if cfg.arch == "dbase":
            return init_dbase_random(p1, p2, cfg.seed, meta=meta)
        return init_random(p1, p2, cfg.seed, meta=meta)
    if cfg.init_mode.startswith("checkpoint:"):
        model = load_model(cfg.init_mode.split(":", 1)[1])
        if model.kind != cfg.arch:
            raise ValidationError(
                f"checkpoint is a {model.kind!r} model but arch is {cfg.arch!r}"
            )
        model.meta.update(meta)
        return clone_model(model)
    if cfg.init_mode != "sparse":
        raise ValidationError(f"unknown init mode {cfg.init_mode!r}")
    if cfg.arch == "dbase":
        # No sparse-coding correspondence in the pixel-only baseline.
        return init_dbase_random(p1, p2, cfg.seed, meta=meta)
    rng = np.random.default_rng(cfg.seed)
    sample = min(cfg.dict_sample, deg_scaled.shape[0])
    pick = rng.permutation(deg_scaled.shape[0])[:sample]
    coeffs = deg_scaled[pick] @ DCT.forward.T
    phi = learn_dictionary(
        coeffs, p1, cfg.dict_sparsity, cfg.dict_rounds, cfg.seed,
        ista_iters=cfg.dict_ista_iters,
    )
    psi = learn_dictionary(
        clean_scaled[pick], p2, cfg.dict_sparsity, cfg.dict_rounds, cfg.seed + 1,
        ista_iters=cfg.dict_ista_iters,
    )
    model = init_from_sparse(phi, psi, meta=meta)
    # Learned dictionaries are coherent (gram eigenvalues far above 1), so
    # the literal unit-step unfolding amplifies each stage and training
    # blows up.  Rescale both factors by 1/sqrt(L): the shrinkage
    # activation pattern is preserved, each factor gets spectral norm ~1,
    # and the stage gain stays bounded by 1.
    for stage, dictionary in ((model.stage1, phi), (model.stage2, psi)):
        root = np.sqrt(max(lipschitz_bound(dictionary.atoms), 1.0))
        stage.analysis /= root
        stage.synthesis /= root
        stage.theta /= root
    return model


def train(pairs, cfg: TrainConfig, p1: int = 128, p2: int = 128):
    """Mini-batch SGD on clean/degraded pairs.

    Gradients are averaged over the batch, so the learning rate is
    batch-size-invariant.  Validation PSNR (raw pixel units) is recorded
    every epoch; training stops early after `patience` epochs without
    improvement and the best-validation parameters are returned.

    Returns (model, history) where history rows are dicts with keys
    epoch, train_loss, box_loss_component, l2_component, val_psnr.
    """
    from .patches import pairs_as_arrays

    if not pairs:
        raise ValidationError("empty training set")
    degraded, clean, lower, upper = pairs_as_arrays(pairs)
    quality = pairs[0].degraded.block.table.quality
    n = degraded.shape[0]

    deg_s = degraded / DATA_SCALE
    clean_s = clean / DATA_SCALE
    lo_s = lower / DATA_SCALE
    hi_s = upper / DATA_SCALE

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(n)
    n_val = min(int(round(n * cfg.val_fraction)), n - 1)
    val_idx, train_idx = order[:n_val], order[n_val:]

    meta = {"quality": quality, "seed": cfg.seed, "p1": p1, "p2": p2}
    model = _init_model(cfg, p1, p2, deg_s[train_idx], clean_s[train_idx], meta)
    if isinstance(model, DualDomainModel):
        p1, p2 = model.stage1.size, model.stage2.size
    else:
        p1, p2 = model.weights[0].shape[0], model.weights[2].shape[0]
    model.meta.update({"p1": p1, "p2": p2})

    params = _model_params(model)
    velocity = [np.zeros_like(p) for p in params] if cfg.momentum else None

    def val_psnr():
        if n_val == 0:
            return float("nan")
        if isinstance(model, DualDomainModel):
            out = forward(model, deg_s[val_idx]).output
        else:
            out = dbase_forward(model, deg_s[val_idx], training=False).output
        mse = float(np.mean((out - clean_s[val_idx]) ** 2)) * DATA_SCALE**2
        return float("inf") if mse == 0 else 10.0 * np.log10(255.0**2 / mse)

    history = []
    best_psnr = -np.inf
    best_state = [p.copy() for p in params]
    stall = 0
    for epoch in range(cfg.epochs):
        perm = train_idx[rng.permutation(len(train_idx))]
        ep_loss = ep_l2 = ep_box = 0.0
        n_batches = 0
        for b0 in range(0, len(perm), cfg.batch_size):
            idx = perm[b0 : b0 + cfg.batch_size]
            xb, tb = deg_s[idx], clean_s[idx]
            lob, hib = lo_s[idx], hi_s[idx]
            if isinstance(model, DualDomainModel):
                trace = forward(model, xb)
                loss, l2c, boxc = total_loss(trace, tb, lob, hib, cfg.loss_weights)
                grads = _grad_list(model, backward(trace, tb, lob, hib, model, cfg.loss_weights))
            else:
                trace = dbase_forward(model, xb, training=True, rng=rng)
                diff = trace.output - tb
                l2c = float(np.sum(diff * diff)) / len(idx)
                boxc = 0.0
                loss = cfg.loss_weights[0] * l2c
                grads = [cfg.loss_weights[0] * g for g in dbase_backward(trace, tb, model)]
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}"
                )
            if velocity is None:
                for prm, grd in zip(params, grads):
                    prm -= cfg.learning_rate * grd
            else:
                for vel, prm, grd in zip(velocity, params, grads):
                    vel *= cfg.momentum
                    vel -= cfg.learning_rate * grd
                    prm += vel
            if isinstance(model, DualDomainModel):
                np.maximum(model.stage1.theta, cfg.theta_floor, out=model.stage1.theta)
                np.maximum(model.stage2.theta, cfg.theta_floor, out=model.stage2.theta)
            ep_loss += loss
            ep_l2 += l2c
            ep_box += boxc
            n_batches += 1
        psnr = val_psnr()
        history.append({
            "epoch": epoch,
            "train_loss": ep_loss / n_batches,
            "box_loss_component": ep_box / n_batches,
            "l2_component": ep_l2 / n_batches,
            "val_psnr": psnr,
        })
        if n_val and psnr > best_psnr:
            best_psnr = psnr
            best_state = [p.copy() for p in params]
            stall = 0
        else:
            stall += 1
            if n_val and stall > cfg.patience:
                break
    if n_val:
        for prm, best in zip(params, best_state):
            prm[...] = best
    return model, history


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "box_loss_component", "l2_component", "val_psnr"])
        for row in history:
            writer.writerow([
                row["epoch"],
                f"{row['train_loss']:.6f}",
                f"{row['box_loss_component']:.6f}",
                f"{row['l2_component']:.6f}",
                f"{row['val_psnr']:.6f}",
            ])
