"""Adaptive-switching model bank: label initialization, iterative
refinement training, encoder-side flag selection, decoder-side dispatch.

The bank holds three local models plus one global model.  Training
alternates between fine-tuning each local model on its labeled patch class
and relabeling every patch with the index of the member that restores it
best (highest PSNR, ties to the lowest index).  At test time the encoder
writes the 2-bit member index per patch; the decoder dispatches on it.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import models as M
from .codec import FramePlane, PartitionMap, RateEstimate
from .flags import FlagStream, FLAG_BITS, save_flags, load_flags
from .metrics import psnr
from .nn import TrainConfig, save_weights, load_weights
from .transform import dct2d, zigzag_flatten

N_LOCAL = 3
GLOBAL_INDEX = 3
N_MEMBERS = 4
PATCH = M.PATCH
_CHUNK = 32


class DegenerateClustersError(RuntimeError):
    """Clustering collapsed; callers should fall back to init_psnr."""


# -- residual features ------------------------------------------------------------


@dataclass
class FeatureVector:
    coefficients: np.ndarray  # zigzag-ordered transform of the abs residual
    reduced: np.ndarray | None = None


def compute_feature_vector(decoded_patch: np.ndarray, original_patch: np.ndarray) -> FeatureVector:
    """Zigzag-ordered 64x64 DCT of the absolute decoded/original residual."""
    d = np.asarray(decoded_patch)
    o = np.asarray(original_patch)
    if d.shape != (PATCH, PATCH) or o.shape != (PATCH, PATCH):
        raise ValueError(f"patches must be {PATCH}x{PATCH}")
    residual = np.abs(d.astype(np.float64) - o.astype(np.float64))
    return FeatureVector(coefficients=zigzag_flatten(dct2d(residual, PATCH)))


@dataclass
class PrincipalAxes:
    mean: np.ndarray
    components: np.ndarray  # (dims, n_features)

    def project(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T


def fit_principal_axes(features: np.ndarray, dims: int = 2) -> PrincipalAxes:
    """Leading principal axes of the feature rows (deterministic signs)."""
    x = np.asarray(features, dtype=np.float64)
    mean = x.mean(axis=0)
    _, _, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = vt[:dims].copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PrincipalAxes(mean=mean, components=comps)


def kmeans(
    points: np.ndarray, k: int, seed: int, max_iter: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded k-means++ with assignment-fixed convergence.

    Returns (labels, centroids).  Raises DegenerateClustersError when a
    cluster ends up empty (e.g. fewer distinct points than k).
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n < k:
        raise DegenerateClustersError(f"{n} points cannot form {k} clusters")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, pts.shape[1]))
    centroids[0] = pts[rng.integers(n)]
    for j in range(1, k):
        d2 = np.min(((pts[:, None, :] - centroids[None, :j, :]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        if total == 0.0:
            raise DegenerateClustersError(
                "identical feature vectors collapse into one cluster; "
                "fall back to init_psnr"
            )
        centroids[j] = pts[rng.choice(n, p=d2 / total)]

    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(-1)
        new_labels = np.argmin(d2, axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = pts[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
    for j in range(k):
        if not np.any(labels == j):
            raise DegenerateClustersError(
                f"cluster {j} is empty after convergence; fall back to init_psnr"
            )
    return labels, centroids


# -- label initialization ----------------------------------------------------------


def init_random(n_patches: int, k: int = N_LOCAL, seed: int = 0) -> np.ndarray:
    """Uniform i.i.d. labels; resamples until every class appears (n >= 30)."""
    if n_patches < 1:
        raise ValueError("cannot label an empty patch set")
    attempt = 0
    while True:
        rng = np.random.default_rng(seed + attempt)
        labels = rng.integers(0, k, size=n_patches)
        if n_patches < 30 or len(np.unique(labels)) == k:
            return labels
        attempt += 1


def _patch_psnrs(pairs) -> np.ndarray:
    return np.array([psnr(p.decoded, p.original) for p in pairs])


def init_psnr(pairs) -> np.ndarray:
    """Split patches into PSNR terciles; lowest-quality tercile is class 0."""
    n = len(pairs)
    if n < N_LOCAL:
        raise ValueError(f"need at least {N_LOCAL} patches, got {n}")
    order = np.argsort(_patch_psnrs(pairs), kind="stable")
    base, extra = divmod(n, N_LOCAL)
    sizes = [base + (1 if j < extra else 0) for j in range(N_LOCAL)]
    labels = np.empty(n, dtype=np.int64)
    start = 0
    for j, size in enumerate(sizes):
        labels[order[start : start + size]] = j
        start += size
    return labels


def init_cluster(pairs, seed: int = 0, dims: int = 2) -> np.ndarray:
    """Cluster frequency-domain residual features; relabel by mean PSNR.

    Classes are renumbered so class 0 has the lowest mean PSNR, which fixes
    the arbitrary k-means label permutation.
    """
    n = len(pairs)
    if n < N_LOCAL:
        raise ValueError(f"need at least {N_LOCAL} patches, got {n}")
    feats = np.stack([compute_feature_vector(p.decoded, p.original).coefficients for p in pairs])
    axes = fit_principal_axes(feats, dims)
    reduced = axes.project(feats)
    raw, _ = kmeans(reduced, N_LOCAL, seed)
    quality = _patch_psnrs(pairs)
    means = np.array([quality[raw == j].mean() for j in range(N_LOCAL)])
    rank = np.empty(N_LOCAL, dtype=np.int64)
    rank[np.argsort(means, kind="stable")] = np.arange(N_LOCAL)
    return rank[raw]


# -- the bank ---------------------------------------------------------------------


@dataclass
class AsnBank:
    local: list[M.Model]
    global_model: M.Model
    iteration: int = 0
    seed: int = 0

    def __post_init__(self):
        if len(self.local) != N_LOCAL:
            raise ValueError(f"bank needs exactly {N_LOCAL} local models")
        cfg = self.global_model.config
        if any(m.config != cfg for m in self.local):
            raise ValueError("all bank members must share the same input contract")

    @property
    def members(self) -> list[M.Model]:
        return [*self.local, self.global_model]

    @property
    def config(self) -> M.ModelConfig:
        return self.global_model.config


def pretrain_bank(
    pairs: list,
    config: M.ModelConfig,
    seed: int,
    train_config: TrainConfig,
) -> AsnBank:
    """Five-fold shuffle split; three seeded folds pre-train the locals,
    the full set trains the global model."""
    n = len(pairs)
    if n < 5:
        raise ValueError("need at least 5 patches for a 5-fold pre-training split")
    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(n), 5)
    chosen = rng.choice(5, size=N_LOCAL, replace=False)
    model_seeds = np.random.SeedSequence(seed).generate_state(N_MEMBERS)

    local = []
    for j, fold_idx in enumerate(chosen):
        model = M.build_model(config, seed=int(model_seeds[j]))
        subset = [pairs[i] for i in folds[fold_idx]]
        M.train(model, subset, train_config)
        local.append(model)
    global_model = M.build_model(config, seed=int(model_seeds[GLOBAL_INDEX]))
    M.train(global_model, pairs, train_config)
    return AsnBank(local=local, global_model=global_model, iteration=0, seed=seed)


def pretrain_folds(n: int, seed: int) -> tuple[list[np.ndarray], np.ndarray]:
    """The fold split and fold choice pretrain_bank would make (for tests)."""
    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(n), 5)
    chosen = rng.choice(5, size=N_LOCAL, replace=False)
    return folds, chosen


# -- evaluation and refinement -------------------------------------------------------


def _to_u8(y: np.ndarray) -> np.ndarray:
    return np.clip(np.round(y[..., 0] * 255.0), 0, 255).astype(np.uint8)


def bank_outputs(
    bank: AsnBank, x: np.ndarray, masks: np.ndarray | None, threads: int = 1
) -> np.ndarray:
    """All members applied to all patches: (4, P, 64, 64) uint8.

    Work is chunked identically for any thread count, so results are
    independent of the worker pool size.
    """
    chunks = [(i, s) for i in range(N_MEMBERS) for s in range(0, x.shape[0], _CHUNK)]

    def run(task):
        i, s = task
        mb = masks[s : s + _CHUNK] if masks is not None else None
        return _to_u8(M.postprocess_batch(bank.members[i], x[s : s + _CHUNK], mb))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(t) for t in chunks]

    out = np.empty((N_MEMBERS, x.shape[0], PATCH, PATCH), dtype=np.uint8)
    for (i, s), part in zip(chunks, parts):
        out[i, s : s + part.shape[0]] = part
    return out


def psnr_table(outputs: np.ndarray, originals: np.ndarray) -> np.ndarray:
    """(members, patches) PSNR of each output against the original."""
    table = np.empty(outputs.shape[:2])
    for i in range(outputs.shape[0]):
        for p in range(outputs.shape[1]):
            table[i, p] = psnr(outputs[i, p], originals[p])
    return table


def _pairs_arrays(bank: AsnBank, pairs) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    x, _, m = M.assemble_batch(bank.global_model, pairs)
    originals = np.stack([p.original for p in pairs])
    return x, m, originals


def refine_labels(bank: AsnBank, pairs, minimize: bool = False, threads: int = 1) -> np.ndarray:
    """New label per patch: the member index restoring it best.

    ``minimize`` flips the rule to pick the worst member (diagnostic only).
    """
    x, m, originals = _pairs_arrays(bank, pairs)
    table = psnr_table(bank_outputs(bank, x, m, threads), originals)
    return np.argmin(table, axis=0) if minimize else np.argmax(table, axis=0)


def ensemble_gain(bank: AsnBank, pairs, threads: int = 1) -> float:
    """Mean patch PSNR improvement of best-member selection over decoded."""
    x, m, originals = _pairs_arrays(bank, pairs)
    table = psnr_table(bank_outputs(bank, x, m, threads), originals)
    baseline = _patch_psnrs(pairs)
    return float(np.mean(table.max(axis=0) - baseline))


@dataclass
class IterativeResult:
    bank: AsnBank
    gain_curve: list[float] = field(default_factory=list)
    labels: np.ndarray | None = None


def iterate_train(
    bank: AsnBank,
    train_pairs: list,
    val_pairs: list,
    initial_labels: np.ndarray,
    fine_tune_config: TrainConfig,
    max_iters: int = 10,
    stall_eps: float = 0.002,
    threads: int = 1,
) -> IterativeResult:
    """Alternate local fine-tuning and label refinement until the
    validation gain stalls or max_iters is reached.

    The global model stays frozen.  Patches labeled 3 (global wins) are
    excluded from local fine-tuning; an empty class skips its fine-tune for
    that iteration but stays eligible at the next refinement.
    """
    if len(initial_labels) != len(train_pairs):
        raise ValueError("one label per training patch required")
    labels = np.asarray(initial_labels, dtype=np.int64)
    gains = [ensemble_gain(bank, val_pairs, threads)]
    for it in range(1, max_iters + 1):
        for j in range(N_LOCAL):
            subset = [p for p, lab in zip(train_pairs, labels) if lab == j]
            if subset:
                bank.local[j], _ = M.fine_tune_from(bank.local[j], subset, fine_tune_config)
        labels = refine_labels(bank, train_pairs, threads=threads)
        bank.iteration = it
        gains.append(ensemble_gain(bank, val_pairs, threads))
        if abs(gains[-1] - gains[-2]) < stall_eps:
            break
    return IterativeResult(bank=bank, gain_curve=gains, labels=labels)


# -- test-stage flag selection and dispatch ----------------------------------------


def _frame_inputs(bank: AsnBank, decoded: FramePlane, partition: PartitionMap):
    patches = M.frame_to_patches(decoded)
    x = patches.astype(np.float32)[..., None] / 255.0
    masks = M.frame_masks(bank.global_model, decoded, partition)
    return x, masks


def encode_select_flags(
    bank: AsnBank,
    decoded: FramePlane,
    original: FramePlane,
    partition: PartitionMap,
    minimize: bool = False,
    threads: int = 1,
) -> tuple[FlagStream, np.ndarray]:
    """Per-patch best-member flags plus the full (members, patches) PSNR table."""
    if (decoded.width, decoded.height) != (original.width, original.height):
        raise ValueError("decoded and original dimensions differ")
    x, masks = _frame_inputs(bank, decoded, partition)
    outputs = bank_outputs(bank, x, masks, threads)
    table = psnr_table(outputs, M.frame_to_patches(original))
    chosen = np.argmin(table, axis=0) if minimize else np.argmax(table, axis=0)
    return FlagStream(chosen.astype(np.uint8)), table


def decode_dispatch(
    bank: AsnBank,
    decoded: FramePlane,
    partition: PartitionMap,
    stream: FlagStream,
    threads: int = 1,
) -> FramePlane:
    """Reassemble the frame with each patch processed by its flagged member.

    Runs the same chunked member evaluations as the encoder so the mosaic
    is bit-identical to the encoder-side selection; needs no original.
    """
    x, masks = _frame_inputs(bank, decoded, partition)
    if stream.patch_count != x.shape[0]:
        raise ValueError(
            f"flag count {stream.patch_count} does not match patch count {x.shape[0]}"
        )
    outputs = bank_outputs(bank, x, masks, threads)
    selected = outputs[stream.flags, np.arange(x.shape[0])]
    return M.patches_to_frame(selected, decoded.width, decoded.height)


def with_flag_overhead(rate: RateEstimate, patch_count: int) -> RateEstimate:
    """Rate estimate including the 2 signaling bits per patch for flags."""
    return RateEstimate(
        payload_bits=rate.payload_bits,
        signaling_bits=rate.signaling_bits + FLAG_BITS * patch_count,
    )


# -- bank persistence ---------------------------------------------------------------


_LOCAL_FILES = tuple(f"local{j}.asnm" for j in range(N_LOCAL))


def save_bank(directory: str | Path, bank: AsnBank) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_weights(directory / "global.asnm", bank.global_model.to_weights())
    for name, model in zip(_LOCAL_FILES, bank.local):
        save_weights(directory / name, model.to_weights())
    (directory / "manifest.txt").write_text(
        f"iteration {bank.iteration}\nseed {bank.seed}\n", encoding="ascii"
    )


def load_bank(directory: str | Path) -> AsnBank:
    directory = Path(directory)
    manifest = {}
    for line in (directory / "manifest.txt").read_text(encoding="ascii").splitlines():
        key, value = line.split()
        manifest[key] = int(value)
    local = [M.Model.from_weights(load_weights(directory / name)) for name in _LOCAL_FILES]
    global_model = M.Model.from_weights(load_weights(directory / "global.asnm"))
    return AsnBank(
        local=local,
        global_model=global_model,
        iteration=manifest.get("iteration", 0),
        seed=manifest.get("seed", 0),
    )


__all__ = [
    "AsnBank",
    "DegenerateClustersError",
    "FeatureVector",
    "IterativeResult",
    "PrincipalAxes",
    "bank_outputs",
    "compute_feature_vector",
    "decode_dispatch",
    "encode_select_flags",
    "ensemble_gain",
    "fit_principal_axes",
    "init_cluster",
    "init_psnr",
    "init_random",
    "iterate_train",
    "kmeans",
    "load_bank",
    "load_flags",
    "pretrain_bank",
    "pretrain_folds",
    "psnr_table",
    "refine_labels",
    "save_bank",
    "save_flags",
    "with_flag_overhead",
]
