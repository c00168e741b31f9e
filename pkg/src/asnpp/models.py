"""Post-processing network variants assembled from the nn layers.

Variants: a deep two-stream model with residual blocks (mask fused by
elementwise add, late concat, or stacked as a second input channel), the
same trunk without a mask stream, and a 4-layer shallow baseline.  Every
variant predicts a residual correction that is added to the input frame
(global skip), so a zeroed final conv is exactly the identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import kernels, nn
from .codec import FramePlane, PartitionMap
from .mask import gen_mean_mask, gen_boundary_mask
from .nn.layers import Conv2d, ReLU, ResidualBlock, Sequential, concat_channels

PATCH = 64
FEATURES = 64
_INFER_CHUNK = 32

DEPTHS = ("shallow", "deep")
MASK_KINDS = ("MM", "BM")
FUSIONS = ("CLF", "AF", "CEF")


@dataclass(frozen=True)
class ModelConfig:
    depth: str = "deep"
    use_mask: bool = False
    mask_kind: str = "MM"
    fusion: str = "AF"
    residual_blocks_per_stream: int = 4

    def __post_init__(self):
        if self.depth not in DEPTHS:
            raise ValueError(f"depth must be one of {DEPTHS}")
        if self.mask_kind not in MASK_KINDS:
            raise ValueError(f"mask_kind must be one of {MASK_KINDS}")
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}")
        if self.residual_blocks_per_stream < 1:
            raise ValueError("residual_blocks_per_stream must be positive")

    def canonical(self) -> "ModelConfig":
        """Mask settings are meaningless without a mask; normalize them."""
        if self.use_mask:
            return self
        return ModelConfig(
            depth=self.depth,
            use_mask=False,
            residual_blocks_per_stream=self.residual_blocks_per_stream,
        )

    def label(self) -> str:
        if not self.use_mask:
            return "1-in"
        return f"2-in+{self.mask_kind}+{self.fusion}"


class Model:
    """A network variant: streams, optional fusion, tail, global skip."""

    def __init__(self, config: ModelConfig, seed: int):
        config = config.canonical()
        self.config = config
        self.seed = seed
        self.train_steps = 0
        rng = np.random.default_rng(seed)

        cef = config.use_mask and config.fusion == "CEF"
        in_ch = 2 if cef else 1
        self.frame_stream = self._feature_stream(config, in_ch, rng)
        self.mask_stream: Sequential | None = None
        self.fuse: Conv2d | None = None
        if config.use_mask and config.fusion == "AF":
            self.mask_stream = self._feature_stream(config, 1, rng)
        elif config.use_mask and config.fusion == "CLF":
            self.mask_stream = Sequential(
                [
                    Conv2d(1, FEATURES, 3, rng),
                    ReLU(),
                    Conv2d(FEATURES, FEATURES, 3, rng),
                    ReLU(),
                    Conv2d(FEATURES, FEATURES, 3, rng),
                    ReLU(),
                ]
            )
            self.fuse = Conv2d(2 * FEATURES, FEATURES, 1, rng)
        self.tail = self._tail(config, rng)
        # the predicted residual starts at zero so the untrained network is
        # the identity; short training budgets then only learn corrections
        zero_tail(self)

    @staticmethod
    def _feature_stream(config: ModelConfig, in_ch: int, rng) -> Sequential:
        if config.depth == "shallow":
            return Sequential([Conv2d(in_ch, FEATURES, 5, rng), ReLU()])
        layers: list = [Conv2d(in_ch, FEATURES, 3, rng), ReLU()]
        layers += [
            ResidualBlock(FEATURES, rng) for _ in range(config.residual_blocks_per_stream)
        ]
        return Sequential(layers)

    @staticmethod
    def _tail(config: ModelConfig, rng) -> Sequential:
        if config.depth == "shallow":
            return Sequential(
                [
                    Conv2d(FEATURES, 32, 3, rng),
                    ReLU(),
                    Conv2d(32, 16, 3, rng),
                    ReLU(),
                    Conv2d(16, 1, 5, rng),
                ]
            )
        return Sequential(
            [
                Conv2d(FEATURES, FEATURES, 3, rng),
                ReLU(),
                Conv2d(FEATURES, 32, 3, rng),
                ReLU(),
                Conv2d(32, 1, 3, rng),
            ]
        )

    # -- parameter plumbing -------------------------------------------------

    def _components(self) -> list[tuple[str, object]]:
        out: list[tuple[str, object]] = [("frame", self.frame_stream)]
        if self.mask_stream is not None:
            out.append(("mask", self.mask_stream))
        if self.fuse is not None:
            out.append(("fuse", self.fuse))
        out.append(("tail", self.tail))
        return out

    def params(self) -> list[nn.Parameter]:
        out: list[nn.Parameter] = []
        for _, comp in self._components():
            out += comp.params()
        return out

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for name, comp in self._components():
            for key, arr in comp.state().items():
                out[f"{name}.{key}"] = arr
        return out

    def descriptor(self) -> str:
        return json.dumps(
            {
                "format": "asnpp-model",
                "version": 1,
                "config": asdict(self.config),
                "train_steps": self.train_steps,
            },
            sort_keys=True,
        )

    def to_weights(self) -> nn.ModelWeights:
        return nn.ModelWeights(
            descriptor=self.descriptor(),
            tensors={k: v.copy() for k, v in self.state().items()},
        )

    def load_weights(self, weights: nn.ModelWeights) -> None:
        meta = json.loads(weights.descriptor)
        if meta.get("format") != "asnpp-model":
            raise ValueError("not a model weight bundle")
        if ModelConfig(**meta["config"]) != self.config:
            raise ValueError(
                f"architecture mismatch: file holds {meta['config']}, "
                f"model is {asdict(self.config)}"
            )
        mine = self.state()
        if set(mine) != set(weights.tensors):
            raise ValueError("tensor names do not match the architecture")
        for key, arr in mine.items():
            arr[...] = weights.tensors[key]
        self.train_steps = int(meta.get("train_steps", 0))

    @classmethod
    def from_weights(cls, weights: nn.ModelWeights) -> "Model":
        meta = json.loads(weights.descriptor)
        if meta.get("format") != "asnpp-model":
            raise ValueError("not a model weight bundle")
        model = cls(ModelConfig(**meta["config"]), seed=0)
        model.load_weights(weights)
        return model

    def clone(self) -> "Model":
        return Model.from_weights(self.to_weights())

    # -- forward / backward --------------------------------------------------

    def forward(
        self, frame: np.ndarray, mask: np.ndarray | None, training: bool = False
    ) -> np.ndarray:
        """NHWC forward; frame (n,h,w,1) in [0,1]; returns frame + residual."""
        cfg = self.config
        if cfg.use_mask and mask is None:
            raise ValueError(f"{cfg.label()} requires a mask input")
        if not cfg.use_mask and mask is not None:
            raise ValueError(f"{cfg.label()} takes no mask input")
        if cfg.use_mask and cfg.fusion == "CEF":
            feats = self.frame_stream.forward(concat_channels(frame, mask), training)
        else:
            feats = self.frame_stream.forward(frame, training)
            if cfg.use_mask and cfg.fusion == "AF":
                feats = feats + self.mask_stream.forward(mask, training)
            elif cfg.use_mask and cfg.fusion == "CLF":
                cat = concat_channels(feats, self.mask_stream.forward(mask, training))
                feats = self.fuse.forward(cat, training)
        residual = self.tail.forward(feats, training)
        return frame + residual

    def backward(self, dy: np.ndarray) -> None:
        cfg = self.config
        dfeat = self.tail.backward(dy)
        if cfg.use_mask and cfg.fusion == "AF":
            self.frame_stream.backward(dfeat, need_dx=False)
            self.mask_stream.backward(dfeat.copy(), need_dx=False)
        elif cfg.use_mask and cfg.fusion == "CLF":
            dcat = self.fuse.backward(dfeat)
            self.frame_stream.backward(dcat[..., :FEATURES], need_dx=False)
            self.mask_stream.backward(dcat[..., FEATURES:], need_dx=False)
        else:
            self.frame_stream.backward(dfeat, need_dx=False)


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    return Model(config, seed)


def count_parameters(model: Model) -> int:
    return sum(p.data.size for p in model.params())


def zero_tail(model: Model) -> Model:
    """Zero the final conv so the network is exactly the identity."""
    last = model.tail.layers[-1]
    last.w.data[...] = 0.0
    last.b.data[...] = 0.0
    return model


def _mask_for(model: Model, pair) -> np.ndarray | None:
    if not model.config.use_mask:
        return None
    return pair.mask_mm if model.config.mask_kind == "MM" else pair.mask_bm


def assemble_batch(model: Model, pairs) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Stack patch pairs into NHWC training arrays scaled to [0,1]."""
    x = np.stack([p.decoded for p in pairs]).astype(np.float32)[..., None] / 255.0
    t = np.stack([p.original for p in pairs]).astype(np.float32)[..., None] / 255.0
    m = None
    if model.config.use_mask:
        m = np.stack([_mask_for(model, p) for p in pairs]).astype(np.float32)[..., None]
    return x, t, m


def train(
    model: Model, pairs: list, cfg: nn.TrainConfig
) -> list[float]:
    """Seeded mini-batch MSE training; returns per-epoch mean loss."""
    if not pairs:
        raise ValueError("training set is empty")
    kernels.reuse_large_allocations()
    x, t, m = assemble_batch(model, pairs)
    opt = nn.make_optimizer(cfg.optimizer, model.params(), cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    losses: list[float] = []
    n = len(pairs)
    for epoch in range(cfg.end_epoch):
        opt.lr = cfg.lr_at_epoch(epoch)
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb, tb = x[idx], t[idx]
            mb = m[idx] if m is not None else None
            y = model.forward(xb, mb, training=True)
            loss, dy = nn.mse_loss(y, tb)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            model.backward(dy)
            opt.step()
            model.train_steps += 1
            batch_losses.append(loss)
        losses.append(float(np.mean(batch_losses)))
    for p in model.params():
        if not np.all(np.isfinite(p.data)):
            raise FloatingPointError("non-finite parameter after training")
    return losses


def fine_tune_from(base: Model, pairs: list, cfg: nn.TrainConfig) -> tuple[Model, list[float]]:
    """Continue training from a copy of base on a new patch set."""
    model = base.clone()
    losses = train(model, pairs, cfg) if cfg.end_epoch > 0 else []
    return model, losses


# -- inference -----------------------------------------------------------------


def postprocess_batch(
    model: Model, frames: np.ndarray, masks: np.ndarray | None
) -> np.ndarray:
    """Inference on NHWC [0,1] patches, clamped to [0,1].

    Processes fixed-size chunks so results do not depend on caller batching.
    """
    outs = []
    for start in range(0, frames.shape[0], _INFER_CHUNK):
        xb = frames[start : start + _INFER_CHUNK]
        mb = masks[start : start + _INFER_CHUNK] if masks is not None else None
        outs.append(np.clip(model.forward(xb, mb, training=False), 0.0, 1.0))
    return np.concatenate(outs, axis=0)


def postprocess_patch(
    model: Model, patch: nn.Tensor, mask: nn.Tensor | None = None
) -> nn.Tensor:
    """Post-process one (1,1,64,64) patch tensor scaled to [0,1]."""
    if patch.shape != (1, 1, PATCH, PATCH):
        raise ValueError(f"expected a (1,1,{PATCH},{PATCH}) patch, got {patch.shape}")
    x = nn.nchw_to_nhwc(patch.data)
    m = None
    if mask is not None:
        if mask.shape != patch.shape:
            raise ValueError("mask shape must match the patch")
        m = nn.nchw_to_nhwc(mask.data)
    y = postprocess_batch(model, x, m)
    return nn.Tensor(nn.nhwc_to_nchw(y))


def frame_to_patches(frame: FramePlane) -> np.ndarray:
    """Split a frame into its raster-order 64x64 patch grid, (P,64,64) u8."""
    if frame.width % PATCH or frame.height % PATCH:
        raise ValueError("frame dimensions must be multiples of 64")
    rows = frame.height // PATCH
    cols = frame.width // PATCH
    grid = frame.samples.reshape(rows, PATCH, cols, PATCH).transpose(0, 2, 1, 3)
    return grid.reshape(rows * cols, PATCH, PATCH)


def patches_to_frame(patches: np.ndarray, width: int, height: int) -> FramePlane:
    rows, cols = height // PATCH, width // PATCH
    grid = patches.reshape(rows, cols, PATCH, PATCH).transpose(0, 2, 1, 3)
    return FramePlane.from_array(grid.reshape(height, width))


def frame_masks(
    model: Model, decoded: FramePlane, partition: PartitionMap
) -> np.ndarray | None:
    """Patch-gridded mask input for a frame, or None for 1-in models."""
    if not model.config.use_mask:
        return None
    if model.config.mask_kind == "MM":
        values = gen_mean_mask(decoded, partition).values
    else:
        values = gen_boundary_mask(partition).values
    rows, cols = decoded.height // PATCH, decoded.width // PATCH
    grid = values.reshape(rows, PATCH, cols, PATCH).transpose(0, 2, 1, 3)
    return grid.reshape(rows * cols, PATCH, PATCH)[..., None]


def process_frame(
    model: Model, decoded: FramePlane, partition: PartitionMap
) -> FramePlane:
    """Run every 64x64 patch of a decoded frame through the model."""
    patches = frame_to_patches(decoded)
    x = patches.astype(np.float32)[..., None] / 255.0
    m = frame_masks(model, decoded, partition)
    y = postprocess_batch(model, x, m)
    out = np.clip(np.round(y[..., 0] * 255.0), 0, 255).astype(np.uint8)
    return patches_to_frame(out, decoded.width, decoded.height)
