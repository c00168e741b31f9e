"""Patch dataset construction: cropping, extraction, splits, manifests.

Patches are 64x64 luminance pairs (decoded, original) with both guidance
masks attached.  Manifests are line-oriented text; rasters live in a
binary shard ("ASND") of fixed-size records, manifest order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .codec import FramePlane, PartitionMap
from .mask import gen_mean_mask, gen_boundary_mask

PATCH = 64
SHARD_MAGIC = b"ASND"
SHARD_VERSION = 1
_RECORD_BYTES = PATCH * PATCH * (1 + 1 + 4 + 4)


@dataclass
class PatchPair:
    decoded: np.ndarray  # (64,64) uint8
    original: np.ndarray  # (64,64) uint8
    mask_mm: np.ndarray  # (64,64) float32 in [0,1]
    mask_bm: np.ndarray  # (64,64) float32 in {0,1}
    source: tuple[str, int, int, int]  # (sequence id, frame index, x, y)
    qp: int
    label: int | None = None


@dataclass
class DatasetManifest:
    entries: list[PatchPair]
    seed: int = 0
    qps: tuple[int, ...] = ()
    split: dict[int, str] | None = None  # entry index -> "train" | "val"

    def subset(self, part: str) -> list[PatchPair]:
        if self.split is None:
            raise ValueError("dataset has not been split yet")
        return [e for i, e in enumerate(self.entries) if self.split[i] == part]


def crop_to_multiple(frame: FramePlane) -> FramePlane:
    """Crop bottom/right to the largest multiple of 64 in each dimension."""
    w = (frame.width // PATCH) * PATCH
    h = (frame.height // PATCH) * PATCH
    if w == 0 or h == 0:
        raise ValueError(
            f"frame {frame.width}x{frame.height} smaller than one {PATCH}x{PATCH} patch"
        )
    if (w, h) == (frame.width, frame.height):
        return frame
    return FramePlane.from_array(frame.samples[:h, :w])


def extract_patches(
    original: FramePlane,
    decoded: FramePlane,
    partition: PartitionMap,
    qp: int,
    sequence: str = "seq",
    frame_index: int = 0,
) -> list[PatchPair]:
    """Cut the non-overlapping 64x64 grid in raster order, with masks."""
    if (original.width, original.height) != (decoded.width, decoded.height):
        raise ValueError("original and decoded dimensions differ")
    if original.width % PATCH or original.height % PATCH:
        raise ValueError("frame dimensions must be multiples of 64; crop first")
    mm = gen_mean_mask(decoded, partition).values
    bm = gen_boundary_mask(partition).values
    pairs = []
    for y in range(0, original.height, PATCH):
        for x in range(0, original.width, PATCH):
            sl = (slice(y, y + PATCH), slice(x, x + PATCH))
            pairs.append(
                PatchPair(
                    decoded=decoded.samples[sl].copy(),
                    original=original.samples[sl].copy(),
                    mask_mm=mm[sl].copy(),
                    mask_bm=bm[sl].copy(),
                    source=(sequence, frame_index, x, y),
                    qp=qp,
                )
            )
    return pairs


def split_dataset(manifest: DatasetManifest, val_fraction: float = 0.1, seed: int = 0) -> DatasetManifest:
    """Assign whole sequences to train or validation (no patch leakage)."""
    sequences = sorted({e.source[0] for e in manifest.entries})
    if len(sequences) < 2:
        raise ValueError(
            "need at least 2 sequences to split; add more input sequences"
        )
    rng = np.random.default_rng(seed)
    order = [sequences[i] for i in rng.permutation(len(sequences))]
    n_val = min(len(sequences) - 1, max(1, round(val_fraction * len(sequences))))
    val_set = set(order[:n_val])
    split = {
        i: ("val" if e.source[0] in val_set else "train")
        for i, e in enumerate(manifest.entries)
    }
    return replace(manifest, split=split, seed=seed)


# -- persistence ----------------------------------------------------------------


def save_dataset(directory: str | Path, manifest: DatasetManifest) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"#asnpp-dataset seed={manifest.seed} qps={','.join(map(str, manifest.qps))}"]
    records = []
    for i, e in enumerate(manifest.entries):
        seq, frame, x, y = e.source
        if any(c.isspace() for c in seq):
            raise ValueError(f"sequence id {seq!r} must not contain whitespace")
        part = manifest.split[i] if manifest.split else "-"
        label = e.label if e.label is not None else "-"
        lines.append(f"{seq}\t{frame}\t{x}\t{y}\t{e.qp}\t{part}\t{label}")
        records.append(e)
    (directory / "manifest.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    with open(directory / "patches.asnd", "wb") as fh:
        fh.write(SHARD_MAGIC)
        fh.write(struct.pack("<II", SHARD_VERSION, len(records)))
        for e in records:
            fh.write(e.decoded.tobytes())
            fh.write(e.original.tobytes())
            fh.write(e.mask_mm.astype("<f4").tobytes())
            fh.write(e.mask_bm.astype("<f4").tobytes())


def load_dataset(directory: str | Path) -> DatasetManifest:
    directory = Path(directory)
    lines = (directory / "manifest.tsv").read_text(encoding="utf-8").splitlines()
    header = lines[0]
    if not header.startswith("#asnpp-dataset"):
        raise ValueError("missing dataset manifest header")
    fields = dict(tok.split("=", 1) for tok in header.split()[1:])
    seed = int(fields.get("seed", 0))
    qps = tuple(int(q) for q in fields.get("qps", "").split(",") if q)

    blob = (directory / "patches.asnd").read_bytes()
    if blob[:4] != SHARD_MAGIC:
        raise ValueError("patches.asnd: bad magic")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != SHARD_VERSION:
        raise ValueError(f"patches.asnd: unsupported version {version}")
    if len(blob) != 12 + count * _RECORD_BYTES:
        raise ValueError("patches.asnd: size does not match record count")
    if count != len(lines) - 1:
        raise ValueError("manifest and shard record counts differ")

    entries: list[PatchPair] = []
    split: dict[int, str] = {}
    have_split = False
    pos = 12
    n = PATCH * PATCH
    for i, line in enumerate(lines[1:]):
        seq, frame, x, y, qp, part, label = line.split("\t")
        decoded = np.frombuffer(blob, np.uint8, n, pos).reshape(PATCH, PATCH)
        original = np.frombuffer(blob, np.uint8, n, pos + n).reshape(PATCH, PATCH)
        mm = np.frombuffer(blob, "<f4", n, pos + 2 * n).reshape(PATCH, PATCH)
        bm = np.frombuffer(blob, "<f4", n, pos + 2 * n + 4 * n).reshape(PATCH, PATCH)
        pos += _RECORD_BYTES
        entries.append(
            PatchPair(
                decoded=decoded.copy(),
                original=original.copy(),
                mask_mm=mm.copy(),
                mask_bm=bm.copy(),
                source=(seq, int(frame), int(x), int(y)),
                qp=int(qp),
                label=None if label == "-" else int(label),
            )
        )
        if part != "-":
            have_split = True
            split[i] = part
    return DatasetManifest(
        entries=entries, seed=seed, qps=qps, split=split if have_split else None
    )


# -- procedural toy corpus --------------------------------------------------------


def _gradient(rng, h, w):
    gx, gy = rng.uniform(-1, 1, 2)
    yy, xx = np.mgrid[0:h, 0:w]
    img = gx * xx / w + gy * yy / h
    img = (img - img.min()) / max(np.ptp(img), 1e-9)
    return 15 + img * 225


def _checkerboard(rng, h, w):
    cell = int(rng.integers(8, 33))
    lo, hi = sorted(rng.integers(0, 256, 2))
    yy, xx = np.mgrid[0:h, 0:w]
    board = ((yy // cell + xx // cell) % 2).astype(np.float64)
    return lo + board * max(int(hi) - int(lo), 40)


def _filtered_noise(rng, h, w):
    img = rng.normal(128, 60, (h, w))
    for _ in range(3):
        img = (
            img
            + np.roll(img, 1, 0)
            + np.roll(img, -1, 0)
            + np.roll(img, 1, 1)
            + np.roll(img, -1, 1)
        ) / 5.0
    return img


def _glyphs(rng, h, w):
    img = np.full((h, w), float(rng.integers(170, 240)))
    ink = float(rng.integers(0, 60))
    for _ in range(int(rng.integers(30, 60))):
        gw = int(rng.integers(3, 24))
        gh = int(rng.integers(3, 24))
        x = int(rng.integers(0, w - gw))
        y = int(rng.integers(0, h - gh))
        if rng.random() < 0.5:
            img[y : y + gh, x : x + gw] = ink
        else:
            img[y : y + 2, x : x + gw] = ink
            img[y : y + gh, x : x + 2] = ink
    return img


_TOY_KINDS = (_gradient, _checkerboard, _filtered_noise, _glyphs)


def toy_frames(count: int, width: int = 256, height: int = 256, seed: int = 0) -> list[FramePlane]:
    """Seeded procedural frames: gradients, checkerboards, noise, glyphs.

    Content mixes smooth and sharp regions so the quadtree splits vary and
    the codec introduces learnable artifacts.
    """
    frames = []
    rng = np.random.default_rng(seed)
    for i in range(count):
        base = _TOY_KINDS[i % len(_TOY_KINDS)](rng, height, width)
        # light texture everywhere so no block is exactly flat
        base = base + rng.normal(0, 2.0, base.shape)
        frames.append(FramePlane.from_array(np.clip(np.round(base), 0, 255).astype(np.uint8)))
    return frames
