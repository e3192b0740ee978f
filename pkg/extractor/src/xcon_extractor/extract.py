"""Walk an image folder, embed every image with a pretrained backbone, and
write the xcon feature/metadata pair with V augmented views per image."""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision import transforms

from .backbones import load_backbone
from .writer import write_feature_pair

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".webp"}
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class ExtractorConfig:
    image_root: str
    output_path: str
    backbone_name: str = "dino_vitb16"
    views: int = 2
    augmentation: str = "random"      # "random" (contrastive stack) or "center"
    batch_size: int = 16
    device: str = "cpu"
    split_path: str | None = None     # metadata-format file keyed by image id
    seed: int = 0
    image_size: int = 224

    def validate(self) -> None:
        if self.views < 1:
            raise ValueError("views must be >= 1")
        if not Path(self.image_root).is_dir():
            raise ValueError(f"image root {self.image_root!r} is not a directory")
        if self.augmentation not in ("random", "center"):
            raise ValueError("augmentation must be 'random' or 'center'")


def build_transform(cfg: ExtractorConfig):
    normalize = transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD)
    if cfg.augmentation == "center":
        return transforms.Compose([
            transforms.Resize(int(cfg.image_size * 256 / 224)),
            transforms.CenterCrop(cfg.image_size),
            transforms.ToTensor(),
            normalize,
        ])
    return transforms.Compose([
        transforms.RandomResizedCrop(cfg.image_size, scale=(0.3, 1.0)),
        transforms.RandomHorizontalFlip(),
        transforms.ColorJitter(brightness=0.4, contrast=0.4, saturation=0.4, hue=0.1),
        transforms.RandomGrayscale(p=0.2),
        transforms.ToTensor(),
        normalize,
    ])


def list_images(root) -> list[Path]:
    root = Path(root)
    return sorted(p for p in root.rglob("*")
                  if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS)


def load_split(path) -> dict[str, tuple[int, bool]]:
    """Read an id -> (label, labeled) map from a metadata-format file."""
    out: dict[str, tuple[int, bool]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3 or parts[2] not in ("L", "U"):
            raise ValueError(f"{path}:{lineno}: expected 'id<TAB>label<TAB>L|U'")
        label = -1 if parts[1] == "-" else int(parts[1])
        out[parts[0]] = (label, parts[2] == "L")
    return out


def folder_labels(paths: list[Path], root: Path) -> dict[str, tuple[int, bool]]:
    """Class per parent directory name, every image labeled."""
    classes = sorted({p.parent.name for p in paths})
    index = {c: i for i, c in enumerate(classes)}
    return {p.relative_to(root).as_posix(): (index[p.parent.name], True) for p in paths}


@dataclass
class ExtractResult:
    bin_path: Path
    meta_path: Path
    n_images: int
    n_views: int
    dim: int
    skipped: list = field(default_factory=list)


def extract(cfg: ExtractorConfig) -> ExtractResult:
    """Embed every readable image under ``cfg.image_root``.

    Views are produced by repeated augmentation passes, seeded per
    (image, view) so output is reproducible for a fixed config. Unreadable
    images are skipped, logged, and listed in ``<out>.skipped.txt``.
    """
    cfg.validate()
    root = Path(cfg.image_root)
    paths = list_images(root)
    if not paths:
        raise ValueError(f"no images found under {root}")
    split = load_split(cfg.split_path) if cfg.split_path else folder_labels(paths, root)

    model, dim = load_backbone(cfg.backbone_name, cfg.device)
    transform = build_transform(cfg)

    ids: list[str] = []
    labels: list[int] = []
    flags: list[bool] = []
    chunks: list[np.ndarray] = []
    skipped: list[str] = []

    batch_imgs: list[Image.Image] = []
    batch_ids: list[str] = []

    def flush():
        if not batch_imgs:
            return
        views = []
        for v in range(cfg.views):
            tensors = []
            for rid, img in zip(batch_ids, batch_imgs):
                # stable per-(image, view) seed so runs are reproducible
                torch.manual_seed(zlib.crc32(f"{cfg.seed}|{rid}|{v}".encode("utf-8")))
                tensors.append(transform(img))
            views.append(torch.stack(tensors))
        with torch.no_grad():
            embedded = [model(v.to(cfg.device)).cpu().numpy() for v in views]
        chunks.append(np.stack(embedded, axis=1).astype(np.float32))
        batch_imgs.clear()
        batch_ids.clear()

    for path in paths:
        rid = path.relative_to(root).as_posix()
        try:
            with Image.open(path) as img:
                loaded = img.convert("RGB")
        except Exception as e:  # noqa: BLE001 - any decode failure is a skip
            log.warning("skipping unreadable image %s: %s", path, e)
            skipped.append(f"{rid}\t{e}")
            continue
        label, labeled = split.get(rid, (-1, False))
        ids.append(rid)
        labels.append(label)
        flags.append(labeled)
        batch_imgs.append(loaded)
        batch_ids.append(rid)
        if len(batch_imgs) >= cfg.batch_size:
            flush()
    flush()

    if not ids:
        raise ValueError("no readable images to embed")
    features = np.concatenate(chunks, axis=0)
    comment = (f"backbone={cfg.backbone_name} views={cfg.views} "
               f"augmentation={cfg.augmentation} image_size={cfg.image_size} "
               f"seed={cfg.seed}")
    bin_path, meta_path = write_feature_pair(cfg.output_path, features, ids, labels,
                                             flags, comment=comment)
    out_base = Path(cfg.output_path)
    if skipped:
        out_base.with_suffix(".skipped.txt").write_text("\n".join(skipped) + "\n",
                                                        encoding="utf-8")
    return ExtractResult(bin_path=bin_path, meta_path=meta_path, n_images=len(ids),
                         n_views=cfg.views, dim=features.shape[2], skipped=skipped)
