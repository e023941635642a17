"""Corpus de treino/avaliação: diretório de imagens (máscaras GT opcionais) ou sintético."""
from __future__ import annotations
from dataclasses import dataclass, field
import logging
from pathlib import Path

import numpy as np

from r2o.imaging import check_image, load_image, load_label_map
from r2o.synthetic import SyntheticCorpusSpec, make_corpus

log = logging.getLogger("r2o.dataset")

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".ppm")


@dataclass
class DatasetConfig:
    path: str = ""
    synthetic: bool = True


@dataclass
class Corpus:
    names: list[str] = field(default_factory=list)
    images: list[np.ndarray] = field(default_factory=list)
    masks: list[np.ndarray | None] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def has_gt(self) -> bool:
        return bool(self.masks) and all(m is not None for m in self.masks)

    def subset(self, indices) -> "Corpus":
        idx = list(indices)
        return Corpus(
            [self.names[i] for i in idx], [self.images[i] for i in idx],
            [self.masks[i] for i in idx],
        )


def load_corpus(root: str | Path) -> Corpus:
    """Lê `root/images/*` e, se existir, `root/masks/<nome>.rlm` para cada imagem.

    Se `root` não tiver subdiretório images/, as imagens são lidas dele mesmo.
    """
    root = Path(root)
    image_dir = root / "images" if (root / "images").is_dir() else root
    if not image_dir.is_dir():
        raise FileNotFoundError(f"Diretório de imagens não encontrado: {image_dir}")
    corpus = Corpus()
    for path in sorted(p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES):
        mask_path = root / "masks" / f"{path.stem}.rlm"
        img = check_image(load_image(path))
        mask = load_label_map(mask_path) if mask_path.exists() else None
        if mask is not None and mask.shape != img.shape[:2]:
            raise ValueError(f"Máscara {mask_path} com forma {mask.shape}, imagem {img.shape[:2]}")
        corpus.names.append(path.stem)
        corpus.images.append(img)
        corpus.masks.append(mask)
    log.info("Corpus carregado de %s: %d imagens (%d com GT)", root, len(corpus),
             sum(m is not None for m in corpus.masks))
    return corpus


def synthetic_corpus(spec: SyntheticCorpusSpec) -> Corpus:
    items = make_corpus(spec)
    return Corpus(
        names=[f"img_{i:05d}" for i in range(len(items))],
        images=[it.image for it in items],
        masks=[it.gt for it in items],
    )


def open_corpus(cfg: DatasetConfig, spec: SyntheticCorpusSpec) -> Corpus:
    if cfg.path:
        return load_corpus(cfg.path)
    if not cfg.synthetic:
        raise ValueError("Nenhum corpus configurado: defina dataset.path ou dataset.synthetic")
    return synthetic_corpus(spec)
