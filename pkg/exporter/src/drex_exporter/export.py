"""Batch feature export: image folder in, DRXF file + JSON summary out."""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .backbones import DEFAULT_DINO_MODEL, DEFAULT_DINO_SIZE, DinoCls, ResNetStages
from .drxf_writer import write_drxf

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp", ".tif", ".tiff"}


@dataclass
class ExportJob:
    image_dir: str
    out_path: str
    scores_path: str | None = None
    batch_size: int = 32
    device: str = "cpu"
    weights: str = "pretrained"
    init_seed: int = 0
    dino_model: str = DEFAULT_DINO_MODEL
    dino_dim: int | None = None
    dino_size: int = DEFAULT_DINO_SIZE
    summary_path: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class ExportSummary:
    exported: int = 0
    skipped: list[str] = field(default_factory=list)
    scored: int = 0
    preprocessing: dict = field(default_factory=dict)
    backbones: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "exported": self.exported,
                "scored": self.scored,
                "skipped": self.skipped,
                "preprocessing": self.preprocessing,
                "backbones": self.backbones,
            },
            sort_keys=True,
            indent=2,
        )


def load_score_table(path) -> dict[str, float]:
    """Two-column id,score CSV; a header row is detected and skipped."""
    table: dict[str, float] = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or len(row) < 2:
                continue
            rec_id, raw = row[0].strip(), row[1].strip()
            try:
                score = float(raw)
            except ValueError:
                continue  # header or malformed row
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"score for {rec_id!r} outside [0, 1]: {score}")
            table[rec_id] = score
    return table


def discover_images(image_dir) -> list[Path]:
    root = Path(image_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"image directory not found: {root}")
    found = [
        p for p in sorted(root.rglob("*"))
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    ]
    return found


def _lookup_score(table: dict[str, float], rec_id: str) -> float | None:
    if rec_id in table:
        return table[rec_id]
    stem = Path(rec_id).stem
    return table.get(stem)


def extract_features(job: ExportJob) -> ExportSummary:
    """Run both frozen backbones over every decodable image and write DRXF.

    Undecodable files are skipped and logged; the output always satisfies
    the DRXF invariants (the writer refuses anything else).
    """
    paths = discover_images(job.image_dir)
    score_table = load_score_table(job.scores_path) if job.scores_path else {}

    resnet = ResNetStages(job.weights, job.device, init_seed=job.init_seed)
    dino = DinoCls(
        job.weights,
        job.device,
        model_name=job.dino_model,
        dino_size=job.dino_size,
        hidden_size=job.dino_dim,
        init_seed=job.init_seed,
    )
    if job.dino_dim is not None and dino.hidden_size != job.dino_dim:
        raise ValueError(
            f"--dino-dim {job.dino_dim} does not match the backbone width {dino.hidden_size}"
        )

    summary = ExportSummary(
        preprocessing={
            "resnet_input": "resize 512x512 bilinear, ImageNet mean/std",
            "dino_input": f"resize {dino.size}x{dino.size} bilinear, ImageNet mean/std",
        },
        backbones={
            "resnet": resnet.weights_id,
            "dino": dino.weights_id,
            "dino_hidden_size": dino.hidden_size,
        },
    )

    root = Path(job.image_dir)
    records: list[tuple[str, np.ndarray, np.ndarray, float | None]] = []
    batch_ids: list[str] = []
    batch_scores: list[float | None] = []
    resnet_batch: list = []
    dino_batch: list = []

    def flush():
        if not batch_ids:
            return
        import torch

        resnet_feats = resnet(torch.stack(resnet_batch))
        dino_feats = dino(torch.stack(dino_batch))
        for rec_id, score, rf, df in zip(batch_ids, batch_scores, resnet_feats, dino_feats):
            records.append((rec_id, df, rf, score))
        batch_ids.clear()
        batch_scores.clear()
        resnet_batch.clear()
        dino_batch.clear()

    for path in paths:
        rec_id = path.relative_to(root).as_posix()
        try:
            with Image.open(path) as img:
                resnet_batch.append(resnet.preprocess(img))
                dino_batch.append(dino.preprocess(img))
        except (UnidentifiedImageError, OSError) as exc:
            print(f"skipping {rec_id}: {exc}", file=sys.stderr)
            summary.skipped.append(rec_id)
            continue
        batch_ids.append(rec_id)
        score = _lookup_score(score_table, rec_id)
        batch_scores.append(score)
        if score is not None:
            summary.scored += 1
        if len(batch_ids) >= job.batch_size:
            flush()
    flush()

    write_drxf(job.out_path, records, dino_dim=dino.hidden_size, block_dims=resnet.block_dims)
    summary.exported = len(records)

    summary_path = job.summary_path or str(Path(job.out_path).with_suffix(".summary.json"))
    Path(summary_path).write_text(summary.to_json() + "\n")
    return summary
