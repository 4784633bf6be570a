"""Frozen backbone wrappers: DINOv3 ViT [CLS] and multi-scale ResNet-50.

Both backbones run in inference mode and are never updated. The ResNet
path resizes to 512x512, applies standard ImageNet normalization, and
global-average-pools each of the four residual stages (256+512+1024+2048
channels). The transformer path resizes to a square ``dino_size`` (the
backbone's native 224 by default) with the same normalization and takes
the [CLS] token from the last hidden state.

``weights="pretrained"`` downloads the published weights and aborts with
a clear error if they cannot be fetched; ``weights="random"`` builds the
same architectures with seeded random initialization, which preserves
every shape/determinism property and needs no network access.
"""

from __future__ import annotations

import numpy as np
import torch
import torchvision
from PIL import Image

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

DEFAULT_DINO_MODEL = "facebook/dinov3-vits16-pretrain-lvd1689m"
RESNET_SIZE = 512
DEFAULT_DINO_SIZE = 224


class WeightLoadError(Exception):
    """Pretrained weights could not be obtained."""


def _to_tensor(image: Image.Image, size: int) -> torch.Tensor:
    resized = image.convert("RGB").resize((size, size), Image.BILINEAR)
    arr = np.asarray(resized, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(IMAGENET_MEAN, dtype=np.float32)) / np.asarray(
        IMAGENET_STD, dtype=np.float32
    )
    return torch.from_numpy(arr.transpose(2, 0, 1))


class ResNetStages:
    """ResNet-50 with per-stage global-average-pooled outputs."""

    block_dims = (256, 512, 1024, 2048)

    def __init__(self, weights: str, device: str, init_seed: int = 0):
        if weights == "pretrained":
            try:
                model = torchvision.models.resnet50(
                    weights=torchvision.models.ResNet50_Weights.IMAGENET1K_V2
                )
            except Exception as exc:
                raise WeightLoadError(f"cannot obtain ResNet-50 weights: {exc}") from exc
            self.weights_id = "torchvision/ResNet50_Weights.IMAGENET1K_V2"
        elif weights == "random":
            torch.manual_seed(init_seed)
            model = torchvision.models.resnet50(weights=None)
            self.weights_id = f"random(seed={init_seed})"
        else:
            raise ValueError(f"weights must be 'pretrained' or 'random', got {weights!r}")
        model.eval()
        for p in model.parameters():
            p.requires_grad_(False)
        self.model = model.to(device)
        self.device = device

    def __call__(self, batch: torch.Tensor) -> np.ndarray:
        m = self.model
        with torch.inference_mode():
            x = m.maxpool(m.relu(m.bn1(m.conv1(batch.to(self.device)))))
            stages = []
            for layer in (m.layer1, m.layer2, m.layer3, m.layer4):
                x = layer(x)
                stages.append(torch.flatten(torch.nn.functional.adaptive_avg_pool2d(x, 1), 1))
            return torch.cat(stages, dim=1).cpu().numpy()

    def preprocess(self, image: Image.Image) -> torch.Tensor:
        return _to_tensor(image, RESNET_SIZE)


class DinoCls:
    """DINOv3 ViT wrapper returning the final-layer [CLS] embedding."""

    def __init__(
        self,
        weights: str,
        device: str,
        model_name: str = DEFAULT_DINO_MODEL,
        dino_size: int = DEFAULT_DINO_SIZE,
        hidden_size: int | None = None,
        init_seed: int = 0,
    ):
        from transformers.models.dinov3_vit import DINOv3ViTConfig, DINOv3ViTModel

        if dino_size % 16 != 0:
            raise ValueError(f"dino_size must be a multiple of the 16px patch, got {dino_size}")
        self.size = dino_size
        if weights == "pretrained":
            from transformers import AutoModel

            try:
                model = AutoModel.from_pretrained(model_name)
            except Exception as exc:
                raise WeightLoadError(
                    f"cannot obtain weights for {model_name!r}: {exc}"
                ) from exc
            self.weights_id = model_name
        elif weights == "random":
            torch.manual_seed(init_seed)
            config = DINOv3ViTConfig()  # defaults are the ViT-S/16 geometry
            if hidden_size is not None and hidden_size != config.hidden_size:
                raise ValueError(
                    f"requested embedding dim {hidden_size} != ViT-S/16 width "
                    f"{config.hidden_size}; pass --dino-model for other variants"
                )
            model = DINOv3ViTModel(config)
            self.weights_id = f"random(ViT-S/16, seed={init_seed})"
        else:
            raise ValueError(f"weights must be 'pretrained' or 'random', got {weights!r}")
        model.eval()
        for p in model.parameters():
            p.requires_grad_(False)
        self.model = model.to(device)
        self.device = device
        self.hidden_size = int(model.config.hidden_size)

    def __call__(self, batch: torch.Tensor) -> np.ndarray:
        with torch.inference_mode():
            out = self.model(pixel_values=batch.to(self.device))
            return out.last_hidden_state[:, 0].cpu().numpy()

    def preprocess(self, image: Image.Image) -> torch.Tensor:
        return _to_tensor(image, self.size)
