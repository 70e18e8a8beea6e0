"""Feature extractor architectures.

Pretrained mode: VGG16, output of the last-but-one fully connected layer
(4096 features), imagelets bilinearly resized to 224x224. When the ImageNet
weights are unavailable (offline environment) the network falls back to a
seeded random initialization with a prominent warning; the architecture,
output dimension, and determinism are unchanged.

CAE mode: five 16/32/32/32/32-filter conv layers with kernel sizes
5/7/7/9/9, max-pool + batch-norm on the first three, a 512-dim bottleneck,
and the mirrored transposed-conv decoder (upsampling mirrors the three
pooled layers; ReLU everywhere except the sigmoid output).
"""

from __future__ import annotations

import logging

import torch
from torch import nn

log = logging.getLogger(__name__)

IMAGENET_MEAN = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
IMAGENET_STD = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
VGG_DIM = 4096
CAE_DIM = 512


def build_vgg16(seed: int, weights_path: str | None = None) -> tuple[nn.Module, bool]:
    """Returns (model mapping 224x224 input to the 4096-dim penultimate FC
    output, pretrained flag)."""
    from torchvision.models import vgg16

    pretrained = False
    torch.manual_seed(seed)
    if weights_path:
        net = vgg16(weights=None)
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        net.load_state_dict(state)
        pretrained = True
    else:
        import socket

        old_timeout = socket.getdefaulttimeout()
        socket.setdefaulttimeout(5.0)  # fail fast when offline
        try:
            from torchvision.models import VGG16_Weights

            net = vgg16(weights=VGG16_Weights.IMAGENET1K_V1)
            pretrained = True
        except Exception as exc:  # noqa: BLE001 - offline fallback
            log.warning(
                "ImageNet weights unavailable (%s); using a seeded random "
                "initialization. Embeddings keep the documented shape and "
                "determinism but are not the pretrained features.",
                exc,
            )
            net = vgg16(weights=None)
        finally:
            socket.setdefaulttimeout(old_timeout)
    # Truncate the classifier to the last-but-one fully connected layer:
    # Linear(25088,4096) -> ReLU -> Dropout -> Linear(4096,4096).
    net.classifier = nn.Sequential(*list(net.classifier.children())[:4])
    net.eval()
    return net, pretrained


@torch.no_grad()
def vgg_features(net: nn.Module, pixels01: torch.Tensor, batch: int = 32) -> torch.Tensor:
    """pixels01: N x 3 x 64 x 64 floats in [0,1] -> N x 4096."""
    outs = []
    for i in range(0, len(pixels01), batch):
        x = pixels01[i : i + batch]
        x = torch.nn.functional.interpolate(
            x, size=(224, 224), mode="bilinear", align_corners=False
        )
        x = (x - IMAGENET_MEAN) / IMAGENET_STD
        outs.append(net(x))
    return torch.cat(outs)


class Cae(nn.Module):
    def __init__(self, embedding_dim: int = CAE_DIM):
        super().__init__()
        self.encoder_convs = nn.Sequential(
            nn.Conv2d(3, 16, 5, padding="same"), nn.ReLU(),
            nn.MaxPool2d(2), nn.BatchNorm2d(16),
            nn.Conv2d(16, 32, 7, padding="same"), nn.ReLU(),
            nn.MaxPool2d(2), nn.BatchNorm2d(32),
            nn.Conv2d(32, 32, 7, padding="same"), nn.ReLU(),
            nn.MaxPool2d(2), nn.BatchNorm2d(32),
            nn.Conv2d(32, 32, 9, padding="same"), nn.ReLU(), nn.BatchNorm2d(32),
            nn.Conv2d(32, 32, 9, padding="same"), nn.ReLU(), nn.BatchNorm2d(32),
        )
        self.to_z = nn.Linear(32 * 8 * 8, embedding_dim)
        self.from_z = nn.Linear(embedding_dim, 32 * 8 * 8)
        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        self.dec1 = nn.ConvTranspose2d(32, 32, 9, padding=4)
        self.dec2 = nn.ConvTranspose2d(32, 32, 9, padding=4)
        self.dec3 = nn.ConvTranspose2d(32, 32, 7, padding=3)
        self.dec4 = nn.ConvTranspose2d(32, 32, 7, padding=3)
        self.dec5 = nn.ConvTranspose2d(32, 16, 5, padding=2)
        self.out_conv = nn.Conv2d(16, 3, 3, padding=1)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        h = self.encoder_convs(x)
        return self.to_z(h.flatten(1))

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        h = torch.relu(self.from_z(z)).view(-1, 32, 8, 8)
        h = torch.relu(self.dec1(h))
        h = torch.relu(self.dec2(h))
        h = torch.relu(self.dec3(self.up(h)))  # 8 -> 16
        h = torch.relu(self.dec4(self.up(h)))  # 16 -> 32
        h = torch.relu(self.dec5(self.up(h)))  # 32 -> 64
        return torch.sigmoid(self.out_conv(h))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))


def reconstruction_loss(batch: torch.Tensor, recon: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of per-image mean squared error (identical to a
    global mean over all pixels)."""
    return ((batch - recon) ** 2).mean()
