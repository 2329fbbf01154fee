"""Analog JSCC baselines over the relay: transparent (TM) and regenerative (RM) forwarding.

The encoder output is sent directly as complex symbols (pairs of real
channels), power-normalized per image. TM amplifies-and-forwards the noisy
uplink frame; RM decodes the frame to an image on board and re-encodes it
with the same encoder/decoder weights the ground nodes use.
"""

from __future__ import annotations

import math
from typing import Callable

import torch
import torch.nn as nn

from .. import channel as ch
from ..errors import ConfigurationError, ShapeError
from ..semnet import check_image
from ..system import HopSpec
from .config import AnalogConfig

RELAY_MODES = ("tm", "rm")


def _down(cin, cout):
    return [nn.Conv2d(cin, cout, 5, 2, 2), nn.PReLU(cout)]


def _up(cin, cout, last=False):
    layers: list[nn.Module] = [nn.ConvTranspose2d(cin, cout, 4, 2, 1)]
    if not last:
        layers.append(nn.PReLU(cout))
    return layers


class AnalogJSCC(nn.Module):
    def __init__(self, cfg: AnalogConfig, image_size: int, relay: str = "tm", coherent_rx: bool = False):
        super().__init__()
        if relay not in RELAY_MODES:
            raise ConfigurationError(f"relay mode must be one of {RELAY_MODES}, got {relay!r}")
        if image_size % cfg.downsample_factor:
            raise ConfigurationError("image_size must be divisible by the analog downsample factor")
        self.cfg, self.image_size, self.relay = cfg, image_size, relay
        self.coherent_rx = coherent_rx
        steps = int(math.log2(cfg.downsample_factor))
        w = cfg.width
        enc: list[nn.Module] = []
        cin = 3
        for _ in range(steps):
            enc += _down(cin, w)
            cin = w
        enc.append(nn.Conv2d(w, cfg.channels, 3, 1, 1))
        dec: list[nn.Module] = [nn.Conv2d(cfg.channels, w, 3, 1, 1), nn.PReLU(w)]
        for i in range(steps):
            dec += _up(w, 3 if i == steps - 1 else w, last=i == steps - 1)
        self.encoder = nn.Sequential(*enc)
        self.decoder = nn.Sequential(*dec)

    @property
    def side(self) -> int:
        return self.image_size // self.cfg.downsample_factor

    @property
    def symbols(self) -> int:
        """Complex channel uses per image on each hop."""
        return self.cfg.channels // 2 * self.side ** 2

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        z = self.encoder(images)
        half = self.cfg.channels // 2
        frame = torch.complex(z[:, :half].flatten(1), z[:, half:].flatten(1))
        return frame / ch.frame_power(frame).sqrt()

    def decode(self, frame: torch.Tensor) -> torch.Tensor:
        if frame.shape[-1] != self.symbols:
            raise ShapeError(f"expected {self.symbols} symbols per image, got {frame.shape[-1]}")
        half, s = self.cfg.channels // 2, self.side
        z = torch.cat([frame.real.reshape(-1, half, s, s), frame.imag.reshape(-1, half, s, s)], dim=1)
        return torch.sigmoid(self.decoder(z))

    def forward(self, images: torch.Tensor, uplink: HopSpec, downlink: HopSpec,
                tracer: Callable[[str], None] | None = None) -> torch.Tensor:
        mark = tracer or (lambda _: None)
        check_image(images, self.image_size)
        tx = self.encode(images)
        mark("encode")
        rx = uplink.transmit(tx, self.coherent_rx)
        mark("uplink")
        if self.relay == "tm":
            relay_tx = ch.transparent_forward(rx)
            mark("relay_transparent")
        else:
            relay_img = self.decode(rx)
            mark("relay_decode")
            relay_tx = self.encode(relay_img)
            mark("relay_encode")
        out = self.decode(downlink.transmit(relay_tx, self.coherent_rx))
        mark("downlink_decode")
        return out

    @torch.no_grad()
    def reconstruct(self, images: torch.Tensor, uplink: HopSpec, downlink: HopSpec) -> torch.Tensor:
        was = self.training
        self.eval()
        try:
            return self.forward(images, uplink, downlink)
        finally:
            self.train(was)
