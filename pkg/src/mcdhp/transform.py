"""Hierarchical windowed-Transformer analysis and synthesis transforms.

Both transforms run four stages; spatial resolution halves and channel width
doubles between consecutive encoder stages (and the reverse on the decoder
side). Each stage alternates two block kinds:

* local blocks: multi-head self-attention computed independently inside
  non-overlapping windows, so no information crosses window boundaries in
  the attention step;
* global-query blocks: the same windowed attention, except the queries are
  shared across all windows. They are produced once per stage by pooling the
  whole stage input down to one window's worth of tokens and replicating it,
  which lets every window attend to a summary of the full feature map.

The input image must be divisible by ``16 * window`` (64 for the default
4x4 window) so every stage tiles exactly into windows; stages that contain a
global-query block additionally require the stage-to-window size ratio to be
a power of two so the pooling chain lands exactly on the window size.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .config import TransformConfig
from .errors import ConfigurationError, ContractError
from .layers import FusedMBConv


def window_partition(x: torch.Tensor, window: tuple[int, int]) -> torch.Tensor:
    """[B, C, H, W] -> [B * num_windows, window_tokens, C], row-major windows."""
    b, c, height, width = x.shape
    h, w = window
    if height % h or width % w:
        raise ConfigurationError(
            f"feature map {height}x{width} does not tile into {h}x{w} windows"
        )
    x = x.view(b, c, height // h, h, width // w, w)
    x = x.permute(0, 2, 4, 3, 5, 1)
    return x.reshape(b * (height // h) * (width // w), h * w, c)


def window_merge(
    tokens: torch.Tensor, window: tuple[int, int], batch: int, height: int, width: int
) -> torch.Tensor:
    """Inverse of :func:`window_partition`."""
    h, w = window
    c = tokens.shape[-1]
    x = tokens.view(batch, height // h, width // w, h, w, c)
    x = x.permute(0, 5, 1, 3, 2, 4)
    return x.reshape(batch, c, height, width)


@dataclass
class GlobalQuerySet:
    """Shared query tokens for one stage: [B, M, tokens, dim] with all M
    window rows identical, plus the id of the stage that produced them."""

    queries: torch.Tensor
    source_stage: int

    @property
    def num_windows(self) -> int:
        return self.queries.shape[1]


class WindowSelfAttention(nn.Module):
    """Multi-head self-attention over one window's tokens."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim**-0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        b, t, c = tokens.shape
        qkv = (
            self.qkv(tokens)
            .reshape(b, t, 3, self.num_heads, self.head_dim)
            .permute(2, 0, 3, 1, 4)
        )
        q, k, v = qkv.unbind(0)
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, t, c)
        return self.proj(out)


class SharedQueryWindowAttention(nn.Module):
    """Windowed attention whose queries come from a shared token set while
    keys and values stay local to each window."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim**-0.5
        self.q_proj = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, dim * 2)
        self.proj = nn.Linear(dim, dim)

    def forward(self, tokens: torch.Tensor, queries: torch.Tensor) -> torch.Tensor:
        b, t, c = tokens.shape
        tq = queries.shape[1]
        q = (
            self.q_proj(queries)
            .reshape(b, tq, self.num_heads, self.head_dim)
            .transpose(1, 2)
        )
        kv = (
            self.kv(tokens)
            .reshape(b, t, 2, self.num_heads, self.head_dim)
            .permute(2, 0, 3, 1, 4)
        )
        k, v = kv.unbind(0)
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, tq, c)
        return self.proj(out)


class TokenMLP(nn.Module):
    def __init__(self, dim: int, ratio: float):
        super().__init__()
        hidden = int(dim * ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class LocalWindowBlock(nn.Module):
    """Pre-norm Transformer block with window-local self-attention."""

    def __init__(self, dim: int, num_heads: int, window: tuple[int, int], mlp_ratio: float):
        super().__init__()
        self.window = window
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowSelfAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = TokenMLP(dim, mlp_ratio)

    def _attended(self, tokens: torch.Tensor) -> torch.Tensor:
        return tokens + self.attn(self.norm1(tokens))

    def pre_ffn(self, x: torch.Tensor) -> torch.Tensor:
        """Post-attention, pre-FFN feature map (window-isolation checks)."""
        b, _, h, w = x.shape
        return window_merge(
            self._attended(window_partition(x, self.window)), self.window, b, h, w
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, _, h, w = x.shape
        tokens = self._attended(window_partition(x, self.window))
        tokens = tokens + self.mlp(self.norm2(tokens))
        return window_merge(tokens, self.window, b, h, w)


class GlobalQueryBlock(nn.Module):
    """Pre-norm Transformer block using the stage's shared global queries."""

    def __init__(
        self,
        dim: int,
        num_heads: int,
        window: tuple[int, int],
        mlp_ratio: float,
        stage_id: int,
    ):
        super().__init__()
        self.window = window
        self.stage_id = stage_id
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SharedQueryWindowAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = TokenMLP(dim, mlp_ratio)

    def _check(self, x: torch.Tensor, q: GlobalQuerySet) -> None:
        if q.source_stage != self.stage_id:
            raise ContractError(
                f"query set from stage {q.source_stage} fed to stage {self.stage_id}"
            )
        b, _, h, w = x.shape
        windows = (h // self.window[0]) * (w // self.window[1])
        if q.queries.shape[0] != b or q.num_windows != windows:
            raise ContractError(
                f"query set shape {tuple(q.queries.shape)} does not match "
                f"{b} items x {windows} windows"
            )

    def _attended(self, tokens: torch.Tensor, q_tokens: torch.Tensor) -> torch.Tensor:
        return tokens + self.attn(self.norm1(tokens), q_tokens)

    def pre_ffn(self, x: torch.Tensor, q: GlobalQuerySet) -> torch.Tensor:
        self._check(x, q)
        b, _, h, w = x.shape
        q_tokens = q.queries.reshape(-1, *q.queries.shape[2:])
        tokens = self._attended(window_partition(x, self.window), q_tokens)
        return window_merge(tokens, self.window, b, h, w)

    def forward(self, x: torch.Tensor, q: GlobalQuerySet) -> torch.Tensor:
        self._check(x, q)
        b, _, h, w = x.shape
        q_tokens = q.queries.reshape(-1, *q.queries.shape[2:])
        tokens = self._attended(window_partition(x, self.window), q_tokens)
        tokens = tokens + self.mlp(self.norm2(tokens))
        return window_merge(tokens, self.window, b, h, w)


class GlobalQueryGenerator(nn.Module):
    """Pools a stage's feature map down to one window of tokens and
    replicates it per window.

    The reduction layer (FusedMBConv followed by 2x max pooling) is applied
    as many times as needed to reach the window size; its weights are shared
    across repetitions so the module works at any power-of-two ratio between
    feature-map and window dims. Non-square ratios pool each axis only while
    it is still above the window size.
    """

    def __init__(self, dim: int, window: tuple[int, int], stage_id: int, se_reduction: int = 4):
        super().__init__()
        self.window = window
        self.stage_id = stage_id
        self.reduce = FusedMBConv(dim, se_reduction)

    @staticmethod
    def _steps(size: int, target: int, what: str) -> int:
        if size < target or size % target:
            raise ConfigurationError(f"{what} {size} not a multiple of window {target}")
        ratio = size // target
        if ratio & (ratio - 1):
            raise ConfigurationError(
                f"{what}-to-window ratio {ratio} is not a power of two"
            )
        return ratio.bit_length() - 1

    def forward(self, x: torch.Tensor) -> GlobalQuerySet:
        b, c, height, width = x.shape
        h, w = self.window
        n_h = self._steps(height, h, "height")
        n_w = self._steps(width, w, "width")
        g = x
        for step in range(max(n_h, n_w)):
            g = self.reduce(g)
            g = F.max_pool2d(g, (2 if step < n_h else 1, 2 if step < n_w else 1))
        tokens = g.flatten(2).transpose(1, 2)
        m = (height // h) * (width // w)
        queries = tokens.unsqueeze(1).expand(b, m, h * w, c)
        return GlobalQuerySet(queries=queries, source_stage=self.stage_id)


class Downsample(nn.Module):
    """FusedMBConv then a stride-2 conv that doubles the channel count."""

    def __init__(self, dim: int, se_reduction: int = 4):
        super().__init__()
        self.mbconv = FusedMBConv(dim, se_reduction)
        self.conv = nn.Conv2d(dim, dim * 2, 3, stride=2, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2] % 2 or x.shape[-1] % 2:
            raise ConfigurationError("downsampling requires even spatial dims")
        return self.conv(self.mbconv(x))


class Upsample(nn.Module):
    """Mirror of :class:`Downsample`: stride-2 transposed conv halving the
    channel count, then FusedMBConv."""

    def __init__(self, dim: int, se_reduction: int = 4):
        super().__init__()
        self.conv = nn.ConvTranspose2d(
            dim, dim // 2, 3, stride=2, padding=1, output_padding=1
        )
        self.mbconv = FusedMBConv(dim // 2, se_reduction)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.mbconv(self.conv(x))


class TransformStage(nn.Module):
    """Alternating [local, global-query] blocks; odd depths end on a local
    block. The global query set is generated once from the stage input and
    reused by every global-query block in the stage."""

    def __init__(
        self,
        dim: int,
        depth: int,
        num_heads: int,
        window: tuple[int, int],
        mlp_ratio: float,
        se_reduction: int,
        stage_id: int,
    ):
        super().__init__()
        self.stage_id = stage_id
        blocks: list[nn.Module] = []
        for i in range(depth):
            if i % 2 == 1:
                blocks.append(
                    GlobalQueryBlock(dim, num_heads, window, mlp_ratio, stage_id)
                )
            else:
                blocks.append(LocalWindowBlock(dim, num_heads, window, mlp_ratio))
        self.blocks = nn.ModuleList(blocks)
        self.query_gen = (
            GlobalQueryGenerator(dim, window, stage_id, se_reduction)
            if any(isinstance(b, GlobalQueryBlock) for b in blocks)
            else None
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q = self.query_gen(x) if self.query_gen is not None else None
        for block in self.blocks:
            x = block(x, q) if isinstance(block, GlobalQueryBlock) else block(x)
        return x


def _check_image(x: torch.Tensor, divisor: int) -> None:
    if x.dim() != 4 or x.shape[1] != 3:
        raise ConfigurationError(f"expected [B, 3, H, W] image, got {tuple(x.shape)}")
    if x.shape[-2] % divisor or x.shape[-1] % divisor:
        raise ConfigurationError(
            f"image dims {x.shape[-2]}x{x.shape[-1]} not divisible by {divisor}"
        )
    if x.min() < -1e-6 or x.max() > 1 + 1e-6:
        raise ConfigurationError("image values must lie in [0, 1]")


class AnalysisTransform(nn.Module):
    """Image -> latent at 1/16 resolution and ``latent_channels`` width."""

    def __init__(self, cfg: TransformConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        self.patchify = nn.Conv2d(3, c, 3, stride=2, padding=1)
        self.embed = nn.Conv2d(c, c, 3, padding=1)
        self.stages = nn.ModuleList(
            TransformStage(
                c * 2**s,
                cfg.stage_depths[s],
                cfg.num_heads[s],
                cfg.window_size,
                cfg.mlp_ratio,
                cfg.se_reduction,
                stage_id=s,
            )
            for s in range(4)
        )
        self.downsamples = nn.ModuleList(
            Downsample(c * 2**s, cfg.se_reduction) for s in range(3)
        )
        self.to_latent = nn.Conv2d(c * 8, cfg.latent_channels, 3, padding=1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        _check_image(image, self.cfg.divisor)
        x = self.embed(self.patchify(image))
        for s in range(4):
            x = self.stages[s](x)
            if s < 3:
                x = self.downsamples[s](x)
        return self.to_latent(x)


class SynthesisTransform(nn.Module):
    """Mirror of :class:`AnalysisTransform`: latent -> image.

    Output is unclamped; evaluation paths clamp to [0, 1] themselves.
    """

    def __init__(self, cfg: TransformConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        self.from_latent = nn.Conv2d(cfg.latent_channels, c * 8, 3, padding=1)
        self.stages = nn.ModuleList(
            TransformStage(
                c * 2**s,
                cfg.stage_depths[s],
                cfg.num_heads[s],
                cfg.window_size,
                cfg.mlp_ratio,
                cfg.se_reduction,
                stage_id=10 + s,
            )
            for s in (3, 2, 1, 0)
        )
        self.upsamples = nn.ModuleList(
            Upsample(c * 2**s, cfg.se_reduction) for s in (3, 2, 1)
        )
        self.de_embed = nn.Conv2d(c, c, 3, padding=1)
        self.unpatchify = nn.ConvTranspose2d(
            c, 3, 3, stride=2, padding=1, output_padding=1
        )

    def forward(self, y_hat: torch.Tensor) -> torch.Tensor:
        if y_hat.dim() != 4 or y_hat.shape[1] != self.cfg.latent_channels:
            raise ContractError(
                f"expected [B, {self.cfg.latent_channels}, H, W] latent, "
                f"got {tuple(y_hat.shape)}"
            )
        x = self.from_latent(y_hat)
        for i in range(4):
            x = self.stages[i](x)
            if i < 3:
                x = self.upsamples[i](x)
        return self.unpatchify(self.de_embed(x))
