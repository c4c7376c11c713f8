"""Probability models for coded symbols.

The conditional model treats each quantized latent element as a Gaussian
(location mu, scale sigma) convolved with a unit uniform, so the mass of
integer value v is Phi((v + 1/2 - mu)/sigma) - Phi((v - 1/2 - mu)/sigma).
Hyperpriors use a learned fully factorized density: one monotone univariate
CDF per channel, built from a chain of positive-weight affine layers and
bounded nonlinearities, finishing in a sigmoid.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .config import LIKELIHOOD_FLOOR
from .errors import ContractError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)


def standard_normal_cdf(x: torch.Tensor) -> torch.Tensor:
    # erfc form stays accurate in the lower tail
    return 0.5 * torch.erfc(-x * _INV_SQRT2)


def gaussian_likelihood(
    y_hat: torch.Tensor,
    mu: torch.Tensor,
    sigma: torch.Tensor,
    p_floor: float = LIKELIHOOD_FLOOR,
) -> torch.Tensor:
    """Per-element probability of the quantized value under N(mu, sigma^2)
    convolved with U(-1/2, 1/2), floored at ``p_floor`` (pass 0 to disable)."""
    if (sigma <= 0).any():
        raise ContractError("sigma must be strictly positive")
    v = y_hat - mu
    upper = standard_normal_cdf((0.5 - v) / sigma)
    lower = standard_normal_cdf((-0.5 - v) / sigma)
    p = upper - lower
    return p.clamp_min(p_floor) if p_floor > 0 else p


class FactorizedDensity(nn.Module):
    """Learned per-channel CDF for unconditioned (hyperprior) symbols.

    Each channel's CDF is sigmoid(f_K(...f_1(x))) with f_k an affine map with
    softplus-positive weights plus a tanh-gated residual, which keeps F
    monotone with limits 0 and 1 by construction.
    """

    def __init__(self, channels: int, filters: tuple[int, ...] = (3, 3, 3), init_scale: float = 10.0):
        super().__init__()
        self.channels = channels
        dims = (1,) + tuple(filters) + (1,)
        self._num_layers = len(dims) - 1
        scale = init_scale ** (1.0 / self._num_layers)
        for k in range(self._num_layers):
            init = math.log(math.expm1(1.0 / scale / dims[k + 1]))
            matrix = torch.full((channels, dims[k + 1], dims[k]), init)
            self.register_parameter(f"_matrix{k}", nn.Parameter(matrix))
            bias = torch.empty(channels, dims[k + 1], 1).uniform_(-0.5, 0.5)
            self.register_parameter(f"_bias{k}", nn.Parameter(bias))
            if k < self._num_layers - 1:
                factor = torch.zeros(channels, dims[k + 1], 1)
                self.register_parameter(f"_factor{k}", nn.Parameter(factor))

    def _logits_cdf(self, x: torch.Tensor) -> torch.Tensor:
        """x: [C, 1, N] -> logits of F(x), shape [C, 1, N]."""
        for k in range(self._num_layers):
            matrix = F.softplus(getattr(self, f"_matrix{k}"))
            x = matrix @ x + getattr(self, f"_bias{k}")
            if k < self._num_layers - 1:
                x = x + torch.tanh(getattr(self, f"_factor{k}")) * torch.tanh(x)
        return x

    def cdf(self, x: torch.Tensor) -> torch.Tensor:
        """Evaluate F at [C, N] points per channel."""
        return torch.sigmoid(self._logits_cdf(x.unsqueeze(1))).squeeze(1)

    def forward(
        self, z: torch.Tensor, p_floor: float = LIKELIHOOD_FLOOR
    ) -> torch.Tensor:
        """Per-element probability F(z + 1/2) - F(z - 1/2) for [B, C, H, W] input."""
        if z.shape[1] != self.channels:
            raise ContractError(
                f"density has {self.channels} channels, input has {z.shape[1]}"
            )
        b, c, h, w = z.shape
        flat = z.permute(1, 0, 2, 3).reshape(c, 1, -1)
        lower = self._logits_cdf(flat - 0.5)
        upper = self._logits_cdf(flat + 0.5)
        # evaluate both sigmoids on whichever side is numerically small
        sign = -torch.sign(lower + upper).detach()
        p = torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))
        p = p.reshape(c, b, h, w).permute(1, 0, 2, 3)
        return p.clamp_min(p_floor) if p_floor > 0 else p

    @torch.no_grad()
    def integer_pmf(self, symbol_max: int) -> torch.Tensor:
        """[C, 2*symbol_max+1] masses on integers, tails folded into the ends."""
        edges = torch.arange(
            -symbol_max - 0.5, symbol_max + 1.5, dtype=torch.float64
        ).expand(self.channels, -1)
        params_dtype = getattr(self, "_matrix0").dtype
        cdf = self.cdf(edges.to(params_dtype)).double()
        pmf = cdf[:, 1:] - cdf[:, :-1]
        pmf[:, 0] += cdf[:, 0]
        pmf[:, -1] += 1.0 - cdf[:, -1]
        return pmf
