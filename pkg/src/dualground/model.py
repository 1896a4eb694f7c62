"""Full network assembly: encoders -> fusion -> dual graph streams -> maps.

One instance serves both training (loss components per video and branch)
and inference (fine-granularity score maps only). All submodule parameters
are (re)initialized from a single seeded generator so a config + seed pair
pins the weights exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .encoders import DynamicEncoder, StaticEncoder, TextEncoder
from .fusion import FusionBlock
from .graphs import BilinearDiscriminator, graph_forward
from .proposals import ProposalConv, ProposalMap, ScoreMap, aggregate_coarse, build_map, score_map

STREAMS = ("dyn", "sta")


@dataclass(frozen=True)
class ModelConfig:
    raw_dim: int
    embed_dim: int
    hidden_dim: int = 32
    conv_kernel: int = 3
    mlp_mult: int = 4
    window: int = 2
    graph_layers: int = 2
    graph_edges: int = 60
    rbf_sigma: float = 2.0
    literal_residual_norm: bool = True
    rebuild_graph_each_layer: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        return cls(**raw)


class GroundingNetwork(nn.Module):
    def __init__(self, cfg: ModelConfig, token_table: np.ndarray, seed: int = 0,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        self.cfg = cfg
        self.dtype_ = dtype
        self.dynamic_encoder = DynamicEncoder(cfg.raw_dim, cfg.hidden_dim,
                                              cfg.conv_kernel, dtype=dtype)
        self.static_encoder = StaticEncoder(cfg.raw_dim, cfg.hidden_dim, dtype=dtype)
        self.text_encoder = TextEncoder(cfg.embed_dim, cfg.hidden_dim, dtype=dtype)
        self.fusion = FusionBlock(cfg.hidden_dim, cfg.mlp_mult,
                                  cfg.literal_residual_norm, dtype=dtype)
        self.discriminator = BilinearDiscriminator(cfg.hidden_dim, dtype=dtype)
        self.map_convs = nn.ModuleDict({
            f"{stream}_{gran}": ProposalConv(cfg.hidden_dim, dtype=dtype)
            for stream in STREAMS
            for gran in ("fine", "coarse")
        })
        self.register_buffer("token_table",
                             torch.as_tensor(token_table, dtype=dtype))
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        self.dynamic_encoder.reset_parameters(gen)
        self.static_encoder.reset_parameters(gen)
        self.text_encoder.reset_parameters(gen)
        self.fusion.reset_parameters(gen)
        self.discriminator.reset_parameters(gen)
        for key in sorted(self.map_convs.keys()):
            self.map_convs[key].reset_parameters(gen)

    def encode_fuse(self, dyn_raw: Tensor, sta_raw: Tensor,
                    token_lists: Sequence[Sequence[int]]) -> tuple[Tensor, Tensor, Tensor]:
        dyn = self.dynamic_encoder(dyn_raw)
        sta = self.static_encoder(sta_raw)
        qry = self.text_encoder(token_lists, self.token_table)
        return self.fusion(dyn, sta, qry)

    def stream_features(self, fused_dyn: Tensor, fused_sta: Tensor) -> tuple[Tensor, Tensor]:
        out = []
        for fused in (fused_dyn, fused_sta):
            out.append(graph_forward(
                fused,
                num_edges=self.cfg.graph_edges,
                num_layers=self.cfg.graph_layers,
                sigma=self.cfg.rbf_sigma,
                rebuild_each_layer=self.cfg.rebuild_graph_each_layer,
            ))
        return out[0], out[1]

    def proposal_scores(self, feats: Tensor, stream: str, granularity: str,
                        queries: Tensor) -> tuple[ProposalMap, ScoreMap]:
        pmap = build_map(feats, self.map_convs[f"{stream}_{granularity}"])
        return pmap, score_map(pmap, queries)

    def fine_score_maps(self, dyn_raw: Tensor, sta_raw: Tensor,
                        token_lists: Sequence[Sequence[int]]) -> dict:
        """Inference path: fine-granularity score maps per stream.

        No contrastive scoring and no coarse branch are involved.
        """
        fused_dyn, fused_sta, fused_qry = self.encode_fuse(dyn_raw, sta_raw, token_lists)
        feat_dyn, feat_sta = self.stream_features(fused_dyn, fused_sta)
        maps = {}
        for stream, feats in zip(STREAMS, (feat_dyn, feat_sta)):
            _, smap = self.proposal_scores(feats, stream, "fine", fused_qry)
            maps[stream] = smap
        return maps

    def coarse_features(self, feat_dyn: Tensor, feat_sta: Tensor) -> tuple[Tensor, Tensor]:
        return (aggregate_coarse(feat_dyn, self.cfg.window),
                aggregate_coarse(feat_sta, self.cfg.window))

    def state_tensors(self) -> dict:
        return {name: value.detach().cpu().numpy()
                for name, value in self.state_dict().items()}

    def load_state_tensors(self, tensors: dict) -> None:
        state = {name: torch.as_tensor(value, dtype=self.dtype_)
                 for name, value in tensors.items()}
        self.load_state_dict(state)


def model_from_checkpoint(tensors: dict, meta: dict,
                          dtype: torch.dtype = torch.float64) -> GroundingNetwork:
    cfg = ModelConfig.from_dict(meta["model"])
    table = tensors["token_table"]
    model = GroundingNetwork(cfg, table, seed=0, dtype=dtype)
    model.load_state_tensors(tensors)
    return model
