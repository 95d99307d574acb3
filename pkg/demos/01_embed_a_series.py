"""Turn one normalized lookback into attention-row tokens and compare with patch tokens.

Run: python demos/01_embed_a_series.py
"""
import numpy as np

from attnembed import EmbedConfig, Tensor, build_embedding, embed_series, gen_synthetic, instance_normalize
from attnembed.nn import Params

series = gen_synthetic("f2").values[:96, 0]
u, stats = instance_normalize(series)
print(f"lookback mean={stats.mean.item():.3f} std={stats.std.item():.3f}")

for mode in ("softmax", "rbf", "patch"):
    cfg = EmbedConfig(mode=mode, window_size=8, stride=8, landmark_kernel=24, landmark_stride=24, out_dim=16)
    tokens = embed_series(u, cfg, seed=0)
    print(f"{mode:>8}: {tokens.shape[0]} tokens of width {tokens.shape[1]}, raw width {cfg.concat_width(96)}")

# The harvested rows of a softmax embedding are probability vectors.
cfg = EmbedConfig(window_size=8, stride=8, landmark_kernel=24, landmark_stride=24)
emb = build_embedding(cfg, 96, Params(), np.random.default_rng(0))
_, rows, bundle = emb(Tensor(u[None]), keep_bundle=True)
print("largest row-sum error across layers:", bundle.max_row_error())
