"""Train a softmax-embedding forecaster and a patch baseline on the same synthetic data.

Small settings so it finishes in a couple of minutes on a laptop CPU.
Run: python demos/02_train_and_compare.py
"""
from attnembed import EmbedConfig, ModelConfig, TrainConfig, compare_embeddings, gen_synthetic, prepare_splits

data = gen_synthetic("f2")
splits = prepare_splits(data, lookback=96, horizon=24, stride=2)
print("pairs (train/val/test):", [len(s) for s in splits])

base = ModelConfig(
    embed=EmbedConfig(window_size=8, stride=8, landmark_kernel=24, landmark_stride=24, out_dim=32),
    lookback=96, horizon=24, encoder_layers=2, encoder_heads=4, ffn_dim=64, dropout=0.1,
)
report = compare_embeddings(base, TrainConfig(learning_rate=1e-3, max_epochs=5), splits, seeds=(0,))
for row in report.rows():
    print(f"{row['mode']:>8}: test mse={row['mse']:.4f} mae={row['mae']:.4f} after {row['epochs']} epochs")
print(f"mse ratio softmax/patch: {report.median_ratio():.3f}")
