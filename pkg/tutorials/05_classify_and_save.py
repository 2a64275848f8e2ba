"""Multiclass hinge-loss classification, saving and reloading the model."""

import tempfile
from pathlib import Path

import numpy as np

from kernelsplit import LabelEncoding, SolverConfig, load_model, save_model, solve
from kernelsplit.matrixio import encode_labels

rng = np.random.default_rng(0)
centres = np.array([[0, 3], [3, 0], [-3, -3]])
labels = np.repeat(["red", "green", "blue"], 50)
X = centres[np.repeat(np.arange(3), 50)] + 0.6 * rng.normal(size=(150, 2))

enc = LabelEncoding.fit(labels)
cfg = SolverConfig(features=64, sigma=2.0, loss="hinge", lam=1e-3, R=2, C=4, max_iter=80)
model, _ = solve(cfg, X, encode_labels(labels, enc), encoding=enc)
print("training accuracy", np.mean(np.array(model.predict(X)) == labels))

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "model.ksm"
    save_model(path, model)
    again = load_model(path)
    assert again.predict(X) == model.predict(X)
    print("reloaded model gives identical predictions")
