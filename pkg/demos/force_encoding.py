"""
Encoding torque sequences
=========================

"""

import numpy as np

from torquefusion import encoding as enc

rng = np.random.default_rng(0)

# per-sequence normalization puts the strongest joint at magnitude 1
tau = rng.normal(size=(64, 4, 3)) * 25.0
unit = enc.normalize_sequence(tau)
print("peak after normalization:", np.linalg.norm(unit.tau, axis=-1).max())
print("rescaling changes nothing:", np.array_equal(enc.normalize_sequence(7.5 * tau).tau, unit.tau))

# frames go through the force network and are averaged over time
params = enc.init_params(in_dim=12, embed_dim=32, seed=1)
emb = enc.encode_sequence(params, unit, source="demo")
print("embedding length:", emb.vector.size)

# masking a joint zeroes its three torque components everywhere
masked = enc.mask_joints(unit, [0])
print("joint 0 after masking:", np.abs(masked.tau[:, 0]).max())

# a small supervised fit on two torque patterns
seqs, labels = [], []
for k in range(20):
    x = rng.normal(scale=0.2, size=(16, 4, 3))
    x[:, 2, 1] += 1.0 if k % 2 else -1.0
    seqs.append(enc.normalize_sequence(x))
    labels.append(k % 2)
fit = enc.fit_encoder(seqs, labels, enc.EncoderConfig(epochs=20, batch_size=5, embed_dim=8))
print("loss %.3f -> %.3f, train accuracy %.0f%%" % (fit.loss_trace[0], fit.final_loss, 100 * fit.train_accuracy))
