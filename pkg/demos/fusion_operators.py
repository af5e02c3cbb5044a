"""
Fusing appearance and force
===========================

"""

import numpy as np

from torquefusion import fusion as fu

rng = np.random.default_rng(0)
F = rng.normal(size=(4, 2, 3))      # appearance feature map, c x h x w
e = rng.normal(size=8)              # force embedding

# project the force embedding to a map of the same shape
P = fu.project_embedding(e, rng.normal(size=(4, 8)) / 3, shape=F.shape)

print("add:   ", fu.fuse_addition(F, P)[0, 0])
print("mul:   ", fu.fuse_elementwise(F, P)[0, 0])
merge = rng.normal(size=(4, 8)) / 3
print("concat:", fu.fuse_concat(F, P, merge)[0, 0])

# the gate blends the two maps with a single learned weight
w = rng.normal(size=4 + 8)
print("gate alpha: %.3f" % fu.gate_value(F, e, w, 0.0))
print("gated: ", fu.fuse_gated(F, e, w, 0.0, P)[0, 0])

# the force embedding can also generate a width-wise transform
G = fu.make_spatial_transform(e, rng.normal(size=(9, 8)) * 0.05, None, width=3)
print("bmm:   ", fu.fuse_bmm(F, G)[0, 0])

# token fusion for a sequence decoder keeps every token as is
tokens = fu.fuse_tokens(rng.normal(size=(3, 8)), rng.normal(size=(5, 8)), [e])
print("tokens:", tokens.tokens.shape, tokens.tags[-1])

# decision fusion averages the class scores of two models
fused, top = fu.fuse_decision([0.8, 0.2], [0.4, 0.6])
print("decision:", fused, "-> class", top)
