"""
A flat interpolating network
============================

When every patch is a unit vector and each sample owns a patch that no other
sample shares, one neuron per sample is enough to fit the labels exactly. The
construction keeps the Hessian's top eigenvalue close to one, so gradient
descent with almost any step size would accept it as a stable minimum.
"""

from eoslab import interpolator, model
from eoslab.rng import RngStream

data, fields = interpolator.random_anchor_dataset(n=48, m=6, J=4, rng=RngStream(3))
anchors = interpolator.find_anchors(data, fields)
print(f"n={data.n}, J={fields.J}, anchors found for every sample: {len(anchors) == data.n}")

params = interpolator.construct(data, fields)
print(f"width K={params.K}")

ver = interpolator.verify(params, data, fields)
print(f"max residual   {ver.max_residual:.2e}")
print(f"lambda_max     {ver.lambda_max:.6f}")
print(f"flatness bound {ver.bound:.6f}")

# the loss is zero, so the Hessian is the Gram matrix of the tangent features
print(f"loss {model.loss(params, fields, data):.2e}")
