"""Reference values for tensor ops, computed with torch in float64.

Writes ops_values.json next to this file. Inputs are stored alongside the
expected outputs so the C++ tests never regenerate them.
"""
import json
import math
import pathlib

import numpy as np
import torch
import torch.nn.functional as F

torch.set_default_dtype(torch.float64)
rng = np.random.default_rng(20240611)


def t(a, grad=False):
    x = torch.tensor(np.asarray(a, dtype=np.float64))
    x.requires_grad_(grad)
    return x


def flat(x):
    return x.detach().reshape(-1).tolist()


def weighted_backward(out):
    r = rng.uniform(-1, 1, size=out.shape)
    (out * t(r)).sum().backward()
    return r


cases = {}

# bilinear, half-pixel centres
resize = []
fixed = np.array([[[[0.0, 1.0], [1.0, 2.0]]]])
for shape, oh, ow, x in [((1, 1, 2, 2), 4, 4, fixed),
                         ((1, 2, 3, 5), 7, 4, None),
                         ((1, 1, 6, 6), 3, 3, None),
                         ((2, 1, 4, 3), 9, 2, None),
                         ((1, 1, 1, 1), 2, 2, np.array([[[[0.7]]]]))]:
    if x is None:
        x = rng.uniform(-1, 1, size=shape)
    xi = t(x, True)
    out = F.interpolate(xi, size=(oh, ow), mode="bilinear", align_corners=False)
    r = weighted_backward(out)
    resize.append({"shape": list(shape), "out_h": oh, "out_w": ow,
                   "input": x.reshape(-1).tolist(), "output": flat(out),
                   "weights": r.reshape(-1).tolist(), "grad": flat(xi.grad)})
cases["resize_bilinear"] = resize

conv = []
for shape, o, k, stride, pad, dil in [((2, 3, 7, 6), 4, 3, 2, 1, 2),
                                      ((1, 2, 9, 9), 2, 3, 1, 5, 5),
                                      ((1, 3, 5, 5), 2, 1, 1, 0, 1),
                                      ((2, 1, 6, 7), 3, 3, 2, 0, 1)]:
    x = rng.uniform(-1, 1, size=shape)
    w = rng.uniform(-1, 1, size=(o, shape[1], k, k))
    b = rng.uniform(-1, 1, size=(o,))
    xi, wi, bi = t(x, True), t(w, True), t(b, True)
    out = F.conv2d(xi, wi, bi, stride=stride, padding=pad, dilation=dil)
    r = weighted_backward(out)
    conv.append({"shape": list(shape), "out_channels": o, "kernel": k,
                 "stride": stride, "pad": pad, "dilation": dil,
                 "input": x.reshape(-1).tolist(), "weight": w.reshape(-1).tolist(),
                 "bias": b.tolist(), "output_shape": list(out.shape),
                 "output": flat(out), "weights": r.reshape(-1).tolist(),
                 "grad_input": flat(xi.grad), "grad_weight": flat(wi.grad),
                 "grad_bias": flat(bi.grad)})
cases["conv2d"] = conv

amp = []
ramp = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
for shape, oh, ow, x in [((1, 1, 4, 4), 2, 2, ramp),
                         ((1, 2, 7, 5), 3, 2, None),
                         ((2, 1, 5, 5), 4, 4, None)]:
    if x is None:
        x = rng.permutation(int(np.prod(shape))).reshape(shape) / 10.0
    out = F.adaptive_max_pool2d(t(x), (oh, ow))
    amp.append({"shape": list(shape), "out_h": oh, "out_w": ow,
                "input": x.reshape(-1).tolist(), "output": flat(out)})
cases["adaptive_max_pool"] = amp

x = rng.permutation(2 * 3 * 6 * 4).reshape(2, 3, 6, 4) / 7.0
cases["max_pool2d"] = {"shape": [2, 3, 6, 4], "kernel": 2, "stride": 2,
                       "input": x.reshape(-1).tolist(),
                       "output": flat(F.max_pool2d(t(x), 2, 2))}

logs = [math.log(1.0), math.log(2.0), math.log(3.0)]
cases["softmax"] = {"input": logs, "output": flat(torch.softmax(t(logs), 0)),
                    "coupled": flat(3.0 * torch.softmax(t(logs), 0))}

x = rng.normal(0.3, 2.0, size=(3, 2, 2, 3))
gamma = rng.uniform(0.5, 1.5, size=2)
beta = rng.uniform(-1, 1, size=2)
rm, rv = torch.zeros(2), torch.ones(2)
out = F.batch_norm(t(x), rm, rv, t(gamma), t(beta), training=True,
                   momentum=0.1, eps=1e-5)
cases["batch_norm_train"] = {"shape": [3, 2, 2, 3], "input": x.reshape(-1).tolist(),
                             "gamma": gamma.tolist(), "beta": beta.tolist(),
                             "output": flat(out), "running_mean": rm.tolist(),
                             "running_var": rv.tolist()}

p = rng.uniform(0.02, 0.98, size=(2, 1, 3, 4))
g = (rng.uniform(size=p.shape) < 0.4).astype(np.float64)
pi = t(p, True)
bce = F.binary_cross_entropy(pi, t(g))
bce.backward()
bce_grad = flat(pi.grad)
pi = t(p, True)
num = (pi + t(g) - 2 * t(g) * pi).sum(dim=(1, 2, 3))
den = (pi + t(g)).sum(dim=(1, 2, 3))
cel = (num / den).mean()
cel.backward()
cases["losses"] = {"shape": [2, 1, 3, 4], "p": p.reshape(-1).tolist(),
                   "g": g.reshape(-1).tolist(), "bce": bce.item(),
                   "bce_grad": bce_grad, "cel": cel.item(), "cel_grad": flat(pi.grad)}

cases["poly_lr_half"] = 0.001 * 0.5 ** 0.9

out_path = pathlib.Path(__file__).with_name("ops_values.json")
out_path.write_text(json.dumps(cases, indent=1) + "\n")
print("wrote", out_path)
