# Copyright 2026 The DebiasQE Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Reference forward passes with torchvision models on hash-initialised weights.

Prints the summary values frozen in tests/unit/reference_test.cpp. Run with
  python3 tests/reference/torch_reference.py
"""

import json

import numpy as np
import torch
import torch.nn.functional as F
import torchvision

M64 = (1 << 64) - 1


def splitmix64(x):
    z = (x + 0x9E3779B97F4A7C15) & M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
    return z ^ (z >> 31)


def hash_uniform(k, count):
    e = np.arange(count, dtype=np.uint64)
    x = (np.uint64(k) << np.uint64(32)) | e
    with np.errstate(over="ignore"):
        z = x + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    assert int(z[0]) == splitmix64(k << 32)
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-52 - 1.0


def hash_image(h, w, k=1000):
    # Float32 pixels in [0, 1], HWC order.
    px = ((hash_uniform(k, h * w * 3) + 1.0) / 2.0).astype(np.float32).astype(np.float64)
    return torch.from_numpy(px.reshape(h, w, 3).transpose(2, 0, 1).copy())[None]


def vgg_hashed(model):
    model = model.double()
    sd = {k: v for k, v in model.state_dict().items() if k.startswith("features.")}
    new = {}
    for i, name in enumerate(sorted(sd)):
        t = sd[name]
        u = hash_uniform(i, t.numel())
        if name.endswith("weight"):
            u = u * np.sqrt(6.0 / (t.shape[1] * t.shape[2] * t.shape[3]))
        else:
            u = u * 0.1
        new[name] = torch.from_numpy(u.reshape(t.shape))
    model.load_state_dict(new, strict=False)
    return model.eval()


def summary(t):
    v = t.detach().double().flatten().numpy()
    return {"n": int(v.size), "sum": float(v.sum()), "abs_sum": float(np.abs(v).sum()),
            "first": [float(x) for x in v[:4]]}


def imagenet(x):
    mean = torch.tensor([0.485, 0.456, 0.406], dtype=torch.float64).view(1, 3, 1, 1)
    std = torch.tensor([0.229, 0.224, 0.225], dtype=torch.float64).view(1, 3, 1, 1)
    return (x - mean) / std


def main():
    out = {}
    x = hash_image(32, 32)
    vgg19 = vgg_hashed(torchvision.models.vgg19(weights=None))
    with torch.no_grad():
        out["vgg19_block5_pre"] = summary(vgg19.features[:35](imagenet(x)))
        out["vgg19_block2_post"] = summary(vgg19.features[:9](imagenet(x)))

    # LPIPS on vgg16: post-ReLU taps at the last conv of each block.
    vgg16 = vgg_hashed(torchvision.models.vgg16(weights=None))
    taps = [3, 8, 15, 22, 29]
    widths = [64, 128, 256, 512, 512]
    lin = [(hash_uniform(5000 + k, c) + 1.0) / 2.0 for k, c in enumerate(widths)]
    shift = torch.tensor([-0.030, -0.088, -0.188], dtype=torch.float64).view(1, 3, 1, 1)
    scale = torch.tensor([0.458, 0.448, 0.450], dtype=torch.float64).view(1, 3, 1, 1)
    a = hash_image(32, 32, 1000)
    b = hash_image(32, 32, 1001)

    def feats(img):
        h = (img * 2 - 1 - shift) / scale
        res = []
        for i, layer in enumerate(vgg16.features):
            h = layer(h)
            if i in taps:
                res.append(h)
            if i == taps[-1]:
                break
        return res

    with torch.no_grad():
        total = 0.0
        for k, (fa, fb) in enumerate(zip(feats(a), feats(b))):
            na = fa / (torch.sqrt((fa ** 2).sum(1, keepdim=True)) + 1e-10)
            nb = fb / (torch.sqrt((fb ** 2).sum(1, keepdim=True)) + 1e-10)
            w = torch.from_numpy(lin[k]).view(1, -1, 1, 1)
            total += float(((na - nb) ** 2 * w).sum(1).mean())
        out["lpips_vgg16"] = total

    inc = torchvision.models.inception_v3(weights=None, aux_logits=False, init_weights=False,
                                          transform_input=False).double()
    sd = inc.state_dict()
    names = sorted(k for k in sd if not k.endswith("num_batches_tracked") and not k.startswith("fc."))
    new = {}
    for i, name in enumerate(names):
        t = sd[name]
        u = hash_uniform(i, t.numel())
        if name.endswith("conv.weight"):
            u = u * np.sqrt(6.0 / (t.shape[1] * t.shape[2] * t.shape[3]))
        elif name.endswith("bn.weight"):
            u = 1.0 + 0.1 * u
        elif name.endswith("bn.running_var"):
            u = 1.0 + 0.5 * u
        else:
            u = 0.1 * u
        new[name] = torch.from_numpy(u.reshape(t.shape))
    inc.load_state_dict(new, strict=False)
    inc.fc = torch.nn.Identity()
    inc = inc.double().eval()
    out["inception_tensor_count"] = len(names)
    with torch.no_grad():
        y = F.interpolate(x, size=(299, 299), mode="bilinear", align_corners=False)
        out["inception_pool"] = summary(inc(y * 2 - 1))
    print(json.dumps(out, indent=1))


if __name__ == "__main__":
    main()
