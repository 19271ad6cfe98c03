#!/usr/bin/env python3
"""Write the first five VGG-19 convolutions as a backbone archive.

Reads torchvision's pretrained weights by default, or a saved state dict
with --state-dict.
"""
import argparse
import struct
import sys

import numpy as np

LAYERS = ["features.0", "features.2", "features.5", "features.7", "features.10"]
MAGIC = b"APNTARC1"


def _str(s):
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def write_archive(path, tensors, texts=None):
    texts = texts or {}
    out = [MAGIC, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        a = np.ascontiguousarray(tensors[name], dtype="<f4")
        out.append(_str(name))
        out.append(struct.pack("<BI", 0, a.ndim))
        out.append(struct.pack("<%dI" % a.ndim, *a.shape))
        out.append(a.tobytes())
    out.append(struct.pack("<I", len(texts)))
    for k in sorted(texts):
        out.append(_str(k) + _str(texts[k]))
    with open(path, "wb") as f:
        f.write(b"".join(out))


def select(state):
    picked = {}
    for layer in LAYERS:
        for suffix in (".weight", ".bias"):
            key = layer + suffix
            if key not in state:
                raise KeyError("state dict has no entry " + key)
            v = state[key]
            picked[key] = v.detach().cpu().numpy() if hasattr(v, "detach") else np.asarray(v)
    return picked


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("output")
    ap.add_argument("--state-dict", help="torch state dict (.pth) instead of torchvision download")
    args = ap.parse_args(argv)
    import torch

    if args.state_dict:
        state = torch.load(args.state_dict, map_location="cpu")
        state = {k.removeprefix("module."): v for k, v in state.items()}
    else:
        from torchvision.models import VGG19_Weights, vgg19

        state = vgg19(weights=VGG19_Weights.IMAGENET1K_V1).state_dict()
    write_archive(args.output, select(state), {"kind": "vgg19-features-relu3_1"})
    return 0


if __name__ == "__main__":
    sys.exit(main())
