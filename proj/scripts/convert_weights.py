#!/usr/bin/env python3
"""Convert the public MTCNN release (facenet-pytorch state dicts) into the
facepatch weight directory: one little-endian float32 file per tensor plus a
JSON manifest.

Layouts written:
  conv kernels   kh,kw,in,out
  dense weights  in,out   (input index flattened as channel, row, column)
  vectors        n
"""
import argparse
import json
import os

import numpy as np
import torch


def dense_to_chw(weight, channels, height, width):
    # facenet-pytorch flattens conv features after permute(0, 3, 2, 1),
    # i.e. (width, height, channel) order.
    out_dim = weight.shape[0]
    w = weight.reshape(out_dim, width, height, channels)
    w = w.transpose(0, 3, 2, 1)  # -> out, c, h, w
    return w.reshape(out_dim, -1).T  # -> in, out


FLATTEN = {
    ("rnet", "dense4"): (64, 3, 3),
    ("onet", "dense5"): (128, 3, 3),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--src", required=True, help="directory holding pnet.pt, rnet.pt, onet.pt")
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    layers = {}
    for net in ("pnet", "rnet", "onet"):
        sd = torch.load(os.path.join(args.src, net + ".pt"))
        for key, value in sd.items():
            layer, kind = key.rsplit(".", 1)
            arr = value.numpy().astype(np.float32)
            if kind == "weight" and arr.ndim == 4:
                arr = arr.transpose(2, 3, 1, 0)
                order = "kh,kw,in,out"
            elif kind == "weight" and arr.ndim == 2:
                if (net, layer) in FLATTEN:
                    arr = dense_to_chw(arr, *FLATTEN[(net, layer)])
                else:
                    arr = arr.T
                order = "in,out"
            else:
                order = "n"
            name = f"{net}.{layer}.{kind}"
            fname = name.replace(".", "_") + ".bin"
            np.ascontiguousarray(arr).astype("<f4").tofile(os.path.join(args.out, fname))
            layers[name] = {"shape": list(arr.shape), "order": order, "file": fname}

    manifest = {
        "format": "facepatch-weights",
        "version": 1,
        "source": "MTCNN public release (facenet-pytorch conversion)",
        "input_normalization": {"range": 255.0, "mean": 127.5, "scale": 0.0078125},
        "layers": layers,
    }
    with open(os.path.join(args.out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
