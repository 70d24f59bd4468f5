#!/usr/bin/env python3
"""Regenerate bundled images, training frames, dataset manifests and the
reference-detector fixtures.

The reference detector is the public MTCNN implementation shipped with
facenet-pytorch. Its outputs are frozen into tests/fixtures/ and are never
recomputed by the C++ test suite.
"""
import argparse
import json
import math
import os

import numpy as np
import skimage.data
import torch
from facenet_pytorch import MTCNN
from facenet_pytorch.models.mtcnn import ONet, PNet, RNet
from PIL import Image

import matplotlib

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG = dict(min_face_size=21, thresholds=[0.6, 0.7, 0.7], factor=0.709)


def reference_detect(img):
    m = MTCNN(keep_all=True, **CONFIG)
    boxes, probs, points = m.detect(img, landmarks=True)
    if boxes is None:
        return []
    out = []
    for b, p, l in zip(boxes, probs, points):
        out.append({
            "box": [float(v) for v in b],
            "score": float(p),
            "landmarks": [[float(x), float(y)] for x, y in l],
        })
    return out


def photos():
    gh_path = os.path.join(matplotlib.get_data_path(), "sample_data", "grace_hopper.jpg")
    gh = Image.open(gh_path).convert("RGB")
    ast = Image.fromarray(skimage.data.astronaut()).convert("RGB")
    return {"grace_hopper": gh, "astronaut": ast}


def crop_frame(img, center, side, out_size, angle_deg=0.0, mirror=False):
    """Square crop of `side` source pixels around `center`, optionally
    mirrored and rotated about the center, resampled to out_size."""
    cx, cy = center
    s = side / out_size
    a = math.radians(angle_deg)
    ca, sa = math.cos(a), math.sin(a)
    mx = -1.0 if mirror else 1.0
    # output (u, v) -> source (x, y)
    half = out_size / 2.0
    coeffs = (
        s * ca * mx, -s * sa, cx - s * (ca * mx * half - sa * half),
        s * sa * mx, s * ca, cy - s * (sa * mx * half + ca * half),
    )
    return img.transform((out_size, out_size), Image.AFFINE, coeffs,
                         resample=Image.BICUBIC, fillcolor=(128, 128, 128))


def mask_placement(det, height, width):
    x1, y1, x2, y2 = det["box"]
    w, h = x2 - x1, y2 - y1
    (lex, ley), (rex, rey), (nx, ny), (mlx, mly), (mrx, mry) = det["landmarks"]
    eye_y = 0.5 * (ley + rey)
    top = eye_y + 0.5 * (ny - eye_y)
    mid = 0.5 * (mly + mry)
    bottom = min(y2 - 0.02 * h, height - 1.0)
    left, right = x1 + 0.06 * w, x2 - 0.06 * w
    inset = 0.08 * w
    grid = [
        [(left, top), (nx, top - 0.02 * h), (right, top)],
        [(left + 0.3 * inset, mid), (0.5 * (mlx + mrx), mid), (right - 0.3 * inset, mid)],
        [(left + inset, bottom), (nx, bottom + 0.01 * h), (right - inset, bottom)],
    ]
    grid = [[(min(max(x, 0.0), width - 1.0), min(max(y, 0.0), height - 1.0)) for x, y in row]
            for row in grid]
    ph, pw = 24, 32
    entries = []
    for r in range(2):
        for c in range(2):
            src = [c * pw // 2, r * ph // 2, (c + 1) * pw // 2, (r + 1) * ph // 2]
            dst = [grid[r][c], grid[r][c + 1], grid[r + 1][c + 1], grid[r + 1][c]]
            entries.append({"patch": "mask", "src": src,
                            "dst": [[round(x, 2), round(y, 2)] for x, y in dst]})
    return entries


def cheek_placement(det):
    x1, y1, x2, y2 = det["box"]
    w = x2 - x1
    (lex, ley), (rex, rey), (nx, ny), (mlx, mly), (mrx, mry) = det["landmarks"]
    top = 0.5 * (ley + ny)
    bottom = 0.5 * (ny + mly) + 0.05 * w
    entries = []
    for l, r in ((x1 + 0.08 * w, 0.5 * (lex + mlx)), (0.5 * (rex + mrx), x2 - 0.08 * w)):
        dst = [[l, top], [r, top], [r, bottom], [l, bottom]]
        entries.append({"patch": "cheek", "src": [0, 0, 16, 16],
                        "dst": [[round(x, 2), round(y, 2)] for x, y in dst]})
    return entries


def gt_box(det):
    return [round(v, 1) for v in det["box"]]


def net_fixture(net, x):
    with torch.no_grad():
        outs = net(torch.from_numpy(x))
    return [o.numpy() for o in outs]


def main():
    ap = argparse.ArgumentParser()
    ap.parse_args()
    images_dir = os.path.join(ROOT, "data", "images")
    frames_dir = os.path.join(ROOT, "data", "frames")
    fixtures_dir = os.path.join(ROOT, "tests", "fixtures")
    for d in (images_dir, frames_dir, fixtures_dir):
        os.makedirs(d, exist_ok=True)

    fixtures = {"config": CONFIG, "photos": {}, "frames": {}}
    imgs = photos()
    faces = []
    for name, img in imgs.items():
        img.save(os.path.join(images_dir, name + ".png"))
        dets = reference_detect(img)
        assert len(dets) == 1, name
        fixtures["photos"][name] = dets
        faces.append({"image": name + ".png", "face_region": gt_box(dets[0])})
    with open(os.path.join(images_dir, "faces.json"), "w") as f:
        json.dump({"version": 1, "images": faces}, f, indent=2)

    # Three poses of one subject, 192x192.
    gh = imgs["grace_hopper"]
    poses = [
        dict(center=(263, 225), side=400, angle_deg=0.0, mirror=False),
        dict(center=(243, 245), side=470, angle_deg=-6.0, mirror=False),
        dict(center=(263, 220), side=360, angle_deg=8.0, mirror=True),
    ]
    mask_frames, cheek_frames = [], []
    for i, pose in enumerate(poses):
        frame = crop_frame(gh, out_size=192, **pose)
        fname = f"hopper_pose{i}.png"
        frame.save(os.path.join(frames_dir, fname))
        dets = reference_detect(frame)
        assert len(dets) == 1, fname
        fixtures["frames"][fname] = dets
        det = dets[0]
        base = {"image": fname, "split": "train", "face_region": gt_box(det)}
        mask_frames.append(dict(base, placements=mask_placement(det, 192, 192)))
        cheek_frames.append(dict(base, placements=cheek_placement(det)))

    Image.new("RGB", (160, 160), (200, 200, 200)).save(os.path.join(frames_dir, "blank_wall.png"))

    for name, patches, frames in (
        ("hopper_mask.json", [{"name": "mask", "height": 24, "width": 32}], mask_frames),
        ("hopper_cheeks.json", [{"name": "cheek", "height": 16, "width": 16}], cheek_frames),
    ):
        with open(os.path.join(frames_dir, name), "w") as f:
            json.dump({"version": 1, "patches": patches, "frames": frames}, f, indent=2)

    # Network parity fixtures on raw-pixel crops (no resampling involved).
    arr = np.asarray(gh, dtype=np.float32)

    def crop(y, x, h, w):
        c = arr[y:y + h, x:x + w].transpose(2, 0, 1)[None]
        return np.ascontiguousarray((c - 127.5) * 0.0078125)

    pnet, rnet, onet = PNet(), RNet(), ONet()
    nets = {}
    for label, net, (y, x, h, w) in (
        ("pnet", pnet, (150, 200, 40, 52)),
        ("rnet", rnet, (180, 230, 24, 24)),
        ("onet", onet, (120, 170, 48, 48)),
    ):
        outs = net_fixture(net, crop(y, x, h, w))
        nets[label] = {
            "image": "grace_hopper.png",
            "crop": {"y": y, "x": x, "height": h, "width": w},
            "outputs": [{"shape": list(o.shape), "values": [float(v) for v in o.ravel()]} for o in outs],
        }
    fixtures["networks"] = nets

    with open(os.path.join(fixtures_dir, "reference_mtcnn.json"), "w") as f:
        json.dump(fixtures, f, indent=1)


if __name__ == "__main__":
    main()
