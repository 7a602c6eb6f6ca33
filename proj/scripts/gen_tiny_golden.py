#!/usr/bin/env python3
"""Generate the reference forward-pass golden for the tiny residual backbone.

Builds the same architecture in torch (float64), randomizes every parameter
and running statistic, runs one eval-mode forward, and stores weights, input
and expected outputs in one safetensors archive. The C++ test imports the
weights and must reproduce the pooled embedding and logits.

Output is committed at tests/data/tiny_torch_golden.safetensors; rerun this
script only when the tiny architecture changes.
"""

import json
import struct
import sys
from collections import OrderedDict
from pathlib import Path

import torch
import torch.nn as nn


class BasicBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=False)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.downsample = None

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class TinyBackbone(nn.Module):
    def __init__(self, n_classes=4):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, 3, stride=1, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(8)
        self.relu = nn.ReLU(inplace=False)
        self.layer1 = nn.Sequential(BasicBlock(8, 16, 2))
        self.layer2 = nn.Sequential(BasicBlock(16, 32, 2))
        self.avgpool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(32, n_classes)

    def forward(self, x):
        x = self.relu(self.bn1(self.conv1(x)))
        x = self.layer2(self.layer1(x))
        pooled = self.avgpool(x).flatten(1)
        return pooled, self.fc(pooled)


def save_safetensors(path, tensors):
    header = OrderedDict()
    offset = 0
    blobs = []
    for name, t in tensors.items():
        data = t.detach().cpu().double().numpy().tobytes()
        header[name] = {
            "dtype": "F64",
            "shape": list(t.shape),
            "data_offsets": [offset, offset + len(data)],
        }
        offset += len(data)
        blobs.append(data)
    hjson = json.dumps(header).encode()
    hjson += b" " * (-len(hjson) % 8)
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(hjson)))
        f.write(hjson)
        for b in blobs:
            f.write(b)


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("tests/data/tiny_torch_golden.safetensors")
    torch.manual_seed(1234)
    model = TinyBackbone().double().eval()
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "bn" in name or "downsample.1" in name:
                if name.endswith("weight"):
                    p.copy_(torch.rand_like(p) * 0.6 + 0.7)
                else:
                    p.copy_(torch.randn_like(p) * 0.1)
            else:
                p.copy_(torch.randn_like(p) * 0.4)
        for m in model.modules():
            if isinstance(m, nn.BatchNorm2d):
                m.running_mean.copy_(torch.randn_like(m.running_mean) * 0.1)
                m.running_var.copy_(torch.rand_like(m.running_var) * 0.5 + 0.75)

    x = torch.randn(2, 3, 32, 30, dtype=torch.float64)
    with torch.no_grad():
        pooled, logits = model(x)

    tensors = OrderedDict()
    for name, p in model.state_dict().items():
        if name.endswith("num_batches_tracked"):
            continue
        tensors[name] = p
    tensors["golden.input"] = x
    tensors["golden.pooled"] = pooled
    tensors["golden.logits"] = logits

    out.parent.mkdir(parents=True, exist_ok=True)
    save_safetensors(out, tensors)
    print(f"wrote {out} ({out.stat().st_size} bytes)")
    print(f"pooled[0,:4] = {pooled[0, :4].tolist()}")


if __name__ == "__main__":
    main()
