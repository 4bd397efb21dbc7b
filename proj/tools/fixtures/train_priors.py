#!/usr/bin/env python3
"""Trains the small MNIST and motion-blur VAEs and exports their decoders.

Outputs (in --out, default tests/fixtures):
  mnist_vae.pbdw          image decoder, latent 50, 28x28, tanh head
  blur_vae.pbdw           kernel decoder, latent 50, 9x9, normalized-nonneg head
  mnist_test_digits.pbdt  20 held-out digits in [0, 1], dims [20, 28, 28]
  blur_config.json        blur dataset config (test split feeds experiments)
  parity_*.pbdt           random latents and decoder outputs for parity tests

Requires torch and mlxtend, plus a built `pbd` binary for the blur dataset.
"""

import argparse
import json
import os
import struct
import subprocess
import tempfile
import zlib

import numpy as np
import torch
from torch import nn

LATENT = 50
HIDDEN = 500
KERNEL_SIZE = 9
KERNEL_HIDDEN = 256

TAG_DENSE, TAG_RELU = 1, 3
ACT_TANH, ACT_NORMALIZED_NONNEG = 1, 3


def write_atomic(path, payload):
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".")
    with os.fdopen(fd, "wb") as f:
        f.write(payload)
    os.chmod(tmp, 0o644)
    os.replace(tmp, path)


def with_crc(body):
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def f32(array):
    return np.ascontiguousarray(array, dtype="<f4").tobytes()


def tensor_bytes(array):
    array = np.asarray(array)
    body = b"PBDT" + struct.pack("<HB", 1, array.ndim)
    body += struct.pack("<%dI" % array.ndim, *array.shape)
    return with_crc(body + f32(array.ravel()))


def read_tensor(path):
    raw = open(path, "rb").read()
    if raw[:4] != b"PBDT" or zlib.crc32(raw[:-4]) & 0xFFFFFFFF != struct.unpack("<I", raw[-4:])[0]:
        raise ValueError("bad tensor file " + path)
    rank = raw[6]
    dims = struct.unpack("<%dI" % rank, raw[7 : 7 + 4 * rank])
    data = np.frombuffer(raw[7 + 4 * rank : -4], dtype="<f4")
    return data.reshape(dims).astype(np.float32)


def bundle_bytes(decoder, out_shape, activation):
    """Serializes an nn.Sequential of Linear/ReLU layers."""
    layers = list(decoder)
    body = b"PBDW" + struct.pack("<HIIII", 1, LATENT, out_shape[0], out_shape[1], len(layers))
    body += struct.pack("<B", activation)
    width = LATENT
    for layer in layers:
        if isinstance(layer, nn.Linear):
            if layer.in_features != width:
                raise ValueError("dense input %d does not chain from %d" % (layer.in_features, width))
            body += struct.pack("<BII", TAG_DENSE, layer.in_features, layer.out_features)
            body += f32(layer.weight.detach().numpy()) + f32(layer.bias.detach().numpy())
            width = layer.out_features
        elif isinstance(layer, nn.ReLU):
            body += struct.pack("<BI", TAG_RELU, width)
        else:
            raise ValueError("unsupported layer " + type(layer).__name__)
    if width != out_shape[0] * out_shape[1]:
        raise ValueError("decoder output %d does not match %dx%d" % (width, *out_shape))
    return with_crc(body)


class Vae(nn.Module):
    def __init__(self, n, hidden):
        super().__init__()
        self.encoder = nn.Sequential(nn.Linear(n, hidden), nn.ReLU(), nn.Linear(hidden, hidden), nn.ReLU())
        self.mu = nn.Linear(hidden, LATENT)
        self.logvar = nn.Linear(hidden, LATENT)
        self.decoder = nn.Sequential(
            nn.Linear(LATENT, hidden), nn.ReLU(), nn.Linear(hidden, hidden), nn.ReLU(), nn.Linear(hidden, n)
        )

    def forward(self, x):
        h = self.encoder(x)
        mu, logvar = self.mu(h), self.logvar(h)
        z = mu + torch.randn_like(mu) * torch.exp(0.5 * logvar)
        return self.decoder(z), mu, logvar


def kl_term(mu, logvar):
    return -0.5 * torch.sum(1 + logvar - mu.pow(2) - logvar.exp(), dim=1)


def train(model, data, recon_loss, epochs, batch, lr, seed, label):
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    for epoch in range(epochs):
        order = torch.randperm(len(data), generator=gen)
        total = 0.0
        for start in range(0, len(data), batch):
            x = data[order[start : start + batch]]
            logits, mu, logvar = model(x)
            loss = (recon_loss(logits, x) + kl_term(mu, logvar)).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(x)
        if epoch % 10 == 0 or epoch == epochs - 1:
            print("%s epoch %d loss %.4f" % (label, epoch, total / len(data)), flush=True)


def mnist_recon(logits, x):
    # tanh(a) = 2 sigmoid(2a) - 1, so (tanh + 1) / 2 is a Bernoulli mean with logit 2a.
    return nn.functional.binary_cross_entropy_with_logits(2.0 * logits, x, reduction="none").sum(dim=1)


def kernel_recon(logits, k):
    s = nn.functional.softplus(logits)
    q = s / s.sum(dim=1, keepdim=True)
    return -(k * torch.log(q + 1e-12)).sum(dim=1) * KERNEL_SIZE * KERNEL_SIZE


def parity_outputs(decoder, z, activation):
    with torch.no_grad():
        pre = decoder(torch.as_tensor(z, dtype=torch.float32))
        if activation == ACT_TANH:
            return torch.tanh(pre).numpy()
        s = nn.functional.softplus(pre)
        return (s / s.sum(dim=1, keepdim=True)).numpy()


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", default=os.path.join(here, "..", "..", "tests", "fixtures"))
    parser.add_argument("--pbd", default=os.path.join(here, "..", "..", "build", "tools", "pbd"))
    parser.add_argument("--seed", type=int, default=2020)
    parser.add_argument("--mnist-epochs", type=int, default=150)
    parser.add_argument("--blur-epochs", type=int, default=60)
    parser.add_argument("--blur-count", type=int, default=20000)
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--lr", type=float, default=1e-3)
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)
    torch.manual_seed(args.seed)
    np.random.seed(args.seed)
    torch.set_num_threads(1)

    from mlxtend.data import mnist_data

    images, _ = mnist_data()
    images = (images / 255.0).astype(np.float32)
    perm = np.random.RandomState(args.seed).permutation(len(images))
    test_idx, train_idx = perm[:20], perm[500:]
    write_atomic(os.path.join(args.out, "mnist_test_digits.pbdt"), tensor_bytes(images[test_idx].reshape(20, 28, 28)))

    mnist = Vae(784, HIDDEN)
    train(mnist, torch.as_tensor(images[train_idx]), mnist_recon, args.mnist_epochs, args.batch, args.lr,
          args.seed, "mnist")

    blur_config = {
        "kind": "motion",
        "kernel_size": KERNEL_SIZE,
        "length_range": [3.0, 9.0],
        "count": args.blur_count,
        "seed": args.seed,
    }
    config_path = os.path.join(args.out, "blur_config.json")
    write_atomic(config_path, (json.dumps(blur_config, indent=2) + "\n").encode())
    with tempfile.TemporaryDirectory() as tmp:
        prefix = os.path.join(tmp, "blurs")
        subprocess.run([args.pbd, "--config", config_path, "gen-blurs", "--out", prefix], check=True)
        kernels = read_tensor(prefix + ".pbdt")
        train_count = json.load(open(prefix + ".json"))["train_count"]
    kernels = kernels[:train_count].reshape(train_count, -1)

    blur = Vae(KERNEL_SIZE * KERNEL_SIZE, KERNEL_HIDDEN)
    train(blur, torch.as_tensor(kernels), kernel_recon, args.blur_epochs, args.batch, args.lr, args.seed + 1, "blur")

    for name, model, shape, act in (
        ("mnist_vae", mnist, (28, 28), ACT_TANH),
        ("blur_vae", blur, (KERNEL_SIZE, KERNEL_SIZE), ACT_NORMALIZED_NONNEG),
    ):
        write_atomic(os.path.join(args.out, name + ".pbdw"), bundle_bytes(model.decoder, shape, act))
        z = np.random.RandomState(args.seed + 7).standard_normal((10, LATENT)).astype(np.float32)
        out = parity_outputs(model.decoder, z, act).reshape(10, *shape)
        write_atomic(os.path.join(args.out, "parity_%s_latents.pbdt" % name), tensor_bytes(z))
        write_atomic(os.path.join(args.out, "parity_%s_outputs.pbdt" % name), tensor_bytes(out))
        print("wrote", name)


if __name__ == "__main__":
    main()
