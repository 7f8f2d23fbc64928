"""Network definitions, seeded construction, weight transfer, checkpoints.

Five players share one small convolutional backbone family: an encoder
(feature stack + class head), a mirrored transposed-conv decoder, a
generator structurally identical to the decoder, and a discriminator and
classifier that reuse the encoder's feature stack with their own heads.

Public tensors are channels-last (N, H, W, channels) to match the data
module; the channels-first permutation is internal.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError, ShapeError, TransferError

CHECKPOINT_TAG = b"NBND1"


@dataclass(frozen=True)
class ArchitectureSpec:
    """Shape description shared by all five networks.

    The decoder mirrors the encoder: `encoder_channels` convolutions with
    stride 2 downsample by 2 each, and the decoder upsamples through
    `decoder_channels` (reversed encoder widths unless overridden).
    """

    input_shape: tuple[int, int, int]  # (H, W, channels)
    latent_dim: int
    encoder_channels: tuple[int, ...] = (16, 32)
    decoder_channels: tuple[int, ...] | None = None
    classifier_dropout_rate: float = 0.3

    def __post_init__(self):
        h, w, ch = self.input_shape
        n = len(self.encoder_channels)
        if h % (2**n) or w % (2**n):
            raise ShapeError(
                f"input {h}x{w} not divisible by 2^{n} conv downsamplings"
            )
        if self.latent_dim < 1:
            raise ShapeError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if not 0.0 <= self.classifier_dropout_rate < 1.0:
            raise ValueError(
                f"dropout rate must be in [0,1), got {self.classifier_dropout_rate}"
            )
        if self.decoder_channels is None:
            object.__setattr__(
                self, "decoder_channels", tuple(reversed(self.encoder_channels))
            )

    @property
    def feature_hw(self) -> tuple[int, int]:
        n = len(self.encoder_channels)
        return self.input_shape[0] // 2**n, self.input_shape[1] // 2**n

    @property
    def feature_size(self) -> int:
        fh, fw = self.feature_hw
        return self.encoder_channels[-1] * fh * fw


def arch_preset(name: str) -> ArchitectureSpec:
    """Named architecture presets; mnist/fmnist use latent dimension 64."""
    presets = {
        "mnist": ArchitectureSpec((28, 28, 1), 64, (16, 32), None, 0.3),
        "fmnist": ArchitectureSpec((28, 28, 1), 64, (16, 32), None, 0.3),
        "synthetic": ArchitectureSpec((8, 8, 1), 8, (8, 16), None, 0.1),
        "tiny": ArchitectureSpec((4, 4, 1), 2, (1, 1), None, 0.0),
    }
    if name not in presets:
        raise ValueError(f"unknown preset '{name}', have {sorted(presets)}")
    return presets[name]


class FeatureNet(nn.Module):
    """Strided conv stack ending in a dense projection to the latent size."""

    def __init__(self, arch: ArchitectureSpec):
        super().__init__()
        chans = (arch.input_shape[2],) + tuple(arch.encoder_channels)
        self.convs = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], kernel_size=3, stride=2, padding=1)
            for i in range(len(arch.encoder_channels))
        )
        self.proj = nn.Linear(arch.feature_size, arch.latent_dim)

    def forward(self, x, dropout_rate: float = 0.0, rng: torch.Generator | None = None):
        h = x
        for conv in self.convs:
            h = torch.relu(conv(h))
            if dropout_rate > 0.0:
                # dropout applied after the activation; manual mask so the
                # draw is controlled by an explicit generator
                keep = (
                    torch.rand(h.shape, generator=rng, dtype=h.dtype) >= dropout_rate
                ).to(h.dtype)
                h = h * keep / (1.0 - dropout_rate)
        return self.proj(h.flatten(1))


class Encoder(nn.Module):
    def __init__(self, arch: ArchitectureSpec, num_classes: int):
        super().__init__()
        self.features = FeatureNet(arch)
        self.class_head = nn.Linear(arch.latent_dim, num_classes)

    def forward(self, x):
        z = self.features(x)
        return z, torch.softmax(self.class_head(z), dim=1)


class Decoder(nn.Module):
    """Dense expansion + transposed convs back to the input shape."""

    def __init__(self, arch: ArchitectureSpec):
        super().__init__()
        fh, fw = arch.feature_hw
        self._start = (arch.decoder_channels[0], fh, fw)
        self.expand = nn.Linear(arch.latent_dim, arch.decoder_channels[0] * fh * fw)
        chans = tuple(arch.decoder_channels) + (arch.input_shape[2],)
        self.deconvs = nn.ModuleList(
            nn.ConvTranspose2d(chans[i], chans[i + 1], kernel_size=4, stride=2, padding=1)
            for i in range(len(chans) - 1)
        )

    def forward(self, z):
        h = torch.relu(self.expand(z))
        h = h.reshape(len(z), *self._start)
        for i, deconv in enumerate(self.deconvs):
            h = deconv(h)
            h = torch.sigmoid(h) if i == len(self.deconvs) - 1 else torch.relu(h)
        return h


class HeadNet(nn.Module):
    """Feature stack plus one linear head (discriminator or classifier)."""

    def __init__(self, arch: ArchitectureSpec, out_dim: int):
        super().__init__()
        self.features = FeatureNet(arch)
        self.head = nn.Linear(arch.latent_dim, out_dim)

    def forward(self, x, dropout_rate: float = 0.0, rng: torch.Generator | None = None):
        return self.head(self.features(x, dropout_rate=dropout_rate, rng=rng))


@dataclass
class NetworkBundle:
    """The five players plus the state needed to drive them reproducibly."""

    arch: ArchitectureSpec
    num_classes: int
    seed: int
    enc: Encoder
    dec: Decoder
    gen: Decoder
    dis: HeadNet
    clf: HeadNet
    dropout_rng: torch.Generator = field(repr=False)

    _MODULE_NAMES = ("enc", "dec", "gen", "dis", "clf")

    def modules_by_name(self) -> dict[str, nn.Module]:
        return {name: getattr(self, name) for name in self._MODULE_NAMES}

    # tensor plumbing ---------------------------------------------------

    def image_tensor(self, x) -> torch.Tensor:
        """Accept (B, H, W, channels) numpy or torch; return channels-first."""
        if isinstance(x, np.ndarray):
            x = torch.from_numpy(np.ascontiguousarray(x))
        dtype = next(self.enc.parameters()).dtype
        x = x.to(dtype)
        if x.ndim != 4 or tuple(x.shape[1:]) != tuple(self.arch.input_shape):
            raise ShapeError(
                f"expected images (B, {self.arch.input_shape[0]}, "
                f"{self.arch.input_shape[1]}, {self.arch.input_shape[2]}), "
                f"got {tuple(x.shape)}"
            )
        return x.permute(0, 3, 1, 2)

    def latent_tensor(self, z) -> torch.Tensor:
        if isinstance(z, np.ndarray):
            z = torch.from_numpy(np.ascontiguousarray(z))
        dtype = next(self.enc.parameters()).dtype
        z = z.to(dtype)
        if z.ndim != 2 or z.shape[1] != self.arch.latent_dim:
            raise ShapeError(
                f"expected latents (B, {self.arch.latent_dim}), got {tuple(z.shape)}"
            )
        return z

    # forward passes ----------------------------------------------------

    def encode(self, x):
        """Return (latents, class probabilities) for a batch of images."""
        return self.enc(self.image_tensor(x))

    def decode(self, z) -> torch.Tensor:
        return self.dec(self.latent_tensor(z)).permute(0, 2, 3, 1)

    def generate(self, z) -> torch.Tensor:
        return self.gen(self.latent_tensor(z)).permute(0, 2, 3, 1)

    def discriminate(self, x, functional: str = "vanilla") -> torch.Tensor:
        """Scalar score per sample: sigmoid head for 'vanilla', linear for 'wgan'.

        Accepts a ready channels-first tensor (e.g. generator output permuted
        back) or raw channels-last images.
        """
        if functional not in ("vanilla", "wgan"):
            raise ValueError(f"functional must be 'vanilla' or 'wgan', got {functional!r}")
        raw = self.dis(self.image_tensor(x)).squeeze(1)
        return torch.sigmoid(raw) if functional == "vanilla" else raw

    def classify(self, x, train_mode: bool = False) -> torch.Tensor:
        """Class probability simplex; dropout is active only in train mode."""
        rate = self.arch.classifier_dropout_rate if train_mode else 0.0
        logits = self.clf(self.image_tensor(x), dropout_rate=rate, rng=self.dropout_rng)
        return torch.softmax(logits, dim=1)

    # parameter bookkeeping ----------------------------------------------

    def named_parameters(self):
        """Yield (prefixed name, tensor) over all five networks."""
        for mod_name, mod in self.modules_by_name().items():
            for pname, p in mod.named_parameters():
                yield f"{mod_name}.{pname}", p

    def snapshot(self) -> dict:
        return {name: p.detach().clone() for name, p in self.named_parameters()}

    def load_snapshot(self, snap: dict):
        with torch.no_grad():
            for name, p in self.named_parameters():
                p.copy_(snap[name])

    def cast(self, dtype) -> "NetworkBundle":
        """In-place dtype cast of every network (used by gradient checks)."""
        for mod in self.modules_by_name().values():
            mod.to(dtype)
        return self


def _module_seeds(seed: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(6)]


def build_networks(arch: ArchitectureSpec, num_classes: int, seed: int) -> NetworkBundle:
    """Construct all five networks with seeded initialization.

    The same (arch, num_classes, seed) always yields bitwise-identical
    parameters. A zero-input dry run checks that the decoder inverts the
    encoder's shape contract.
    """
    if num_classes < 1:
        raise ValueError(f"num_classes must be >= 1, got {num_classes}")
    seeds = _module_seeds(seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seeds[0])
        enc = Encoder(arch, num_classes)
        torch.manual_seed(seeds[1])
        dec = Decoder(arch)
        torch.manual_seed(seeds[2])
        gen = Decoder(arch)
        torch.manual_seed(seeds[3])
        dis = HeadNet(arch, 1)
        torch.manual_seed(seeds[4])
        clf = HeadNet(arch, num_classes)
    rng = torch.Generator()
    rng.manual_seed(seeds[5])
    bundle = NetworkBundle(
        arch=arch, num_classes=num_classes, seed=seed,
        enc=enc, dec=dec, gen=gen, dis=dis, clf=clf, dropout_rng=rng,
    )

    h, w, ch = arch.input_shape
    with torch.no_grad():
        x0 = torch.zeros(1, h, w, ch)
        z, probs = bundle.encode(x0)
        if z.shape != (1, arch.latent_dim) or probs.shape != (1, num_classes):
            raise ShapeError(
                f"encoder produced {tuple(z.shape)}/{tuple(probs.shape)}, "
                f"expected (1, {arch.latent_dim})/(1, {num_classes})"
            )
        rec = bundle.decode(z)
        if rec.shape != (1, h, w, ch):
            raise ShapeError(
                f"decoder output {tuple(rec.shape)} does not invert input "
                f"shape (1, {h}, {w}, {ch})"
            )
        bundle.generate(z)
        bundle.discriminate(x0)
        bundle.classify(x0)
    return bundle


def _copy_matching(src: nn.Module, dst: nn.Module, context: str):
    src_params = dict(src.named_parameters())
    with torch.no_grad():
        for name, p in dst.named_parameters():
            donor = src_params.get(name)
            if donor is None:
                raise TransferError(f"{context}: donor has no parameter '{name}'")
            if donor.shape != p.shape:
                raise TransferError(
                    f"{context}: parameter '{name}' shape {tuple(donor.shape)} "
                    f"does not match recipient {tuple(p.shape)}"
                )
            p.copy_(donor)


def transfer_init(bundle: NetworkBundle) -> NetworkBundle:
    """Seed the adversarial players from the pretrained autoencoder.

    Returns a new bundle: generator := decoder copy, discriminator and
    classifier feature stacks := encoder feature copy, heads freshly
    initialized from a seed derived from the bundle's. The input bundle is
    left untouched (copies, not views).
    """
    fresh_seed = int(np.random.SeedSequence([bundle.seed, 1]).generate_state(1)[0])
    out = build_networks(bundle.arch, bundle.num_classes, fresh_seed)
    _copy_matching(bundle.enc, out.enc, "encoder")
    _copy_matching(bundle.dec, out.dec, "decoder")
    _copy_matching(bundle.dec, out.gen, "decoder->generator")
    _copy_matching(bundle.enc.features, out.dis.features, "encoder->discriminator features")
    _copy_matching(bundle.enc.features, out.clf.features, "encoder->classifier features")
    return out


# checkpoints -----------------------------------------------------------


def _write_record(fh, name: str, arr: np.ndarray):
    # asarray keeps 0-d scalars rank 0; tobytes() emits C order regardless
    payload = np.asarray(arr, dtype="<f4")
    name_b = name.encode("utf-8")
    fh.write(struct.pack("<Q", len(name_b)))
    fh.write(name_b)
    fh.write(struct.pack("<Q", payload.ndim))
    for d in payload.shape:
        fh.write(struct.pack("<Q", d))
    fh.write(payload.tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def save_checkpoint(path, bundle: NetworkBundle, priors=None):
    """Write the bundle (and optional class priors) as an NBND1 container.

    Records are (name length, name, rank, dims, float32 payload), all
    little-endian with 64-bit lengths; the record list runs to end of file.
    """
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_TAG)
        for name, p in bundle.named_parameters():
            _write_record(fh, name, p.detach().numpy())
        if priors is not None:
            for c in range(len(priors.mean)):
                _write_record(fh, f"prior.mu.{c}", priors.mean[c])
                _write_record(fh, f"prior.sigma.{c}", priors.cov[c])
            _write_record(fh, "prior.eps", np.float64(priors.epsilon))
            _write_record(fh, "prior.counts", np.asarray(priors.class_counts))


def _read_records(path):
    records = {}
    with open(path, "rb") as fh:
        tag = fh.read(len(CHECKPOINT_TAG))
        if tag != CHECKPOINT_TAG:
            raise CheckpointError(
                f"bad checkpoint tag {tag!r}, expected {CHECKPOINT_TAG!r}"
            )
        while True:
            head = fh.read(8)
            if not head:
                break
            if len(head) != 8:
                raise CheckpointError("truncated checkpoint while reading name length")
            (name_len,) = struct.unpack("<Q", head)
            name = _read_exact(fh, name_len, "record name").decode("utf-8")
            (rank,) = struct.unpack("<Q", _read_exact(fh, 8, f"rank of {name}"))
            dims = tuple(
                struct.unpack("<Q", _read_exact(fh, 8, f"dims of {name}"))[0]
                for _ in range(rank)
            )
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            payload = _read_exact(fh, 4 * count, f"payload of {name}")
            records[name] = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return records


def load_checkpoint(path, arch: ArchitectureSpec, num_classes: int, seed: int = 0):
    """Rebuild a bundle from an NBND1 file, validating shapes against `arch`.

    Returns (bundle, prior_arrays) where prior_arrays is None or a dict with
    keys mean (C,q), cov (C,q,q), epsilon, class_counts (C,).
    """
    records = _read_records(path)
    bundle = build_networks(arch, num_classes, seed)
    expected = dict(bundle.named_parameters())
    for name, p in expected.items():
        if name not in records:
            raise CheckpointError(f"checkpoint is missing parameter '{name}'")
        if tuple(records[name].shape) != tuple(p.shape):
            raise ShapeError(
                f"checkpoint parameter '{name}' has shape {records[name].shape}, "
                f"architecture expects {tuple(p.shape)}"
            )
    with torch.no_grad():
        for name, p in bundle.named_parameters():
            p.copy_(torch.from_numpy(records[name].copy()).to(p.dtype))

    prior_names = [n for n in records if n.startswith("prior.")]
    leftovers = [n for n in records if n not in expected and not n.startswith("prior.")]
    if leftovers:
        raise CheckpointError(f"checkpoint holds unknown records: {sorted(leftovers)}")
    if not prior_names:
        return bundle, None

    mus = sorted(n for n in prior_names if n.startswith("prior.mu."))
    c = len(mus)
    if c == 0 or "prior.eps" not in records:
        raise CheckpointError("checkpoint prior records are incomplete")
    q = arch.latent_dim
    mean = np.zeros((c, q))
    cov = np.zeros((c, q, q))
    for k in range(c):
        if f"prior.mu.{k}" not in records or f"prior.sigma.{k}" not in records:
            raise CheckpointError(f"checkpoint prior records missing class {k}")
        mean[k] = records[f"prior.mu.{k}"]
        cov[k] = records[f"prior.sigma.{k}"]
    counts = records.get("prior.counts")
    priors = {
        "mean": mean,
        "cov": cov,
        "epsilon": float(records["prior.eps"]),
        "class_counts": None if counts is None else counts.astype(np.int64),
    }
    return bundle, priors
