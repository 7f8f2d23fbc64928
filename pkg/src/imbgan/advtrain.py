"""Three-player adversarial training strategies and the classifier baseline.

Two strategies share the generator/discriminator game but differ in what the
classifier sees:

- adso: real batches come from the repetition-balanced view and the
  classifier pushes generated samples AWAY from their own label through a
  complementary cross-entropy term.
- amo: real batches come from the original imbalanced data and the
  classifier is additionally fit on generated samples from every class
  except the majority, with plain cross-entropy.

The dso baseline trains the classifier alone on the balanced view. The
discriminator objective supports two functionals, f(x) = log x ("vanilla",
sigmoid score head) and f(x) = x ("wgan", linear head), and is regularized
by a zero-centered gradient penalty on real samples computed from the raw
score head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import batch_iter, make_balanced_by_repetition
from .errors import ContractError, DivergenceError
from .metrics import acsa as _acsa_metric
from .metrics import confusion
from .slppl import PROB_FLOOR

STRATEGIES = ("adso", "amo", "dso")


@dataclass(frozen=True)
class GanFunctional:
    """Score transform in the adversarial objective: log x or identity."""

    kind: str

    def __post_init__(self):
        if self.kind not in ("vanilla", "wgan"):
            raise ValueError(f"kind must be 'vanilla' or 'wgan', got {self.kind!r}")


VANILLA = GanFunctional("vanilla")
WGAN = GanFunctional("wgan")


def f_apply(functional: GanFunctional, s):
    """Apply the functional: ln(s) clamped at 1e-12 for vanilla, s for wgan."""
    if isinstance(s, torch.Tensor):
        if functional.kind == "vanilla":
            return torch.log(s.clamp(min=PROB_FLOOR))
        return s
    s = float(s)
    if functional.kind == "vanilla":
        return math.log(max(s, PROB_FLOOR))
    return s


@dataclass
class AdvConfig:
    epochs: int = 100
    batch_size: int = 64
    lr_gen: float = 2e-4
    lr_dis: float = 2e-4
    lr_clf: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    gp_gamma: float = 10.0
    dis_steps: int = 1
    gen_steps: int = 1
    clf_steps: int = 1
    functional: GanFunctional = VANILLA
    g_cls_term: str = "ce"  # "ce" (prose-consistent) or "cce" (ablation)
    seed: int = 0

    def __post_init__(self):
        if self.gp_gamma < 0:
            raise ValueError(f"gp_gamma must be >= 0, got {self.gp_gamma}")
        for name in ("dis_steps", "gen_steps", "clf_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.g_cls_term not in ("ce", "cce"):
            raise ValueError(f"g_cls_term must be 'ce' or 'cce', got {self.g_cls_term!r}")


@dataclass
class TrainHistory:
    """Per-epoch loss and evaluation traces."""

    l_g: list = field(default_factory=list)
    l_dis: list = field(default_factory=list)
    l_q: list = field(default_factory=list)
    gp: list = field(default_factory=list)
    acsa: list = field(default_factory=list)

    def append(self, l_g, l_dis, l_q, gp, acsa):
        self.l_g.append(l_g)
        self.l_dis.append(l_dis)
        self.l_q.append(l_q)
        self.gp.append(gp)
        self.acsa.append(acsa)

    def __len__(self) -> int:
        return len(self.acsa)

    def rows(self):
        """Yield (epoch, l_g, l_dis, l_q, gp, acsa) tuples for CSV export."""
        for i in range(len(self)):
            yield (i, self.l_g[i], self.l_dis[i], self.l_q[i], self.gp[i], self.acsa[i])


def _check_finite(value: torch.Tensor, what: str):
    if not torch.isfinite(value):
        raise DivergenceError(f"{what} became non-finite")
    return value


def sample_generator_batch(priors, strategy: str, b: int, seed, exclude_majority: bool = False):
    """Draw b (latent, label) pairs from the class priors.

    Labels are uniform over all classes, or over the non-majority classes
    when `exclude_majority` is set (majority = largest training count in
    the priors). The strategy tag does not change the draw; it is carried
    for caller bookkeeping. Deterministic given seed.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}, have {STRATEGIES}")
    if b < 0:
        raise ValueError(f"batch size must be >= 0, got {b}")
    allowed = np.arange(priors.num_classes)
    if exclude_majority:
        majority = int(np.argmax(priors.class_counts))
        allowed = allowed[allowed != majority]
        if len(allowed) == 0:
            raise ContractError(
                "no classes left to sample from after excluding the majority"
            )
    rng = np.random.default_rng(seed)
    labels = rng.choice(allowed, size=b)
    u = rng.standard_normal((b, priors.latent_dim))
    z = priors.mean[labels] + np.einsum("bij,bj->bi", priors.chol[labels], u)
    return z, labels


def _true_class_probs(probs: torch.Tensor, labels) -> torch.Tensor:
    y = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    return probs[torch.arange(len(y)), y]


def loss_generator_terms(strategy, z, y, bundle, functional: GanFunctional, g_cls_term="ce"):
    """Return (discriminator-fooling term, classifier term) separately.

    The fooling term is mean f(1 - Dis(G(z))); the classifier term rewards
    the classifier assigning label y to G(z): -log Q_y for "ce" (default),
    or the literal complementary form +log(1 - Q_y) for "cce".
    """
    imgs = bundle.generate(z)
    dis_out = bundle.discriminate(imgs, functional.kind)
    fool = f_apply(functional, 1.0 - dis_out).mean()
    q_true = _true_class_probs(bundle.classify(imgs), y)
    if g_cls_term == "ce":
        cls = (-torch.log(q_true.clamp(min=PROB_FLOOR))).mean()
    elif g_cls_term == "cce":
        cls = torch.log((1.0 - q_true).clamp(min=PROB_FLOOR)).mean()
    else:
        raise ValueError(f"g_cls_term must be 'ce' or 'cce', got {g_cls_term!r}")
    return fool, cls


def loss_generator(strategy, z, y, bundle, functional: GanFunctional, g_cls_term="ce"):
    """Generator objective (minimized): fool the discriminator, win the classifier."""
    fool, cls = loss_generator_terms(strategy, z, y, bundle, functional, g_cls_term)
    return _check_finite(fool + cls, "generator loss")


def loss_classifier(
    strategy,
    x,
    y,
    gen_images,
    gen_labels,
    bundle,
    majority_class: int | None = None,
    train_mode: bool = True,
):
    """Classifier objective (minimized) for a real + generated batch pair.

    adso: plain CE on real + complementary CE on generated (push generated
    samples away from their own label). amo: plain CE on real + plain CE on
    generated, which must contain no majority-class sample. dso: plain CE
    on real only (gen_images/gen_labels must be None).
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}, have {STRATEGIES}")
    probs = bundle.classify(x, train_mode=train_mode)
    real_term = (-torch.log(_true_class_probs(probs, y).clamp(min=PROB_FLOOR))).mean()
    if strategy == "dso":
        if gen_images is not None or gen_labels is not None:
            raise ContractError("dso baseline takes no generated batch")
        return _check_finite(real_term, "classifier loss")

    if strategy == "amo":
        if majority_class is None:
            raise ValueError("amo classifier loss needs majority_class to enforce exclusion")
        gl = np.asarray(gen_labels)
        if np.any(gl == majority_class):
            raise ContractError(
                f"amo generated batch contains majority class {majority_class}"
            )
    q_gen = _true_class_probs(bundle.classify(gen_images, train_mode=train_mode), gen_labels)
    if strategy == "adso":
        gen_term = (-torch.log((1.0 - q_gen).clamp(min=PROB_FLOOR))).mean()
    else:
        gen_term = (-torch.log(q_gen.clamp(min=PROB_FLOOR))).mean()
    return _check_finite(real_term + gen_term, "classifier loss")


def loss_discriminator(strategy, x, gen_images, bundle, functional: GanFunctional):
    """Discriminator objective (maximized): mean f(Dis(x)) + mean f(1 - Dis(G(z)))."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}, have {STRATEGIES}")
    real = f_apply(functional, bundle.discriminate(x, functional.kind)).mean()
    fake = f_apply(functional, 1.0 - bundle.discriminate(gen_images, functional.kind)).mean()
    return _check_finite(real + fake, "discriminator objective")


def gradient_penalty_0gp(bundle, x, gamma: float):
    """Zero-centered penalty (gamma/2) * E ||d Dis(x) / d x||^2 on real samples.

    The raw (pre-sigmoid) score head is differentiated so the penalty does
    not depend on the functional choice.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x))
    x = x.detach().clone().requires_grad_(True)
    score = bundle.discriminate(x, "wgan")
    if not score.requires_grad:
        # score function constant in x: penalty is exactly zero
        return torch.zeros((), dtype=x.dtype)
    (grads,) = torch.autograd.grad(
        score.sum(), x, create_graph=True, allow_unused=True
    )
    if grads is None:
        return torch.zeros((), dtype=x.dtype)
    per_sample = grads.reshape(len(grads), -1).pow(2).sum(dim=1)
    return (gamma / 2.0) * per_sample.mean()


def predict_labels(bundle, images, batch_size: int = 512) -> np.ndarray:
    out = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            probs = bundle.classify(images[start : start + batch_size], train_mode=False)
            out.append(probs.argmax(dim=1).numpy())
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate_acsa(bundle, images, labels, num_classes: int, class_order) -> float:
    preds = predict_labels(bundle, images)
    cm = confusion(labels, preds, num_classes, class_order=class_order)
    return _acsa_metric(cm)


def _adam(params, lr: float, config: AdvConfig):
    return torch.optim.Adam(params, lr=lr, betas=(config.beta1, config.beta2))


def _zero_all_grads(bundle):
    for _, p in bundle.named_parameters():
        p.grad = None


def _eval_view(data, eval_data):
    if eval_data is None:
        base = data.base
        return base.images, base.labels
    if hasattr(eval_data, "base"):
        return eval_data.base.images, eval_data.base.labels
    return eval_data.images, eval_data.labels


def train_adversarial(
    strategy, data, priors, bundle, config: AdvConfig, eval_data=None, on_epoch=None
):
    """Alternating three-player training (discriminator, generator, classifier).

    Per iteration the discriminator ascends its objective minus the gradient
    penalty, then the generator and classifier each descend theirs, at the
    configured step ratios. Real batches come from the repetition-balanced
    view (adso) or the original data (amo). History gains one row per epoch
    with epoch-mean losses and evaluation ACSA; the bundle ends at the
    best-ACSA epoch. On divergence the last finished epoch's parameters are
    restored and the error carries the history so far.
    """
    if strategy not in ("adso", "amo"):
        raise ValueError(f"strategy must be 'adso' or 'amo', got {strategy!r}")
    view = make_balanced_by_repetition(data, seed=config.seed) if strategy == "adso" else data
    majority = data.majority_class
    eval_images, eval_labels = _eval_view(data, eval_data)

    # the dropout stream restarts here so a fixed seed reproduces training
    # regardless of earlier draws against the same bundle
    bundle.dropout_rng.manual_seed(
        int(np.random.SeedSequence([config.seed, 2]).generate_state(1)[0])
    )
    opt_gen = _adam(bundle.gen.parameters(), config.lr_gen, config)
    opt_dis = _adam(bundle.dis.parameters(), config.lr_dis, config)
    opt_clf = _adam(bundle.clf.parameters(), config.lr_clf, config)

    history = TrainHistory()
    last_good = bundle.snapshot()
    best = (-1.0, last_good)
    for epoch in range(config.epochs):
        sums = {"l_g": 0.0, "l_dis": 0.0, "l_q": 0.0, "gp": 0.0}
        iters = 0
        try:
            for it, (x, y) in enumerate(
                batch_iter(view, config.batch_size, seed=config.seed, epoch=epoch)
            ):
                b = len(y)
                for k in range(config.dis_steps):
                    z, _ = sample_generator_batch(
                        priors, strategy, b, seed=[config.seed, epoch, it, 0, k]
                    )
                    with torch.no_grad():
                        fake = bundle.generate(z)
                    d_obj = loss_discriminator(strategy, x, fake, bundle, config.functional)
                    gp_val = gradient_penalty_0gp(bundle, x, config.gp_gamma)
                    _check_finite(gp_val, "gradient penalty")
                    _zero_all_grads(bundle)
                    (-d_obj + gp_val).backward()
                    opt_dis.step()
                for k in range(config.gen_steps):
                    z, zy = sample_generator_batch(
                        priors, strategy, b, seed=[config.seed, epoch, it, 1, k]
                    )
                    g_loss = loss_generator(
                        strategy, z, zy, bundle, config.functional, config.g_cls_term
                    )
                    _zero_all_grads(bundle)
                    g_loss.backward()
                    opt_gen.step()
                for k in range(config.clf_steps):
                    z, zy = sample_generator_batch(
                        priors,
                        strategy,
                        b,
                        seed=[config.seed, epoch, it, 2, k],
                        exclude_majority=(strategy == "amo"),
                    )
                    with torch.no_grad():
                        fake = bundle.generate(z)
                    q_loss = loss_classifier(
                        strategy, x, y, fake, zy, bundle, majority_class=majority
                    )
                    _zero_all_grads(bundle)
                    q_loss.backward()
                    opt_clf.step()
                sums["l_g"] += float(g_loss.detach())
                sums["l_dis"] += float(d_obj.detach())
                sums["l_q"] += float(q_loss.detach())
                sums["gp"] += float(gp_val.detach())
                iters += 1
        except DivergenceError as err:
            bundle.load_snapshot(last_good)
            raise DivergenceError(
                f"{err} (epoch {epoch}); parameters restored to last finished epoch",
                epoch=epoch,
                history=history,
            ) from err
        epoch_acsa = evaluate_acsa(
            bundle, eval_images, eval_labels, data.num_classes, data.per_class_counts
        )
        history.append(
            sums["l_g"] / iters,
            sums["l_dis"] / iters,
            sums["l_q"] / iters,
            sums["gp"] / iters,
            epoch_acsa,
        )
        last_good = bundle.snapshot()
        if epoch_acsa > best[0]:
            best = (epoch_acsa, last_good)
        if on_epoch is not None:
            on_epoch(epoch, bundle, history)
    if best[0] >= 0:
        bundle.load_snapshot(best[1])
    return bundle, history


def train_dso_baseline(data, bundle, config: AdvConfig, eval_data=None, on_epoch=None):
    """Classifier-only baseline: plain cross-entropy on the balanced view."""
    view = make_balanced_by_repetition(data, seed=config.seed)
    eval_images, eval_labels = _eval_view(data, eval_data)
    bundle.dropout_rng.manual_seed(
        int(np.random.SeedSequence([config.seed, 2]).generate_state(1)[0])
    )
    opt_clf = _adam(bundle.clf.parameters(), config.lr_clf, config)
    history = TrainHistory()
    last_good = bundle.snapshot()
    best = (-1.0, last_good)
    for epoch in range(config.epochs):
        q_sum, iters = 0.0, 0
        try:
            for x, y in batch_iter(view, config.batch_size, seed=config.seed, epoch=epoch):
                q_loss = loss_classifier("dso", x, y, None, None, bundle)
                _zero_all_grads(bundle)
                q_loss.backward()
                opt_clf.step()
                q_sum += float(q_loss.detach())
                iters += 1
        except DivergenceError as err:
            bundle.load_snapshot(last_good)
            raise DivergenceError(
                f"{err} (epoch {epoch}); parameters restored to last finished epoch",
                epoch=epoch,
                history=history,
            ) from err
        epoch_acsa = evaluate_acsa(
            bundle, eval_images, eval_labels, data.num_classes, data.per_class_counts
        )
        history.append(0.0, 0.0, q_sum / iters, 0.0, epoch_acsa)
        last_good = bundle.snapshot()
        if epoch_acsa > best[0]:
            best = (epoch_acsa, last_good)
        if on_epoch is not None:
            on_epoch(epoch, bundle, history)
    if best[0] >= 0:
        bundle.load_snapshot(best[1])
    return bundle, history
