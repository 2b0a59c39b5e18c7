"""Training objectives: contrastive alignment, cone entailment, and
uncertainty calibration.

A batch carries four aligned groups of tangent embeddings (whole image,
whole text, part image, part text).  The contrastive terms use the negative
geodesic distance as similarity, with the positive pair excluded from the
denominator; the global-local terms scale each anchor row's temperature by
``exp(u/2)`` of its part's uncertainty, so less certain parts contribute
more softly.  Entailment terms hinge on the exterior angle exceeding the
scaled cone aperture, with a leaky angular term that keeps a gradient
inside the cone; the calibration term re-weights the (stop-gradient)
entailment violation by ``exp(-u)`` and regularizes the batch uncertainty
profile with an entropy term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import value_of
from .entailment import ConeParams, aperture, exterior_angle
from .errors import ContractViolationError
from .manifold import LorentzPoint, Manifold, lift, pairwise_distance
from .uncertainty import (
    entropy,
    normalize_uncertainty,
    uncertainty,
    uncertainty_from_radius,
)


@dataclass(frozen=True)
class TemperatureSet:
    """Logit scales for the global, local, and global-local contrastive
    terms; each is clamped to >= 0.01 by the trainer."""

    tau_global: object = 0.07
    tau_local: object = 0.07
    tau_global_local: object = 0.06

    def __post_init__(self):
        for name in ("tau_global", "tau_local", "tau_global_local"):
            if float(value_of(getattr(self, name))) < 0.01:
                raise ContractViolationError(f"{name} below the 0.01 floor")


@dataclass(frozen=True)
class LossConfig:
    """Every scalar hyperparameter of the full objective."""

    temps: TemperatureSet = field(default_factory=TemperatureSet)
    cone: ConeParams = field(default_factory=ConeParams)
    alpha: float = 0.1            # leak coefficient on the angular term
    lambda_intra: float = 0.5     # weight of intra-modal entailment
    lambda_cal: float = 10.0      # weight of the calibration terms
    lambda_ent: float = 0.2       # weight of the whole entailment block
    entropy_sign: float = 1.0     # +1 adds the entropy term as printed
    include_positive: bool = False       # include the positive pair in the contrastive denominator
    uncertainty_from_radius: bool = False  # explicit-radius uncertainty ablation

    def __post_init__(self):
        if self.entropy_sign not in (1.0, -1.0):
            raise ContractViolationError("entropy_sign must be +1 or -1")
        if self.alpha < 0:
            raise ContractViolationError("alpha must be nonnegative")


@dataclass(frozen=True)
class Batch:
    """Aligned quadruple of tangent-embedding groups, ``(B, n)`` each.

    ``part_of`` maps part rows to their whole rows; at desk scale it is the
    identity (one part per whole per step) but any permutation is accepted.
    """

    whole_image: object
    whole_text: object
    part_image: object
    part_text: object
    part_of: np.ndarray = None

    def __post_init__(self):
        shapes = {
            name: value_of(getattr(self, name)).shape
            for name in ("whole_image", "whole_text", "part_image", "part_text")
        }
        if len(set(shapes.values())) != 1:
            raise ContractViolationError(f"batch group shapes differ: {shapes}")
        b = shapes["whole_image"][0]
        if b < 2:
            raise ContractViolationError("batch size must be >= 2")
        for name in shapes:
            if not np.all(np.isfinite(value_of(getattr(self, name)))):
                raise ContractViolationError(f"non-finite entries in {name}")
        part_of = self.part_of
        if part_of is None:
            part_of = np.arange(b)
        part_of = np.asarray(part_of, dtype=np.intp)
        if not np.array_equal(np.sort(part_of), np.arange(b)):
            raise ContractViolationError("part_of must map parts onto [0, B)")
        object.__setattr__(self, "part_of", part_of)

    @property
    def size(self) -> int:
        return value_of(self.whole_image).shape[0]


@dataclass
class LossReport:
    """Scalar total plus its named decomposition.

    The components are stored unweighted; the total recombines them as
    ``(c_glob + c_loc + c_globloc)
    + lambda_ent * (e_inter + lambda_intra * e_intra + lambda_cal * cal)``.
    """

    total: object
    components: dict

    def to_floats(self) -> dict[str, float]:
        out = {"total": float(value_of(self.total))}
        for name, v in self.components.items():
            out[name] = float(value_of(v))
        return out


def contrastive(anchors, targets, tau, m: Manifold, *, include_positive: bool = False):
    """InfoNCE-style loss with geodesic-distance similarity.

    ``-sum_i log[ exp(-d(a_i, t_i)/tau_i) / sum_{k != i} exp(-d(a_i, t_k)/tau_i) ]``

    ``tau`` is a positive scalar or a per-anchor-row vector; row ``i``'s
    temperature divides its whole logit row.  As written the denominator
    runs over negatives only; ``include_positive`` switches to the standard
    full-batch denominator.
    """
    b = value_of(anchors).shape[0]
    if b < 2 or value_of(targets).shape[0] != b:
        raise ContractViolationError("contrastive needs aligned batches of size >= 2")
    dists = pairwise_distance(lift(anchors, m), lift(targets, m), m)
    tau_v = value_of(tau)
    if tau_v.ndim == 1:
        logits = ad.div(ad.neg(dists), ad.reshape(tau, (b, 1)))
    else:
        logits = ad.div(ad.neg(dists), tau)
    positives = ad.diag_part(logits)
    if include_positive:
        denom = ad.logsumexp(logits, axis=1)
    else:
        mask = np.zeros((b, b))
        np.fill_diagonal(mask, -np.inf)
        denom = ad.logsumexp(ad.add(logits, mask), axis=1)
    return ad.reduce_sum(ad.sub(denom, positives))


def adaptive_temperatures(parts, tau_global_local, *, m: Manifold = None,
                          use_radius: bool = False):
    """Per-row temperatures ``exp(u(part_i)/2) * tau_gl``.

    Uncertainty lies in (0, ln 2], so every entry falls in
    ``[tau_gl, sqrt(2) tau_gl]``: uncertain parts get softer logits.
    """
    if use_radius:
        u = uncertainty_from_radius(parts, m)
    else:
        u = uncertainty(parts)
    return ad.mul(ad.exp(ad.div(u, 2.0)), tau_global_local)


def _contrastive_components(batch: Batch, temps: TemperatureSet, m: Manifold,
                            *, include_positive: bool = False,
                            use_radius: bool = False) -> dict:
    whole_image_al = ad.take_rows(batch.whole_image, batch.part_of)
    whole_text_al = ad.take_rows(batch.whole_text, batch.part_of)
    tau_img = adaptive_temperatures(
        batch.part_image, temps.tau_global_local, m=m, use_radius=use_radius
    )
    tau_txt = adaptive_temperatures(
        batch.part_text, temps.tau_global_local, m=m, use_radius=use_radius
    )
    globloc = ad.add(
        contrastive(batch.part_image, whole_text_al, tau_img, m,
                    include_positive=include_positive),
        contrastive(batch.part_text, whole_image_al, tau_txt, m,
                    include_positive=include_positive),
    )
    glob = ad.add(
        contrastive(batch.whole_image, batch.whole_text, temps.tau_global, m,
                    include_positive=include_positive),
        contrastive(batch.whole_text, batch.whole_image, temps.tau_global, m,
                    include_positive=include_positive),
    )
    loc = ad.add(
        contrastive(batch.part_image, batch.part_text, temps.tau_local, m,
                    include_positive=include_positive),
        contrastive(batch.part_text, batch.part_image, temps.tau_local, m,
                    include_positive=include_positive),
    )
    return {
        "contrastive_globallocal": globloc,
        "contrastive_global": glob,
        "contrastive_local": loc,
    }


def contrastive_total(batch: Batch, temps: TemperatureSet, m: Manifold,
                      *, include_positive: bool = False,
                      use_radius: bool = False):
    """Sum of the six contrastive terms: uncertainty-tempered global-local,
    plain global, and plain local pairs."""
    comps = _contrastive_components(
        batch, temps, m, include_positive=include_positive, use_radius=use_radius
    )
    return ad.add(
        ad.add(comps["contrastive_globallocal"], comps["contrastive_global"]),
        comps["contrastive_local"],
    )


def entail_hinge(p: LorentzPoint, q: LorentzPoint, eta: float, cp: ConeParams,
                 m: Manifold):
    """``max(0, phi(p, q) - eta * aperture(p))`` per pair; zero exactly when
    ``q`` lies inside ``p``'s scaled cone."""
    phi = exterior_angle(p, q, m)
    omega = aperture(p, cp.aperture_k, m)
    return ad.relu(ad.sub(phi, ad.mul(float(eta), omega)))


def entail_leaky(p: LorentzPoint, q: LorentzPoint, eta: float, cp: ConeParams,
                 alpha: float, m: Manifold):
    """Hinge plus a leaky angular term ``alpha * phi`` that keeps pulling
    ``q`` toward ``p``'s axis even inside the cone."""
    phi = exterior_angle(p, q, m)
    omega = aperture(p, cp.aperture_k, m)
    hinge = ad.relu(ad.sub(phi, ad.mul(float(eta), omega)))
    return ad.add(hinge, ad.mul(float(alpha), phi))


def calibration(p_parts, q_wholes, eta: float, cp: ConeParams, alpha: float,
                m: Manifold, *, entropy_sign: float = 1.0,
                use_radius: bool = False):
    """Uncertainty-calibration loss over aligned part/whole rows.

    ``sum_i [ sg(leaky(p_i, q_i)) exp(-u(p_i)) + u(p_i) ]
    + sign * H(softmax(u))``

    The entailment factor is passed through a stop-gradient: it weights the
    uncertainty update but receives none itself.  The softmax normalizing
    the entropy term runs over this part group.
    """
    if use_radius:
        u = uncertainty_from_radius(p_parts, m)
    else:
        u = uncertainty(p_parts)
    leak = entail_leaky(lift(p_parts, m), lift(q_wholes, m), eta, cp, alpha, m)
    core = ad.reduce_sum(
        ad.add(ad.mul(ad.stop_gradient(leak), ad.exp(ad.neg(u))), u)
    )
    ent = entropy(normalize_uncertainty(u))
    return ad.add(core, ad.mul(float(entropy_sign), ent))


def _entailment_components(batch: Batch, cfg: LossConfig, m: Manifold) -> dict:
    whole_image_al = ad.take_rows(batch.whole_image, batch.part_of)
    whole_text_al = ad.take_rows(batch.whole_text, batch.part_of)
    p_pi = lift(batch.part_image, m)
    p_pt = lift(batch.part_text, m)
    p_wi = lift(batch.whole_image, m)
    p_wt = lift(batch.whole_text, m)
    p_wi_al = lift(whole_image_al, m)
    p_wt_al = lift(whole_text_al, m)
    cone, eta_inter, eta_intra = cfg.cone, cfg.cone.eta_inter, cfg.cone.eta_intra

    # text entails image; part entails whole -- the apex goes first
    inter = ad.add(
        ad.reduce_sum(entail_leaky(p_pt, p_pi, eta_inter, cone, cfg.alpha, m)),
        ad.reduce_sum(entail_leaky(p_wt, p_wi, eta_inter, cone, cfg.alpha, m)),
    )
    intra = ad.add(
        ad.reduce_sum(entail_leaky(p_pt, p_wt_al, eta_intra, cone, cfg.alpha, m)),
        ad.reduce_sum(entail_leaky(p_pi, p_wi_al, eta_intra, cone, cfg.alpha, m)),
    )
    cal = ad.add(
        calibration(batch.part_text, whole_text_al, eta_intra, cone, cfg.alpha,
                    m, entropy_sign=cfg.entropy_sign,
                    use_radius=cfg.uncertainty_from_radius),
        calibration(batch.part_image, whole_image_al, eta_intra, cone, cfg.alpha,
                    m, entropy_sign=cfg.entropy_sign,
                    use_radius=cfg.uncertainty_from_radius),
    )
    return {"entail_inter": inter, "entail_intra": intra, "calibration": cal}


def entailment_total(batch: Batch, cfg: LossConfig, m: Manifold):
    """Inter-modal entailment plus weighted intra-modal entailment and
    calibration, summed over batch rows."""
    comps = _entailment_components(batch, cfg, m)
    return ad.add(
        comps["entail_inter"],
        ad.add(
            ad.mul(cfg.lambda_intra, comps["entail_intra"]),
            ad.mul(cfg.lambda_cal, comps["calibration"]),
        ),
    )


def total_loss(batch: Batch, cfg: LossConfig, m: Manifold) -> LossReport:
    """Full objective: contrastive block plus ``lambda_ent`` times the
    entailment block, with the component decomposition attached."""
    con = _contrastive_components(
        batch, cfg.temps, m,
        include_positive=cfg.include_positive,
        use_radius=cfg.uncertainty_from_radius,
    )
    ent = _entailment_components(batch, cfg, m)
    con_sum = ad.add(
        ad.add(con["contrastive_globallocal"], con["contrastive_global"]),
        con["contrastive_local"],
    )
    ent_sum = ad.add(
        ent["entail_inter"],
        ad.add(
            ad.mul(cfg.lambda_intra, ent["entail_intra"]),
            ad.mul(cfg.lambda_cal, ent["calibration"]),
        ),
    )
    total = ad.add(con_sum, ad.mul(cfg.lambda_ent, ent_sum))
    return LossReport(total=total, components={**con, **ent})
