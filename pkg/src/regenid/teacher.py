"""Variational recurrent teacher over output sequences.

Two equivalent routes are provided:

* :func:`teacher_rollout` builds the graph step by step from
  :func:`hidden_update`, :func:`encode`, :func:`reparam_sample`,
  :func:`prior` and the shared head. It is the readable reference.
* :func:`teacher_forward` runs the sequential part (GRU, inference network,
  reparameterization) in a single fused kernel and evaluates everything that
  does not feed back into the recurrence (prior, projection, head, KL) in one
  batched pass. Training uses this route.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Mapping

import numpy as np

from . import _backend
from . import diffcore as dc
from .arch import ModelSpec
from .diffcore import Node
from .errors import ShapeError
from .nets import (LOGVAR_MAX, LOGVAR_MIN, DenseLayer, GaussianHead, GaussianParams, GruCell,
                   dense_from, dense_forward, gru_from, gru_step, head_forward, head_from,
                   mlp_forward)

LOG_2PI = math.log(2.0 * math.pi)

__all__ = [
    "GaussianParams", "TeacherParams", "teacher_from", "hidden_update", "prior", "encode",
    "reparam_sample", "kl_gaussian", "nll_gaussian", "teacher_rollout", "Rollout",
    "teacher_forward", "TeacherOutputs", "recurrence", "teacher_representation",
]


@dataclass
class TeacherParams:
    gru: GruCell
    prior_net: List[DenseLayer]
    prior_out: GaussianHead
    encoder_net: List[DenseLayer]
    encoder_out: GaussianHead
    projection_net: List[DenseLayer]
    head: GaussianHead

    @property
    def hidden_dim(self) -> int:
        return self.gru.hidden_dim

    @property
    def z_dim(self) -> int:
        return self.prior_out.mean.out_dim


def teacher_from(P: Mapping, head: GaussianHead = None) -> TeacherParams:
    """Assemble teacher layers from bound parameters.

    Pass ``head`` to reuse an already assembled shared head.
    """
    def stack(prefix):
        layers, i = [], 0
        while f"{prefix}.{i}.W" in P:
            layers.append(dense_from(P, f"{prefix}.{i}", "tanh"))
            i += 1
        return layers

    return TeacherParams(
        gru=gru_from(P, "teacher.gru"),
        prior_net=stack("teacher.prior"),
        prior_out=head_from(P, "teacher.prior.out"),
        encoder_net=stack("teacher.enc"),
        encoder_out=head_from(P, "teacher.enc.out"),
        projection_net=stack("teacher.proj"),
        head=head if head is not None else head_from(P, "head"),
    )


# ---------------------------------------------------------------- per-step pieces

def hidden_update(p: TeacherParams, h_prev, y_prev, z_prev) -> Node:
    """Deterministic state update ``h = GRU([y_prev; z_prev], h_prev)``."""
    return gru_step(p.gru, dc.concat([y_prev, z_prev], axis=-1), h_prev)


def prior(p: TeacherParams, h) -> GaussianParams:
    return head_forward(p.prior_out, mlp_forward(p.prior_net, h))


def encode(p: TeacherParams, y_t, h_t) -> GaussianParams:
    """Approximate posterior over the latent given the current output and state."""
    return head_forward(p.encoder_out, mlp_forward(p.encoder_net, dc.concat([y_t, h_t], axis=-1)))


def reparam_sample(g: GaussianParams, eps) -> Node:
    """``mean + exp(logvar / 2) * eps``."""
    eps = np.asarray(eps, dtype=np.float64)
    mean = g.mean if isinstance(g.mean, Node) else dc.const(g.mean)
    logvar = g.logvar if isinstance(g.logvar, Node) else dc.const(g.logvar)
    if eps.shape != mean.shape:
        raise ShapeError("reparam_sample", mean.shape, eps.shape)
    return dc.add(mean, dc.mul(dc.exp(dc.mul(logvar, 0.5)), dc.const(eps)))


def _nodes(g: GaussianParams):
    m = g.mean if isinstance(g.mean, Node) else dc.const(g.mean)
    lv = g.logvar if isinstance(g.logvar, Node) else dc.const(g.logvar)
    return m, lv


def kl_gaussian(q: GaussianParams, p: GaussianParams) -> Node:
    """KL(q || p) between diagonal Gaussians, summed over all entries."""
    mq, lq = _nodes(q)
    mp, lp = _nodes(p)
    if mq.shape != mp.shape:
        raise ShapeError("kl_gaussian", mq.shape, mp.shape)
    inv_vp = dc.exp(dc.neg(lp))
    terms = dc.add(dc.sub(dc.sub(lp, lq), 1.0),
                   dc.mul(dc.add(dc.square(dc.sub(mq, mp)), dc.exp(lq)), inv_vp))
    return dc.mul(dc.sum_(terms), 0.5)


def nll_gaussian(y, g: GaussianParams) -> Node:
    """Negative log density of ``y`` under a diagonal Gaussian, summed over entries."""
    m, lv = _nodes(g)
    y = y if isinstance(y, Node) else dc.const(y)
    if y.shape != m.shape:
        raise ShapeError("nll_gaussian", y.shape, m.shape)
    quad = dc.mul(dc.square(dc.sub(y, m)), dc.exp(dc.neg(lv)))
    return dc.mul(dc.add(dc.sum_(dc.add(lv, quad)), LOG_2PI * m.value.size), 0.5)


def project(p: TeacherParams, h, z) -> Node:
    """Teacher representation from ``[h; z]``."""
    return mlp_forward(p.projection_net, dc.concat([h, z], axis=-1))


# ---------------------------------------------------------------- reference rollout

@dataclass
class Rollout:
    phi: list
    decoded: list
    kl: list
    h: list
    z: list

    def negative_elbo(self, y_seq) -> Node:
        y_seq = np.asarray(y_seq, dtype=np.float64)
        total = None
        for t, (dec, kl) in enumerate(zip(self.decoded, self.kl)):
            term = dc.add(nll_gaussian(y_seq[t], dec), kl)
            total = term if total is None else dc.add(total, term)
        return total


def teacher_rollout(p: TeacherParams, y_seq, eps_seq) -> Rollout:
    """Step-by-step rollout over ``y_seq`` of shape ``(T, dy)`` or ``(T, B, dy)``.

    The first step uses zero vectors for the previous hidden state, output and
    latent sample.
    """
    y_seq = np.asarray(y_seq, dtype=np.float64)
    eps_seq = np.asarray(eps_seq, dtype=np.float64)
    if y_seq.ndim < 2 or y_seq.shape[0] < 1:
        raise ShapeError("teacher_rollout", y_seq.shape, detail="need at least one time step")
    T = y_seq.shape[0]
    batch = y_seq.shape[1:-1]
    if eps_seq.shape != (T,) + batch + (p.z_dim,):
        raise ShapeError("teacher_rollout", eps_seq.shape, (T,) + batch + (p.z_dim,))
    h = dc.const(np.zeros(batch + (p.hidden_dim,)))
    y_prev = dc.const(np.zeros(y_seq.shape[1:]))
    z = dc.const(np.zeros(batch + (p.z_dim,)))
    out = Rollout([], [], [], [], [])
    for t in range(T):
        h = hidden_update(p, h, y_prev, z)
        y_t = dc.const(y_seq[t])
        post = encode(p, y_t, h)
        z = reparam_sample(post, eps_seq[t])
        phi = project(p, h, z)
        out.phi.append(phi)
        out.decoded.append(head_forward(p.head, phi))
        out.kl.append(kl_gaussian(post, prior(p, h)))
        out.h.append(h)
        out.z.append(z)
        y_prev = y_t
    return out


# ---------------------------------------------------------------- fused route

_SCAN_KEYS = tuple(f"teacher.gru.{k}" for k in ("Wz", "Wr", "Wh", "Uz", "Ur", "Uh", "bz", "br", "bh")) + (
    "teacher.enc.0.W", "teacher.enc.0.b",
    "teacher.enc.out.mean.W", "teacher.enc.out.mean.b",
    "teacher.enc.out.logvar.W", "teacher.enc.out.logvar.b",
)


def recurrence(P: Mapping[str, Node], y, eps, kernels=None) -> Node:
    """Fused GRU + inference network + reparameterization over a window.

    Parameters
    ----------
    P : mapping of name -> Node
        Bound parameters (only the GRU and encoder entries are read).
    y, eps : ndarray, shape (T, B, dy) and (T, B, dz)
    kernels : module, optional
        Kernel backend; defaults to the one selected at import.

    Returns
    -------
    Node of shape (T*B, H + 3*dz), rows time-major, columns
    ``[h | z | posterior mean | posterior logvar]``.
    """
    k = kernels or _backend.kernels
    y = np.ascontiguousarray(y, dtype=np.float64)
    eps = np.ascontiguousarray(eps, dtype=np.float64)
    nodes = [P[name] for name in _SCAN_KEYS]
    vals = [np.ascontiguousarray(n.value) for n in nodes]
    H, nx = vals[0].shape
    if y.ndim != 3 or eps.ndim != 3 or nx != y.shape[2] + eps.shape[2] or eps.shape[:2] != y.shape[:2]:
        raise ShapeError("recurrence", y.shape, eps.shape, vals[0].shape)
    if vals[9].shape[1] != y.shape[2] + H:
        raise ShapeError("recurrence", vals[9].shape, detail="encoder input must be [y; h]")
    T, B = y.shape[:2]
    out, cache = k.scan_forward(y, eps, *vals, LOGVAR_MIN, LOGVAR_MAX)

    def bw(g):
        g = np.ascontiguousarray(g.reshape(out.shape))
        return k.scan_backward(g, y, eps, *vals, LOGVAR_MIN, LOGVAR_MAX, out, cache)

    return dc.custom(out.reshape(T * B, -1), nodes, bw, "recurrence")


@dataclass
class TeacherOutputs:
    """Batched teacher quantities, rows ordered time-major (t * B + b)."""

    h: Node
    z: Node
    posterior: GaussianParams
    prior: GaussianParams
    phi: Node
    decoded: GaussianParams
    kl: Node  # summed over rows and latent dims


def teacher_forward(P: Mapping[str, Node], y, eps, head: GaussianHead = None,
                    kernels=None) -> TeacherOutputs:
    """Teacher pass over windows ``y`` of shape (T, B, dy) via the fused kernel."""
    p = teacher_from(P, head)
    H, dz = p.hidden_dim, p.z_dim
    rec = recurrence(P, y, eps, kernels)
    h = dc.slice_(rec, (slice(None), slice(0, H)))
    z = dc.slice_(rec, (slice(None), slice(H, H + dz)))
    post = GaussianParams(dc.slice_(rec, (slice(None), slice(H + dz, H + 2 * dz))),
                          dc.slice_(rec, (slice(None), slice(H + 2 * dz, H + 3 * dz))))
    pri = prior(p, h)
    phi = project(p, h, z)
    return TeacherOutputs(h, z, post, pri, phi, head_forward(p.head, phi), kl_gaussian(post, pri))


def teacher_representation(P: Mapping[str, np.ndarray], y, eps=None) -> np.ndarray:
    """Teacher representation for one long sequence ``y`` (T, dy); ``eps=None`` uses posterior means."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    dz = P["teacher.enc.out.mean.W"].shape[0]
    if eps is None:
        eps = np.zeros((y.shape[0], 1, dz))
    nodes = {k: dc.const(v) for k, v in P.items()}
    out = teacher_forward(nodes, y[:, None, :], np.asarray(eps).reshape(y.shape[0], 1, dz))
    return out.phi.value
