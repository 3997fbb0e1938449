"""Finite-difference verification of every loss the trainers differentiate.

Builds small random networks and batches, freezes the stochastic inputs
(bootstrap targets, reparameterization noise), and compares reverse-mode
gradients against central differences coordinate by coordinate.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .nn import GradCheckReport, grad_check
from .pearl import PearlConfig, encode_posterior_t
from .sac import SacConfig, actor_loss, bellman_target, critic_loss, init_params


def _small_problem(seed: int):
    cfg = SacConfig(hidden_dims=(8, 8), batch_size=5, obs_scale=1.0,
                    act_scale=1.0, max_action=0.5)
    pcfg = PearlConfig(latent_dim=3, kl_weight=1.0, sac=cfg)
    rng = np.random.default_rng(seed)
    store = init_params(cfg, pcfg.latent_dim, seed)
    n = cfg.batch_size
    batch = {
        "s": rng.normal(scale=0.5, size=(n, 3)),
        "a": cfg.max_action * np.tanh(rng.normal(size=(n, 3))),
        "r_dense": rng.normal(size=n),
        "r_sparse": rng.integers(0, 2, size=n).astype(float),
        "s_next": rng.normal(scale=0.5, size=(n, 3)),
        "done": rng.integers(0, 2, size=n).astype(float),
    }
    rows = rng.normal(scale=0.5, size=(6, 10))
    z_noise = rng.standard_normal(pcfg.latent_dim)
    a_noise = rng.standard_normal((n, 3))
    return cfg, pcfg, store, batch, rows, z_noise, a_noise


def run_gradient_checks(seed: int = 0, eps: float = 1e-5,
                        max_coords_per_param: int = 8) -> dict[str, GradCheckReport]:
    """Check the actor, critic, encoder-routed and KL losses on one instance."""
    cfg, pcfg, store, batch, rows, z_noise, a_noise = _small_problem(seed)
    rng = np.random.default_rng(seed + 1)
    probe_rng = np.random.default_rng(seed + 2)

    # The bootstrap target is constant w.r.t. differentiation by contract, so
    # freeze it once from the unperturbed parameters.
    z0, _ = encode_posterior_t_probe(store, pcfg, rows, z_noise)
    y = bellman_target(store, batch, z0, cfg, np.random.default_rng(seed + 3),
                       "dense", pcfg.latent_dim)

    def critic_fn(gp):
        z_t, _ = encode_posterior_t(gp, pcfg, rows, z_noise)
        return critic_loss(gp, batch, z_t, cfg, rng, "dense", pcfg.latent_dim,
                           target=y)

    def encoder_kl_fn(gp):
        z_t, kl_t = encode_posterior_t(gp, pcfg, rows, z_noise)
        return ad.add(critic_loss(gp, batch, z_t, cfg, rng, "dense",
                                  pcfg.latent_dim, target=y), kl_t)

    def kl_fn(gp):
        _, kl_t = encode_posterior_t(gp, pcfg, rows, z_noise)
        return kl_t

    def actor_fn(gp):
        return actor_loss(gp, batch, z0, cfg, rng, pcfg.latent_dim, noise=a_noise)

    return {
        "critic": grad_check(store, critic_fn, probe_rng, eps=eps,
                             max_coords_per_param=max_coords_per_param),
        "encoder_kl": grad_check(store, encoder_kl_fn, probe_rng, eps=eps,
                                 max_coords_per_param=max_coords_per_param),
        "kl": grad_check(store, kl_fn, probe_rng, eps=eps,
                         max_coords_per_param=max_coords_per_param,
                         prefix="encoder"),
        "actor": grad_check(store, actor_fn, probe_rng, eps=eps,
                            max_coords_per_param=max_coords_per_param),
    }


def encode_posterior_t_probe(store, pcfg, rows, noise) -> tuple[np.ndarray, float]:
    """Latent sample and KL value without keeping a graph."""
    from .nn import GraphParams

    z_t, kl_t = encode_posterior_t(GraphParams(store), pcfg, rows, noise)
    return z_t.value[0].copy(), float(kl_t.value)
