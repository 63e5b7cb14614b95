"""Conditional VAE on vector observations, structured like the summarization SCM.

Used by the identifiability experiment: each observation has its own decoder
reading only its parent latent blocks, the prior over latents is a Gaussian
whose mean and log-variance are looked up per confounder value, and the
encoder sees every observation plus the one-hot confounder.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted
from torch import nn

from .scm_synth import BLOCKS, OBSERVATIONS
from .training import kl_diag_gaussians


def _mlp(d_in, d_out, hidden, depth=2):
    layers, d = [], d_in
    for _ in range(depth):
        layers += [nn.Linear(d, hidden), nn.LeakyReLU(0.2)]
        d = hidden
    layers.append(nn.Linear(d, d_out))
    return nn.Sequential(*layers)


class _StructuredVAE(nn.Module):
    def __init__(self, latent_dims: dict, obs_dims: dict, k_u: int, hidden: int, obs_var: float | None = None):
        super().__init__()
        self.latent_dims = latent_dims
        self.obs_dims = obs_dims
        self.k_u = k_u
        d_lat = sum(latent_dims[b] for b in BLOCKS)
        d_obs = sum(obs_dims[o] for o in OBSERVATIONS)
        self.encoder = _mlp(d_obs + k_u, 2 * d_lat, 2 * hidden)
        self.decoders = nn.ModuleDict({
            o: _mlp(sum(latent_dims[p] for p in parents), obs_dims[o], hidden)
            for o, parents in OBSERVATIONS.items()
        })
        self.prior_mean = nn.Embedding(k_u, d_lat)
        self.prior_logvar = nn.Embedding(k_u, d_lat)
        nn.init.normal_(self.prior_mean.weight, std=1.0)
        nn.init.zeros_(self.prior_logvar.weight)
        # a learnable noise level tends to stall at large values early on, so it is fixed by default
        init = 0.0 if obs_var is None else float(np.log(obs_var))
        self.obs_logvar = nn.ParameterDict({
            o: nn.Parameter(torch.full((obs_dims[o],), init), requires_grad=obs_var is None) for o in OBSERVATIONS
        })

    def split(self, z):
        out, i = {}, 0
        for b in BLOCKS:
            out[b] = z[:, i: i + self.latent_dims[b]]
            i += self.latent_dims[b]
        return out

    def posterior(self, obs, u):
        h = self.encoder(torch.cat([obs, nn.functional.one_hot(u, self.k_u).to(obs.dtype)], dim=1))
        mu, logvar = h.chunk(2, dim=1)
        return mu, logvar.clamp(-12.0, 8.0)

    def neg_elbo(self, obs_blocks: dict, obs, u, generator=None):
        mu, logvar = self.posterior(obs, u)
        eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
        z = self.split(mu + torch.exp(0.5 * logvar) * eps)
        nll = 0.0
        for o, parents in OBSERVATIONS.items():
            pred = self.decoders[o](torch.cat([z[p] for p in parents], dim=1))
            lv = self.obs_logvar[o]
            nll = nll + 0.5 * (((obs_blocks[o] - pred) ** 2) / torch.exp(lv) + lv).sum(dim=1)
        kl = kl_diag_gaussians(mu, logvar, self.prior_mean(u), self.prior_logvar(u)).sum(dim=1)
        return (nll + kl).mean()


class ConditionalVAE(BaseEstimator, TransformerMixin):
    """Identifiable VAE with a confounder-conditioned Gaussian prior.

    ``fit(X, u)`` takes the observation matrix with columns ordered
    ``x, y, o_ct, o_st`` and the integer confounder labels. ``transform``
    returns posterior means, blocks ordered ``cc, sc, ds, ss``. Observations
    are standardized per column and ``obs_var`` is the decoder noise variance
    in those units (``None`` learns it).
    """

    def __init__(self, latent_dims=(4, 4, 4, 4), hidden=64, n_steps=8000, batch_size=256, lr=1e-3,
                 obs_var=0.01, n_restarts=1, seed=0, k_u=None):
        self.latent_dims = latent_dims
        self.n_restarts = n_restarts
        self.obs_var = obs_var
        self.hidden = hidden
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.k_u = k_u

    def _dims(self):
        lat = dict(zip(BLOCKS, self.latent_dims))
        obs = {o: sum(lat[p] for p in parents) for o, parents in OBSERVATIONS.items()}
        return lat, obs

    def _split_obs(self, X):
        _, obs_dims = self._dims()
        out, i = {}, 0
        for o in OBSERVATIONS:
            out[o] = X[:, i: i + obs_dims[o]]
            i += obs_dims[o]
        return out

    def _check_X(self, X, u):
        X = np.asarray(X, dtype=np.float64)
        u = np.asarray(u)
        _, obs_dims = self._dims()
        if X.ndim != 2 or X.shape[1] != sum(obs_dims.values()):
            raise ValueError(f"X must be 2-D with {sum(obs_dims.values())} columns, got shape {X.shape}")
        if u.shape != (X.shape[0],):
            raise ValueError("u must have one label per row of X")
        if not np.issubdtype(u.dtype, np.integer) or u.min() < 0:
            raise ValueError("u must hold non-negative integer labels")
        return X, u.astype(np.int64)

    def _fit_once(self, Xt, ut, k_u, seed):
        lat, obs = self._dims()
        torch.manual_seed(seed)
        net = _StructuredVAE(lat, obs, k_u, self.hidden, self.obs_var).double()
        opt = torch.optim.Adam([q for q in net.parameters() if q.requires_grad], lr=self.lr)
        gen = torch.Generator().manual_seed(seed)
        rng = np.random.default_rng(seed)
        n = Xt.shape[0]
        curve = []
        perm, pos = rng.permutation(n), 0
        for _ in range(self.n_steps):
            if pos + self.batch_size > n:
                perm, pos = rng.permutation(n), 0
            idx = torch.as_tensor(perm[pos: pos + self.batch_size])
            pos += self.batch_size
            xb = Xt[idx]
            loss = net.neg_elbo(self._split_obs(xb), xb, ut[idx], gen)
            opt.zero_grad()
            loss.backward()
            opt.step()
            curve.append(float(loss.detach()))
        with torch.no_grad():
            final = float(net.neg_elbo(self._split_obs(Xt), Xt, ut, torch.Generator().manual_seed(seed)))
        return net.eval(), curve, final

    def fit(self, X, u):
        X, u = self._check_X(X, u)
        k_u = self.k_u or int(u.max()) + 1
        self.center_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0) + 1e-12
        Xt = torch.as_tensor((X - self.center_) / self.scale_)
        ut = torch.as_tensor(u)
        # restarts are ranked by the full-data ELBO only; the true latents are never consulted
        runs = [self._fit_once(Xt, ut, k_u, self.seed * 1000 + r) for r in range(self.n_restarts)]
        self.restart_losses_ = [r[2] for r in runs]
        best = int(np.argmin(self.restart_losses_))
        self.net_, self.loss_curve_, _ = runs[best]
        self.best_restart_ = best
        self.k_u_ = k_u
        return self

    def transform_blocks(self, X, u) -> dict:
        check_is_fitted(self, "net_")
        X, u = self._check_X(X, u)
        if u.max() >= self.k_u_:
            raise ValueError(f"u label {u.max()} unseen during fit (k_u={self.k_u_})")
        with torch.no_grad():
            mu, _ = self.net_.posterior(torch.as_tensor((X - self.center_) / self.scale_), torch.as_tensor(u))
        return {b: v.numpy() for b, v in self.net_.split(mu).items()}

    def transform(self, X, u):
        blocks = self.transform_blocks(X, u)
        return np.concatenate([blocks[b] for b in BLOCKS], axis=1)

    def fit_transform(self, X, u):
        return self.fit(X, u).transform(X, u)
