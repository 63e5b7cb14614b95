"""Synthetic data from the summarization SCM and numerical identifiability checks.

Latent blocks ``cc`` (core content), ``sc`` (side content), ``ds`` (document
style) and ``ss`` (summary style) are conditionally Gaussian given the
confounder ``u``, i.e. an exponential family with sufficient statistics
``T(l) = (l, l^2)`` and natural parameters ``(mu / var, -1 / (2 var))``.
Observations follow additive-noise models through invertible mixing maps::

    x    = f_x(l_sc, l_cc, l_ds) + eps
    y    = f_y(l_ss, l_cc) + eps
    o_ct = f_oct(l_cc) + eps
    o_st = f_ost(l_sc) + eps
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

BLOCKS = ("cc", "sc", "ds", "ss")
OBSERVATIONS = {
    "x": ("sc", "cc", "ds"),
    "y": ("ss", "cc"),
    "o_ct": ("cc",),
    "o_st": ("sc",),
}


def leaky_softplus(z, slope):
    """slope * z + (1 - slope) * softplus(z); smooth, strictly increasing for slope in (0, 1]."""
    return slope * z + (1.0 - slope) * np.logaddexp(0.0, z)


def leaky_softplus_inverse(y, slope, tol=1e-14, max_iter=100):
    # the map is convex and increasing, so Newton from a point with g(z) >= y decreases monotonically
    z = np.maximum(y, y / slope)
    for _ in range(max_iter):
        gz = leaky_softplus(z, slope)
        step = (gz - y) / (slope + (1.0 - slope) / (1.0 + np.exp(-z)))
        z = z - step
        if np.max(np.abs(step), initial=0.0) < tol:
            break
    return z


@dataclass
class MixingMap:
    """f(l) = A @ g(l) + b with g an elementwise leaky softplus."""

    A: np.ndarray
    b: np.ndarray
    slope: float

    def __call__(self, latents: np.ndarray) -> np.ndarray:
        return leaky_softplus(latents, self.slope) @ self.A.T + self.b

    def inverse(self, obs: np.ndarray) -> np.ndarray:
        pre = np.linalg.solve(self.A, (obs - self.b).T).T
        return leaky_softplus_inverse(pre, self.slope)

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.A))


@dataclass
class SCMParams:
    dims: dict
    k_u: int
    means: dict            # block -> (k_u, d)
    variances: dict        # block -> (k_u, d)
    maps: dict             # observation -> MixingMap
    noise: dict            # observation -> sigma
    seed: int
    family: str = "gaussian"

    def natural_parameters(self, block: str) -> np.ndarray:
        """(k_u, d, 2) array of (mu / var, -1 / (2 var))."""
        mu, var = self.means[block], self.variances[block]
        return np.stack([mu / var, -0.5 / var], axis=-1)

    def lambda_table(self, blocks=BLOCKS) -> np.ndarray:
        """One row per confounder value, every block's natural parameters concatenated."""
        return np.concatenate([self.natural_parameters(b).reshape(self.k_u, -1) for b in blocks], axis=1)

    def obs_dim(self, obs: str) -> int:
        return sum(self.dims[b] for b in OBSERVATIONS[obs])

    def to_manifest(self) -> dict:
        return {"dims": self.dims, "k_u": self.k_u, "seed": self.seed, "family": self.family,
                "noise": self.noise}


def _random_affine(rng, d, sv_range=(1.0, 3.0)):
    q1, _ = np.linalg.qr(rng.normal(size=(d, d)))
    q2, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return q1 @ np.diag(rng.uniform(*sv_range, size=d)) @ q2.T, rng.normal(scale=0.5, size=d)


def sample_scm(dims: dict | None = None, k_u: int = 5, family: str = "gaussian", seed: int = 0,
               noise: float = 0.05, mean_range: float = 2.0, log_std_range=(-1.2, 0.7),
               slope: float = 0.2) -> SCMParams:
    """Draw a random SCM: per-confounder Gaussian latent parameters and invertible mixing maps."""
    if family != "gaussian":
        raise ValueError(f"unsupported family {family!r}; only 'gaussian' is implemented")
    dims = dict(dims or {b: 4 for b in BLOCKS})
    if set(dims) != set(BLOCKS) or min(dims.values()) < 1:
        raise ValueError(f"dims must give a positive size for each of {BLOCKS}")
    if k_u < 1:
        raise ValueError("k_u must be >= 1")
    rng = np.random.default_rng(seed)
    means, variances = {}, {}
    for b in BLOCKS:
        means[b] = rng.uniform(-mean_range, mean_range, size=(k_u, dims[b]))
        variances[b] = np.exp(2 * rng.uniform(*log_std_range, size=(k_u, dims[b])))
    maps = {}
    for obs, parents in OBSERVATIONS.items():
        d = sum(dims[p] for p in parents)
        A, bias = _random_affine(rng, d)
        maps[obs] = MixingMap(A, bias, slope)
    return SCMParams(dims, k_u, means, variances, maps, {o: float(noise) for o in OBSERVATIONS}, seed, family)


@dataclass
class VarietyCheck:
    rank: int
    n_columns: int
    passed: bool
    singular_values: np.ndarray
    per_block: dict = field(default_factory=dict)


def variety_matrix(lambdas: np.ndarray, base: int = 0) -> np.ndarray:
    """Columns are lambda(u_q) - lambda(u_base) for every q != base."""
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if lambdas.ndim != 2:
        raise ValueError("lambdas must be (n_confounder_values, n_natural_parameters)")
    others = [q for q in range(lambdas.shape[0]) if q != base]
    return (lambdas[others] - lambdas[base]).T


def _rank_check(L: np.ndarray, rtol: float) -> tuple[int, np.ndarray]:
    if L.size == 0:
        return 0, np.zeros(0)
    sv = np.linalg.svd(L, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0, sv
    return int(np.sum(sv > rtol * sv[0])), sv


def check_variety(params, base: int = 0, rtol: float = 1e-10) -> VarietyCheck:
    """Full-column-rank test of the natural-parameter difference matrix.

    ``params`` is an :class:`SCMParams` or a raw ``(k_u, p)`` table of natural
    parameters. With a single confounder value the matrix has no columns and
    the check fails.
    """
    table = params.lambda_table() if isinstance(params, SCMParams) else np.asarray(params, dtype=np.float64)
    L = variety_matrix(table, base)
    rank, sv = _rank_check(L, rtol)
    n_cols = L.shape[1]
    per_block = {}
    if isinstance(params, SCMParams):
        for b in BLOCKS:
            Lb = variety_matrix(params.natural_parameters(b).reshape(params.k_u, -1), base)
            rb, _ = _rank_check(Lb, rtol)
            per_block[b] = {"rank": rb, "n_columns": Lb.shape[1], "passed": Lb.shape[1] > 0 and rb == Lb.shape[1]}
    return VarietyCheck(rank, n_cols, n_cols > 0 and rank == n_cols, sv, per_block)


@dataclass
class SCMDataset:
    u: np.ndarray
    latents: dict
    observations: dict
    seed: int
    params: SCMParams | None = None

    def __len__(self):
        return self.u.shape[0]

    def observation_matrix(self) -> np.ndarray:
        return np.concatenate([self.observations[o] for o in OBSERVATIONS], axis=1)

    def latent_matrix(self) -> np.ndarray:
        return np.concatenate([self.latents[b] for b in BLOCKS], axis=1)

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        arrays = {"u": self.u}
        arrays.update({f"latent_{b}": v for b, v in self.latents.items()})
        arrays.update({f"obs_{o}": v for o, v in self.observations.items()})
        np.savez(directory / "dataset.npz", **arrays)
        manifest = {"seed": self.seed, "n": len(self)}
        if self.params is not None:
            manifest.update(self.params.to_manifest())
            manifest["variety"] = {"passed": bool(check_variety(self.params).passed)}
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return directory

    @classmethod
    def load(cls, directory) -> "SCMDataset":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        arrays = np.load(directory / "dataset.npz")
        return cls(arrays["u"], {b: arrays[f"latent_{b}"] for b in BLOCKS},
                   {o: arrays[f"obs_{o}"] for o in OBSERVATIONS}, manifest["seed"])


def generate_scm_dataset(params: SCMParams, n_per_u: int, seed: int = 0) -> SCMDataset:
    rng = np.random.default_rng(seed)
    u = np.repeat(np.arange(params.k_u), n_per_u)
    latents = {}
    for b in BLOCKS:
        mu = params.means[b][u]
        sd = np.sqrt(params.variances[b][u])
        latents[b] = mu + sd * rng.standard_normal(mu.shape)
    observations = {}
    for obs, parents in OBSERVATIONS.items():
        clean = params.maps[obs](np.concatenate([latents[p] for p in parents], axis=1))
        sigma = params.noise[obs]
        observations[obs] = clean + sigma * rng.standard_normal(clean.shape) if sigma > 0 else clean
    return SCMDataset(u, latents, observations, seed, params)


def invert_observations(params: SCMParams, dataset: SCMDataset) -> dict:
    """Latents recovered by inverting each mixing map; exact only when the noise is zero."""
    out = {}
    for obs, parents in OBSERVATIONS.items():
        z = params.maps[obs].inverse(dataset.observations[obs])
        offset = 0
        for p in parents:
            out.setdefault(obs, {})[p] = z[:, offset: offset + params.dims[p]]
            offset += params.dims[p]
    return out


@dataclass
class BlockAlignment:
    mcc: float
    correlations: np.ndarray     # |corr| between true (rows) and learned (cols)
    permutation: np.ndarray      # learned column matched to each true dimension
    A: np.ndarray                # permutation matrix: true ~ A @ learned
    v: np.ndarray                # least-squares shift after permutation


@dataclass
class IdentifiabilityReport:
    mcc: float
    blocks: dict
    variety_ok: bool | None = None
    L_rank: int | None = None
    L_columns: int | None = None

    def to_dict(self) -> dict:
        return {
            "mcc": self.mcc, "variety_ok": self.variety_ok, "L_rank": self.L_rank, "L_columns": self.L_columns,
            "blocks": {b: {"mcc": a.mcc, "permutation": a.permutation.tolist(), "shift": a.v.tolist()}
                       for b, a in self.blocks.items()},
        }


def abs_correlation(true: np.ndarray, learned: np.ndarray) -> np.ndarray:
    """|Pearson correlation| between every true and learned column; zero-variance pairs give 0."""
    t = true - true.mean(axis=0)
    l = learned - learned.mean(axis=0)
    tn = np.sqrt((t ** 2).sum(axis=0))
    ln = np.sqrt((l ** 2).sum(axis=0))
    num = t.T @ l
    den = np.outer(tn, ln)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return np.clip(np.abs(corr), 0.0, 1.0)


def align_block(true: np.ndarray, learned: np.ndarray) -> BlockAlignment:
    if true.shape != learned.shape:
        raise ValueError(f"shape mismatch: true {true.shape} vs learned {learned.shape}")
    corr = abs_correlation(true, learned)
    rows, cols = linear_sum_assignment(-corr)
    perm = cols[np.argsort(rows)]
    d = true.shape[1]
    A = np.zeros((d, d))
    A[np.arange(d), perm] = 1.0
    v = (true - learned @ A.T).mean(axis=0)
    return BlockAlignment(float(corr[np.arange(d), perm].mean()), corr, perm, A, v)


def evaluate_identifiability(learned: dict, true: dict, blocks=None, variety: VarietyCheck | None = None
                             ) -> IdentifiabilityReport:
    """Per-block permutation-aligned mean correlation coefficient.

    ``learned`` and ``true`` map block names to ``(n_samples, d)`` arrays. The
    overall MCC averages over every latent dimension.
    """
    blocks = list(blocks or true.keys())
    aligned = {}
    total, count = 0.0, 0
    for b in blocks:
        t, l = np.asarray(true[b], dtype=np.float64), np.asarray(learned[b], dtype=np.float64)
        if t.shape[0] != l.shape[0]:
            raise ValueError(f"block {b}: sample counts differ")
        aligned[b] = align_block(t, l)
        total += aligned[b].mcc * t.shape[1]
        count += t.shape[1]
    return IdentifiabilityReport(
        total / count if count else 0.0, aligned,
        None if variety is None else bool(variety.passed),
        None if variety is None else variety.rank,
        None if variety is None else variety.n_columns,
    )
