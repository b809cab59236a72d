"""PCA + diagonal GMM codebooks and Fisher-vector encoding."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import DESCRIPTOR_TYPES
from .media_io import FormatError, _check_magic, _read_exact

VAR_FLOOR = 1e-4


@dataclass
class PCA:
    mean: np.ndarray  # (D,)
    basis: np.ndarray  # (D/2, D), orthonormal rows
    eigenvalues: np.ndarray  # (D,), descending

    def project(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.basis.T

    @property
    def captured_variance(self) -> float:
        total = self.eigenvalues.sum()
        return float(self.eigenvalues[: len(self.basis)].sum() / total) if total > 0 else 0.0


def fit_pca(features: np.ndarray, n_components: int | None = None) -> PCA:
    """Top-(D/2) principal axes; each axis' largest-magnitude entry is made positive."""
    x = np.asarray(features, dtype=np.float64)
    n, d = x.shape
    if n < d:
        raise ValueError(f"PCA needs at least {d} samples, got {n}")
    k = d // 2 if n_components is None else n_components
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")
    evals, evecs = evals[order], evecs[:, order]
    basis = evecs[:, :k].T.copy()
    pivot = np.argmax(np.abs(basis), axis=1)
    basis *= np.sign(basis[np.arange(k), pivot])[:, None]
    return PCA(mean, basis, np.maximum(evals, 0.0))


@dataclass
class GMM:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    variances: np.ndarray  # (K, d)
    log_likelihoods: list = field(default_factory=list)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def log_joint(self, x: np.ndarray) -> np.ndarray:
        """(n, K) log(pi_k N(x | mu_k, diag var_k))."""
        x = np.asarray(x, dtype=np.float64)
        prec = 1.0 / self.variances
        quad = (x * x) @ prec.T - 2.0 * x @ (self.means * prec).T + np.sum(self.means ** 2 * prec, axis=1)
        log_det = np.sum(np.log(self.variances), axis=1)
        d = x.shape[1]
        return np.log(self.weights) - 0.5 * (d * np.log(2 * np.pi) + log_det + quad)

    def posteriors(self, x: np.ndarray) -> np.ndarray:
        lj = self.log_joint(x)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def log_likelihood(self, x: np.ndarray) -> float:
        return float(logsumexp(self.log_joint(x), axis=1).sum())


def kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        i = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(x[i])
        d2 = np.minimum(d2, np.sum((x - x[i]) ** 2, axis=1))
    return np.array(centers)


def fit_gmm(x: np.ndarray, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-5,
            var_floor: float = VAR_FLOOR) -> GMM:
    """Diagonal-covariance EM from a k-means++ start.

    Stops after ``max_iter`` iterations or when the relative change of the
    log-likelihood drops below ``tol``.  ``log_likelihoods`` records the value
    before every M-step.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if n < 10 * k:
        raise ValueError(f"GMM with {k} components needs at least {10 * k} samples, got {n}")
    var0 = np.maximum(x.var(axis=0), var_floor)
    if k == 1:
        # EM's fixed point is reached in one step; skip the matmul round-off
        gmm = GMM(np.ones(1), x.mean(axis=0)[None, :], var0[None, :])
        gmm.log_likelihoods.append(float(gmm.log_joint(x).sum()))
        return gmm
    rng = np.random.default_rng(seed)
    gmm = GMM(np.full(k, 1.0 / k), kmeans_pp(x, k, rng), np.tile(var0, (k, 1)))
    x2 = x * x
    prev = None
    for _ in range(max_iter):
        lj = gmm.log_joint(x)
        norm = logsumexp(lj, axis=1, keepdims=True)
        ll = float(norm.sum())
        gmm.log_likelihoods.append(ll)
        if prev is not None and abs(ll - prev) <= tol * abs(prev):
            break
        prev = ll
        resp = np.exp(lj - norm)
        nk = resp.sum(axis=0)
        live = nk > 1e-10
        means = gmm.means.copy()
        variances = gmm.variances.copy()
        means[live] = (resp.T @ x)[live] / nk[live, None]
        ex2 = (resp.T @ x2)[live] / nk[live, None]
        variances[live] = np.maximum(ex2 - means[live] ** 2, var_floor)
        weights = np.where(live, nk, 0.0) / n
        weights = np.maximum(weights, 1e-300)
        gmm = GMM(weights / weights.sum(), means, variances, gmm.log_likelihoods)
    return gmm


def fisher_vector(x: np.ndarray, gmm: GMM, power: bool = False, normalize: bool = True) -> np.ndarray:
    """Mean and variance gradients of the GMM log-likelihood, averaged over ``x``.

    Layout: K*d mean-gradient entries followed by K*d variance-gradient entries.
    """
    k, d = gmm.means.shape
    x = np.asarray(x, dtype=np.float64).reshape(-1, d)
    if len(x) == 0:
        return np.zeros(2 * k * d)
    n = len(x)
    q = gmm.posteriors(x)
    nk = q.sum(axis=0)[:, None]
    sx = q.T @ x
    sxx = q.T @ (x * x)
    sd = np.sqrt(gmm.variances)
    mu = gmm.means
    g_mu = (sx - nk * mu) / sd / (n * np.sqrt(gmm.weights)[:, None])
    g_sig = ((sxx - 2 * mu * sx + nk * mu * mu) / gmm.variances - nk) / (n * np.sqrt(2 * gmm.weights)[:, None])
    fv = np.concatenate([g_mu.ravel(), g_sig.ravel()])
    if power:
        fv = np.sign(fv) * np.sqrt(np.abs(fv))
    if normalize:
        nrm = np.linalg.norm(fv)
        fv = fv / nrm if nrm > 0 else fv
    return fv


@dataclass
class Codebook:
    descriptor_type: str
    pca: PCA
    gmm: GMM

    @property
    def fv_dim(self) -> int:
        return 2 * self.gmm.means.size

    def encode(self, features: np.ndarray, power: bool = False) -> np.ndarray:
        return fisher_encode(features, self, power)


def fit_codebook(descriptor_type: str, features: np.ndarray, k: int, seed: int = 0,
                 sample_size: int = 256_000, **gmm_kw) -> Codebook:
    """PCA and GMM on a seeded subsample (without replacement) of ``features``."""
    features = np.asarray(features)
    rng = np.random.default_rng(seed)
    if len(features) > sample_size:
        idx = np.sort(rng.choice(len(features), sample_size, replace=False))
        features = features[idx]
    pca = fit_pca(features)
    gmm = fit_gmm(pca.project(features), k, seed, **gmm_kw)
    return Codebook(descriptor_type, pca, gmm)


def fisher_encode(features: np.ndarray, codebook: Codebook, power: bool = False) -> np.ndarray:
    """Per-type Fisher vector of one video's raw descriptors (all-zero if none)."""
    features = np.asarray(features, dtype=np.float64)
    if len(features) == 0:
        return np.zeros(codebook.fv_dim)
    return fisher_vector(codebook.pca.project(features), codebook.gmm, power)


def concatenate(blocks: dict) -> np.ndarray:
    """Join per-type vectors in the fixed order shape, hog, hof, mbhx, mbhy."""
    missing = [t for t in DESCRIPTOR_TYPES if t not in blocks]
    if missing:
        raise KeyError(f"missing descriptor types: {', '.join(missing)}")
    return np.concatenate([np.asarray(blocks[t], dtype=np.float64) for t in DESCRIPTOR_TYPES])


# CBK1 files -------------------------------------------------------------------

def write_codebook(path, cb: Codebook) -> None:
    tag = cb.descriptor_type.encode("ascii")
    d_in = cb.pca.mean.size
    d_out, k = cb.pca.basis.shape[0], cb.gmm.n_components
    with open(path, "wb") as fh:
        fh.write(b"CBK1" + struct.pack("<I", len(tag)) + tag + struct.pack("<III", d_in, d_out, k))
        for arr in (cb.pca.mean, cb.pca.basis, cb.gmm.weights, cb.gmm.means, cb.gmm.variances):
            fh.write(np.asarray(arr, dtype="<f4").tobytes())


def read_codebook(path) -> Codebook:
    with open(path, "rb") as fh:
        _check_magic(fh, b"CBK1", "codebook")
        (n,) = struct.unpack("<I", _read_exact(fh, 4, "codebook"))
        try:
            tag = _read_exact(fh, n, "codebook").decode("ascii")
        except UnicodeDecodeError:
            raise FormatError("codebook tag is not ASCII") from None
        d_in, d_out, k = struct.unpack("<III", _read_exact(fh, 12, "codebook"))

        def arr(count, shape):
            raw = _read_exact(fh, 4 * count, "codebook")
            return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)

        mean = arr(d_in, (d_in,))
        basis = arr(d_out * d_in, (d_out, d_in))
        weights = arr(k, (k,))
        means = arr(k * d_out, (k, d_out))
        variances = arr(k * d_out, (k, d_out))
    return Codebook(tag, PCA(mean, basis, np.zeros(d_in)), GMM(weights, means, variances))
