"""Functional-output surrogate: PCA compression plus one Kriging model per latent variable."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fields import Field, Mesh
from .gp import GpModel, build_path_sampler, gp_fit, sample_conditioned_paths
from .ioutil import read_block_header, read_f64, write_block_header, write_f64
from .pca import PcaModel, _read_pca_block, _write_pca_block, pca_fit_matrix, pca_project_matrix, pca_reconstruct_matrix
from .probinput import SampleSet

_MAGIC = b"EXCSUR1\x00"
_KIND_CODES = {"squared-exponential": 0, "matern-5/2": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


@dataclass(frozen=True)
class SurrogateConfig:
    kernel_kind: str = "squared-exponential"
    nugget: float = 1e-8
    restarts: int = 20
    ric_threshold: float = 0.999
    kl_energy: float = 0.99
    max_anchors: int = 512


@dataclass(frozen=True)
class FunctionalSurrogate:
    pca: PcaModel
    gps: tuple
    config: SurrogateConfig
    train_inputs: SampleSet

    @property
    def d_z(self) -> int:
        return self.pca.d_z

    @property
    def mesh(self) -> Mesh:
        return self.pca.mesh

    @property
    def n_train(self) -> int:
        return len(self.train_inputs)


@dataclass(frozen=True)
class RealizationBundle:
    """Joint GP path draws in latent space at a fixed point set.

    Full-field realizations are reconstructed lazily, one realization at a
    time, to keep memory proportional to the latent representation.
    """

    latent: np.ndarray        # (n_rea, n_points, d_z)
    point_set: SampleSet
    pca: PcaModel

    @property
    def n_rea(self) -> int:
        return self.latent.shape[0]

    @property
    def n_points(self) -> int:
        return self.latent.shape[1]

    def fields_of(self, j: int) -> np.ndarray:
        """Reconstructed fields (n_points, n_x) of realization ``j``."""
        return pca_reconstruct_matrix(self.pca, self.latent[j])


def surrogate_train(inputs, outputs, config: SurrogateConfig = SurrogateConfig(),
                    seed=0, mesh: Mesh | None = None) -> FunctionalSurrogate:
    """Fit PCA on the output snapshots then one GP per latent coordinate.

    ``outputs`` may be a list of :class:`Field` or an (n, n_x) matrix with an
    explicit mesh.  Each latent GP gets an independent seed stream.
    """
    if isinstance(inputs, SampleSet):
        sample_set = inputs
    else:
        sample_set = SampleSet(np.atleast_2d(np.asarray(inputs, dtype=float)), provenance="active")
    if isinstance(outputs, np.ndarray):
        if mesh is None:
            raise ValueError("mesh is required with raw output matrices")
        Y = np.atleast_2d(outputs)
    else:
        outputs = list(outputs)
        mesh = outputs[0].mesh
        Y = np.stack([f.values for f in outputs])
    if len(sample_set) != Y.shape[0]:
        raise ValueError("inputs/outputs count mismatch")
    if len(sample_set) < 2:
        raise ValueError("need at least two training samples")

    pca = pca_fit_matrix(mesh, Y, config.ric_threshold)
    latents = pca_project_matrix(pca, Y)  # (n, d_z)
    seeds = _as_seed_seq(seed).spawn(pca.d_z)
    gps = tuple(
        gp_fit(sample_set.points, latents[:, j], kernel_kind=config.kernel_kind,
               nugget=config.nugget, restarts=config.restarts, seed=seeds[j])
        for j in range(pca.d_z)
    )
    return FunctionalSurrogate(pca, gps, config, sample_set)


def _as_seed_seq(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def predict_latent(s: FunctionalSurrogate, points) -> np.ndarray:
    """Posterior-mean latent coordinates at each point (n, d_z)."""
    if isinstance(points, SampleSet):
        points = points.points
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty((pts.shape[0], s.d_z))
    for j, gp in enumerate(s.gps):
        mean, _ = _predict_mean_only(gp, pts)
        out[:, j] = mean
    return out


def _predict_mean_only(gp: GpModel, pts):
    K_star = gp.kernel(pts, gp.train_inputs)
    return gp.mean_const + K_star @ gp.alpha_vector, None


def predict_field(s: FunctionalSurrogate, u) -> Field:
    """Surrogate field prediction: reconstruct the latent posterior means."""
    z = predict_latent(s, np.atleast_2d(np.asarray(u, dtype=float)))[0]
    return Field(s.mesh, s.pca.basis.T @ z + s.pca.mean_field)


def realize_fields(s: FunctionalSurrogate, points, n_rea: int, seed=0) -> RealizationBundle:
    """Draw joint GP realizations at ``points`` for every latent dimension.

    Latent dimensions are sampled independently (one sampler and one seed
    stream per dimension), matching the per-latent model structure.
    """
    if not isinstance(points, SampleSet):
        points = SampleSet(np.atleast_2d(np.asarray(points, dtype=float)), provenance="monte-carlo")
    if n_rea < 1:
        raise ValueError("n_rea must be >= 1")
    ss = _as_seed_seq(seed).spawn(2 * s.d_z)
    latent = np.empty((n_rea, len(points), s.d_z))
    for j, gp in enumerate(s.gps):
        sampler = build_path_sampler(gp, points, energy=s.config.kl_energy,
                                     seed=ss[2 * j], max_anchors=s.config.max_anchors)
        latent[:, :, j] = sample_conditioned_paths(sampler, points, n_rea, seed=ss[2 * j + 1])
    return RealizationBundle(latent, points, s.pca)


# ---------------------------------------------------------------------------
# Serialization (binary bundle: PCA block followed by one block per GP)


def save_surrogate(s: FunctionalSurrogate, path) -> None:
    with Path(path).open("wb") as fh:
        write_block_header(fh, _MAGIC, [1, s.d_z, len(s.train_inputs), s.train_inputs.dim])
        write_f64(fh, [s.config.nugget, s.config.ric_threshold, s.config.kl_energy])
        fh.write(struct.pack("<q", _KIND_CODES[s.config.kernel_kind]))
        fh.write(struct.pack("<q", s.config.restarts))
        fh.write(struct.pack("<q", s.config.max_anchors))
        write_f64(fh, s.train_inputs.points)
        _write_pca_block(fh, s.pca)
        for gp in s.gps:
            fh.write(struct.pack("<q", _KIND_CODES[gp.kernel.kind]))
            write_f64(fh, [gp.kernel.variance, gp.nugget, gp.mean_const, gp.log_marginal_likelihood])
            write_f64(fh, gp.kernel.lengthscales)
            write_f64(fh, gp.train_outputs)


def load_surrogate(path, mesh: Mesh) -> FunctionalSurrogate:
    from .gp import _build_model  # deterministic rebuild of the factorizations

    with Path(path).open("rb") as fh:
        version, d_z, n, d = read_block_header(fh, _MAGIC)
        if version != 1:
            raise ValueError(f"unsupported surrogate bundle version {version}")
        nugget, ric, kl_energy = read_f64(fh, 3)
        kind = _KIND_NAMES[struct.unpack("<q", fh.read(8))[0]]
        restarts = struct.unpack("<q", fh.read(8))[0]
        max_anchors = struct.unpack("<q", fh.read(8))[0]
        X = read_f64(fh, n * d, (n, d))
        pca = _read_pca_block(fh, mesh)
        gps = []
        for _ in range(d_z):
            gp_kind = _KIND_NAMES[struct.unpack("<q", fh.read(8))[0]]
            variance, gp_nugget, mu, lml = read_f64(fh, 4)
            ls = read_f64(fh, d)
            z = read_f64(fh, n)
            model = _build_model(X, z, gp_kind, ls, gp_nugget)
            gps.append(model)
    config = SurrogateConfig(kind, float(nugget), int(restarts), float(ric), float(kl_energy), int(max_anchors))
    return FunctionalSurrogate(pca, tuple(gps), config, SampleSet(X, provenance="active"))
