"""Dissipative interacting diffusions on a configuration, and their truncations.

Each site x carries a real spin driven by

    d xi_x = [ V(xi_x) + sum_{y in B_x} a(x-y) xi_y ] dt + Psi_x dW_x,

with a one-particle potential V that is dissipative (one-sided Lipschitz), a
bounded interaction kernel a supported on the interaction radius, and a
diffusion coefficient Psi_x = sigma0 + sigma1 q + sigma2 n_x sum_{B_x} z_y.
Only finite truncations are simulated: sites outside the active set stay
frozen at their initial value, which is exactly the finite-volume system the
convergence diagnostics compare across.

Noise is organized as one independent stream per (path, site), derived from
the run seed with a counter-based generator.  Two runs with the same seed
therefore share Wiener increments sitewise no matter which truncation set is
active and no matter how work is scheduled -- the coupling the finite-volume
diagnostics rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import Configuration
from .spaces import WeightedSeq

__all__ = [
    "Potential",
    "InteractionKernel",
    "ModelSpec",
    "make_model",
    "drift",
    "diffusion",
    "interaction_matrix",
    "adjacency_matrix",
    "a_tilde",
    "check_dissipativity",
    "DissipativityReport",
    "PathEnsemble",
    "simulate_truncated",
    "wiener_increments",
    "ou_moment_oracle",
    "exit_time_diagnostic",
]

_MASK64 = (1 << 64) - 1
_BLOWUP_LIMIT = 1e75
_SCHEMES = ("explicit", "tamed")


@dataclass(frozen=True)
class Potential:
    """One-particle potential V.

    Built-ins: ``linear`` V(q) = -lam q (lam > 0) and ``cubic``
    V(q) = b q - q^3.  A ``custom`` callable can be injected for validation
    experiments; it must accept numpy arrays.
    """

    kind: str
    lam: float = 1.0
    b: float = 0.0
    func: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "cubic", "custom"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "linear" and self.lam <= 0:
            raise ValueError("linear potential needs lam > 0")
        if self.kind == "custom" and self.func is None:
            raise ValueError("custom potential needs a callable")

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        if self.kind == "linear":
            return -self.lam * q
        if self.kind == "cubic":
            return self.b * q - q**3
        return np.asarray(self.func(q), dtype=float)


@dataclass(frozen=True)
class InteractionKernel:
    """Radial pair kernel a(r) on [0, rho], capped by abar.

    ``constant``: a(r) = abar.  ``triangular``: a(r) = abar (1 - r/rho).
    """

    kind: str
    abar: float
    rho: float

    def __post_init__(self):
        if self.kind not in ("constant", "triangular"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.abar < 0:
            raise ValueError("kernel cap abar must be >= 0")
        if self.rho <= 0:
            raise ValueError("rho must be > 0")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "constant":
            return np.where(r <= self.rho, self.abar, 0.0)
        return np.where(r <= self.rho, self.abar * (1.0 - r / self.rho), 0.0)


@dataclass(frozen=True)
class ModelSpec:
    """Model coefficients together with their declared growth constants.

    The declared constants are what the moment and convergence ceilings are
    built from; :func:`check_dissipativity` validates them against the chosen
    functional forms.
    """

    potential: Potential
    kernel: InteractionKernel
    sigma0: float
    sigma1: float
    sigma2: float
    growth_c: float          # |V(q)| <= c (1 + |q|^R)
    growth_R: float
    dissipativity_b: float   # one-sided Lipschitz constant of V
    lipschitz_m1: float      # diffusion Lipschitz in q
    lipschitz_m2: float      # diffusion Lipschitz in the neighbor sum
    p: float                 # moment order

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("moment order p must be >= 2")
        if not (1 <= self.growth_R <= self.p):
            raise ValueError("need 1 <= R <= p")
        if min(self.sigma0, self.sigma1, self.sigma2) < 0:
            raise ValueError("sigma coefficients must be >= 0")
        if self.growth_c <= 0:
            raise ValueError("growth constant c must be > 0")
        if self.sigma0 > self.growth_c + 1e-12:
            raise ValueError("need |Psi(0,0)| = sigma0 <= c")


def make_model(
    potential="cubic",
    potential_param=0.0,
    kernel="constant",
    kernel_cap=0.0,
    rho=1.0,
    sigma0=0.0,
    sigma1=0.0,
    sigma2=0.0,
    p=2.0,
    growth_c=None,
    growth_R=None,
    dissipativity_b=None,
    lipschitz_m1=None,
    lipschitz_m2=None,
) -> ModelSpec:
    """Assemble a model; growth constants default to the tight built-in values."""
    if potential == "linear":
        pot = Potential("linear", lam=potential_param)
        c = max(potential_param, sigma0)
        R = 1.0
        b = -potential_param
    elif potential == "cubic":
        pot = Potential("cubic", b=potential_param)
        c = max(abs(potential_param) + 1.0, sigma0)
        R = 3.0
        b = potential_param
    else:
        raise ValueError("make_model builds only the built-in potentials")
    ker = InteractionKernel(kernel, kernel_cap, rho)
    return ModelSpec(
        potential=pot,
        kernel=ker,
        sigma0=sigma0,
        sigma1=sigma1,
        sigma2=sigma2,
        growth_c=c if growth_c is None else growth_c,
        growth_R=R if growth_R is None else growth_R,
        dissipativity_b=b if dissipativity_b is None else dissipativity_b,
        lipschitz_m1=sigma1 if lipschitz_m1 is None else lipschitz_m1,
        lipschitz_m2=sigma2 if lipschitz_m2 is None else lipschitz_m2,
        p=p,
    )


def _pair_distances(config: Configuration, x: int) -> np.ndarray:
    nbrs = config.neighbors[x]
    diff = config.points[nbrs] - config.points[x]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def drift(model: ModelSpec, x: int, q: float, Z: WeightedSeq) -> float:
    """Phi_x(q, Z) = V(q) + sum_{y in B_x} a(x-y) z_y (self term included)."""
    config = Z.config
    nbrs = config.neighbors[x]
    weights = model.kernel(_pair_distances(config, x))
    return float(model.potential(q)) + float(np.dot(weights, Z.values[nbrs]))


def diffusion(model: ModelSpec, x: int, q: float, Z: WeightedSeq) -> float:
    """Psi_x(q, Z) = sigma0 + sigma1 q + sigma2 n_x sum_{y in B_x} z_y."""
    config = Z.config
    nbrs = config.neighbors[x]
    return float(
        model.sigma0
        + model.sigma1 * q
        + model.sigma2 * config.degrees[x] * np.sum(Z.values[nbrs])
    )


def interaction_matrix(model: ModelSpec, config: Configuration) -> np.ndarray:
    """Dense kernel matrix K[x, y] = a(x - y) on the neighbor band."""
    K = np.zeros((config.n_sites, config.n_sites))
    for x in range(config.n_sites):
        nbrs = config.neighbors[x]
        K[x, nbrs] = model.kernel(_pair_distances(config, x))
    return K


def adjacency_matrix(config: Configuration) -> np.ndarray:
    A = np.zeros((config.n_sites, config.n_sites))
    for x in range(config.n_sites):
        A[x, config.neighbors[x]] = 1.0
    return A


def a_tilde(model: ModelSpec, config: Configuration) -> np.ndarray:
    """Per-site kernel l2 mass (sum_{y in B_x} a^2(x-y))^(1/2)."""
    out = np.empty(config.n_sites)
    for x in range(config.n_sites):
        w = model.kernel(_pair_distances(config, x))
        out[x] = math.sqrt(float(np.dot(w, w)))
    return out


@dataclass(frozen=True)
class DissipativityReport:
    c_ok: bool
    d_ok: bool
    e_ok: bool
    witnesses: tuple

    @property
    def all_ok(self) -> bool:
        return self.c_ok and self.d_ok and self.e_ok


def check_dissipativity(model: ModelSpec, samples, q_range, seed, config=None) -> DissipativityReport:
    """Validate the declared (c, R, b, M1, M2) against the functional forms.

    The one-sided Lipschitz condition is settled analytically for the
    built-in potentials (the cubic decay term is monotone, the linear one is
    exact) and then confirmed on random pairs; growth and the diffusion
    Lipschitz condition are sampled.  Violations come back as witnesses, not
    exceptions.
    """
    if q_range <= 0 or samples < 1:
        raise ValueError("need q_range > 0 and samples >= 1")
    rng = np.random.default_rng(seed)
    slack = 1e-9
    witnesses = []

    qs = rng.uniform(-q_range, q_range, size=samples)
    v = model.potential(qs)
    c_ok = True
    bad = np.abs(v) > model.growth_c * (1.0 + np.abs(qs) ** model.growth_R) + slack
    if np.any(bad):
        c_ok = False
        i = int(np.argmax(bad))
        witnesses.append(("C", {"q": float(qs[i]), "V": float(v[i])}))

    d_ok = True
    if model.potential.kind == "linear":
        d_ok = model.dissipativity_b >= -model.potential.lam - slack
    elif model.potential.kind == "cubic":
        d_ok = model.dissipativity_b >= model.potential.b - slack
    if not d_ok:
        witnesses.append(("D", {"reason": "declared b below the analytic constant"}))
    q1 = rng.uniform(-q_range, q_range, size=samples)
    q2 = rng.uniform(-q_range, q_range, size=samples)
    lhs = (q1 - q2) * (model.potential(q1) - model.potential(q2))
    rhs = model.dissipativity_b * (q1 - q2) ** 2
    bad = lhs > rhs + slack
    if np.any(bad):
        d_ok = False
        i = int(np.argmax(bad))
        witnesses.append(("D", {"q1": float(q1[i]), "q2": float(q2[i]),
                                "lhs": float(lhs[i]), "rhs": float(rhs[i])}))

    e_ok = (
        model.sigma1 <= model.lipschitz_m1 + slack
        and model.sigma2 <= model.lipschitz_m2 + slack
        and model.sigma0 <= model.growth_c + slack
    )
    if not e_ok:
        witnesses.append(("E", {"reason": "sigma coefficients exceed declared constants"}))
    if config is not None and config.n_sites:
        for _ in range(min(samples, 64)):
            x = int(rng.integers(config.n_sites))
            qa, qb = rng.uniform(-q_range, q_range, size=2)
            za = WeightedSeq(config, rng.uniform(-q_range, q_range, config.n_sites))
            zb = WeightedSeq(config, rng.uniform(-q_range, q_range, config.n_sites))
            lhs_e = abs(diffusion(model, x, qa, za) - diffusion(model, x, qb, zb))
            nbrs = config.neighbors[x]
            rhs_e = model.lipschitz_m1 * abs(qa - qb) + model.lipschitz_m2 * config.degrees[
                x
            ] * float(np.sum(np.abs(za.values[nbrs] - zb.values[nbrs])))
            if lhs_e > rhs_e + slack:
                e_ok = False
                witnesses.append(("E", {"site": x, "lhs": lhs_e, "rhs": rhs_e}))
                break

    return DissipativityReport(c_ok, d_ok, e_ok, tuple(witnesses))


class _NoiseSource:
    """Counter-based streams keyed by (seed, path, site), one shared instance.

    A single Philox bit generator is re-keyed per stream through its state
    (a stream is a pure function of the 128-bit key, so resetting key and
    counter reproduces it exactly).  Reusing one generator avoids creating
    tens of thousands of short-lived objects in the noise loop, which would
    otherwise thrash the garbage collector on large ensembles.
    """

    def __init__(self, seed: int):
        self._key = np.array([seed & _MASK64, 0], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=self._key)
        self._gen = np.random.Generator(self._bitgen)
        self._state = {
            "bit_generator": "Philox",
            "state": {"counter": np.zeros(4, dtype=np.uint64), "key": self._key},
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }

    def fill_normals(self, path: int, site: int, out: np.ndarray) -> None:
        self._key[1] = ((path << 32) | site) & _MASK64
        self._bitgen.state = self._state
        self._gen.standard_normal(out=out)


def wiener_increments(seed, path, site, n_steps, dt, refine=1) -> np.ndarray:
    """Brownian increments for one (path, site) stream on an n_steps grid.

    Draws are taken at resolution dt/refine and summed in blocks of
    ``refine``, so runs at compatible step sizes (dt with refine 2r versus
    dt/2 with refine r, same seed) are driven by bitwise the same underlying
    Brownian path.
    """
    if refine < 1:
        raise ValueError("refine must be >= 1")
    draws = np.empty(n_steps * refine)
    _NoiseSource(seed).fill_normals(path, site, draws)
    fine = math.sqrt(dt / refine) * draws
    return fine.reshape(n_steps, refine).sum(axis=1)


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Monte Carlo trajectories of one truncated system.

    ``paths[path, site, node]`` covers every site; rows of frozen sites are
    bitwise constant at their initial value.  ``blowup`` flags paths that
    left the representable range (possible under the explicit scheme with a
    superlinear potential).
    """

    config: Configuration
    active: np.ndarray
    times: np.ndarray
    paths: np.ndarray
    seed: int
    scheme: str
    dt: float
    noise_refine: int
    zeta_values: np.ndarray
    blowup: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def has_blowup(self) -> bool:
        return bool(np.any(self.blowup))


def _validate_active(config: Configuration, lambda_n) -> np.ndarray:
    active = np.asarray(sorted(set(int(i) for i in lambda_n)), dtype=np.int64)
    if active.size and (active[0] < 0 or active[-1] >= config.n_sites):
        raise ValueError("active set contains out-of-range site indices")
    return active


def simulate_truncated(
    model: ModelSpec,
    config: Configuration,
    lambda_n,
    zeta: WeightedSeq,
    T,
    dt,
    n_paths,
    seed,
    scheme="tamed",
    noise_refine=1,
    path_block=4096,
) -> PathEnsemble:
    """Euler-Maruyama time stepping of the truncated system.

    Sites in the active set take one step per grid interval; under the tamed
    scheme the drift increment is Phi dt / (1 + dt |Phi|), which keeps the
    superlinear cubic decay stable where the explicit scheme can blow up.
    All other sites stay bitwise frozen at their initial value.  The noise
    stream of a (path, site) pair depends only on (seed, path, site index),
    so ensembles with different active sets share increments sitewise.
    """
    if scheme not in _SCHEMES:
        raise ValueError(f"scheme must be one of {_SCHEMES}")
    if zeta.config is not config:
        raise ValueError("initial data lives on a different configuration")
    if dt <= 0 or T <= 0:
        raise ValueError("need dt > 0 and T > 0")
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("dt must divide T")
    if n_paths < 1:
        raise ValueError("need n_paths >= 1")

    active = _validate_active(config, lambda_n)
    n_sites = config.n_sites
    times = np.linspace(0.0, T, n_steps + 1)
    paths = np.empty((n_paths, n_sites, n_steps + 1))

    K = interaction_matrix(model, config)
    adj = adjacency_matrix(config)
    degrees = config.degrees.astype(float)
    tamed = scheme == "tamed"

    source = _NoiseSource(seed)
    scale = math.sqrt(dt / noise_refine)
    draws_per_stream = n_steps * noise_refine
    if active.size:
        # cap the raw-draw buffer at ~256 MB per block
        cap = max(1, (1 << 25) // (active.size * draws_per_stream))
        path_block = min(path_block, cap)
    for start in range(0, n_paths, path_block):
        stop = min(start + path_block, n_paths)
        block = stop - start
        raw = np.empty((block, active.size, draws_per_stream))
        for bi in range(block):
            for si, site in enumerate(active):
                source.fill_normals(start + bi, int(site), raw[bi, si])
        fine = scale * raw
        noise = fine.reshape(block, active.size, n_steps, noise_refine).sum(axis=3)
        # time-first layout keeps the per-step writes contiguous
        noise = np.ascontiguousarray(noise.transpose(2, 0, 1))
        state = np.tile(zeta.values, (block, 1))
        block_paths = np.empty((n_steps + 1, block, n_sites))
        block_paths[0] = state
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(n_steps):
                if active.size:
                    phi = model.potential(state) + state @ K.T
                    psi = (
                        model.sigma0
                        + model.sigma1 * state
                        + model.sigma2 * degrees * (state @ adj.T)
                    )
                    if tamed:
                        inc = phi * dt / (1.0 + dt * np.abs(phi))
                    else:
                        inc = phi * dt
                    state[:, active] = (
                        state[:, active]
                        + inc[:, active]
                        + psi[:, active] * noise[k]
                    )
                block_paths[k + 1] = state
        paths[start:stop] = block_paths.transpose(1, 2, 0)

    if paths.size:
        finite = np.isfinite(paths).all(axis=(1, 2))
        small = (
            np.nanmax(np.abs(np.where(np.isfinite(paths), paths, 0.0)), axis=(1, 2))
            <= _BLOWUP_LIMIT
        )
        blowup = ~(finite & small)
    else:
        blowup = np.zeros(n_paths, dtype=bool)
    return PathEnsemble(
        config=config,
        active=active,
        times=times,
        paths=paths,
        seed=int(seed),
        scheme=scheme,
        dt=float(dt),
        noise_refine=int(noise_refine),
        zeta_values=zeta.values.copy(),
        blowup=blowup,
    )


def ou_moment_oracle(lambda_, sigma, xi0, t):
    """Closed-form mean and second moment of the linear single-site diffusion.

    d xi = -lambda xi dt + sigma dW gives E xi_t = xi0 e^(-lambda t) and
    E xi_t^2 = xi0^2 e^(-2 lambda t) + sigma^2 (1 - e^(-2 lambda t)) / (2 lambda).
    """
    if lambda_ <= 0:
        raise ValueError("need lambda > 0")
    if sigma < 0 or t < 0:
        raise ValueError("need sigma >= 0 and t >= 0")
    mean = xi0 * math.exp(-lambda_ * t)
    second = xi0**2 * math.exp(-2 * lambda_ * t) + sigma**2 * (
        1.0 - math.exp(-2 * lambda_ * t)
    ) / (2.0 * lambda_)
    return mean, second


def exit_time_diagnostic(ensemble: PathEnsemble, thresholds):
    """Empirical probability that |xi_x| reaches each level strictly before T.

    The exit time is the first grid time with |xi| >= level, so level 0 exits
    immediately and gives probability one.  The terminal node is excluded:
    reaching the level only at t = T does not count as exiting before T.
    Returns {level: per-site fraction array}.
    """
    if ensemble.n_paths == 0:
        raise ValueError("empty ensemble")
    running = np.abs(ensemble.paths[:, :, :-1])
    peak = running.max(axis=2)  # (n_paths, n_sites)
    out = {}
    for level in thresholds:
        out[float(level)] = (peak >= float(level)).mean(axis=0)
    return out
