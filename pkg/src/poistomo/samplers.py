"""Dimension-robust MCMC kernels for the coefficient-space posterior.

Three kernels share one structure: a reference-preserving Gaussian proposal,
optionally recentred by a drift vector, accepted by a Metropolis-Hastings
ratio of the acceptance functional ``rho``:

* ``pcn``    v = sqrt(1 - beta^2) z + beta w, accept on psi(z) - psi(v);
* ``pcnl``   drift = gradient of psi (smooth case only);
* ``pdpcn``  drift = offset_direction at the frozen splitting anchor, so the
  nonsmooth TV term is handled without ever differentiating it.

With drift g the proposal is (2 + delta) v = (2 - delta) z - 2 delta g
+ sqrt(8 delta) w, and zero drift recovers pcn with
beta = sqrt(8 delta) / (2 + delta).  Every kernel consumes randomness in the
same order (noise vector first, acceptance uniform second), which keeps
matched-seed comparisons meaningful.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .admm import AdmmConfig, MapResult, offset_direction, solve_map
from .fields import VectorField
from .posterior import PosteriorEval, TGPosterior

__all__ = [
    "SamplerConfig",
    "Chain",
    "ChainDivergence",
    "Anchor",
    "StepResult",
    "pcn_propose",
    "pcn_accept",
    "pcn_step",
    "pcnl_step",
    "pdpcn_step",
    "run_chain",
    "tune_stepsize",
    "anchor_from_map",
    "save_chain",
    "load_chain",
]

KINDS = ("pcn", "pcnl", "pdpcn")
_KIND_CODE = {k: i for i, k in enumerate(KINDS)}


class ChainDivergence(RuntimeError):
    """Raised when a chain reaches a non-finite potential."""


@dataclass(frozen=True)
class SamplerConfig:
    kind: str
    n_samples: int
    beta: float = 0.1
    delta: float = 0.1
    burn_in: int | None = None
    thinning: int = 1
    seed: int = 0
    k_proj: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if not 0.0 < self.delta <= 2.0:
            raise ValueError(f"delta must lie in (0, 2], got {self.delta}")
        if self.thinning < 1:
            raise ValueError("thinning must be at least 1")
        burn = self.effective_burn_in
        if not 0 <= burn < self.n_samples:
            raise ValueError(f"burn_in must lie in [0, n_samples), got {burn}")
        if self.k_proj is not None and self.k_proj < 0:
            raise ValueError("k_proj must be nonnegative")

    @property
    def effective_burn_in(self) -> int:
        return self.n_samples // 10 if self.burn_in is None else self.burn_in

    @property
    def stepsize(self) -> float:
        return self.beta if self.kind == "pcn" else self.delta

    @property
    def n_kept(self) -> int:
        return (self.n_samples - self.effective_burn_in) // self.thinning


class Anchor(NamedTuple):
    """Frozen splitting variables that define the pdpcn drift."""

    split: VectorField
    multiplier: VectorField
    rho_pen: float


def anchor_from_map(result: MapResult, rho_pen: float) -> Anchor:
    return Anchor(result.split, result.multiplier, rho_pen)


class StepResult(NamedTuple):
    coeffs: np.ndarray
    accepted: bool
    log_ratio: float
    cache: object


def _accept(log_ratio: float, rng: np.random.Generator) -> bool:
    return rng.random() < math.exp(min(log_ratio, 0.0))


def pcn_propose(z, beta: float, rng: np.random.Generator) -> np.ndarray:
    """Reference-preserving autoregressive proposal.

    beta = 0 returns z unchanged (noise still drawn, keeping the stream
    aligned); beta = 1 is a pure reference draw.  Chain configs insist on
    beta > 0, but the raw proposal admits the closed interval.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    z = np.asarray(z, dtype=float)
    return math.sqrt(1.0 - beta * beta) * z + beta * rng.standard_normal(z.size)


def pcn_accept(post: TGPosterior, z, v, rng: np.random.Generator) -> bool:
    """Accept v against z with probability min(1, exp(psi(z) - psi(v)))."""
    return _accept(post.psi(z) - post.psi(v), rng)


def pcn_step(post: TGPosterior, z, beta: float, rng: np.random.Generator,
             cache: PosteriorEval | None = None) -> StepResult:
    ev = post.evaluate(z) if cache is None else cache
    v = pcn_propose(z, beta, rng)
    ev_v = post.evaluate(v)
    log_ratio = ev.psi - ev_v.psi
    if _accept(log_ratio, rng):
        return StepResult(v, True, log_ratio, ev_v)
    return StepResult(np.asarray(z, dtype=float), False, log_ratio, ev)


def _drift_propose(z, g, delta: float, rng: np.random.Generator) -> np.ndarray:
    w = rng.standard_normal(z.size)
    return ((2.0 - delta) * z - 2.0 * delta * g
            + math.sqrt(8.0 * delta) * w) / (2.0 + delta)


class _DriftCache(NamedTuple):
    ev: PosteriorEval
    g: np.ndarray


def _drift_step(post, z, delta, rng, drift_fn, cache) -> StepResult:
    z = np.asarray(z, dtype=float)
    if cache is None:
        ev = post.evaluate(z)
        cache = _DriftCache(ev, drift_fn(z, ev))
    v = _drift_propose(z, cache.g, delta, rng)
    ev_v = post.evaluate(v)
    g_v = drift_fn(v, ev_v)
    forward = post.rho_from_eval(cache.ev, z, v, cache.g, delta)
    backward = post.rho_from_eval(ev_v, v, z, g_v, delta)
    log_ratio = forward - backward
    if _accept(log_ratio, rng):
        return StepResult(v, True, log_ratio, _DriftCache(ev_v, g_v))
    return StepResult(z, False, log_ratio, cache)


def pcnl_step(post: TGPosterior, z, delta: float, rng: np.random.Generator,
              cache: _DriftCache | None = None) -> StepResult:
    """Langevin-type step with the full potential gradient as drift.

    Only valid when the potential is smooth; a positive TV weight raises.
    """
    if post.tv_weight != 0.0:
        raise ValueError("pcnl requires a differentiable potential; "
                         "tv_weight must be 0")
    if not 0.0 < delta <= 2.0:
        raise ValueError(f"delta must lie in (0, 2], got {delta}")

    def drift(_v, ev):
        return post.phi_grad_at(ev)

    return _drift_step(post, z, delta, rng, drift, cache)


def pdpcn_step(post: TGPosterior, z, delta: float, rng: np.random.Generator,
               anchor: Anchor, k_proj: int | None = None,
               cache: _DriftCache | None = None) -> StepResult:
    """Drift step recentred by the splitting anchor's offset direction.

    The drift is recomputed at the current and proposed states each step, and
    both enter the acceptance ratio, so the kernel targets the posterior
    exactly for any fixed anchor.
    """
    if not 0.0 < delta <= 2.0:
        raise ValueError(f"delta must lie in (0, 2], got {delta}")

    def drift(v, _ev):
        return offset_direction(post, v, anchor.split, anchor.multiplier,
                                anchor.rho_pen, k_proj)

    return _drift_step(post, z, delta, rng, drift, cache)


@dataclass(frozen=True)
class Chain:
    """Kept samples plus per-step acceptance and potential traces."""

    samples: np.ndarray = field(repr=False)
    config: SamplerConfig
    acceptance_rate: float
    accepted: np.ndarray | None = field(default=None, repr=False)
    psi_trace: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 2:
            raise ValueError("samples must be a (count, n_modes) array")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def n_kept(self) -> int:
        return self.samples.shape[0]

    @property
    def n_modes(self) -> int:
        return self.samples.shape[1]


def run_chain(post: TGPosterior, config: SamplerConfig, init=None,
              anchor: Anchor | None = None) -> Chain:
    """Drive one chain and collect kept states.

    Burn-in defaults to a tenth of the run; a state is kept every
    ``thinning`` post-burn-in steps, giving floor((n - burn) / thinning)
    samples.  For the pdpcn kernel a missing anchor triggers a splitting
    solve, whose iterate also becomes the default initial state.  The whole
    run is a pure function of (posterior, config, init, anchor).
    """
    rng = np.random.default_rng(config.seed)
    n = post.n_modes
    if config.kind == "pdpcn" and anchor is None:
        result = solve_map(post, AdmmConfig())
        anchor = anchor_from_map(result, AdmmConfig().rho_pen)
        if init is None:
            init = result.coeffs
    z = np.zeros(n) if init is None else np.array(init, dtype=float).reshape(n)

    if config.kind == "pcn":
        def step(zc, cache):
            return pcn_step(post, zc, config.beta, rng, cache)
    elif config.kind == "pcnl":
        def step(zc, cache):
            return pcnl_step(post, zc, config.delta, rng, cache)
    else:
        def step(zc, cache):
            return pdpcn_step(post, zc, config.delta, rng, anchor,
                              config.k_proj, cache)

    burn = config.effective_burn_in
    thin = config.thinning
    kept = np.empty((config.n_kept, n))
    accepted = np.empty(config.n_samples, dtype=bool)
    psi_trace = np.empty(config.n_samples)
    cache = None
    j = 0
    for k in range(config.n_samples):
        z, acc, _lr, cache = step(z, cache)
        psi = cache.psi if isinstance(cache, PosteriorEval) else cache.ev.psi
        if not math.isfinite(psi):
            raise ChainDivergence(f"non-finite potential at step {k}")
        accepted[k] = acc
        psi_trace[k] = psi
        if k >= burn and (k - burn + 1) % thin == 0:
            kept[j] = z
            j += 1
    return Chain(kept, config, float(np.mean(accepted)), accepted, psi_trace)


def tune_stepsize(post: TGPosterior, kind: str, target: float = 0.25,
                  n_pilot: int = 2000, tol: float = 0.03, max_rounds: int = 12,
                  seed: int = 0, init=None, anchor: Anchor | None = None,
                  k_proj: int | None = None) -> float:
    """Bisect the stepsize until the pilot acceptance rate is near target.

    Acceptance decreases with the stepsize, so plain bisection applies.  The
    pilot chains share one seed, making the tuning deterministic.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    lo, hi = 1e-5, (1.0 if kind == "pcn" else 2.0)

    def acc(step: float) -> float:
        size = {"beta": step} if kind == "pcn" else {"delta": step}
        cfg = SamplerConfig(kind, n_pilot, burn_in=0, seed=seed,
                            k_proj=k_proj, **size)
        chain = run_chain(post, cfg, init=init, anchor=anchor)
        # rate over the tail only: a cold start biases the early acceptance
        return float(np.mean(chain.accepted[n_pilot // 4:]))

    if acc(hi) >= target:
        return hi
    for _ in range(max_rounds):
        mid = math.sqrt(lo * hi)
        a = acc(mid)
        if abs(a - target) <= tol:
            return mid
        if a > target:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


# ---------------------------------------------------------------------------
# chain file: magic "CHN1", little-endian header, f64 samples, JSON sidecar

_CHAIN_HEADER = struct.Struct("<4sIIIIqBxxxxxxxd")


def save_chain(chain: Chain, path) -> None:
    """Write samples in binary with a JSON sidecar (path + ".json").

    Header: magic, format version, mode count, kept-sample count, thinning,
    seed, kernel code, stepsize; then row-major little-endian float64
    samples.  The sidecar records the full config and acceptance summary.
    """
    cfg = chain.config
    with open(path, "wb") as fh:
        fh.write(_CHAIN_HEADER.pack(b"CHN1", 1, chain.n_modes, chain.n_kept,
                                    cfg.thinning, cfg.seed,
                                    _KIND_CODE[cfg.kind], cfg.stepsize))
        fh.write(chain.samples.astype("<f8").tobytes())
    sidecar = {
        "kind": cfg.kind,
        "n_samples": cfg.n_samples,
        "burn_in": cfg.effective_burn_in,
        "thinning": cfg.thinning,
        "seed": cfg.seed,
        "beta": cfg.beta,
        "delta": cfg.delta,
        "k_proj": cfg.k_proj,
        "n_kept": chain.n_kept,
        "n_modes": chain.n_modes,
        "acceptance_rate": chain.acceptance_rate,
    }
    with open(str(path) + ".json", "w", encoding="ascii") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_chain(path) -> Chain:
    """Rebuild a chain from disk; per-step traces are not persisted."""
    with open(path, "rb") as fh:
        head = fh.read(_CHAIN_HEADER.size)
        if len(head) < _CHAIN_HEADER.size:
            raise ValueError(f"{path}: truncated chain file")
        magic, version, n_modes, n_kept, thinning, seed, code, step = \
            _CHAIN_HEADER.unpack(head)
        if magic != b"CHN1":
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != 1:
            raise ValueError(f"{path}: unsupported version {version}")
        samples = np.frombuffer(fh.read(), dtype="<f8")
    if samples.size != n_modes * n_kept:
        raise ValueError(f"{path}: sample block has {samples.size} floats, "
                         f"expected {n_modes * n_kept}")
    try:
        with open(str(path) + ".json", "r", encoding="ascii") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError:
        sidecar = {}
    kind = KINDS[code]
    cfg = SamplerConfig(
        kind,
        int(sidecar.get("n_samples", max(n_kept * thinning, 1))),
        beta=float(sidecar.get("beta", step if kind == "pcn" else 0.1)),
        delta=float(sidecar.get("delta", step if kind != "pcn" else 0.1)),
        burn_in=int(sidecar["burn_in"]) if "burn_in" in sidecar else None,
        thinning=thinning,
        seed=seed,
        k_proj=sidecar.get("k_proj"),
    )
    rate = float(sidecar.get("acceptance_rate", math.nan))
    return Chain(samples.reshape(n_kept, n_modes), cfg, rate)
