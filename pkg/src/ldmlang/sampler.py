"""Gradient-based MCMC over a compiled plan.

Multinomial No-U-Turn sampler: trajectories grow by doubling, candidate
states are weighted by exp(H0 - H) within each subtree, and the proposal is
merged progressively (biased toward the new subtree at the root). Step size
adapts by dual averaging toward a target acceptance statistic; a diagonal
inverse mass matrix adapts over growing warmup windows from the posterior
variance estimate. Generalized U-turn checks use the accumulated momentum sum
with the extra cross-subtree boundary checks.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import AllDivergentError, InitializationFailedError, SamplerError

_DIVERGENCE_THRESHOLD = 1000.0


@dataclass(frozen=True)
class SamplerConfig:
    n_warmup: int = 500
    n_samples: int = 1000
    n_chains: int = 4
    seed: int = 0
    target_accept: float = 0.8
    max_tree_depth: int = 10

    def __post_init__(self):
        if self.n_warmup < 0 or self.n_samples <= 0 or self.n_chains <= 0:
            raise SamplerError("warmup/samples/chains must be positive")


class RngStream:
    """Counter-based, splittable random source: one child stream per chain."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def chain(self, chain_id: int, purpose: int = 0) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(purpose, chain_id))
        return np.random.Generator(np.random.Philox(seq))


def leapfrog(grad_fn, u, p, eps, inv_mass, g=None):
    """One leapfrog step of the Hamiltonian flow.

    grad_fn(u) -> (logdensity, gradient). Returns (u', p', logp', grad')."""
    if g is None:
        _, g = grad_fn(u)
    p_half = p + 0.5 * eps * g
    u_new = u + eps * (inv_mass * p_half)
    v_new, g_new = grad_fn(u_new)
    p_new = p_half + 0.5 * eps * g_new
    return u_new, p_new, v_new, g_new


def _kinetic(p, inv_mass) -> float:
    # huge momenta from step-size probing overflow to inf, which is a valid
    # "reject" signal rather than an error
    with np.errstate(over="ignore"):
        return 0.5 * float(np.dot(p * p, inv_mass))


def _uturn(p_first, p_last, rho, inv_mass) -> bool:
    """Trajectory termination: either end's velocity opposes the net motion."""
    return (float(np.dot(inv_mass * p_first, rho)) <= 0.0
            or float(np.dot(inv_mass * p_last, rho)) <= 0.0)


@dataclass(slots=True)
class _Tree:
    # integration-order boundary states
    u_end: np.ndarray
    p_end: np.ndarray
    g_end: np.ndarray
    v_end: float
    p_beg: np.ndarray
    rho: np.ndarray
    log_sum_w: float
    prop_u: np.ndarray
    prop_v: float
    prop_g: np.ndarray
    alpha_sum: float
    n_alpha: int
    n_leapfrog: int
    divergent: bool
    turned: bool

    @property
    def invalid(self) -> bool:
        return self.divergent or self.turned


def _build_tree(rng, grad_fn, depth, direction, u, p, g, h0, eps, inv_mass):
    if depth == 0:
        u1, p1, v1, g1 = leapfrog(grad_fn, u, p, direction * eps, inv_mass, g)
        k1 = _kinetic(p1, inv_mass)
        h1 = -v1 + k1 if math.isfinite(v1) else math.inf
        dh = h0 - h1
        divergent = not math.isfinite(h1) or (h1 - h0) > _DIVERGENCE_THRESHOLD
        alpha = math.exp(min(0.0, dh)) if math.isfinite(dh) else 0.0
        return _Tree(u_end=u1, p_end=p1, g_end=g1, v_end=v1, p_beg=p1,
                     rho=p1.copy(), log_sum_w=dh if math.isfinite(dh) else -math.inf,
                     prop_u=u1, prop_v=v1, prop_g=g1,
                     alpha_sum=alpha, n_alpha=1, n_leapfrog=1,
                     divergent=divergent, turned=False)
    first = _build_tree(rng, grad_fn, depth - 1, direction, u, p, g, h0,
                        eps, inv_mass)
    if first.invalid:
        return first
    second = _build_tree(rng, grad_fn, depth - 1, direction,
                         first.u_end, first.p_end, first.g_end, h0,
                         eps, inv_mass)
    first.alpha_sum += second.alpha_sum
    first.n_alpha += second.n_alpha
    first.n_leapfrog += second.n_leapfrog
    if second.invalid:
        first.divergent = second.divergent
        first.turned = second.turned
        return first
    # progressive within-subtree sampling: weight-proportional
    comb = np.logaddexp(first.log_sum_w, second.log_sum_w)
    if math.log(max(rng.random(), 1e-300)) < second.log_sum_w - comb:
        first.prop_u, first.prop_v, first.prop_g = \
            second.prop_u, second.prop_v, second.prop_g
    turned = (
        _uturn(first.p_beg, second.p_end, first.rho + second.rho, inv_mass)
        or _uturn(first.p_beg, first.p_end, first.rho + second.p_beg, inv_mass)
        or _uturn(second.p_beg, second.p_end, first.p_end + second.rho, inv_mass))
    first.log_sum_w = comb
    first.rho = first.rho + second.rho
    first.u_end, first.p_end, first.g_end, first.v_end = \
        second.u_end, second.p_end, second.g_end, second.v_end
    first.turned = turned
    return first


@dataclass(slots=True)
class _TransitionStats:
    depth: int
    n_leapfrog: int
    divergent: bool
    accept_stat: float
    energy: float


def nuts_draw(rng, grad_fn, u0, v0, g0, eps, inv_mass, max_depth):
    """One multinomial-NUTS update from (u0, v0, g0).

    max_depth 0 degenerates to a single-leapfrog Metropolis step (the first
    doubling always runs)."""
    dim = u0.shape[0]
    p0 = rng.standard_normal(dim) / np.sqrt(inv_mass)
    h0 = -v0 + _kinetic(p0, inv_mass)

    u_minus = u_plus = u0
    p_minus = p_plus = p0
    g_minus = g_plus = g0
    prop_u, prop_v, prop_g = u0, v0, g0
    rho = p0.copy()
    log_sum_w = 0.0
    alpha_sum, n_alpha, n_leapfrog = 0.0, 0, 0
    divergent = False
    depth = 0

    while depth < max(1, max_depth):
        direction = 1 if rng.random() < 0.5 else -1
        if direction == 1:
            sub = _build_tree(rng, grad_fn, depth, 1,
                              u_plus, p_plus, g_plus, h0, eps, inv_mass)
        else:
            sub = _build_tree(rng, grad_fn, depth, -1,
                              u_minus, p_minus, g_minus, h0, eps, inv_mass)
        alpha_sum += sub.alpha_sum
        n_alpha += sub.n_alpha
        n_leapfrog += sub.n_leapfrog
        if sub.invalid:
            divergent = divergent or sub.divergent
            break
        # biased progressive merge at the root: favors the fresh subtree
        if math.log(max(rng.random(), 1e-300)) < sub.log_sum_w - log_sum_w:
            prop_u, prop_v, prop_g = sub.prop_u, sub.prop_v, sub.prop_g
        # trajectory-ordered endpoints for the turn checks
        if direction == 1:
            left_first, left_last, left_rho = p_minus, p_plus, rho
            right_first, right_last, right_rho = sub.p_beg, sub.p_end, sub.rho
            u_plus, p_plus, g_plus = sub.u_end, sub.p_end, sub.g_end
        else:
            left_first, left_last, left_rho = sub.p_end, sub.p_beg, sub.rho
            right_first, right_last, right_rho = p_minus, p_plus, rho
            u_minus, p_minus, g_minus = sub.u_end, sub.p_end, sub.g_end
        log_sum_w = float(np.logaddexp(log_sum_w, sub.log_sum_w))
        rho = left_rho + right_rho
        depth += 1
        if (_uturn(left_first, right_last, rho, inv_mass)
                or _uturn(left_first, left_last,
                          left_rho + right_first, inv_mass)
                or _uturn(right_first, right_last,
                          left_last + right_rho, inv_mass)):
            break

    accept = alpha_sum / n_alpha if n_alpha else 0.0
    stats = _TransitionStats(depth=depth, n_leapfrog=n_leapfrog,
                             divergent=divergent, accept_stat=accept,
                             energy=h0)
    return prop_u, prop_v, prop_g, stats


# --- adaptation ------------------------------------------------------------------


def find_reasonable_epsilon(rng, grad_fn, u, v, g, inv_mass) -> float:
    """Double/halve the step size until one leapfrog step keeps about half
    the density weight."""
    eps = 1.0
    dim = u.shape[0]
    p = rng.standard_normal(dim) / np.sqrt(inv_mass)
    h0 = -v + _kinetic(p, inv_mass)

    def log_ratio(e):
        _, p1, v1, _ = leapfrog(grad_fn, u, p, e, inv_mass, g)
        h1 = -v1 + _kinetic(p1, inv_mass) if math.isfinite(v1) else math.inf
        return h0 - h1

    r = log_ratio(eps)
    a = 1.0 if r > math.log(0.5) else -1.0
    for _ in range(64):
        if a * r <= -a * math.log(2.0):
            break
        eps *= 2.0 ** a
        if eps > 1e7 or eps < 1e-10:
            break
        r = log_ratio(eps)
    return eps


class _DualAverage:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, eps0, target=0.8, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.m = 0

    def update(self, accept_stat: float) -> float:
        self.m += 1
        frac = 1.0 / (self.m + self.t0)
        self.h_bar = (1 - frac) * self.h_bar + frac * (self.target - accept_stat)
        self.log_eps = self.mu - math.sqrt(self.m) / self.gamma * self.h_bar
        w = self.m ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1 - w) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def adapted(self) -> float:
        return math.exp(self.log_eps_bar) if self.m else math.exp(self.log_eps)


class _Welford:
    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def variance(self):
        if self.n < 2:
            return np.ones_like(self.mean)
        var = self.m2 / (self.n - 1)
        # shrink toward unit scale exactly as the windowed scheme expects
        w = self.n / (self.n + 5.0)
        return w * var + 1e-3 * (1 - w)


def mass_windows(n_warmup: int):
    """(start, end) pairs of the growing variance-estimation windows."""
    init_b, term_b, base = 75, 50, 25
    if init_b + base + term_b > n_warmup:
        init_b = int(round(0.15 * n_warmup))
        term_b = int(round(0.10 * n_warmup))
        base = n_warmup - init_b - term_b
        if base <= 0:
            return []
    windows = []
    start, size = init_b, base
    while True:
        end = start + size
        if end + 2 * size > n_warmup - term_b:
            end = n_warmup - term_b
            windows.append((start, end))
            break
        windows.append((start, end))
        start, size = end, size * 2
    return windows


# --- the driver ------------------------------------------------------------------


@dataclass
class DrawSet:
    """Posterior draws in constrained space, per chain, plus sampler stats."""
    draws: np.ndarray                  # (n_chains, n_samples, n_sites)
    site_names: list
    stats: dict                        # name -> (n_chains, n_samples) array
    n_warmup: int
    seed: int
    sampling_time: float = 0.0

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_samples(self) -> int:
        return self.draws.shape[1]

    def site(self, name: str) -> np.ndarray:
        return self.draws[:, :, self.site_names.index(name)]

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "draw"] + list(self.site_names))
            for c in range(self.n_chains):
                for d in range(self.n_samples):
                    row = [str(c), str(d)]
                    row.extend(repr(float(x)) for x in self.draws[c, d])
                    w.writerow(row)

    @classmethod
    def from_csv(cls, path: str) -> "DrawSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        if header[:2] != ["chain", "draw"]:
            raise SamplerError(f"{path}: not a draws file "
                               "(expected chain,draw,... header)")
        names = header[2:]
        chains = sorted({int(r[0]) for r in rows[1:]})
        per_chain = {c: [] for c in chains}
        for r in rows[1:]:
            per_chain[int(r[0])].append([float(x) for x in r[2:]])
        n_samples = min(len(v) for v in per_chain.values())
        draws = np.array([per_chain[c][:n_samples] for c in chains])
        return cls(draws=draws, site_names=names, stats={}, n_warmup=0, seed=0)


def check_all_divergent(divergent: np.ndarray) -> None:
    """Raise when no post-warmup draw anywhere was usable."""
    if divergent.size and bool(np.all(divergent)):
        raise AllDivergentError(
            "every post-warmup draw diverged; the model is numerically "
            "unstable at this step size (check scales and priors)")


def run(plan, config: SamplerConfig | None = None, *,
        init_attempts: int = 100, **overrides) -> DrawSet:
    """Sample the plan's posterior; returns constrained draws per chain.

    Keyword overrides (n_warmup, n_samples, n_chains, seed, target_accept,
    max_tree_depth) update the config."""
    cfg = replace(config or SamplerConfig(), **overrides)
    dim = plan.latent_dim
    if dim == 0:
        raise SamplerError("model has no latent sites to sample")
    stream = RngStream(cfg.seed)
    t_start = time.perf_counter()

    all_draws = np.empty((cfg.n_chains, cfg.n_samples, dim))
    stats = {name: np.zeros((cfg.n_chains, cfg.n_samples))
             for name in ("divergent", "accept_stat", "depth", "energy",
                          "n_leapfrog", "step_size")}
    grad_fn = plan.logdensity_and_grad

    for chain in range(cfg.n_chains):
        rng = stream.chain(chain)
        u = v = g = None
        for _ in range(init_attempts):
            cand = rng.uniform(-2.0, 2.0, dim)
            cv, cg = grad_fn(cand)
            if math.isfinite(cv) and np.all(np.isfinite(cg)):
                u, v, g = cand, cv, cg
                break
        if u is None:
            raise InitializationFailedError(
                f"chain {chain}: no finite log density found in "
                f"{init_attempts} initialization attempts")

        inv_mass = np.ones(dim)
        eps = find_reasonable_epsilon(rng, grad_fn, u, v, g, inv_mass)
        da = _DualAverage(eps, target=cfg.target_accept)
        windows = mass_windows(cfg.n_warmup)
        window_idx = 0
        welford = _Welford(dim)

        for i in range(cfg.n_warmup):
            u, v, g, st = nuts_draw(rng, grad_fn, u, v, g, eps,
                                    inv_mass, cfg.max_tree_depth)
            eps = da.update(st.accept_stat)
            if window_idx < len(windows):
                w_start, w_end = windows[window_idx]
                if w_start <= i < w_end:
                    welford.add(u)
                if i == w_end - 1:
                    inv_mass = welford.variance()
                    welford = _Welford(dim)
                    window_idx += 1
                    eps = find_reasonable_epsilon(rng, grad_fn, u, v, g,
                                                  inv_mass)
                    da = _DualAverage(eps, target=cfg.target_accept)
        eps = da.adapted

        for i in range(cfg.n_samples):
            u, v, g, st = nuts_draw(rng, grad_fn, u, v, g, eps,
                                    inv_mass, cfg.max_tree_depth)
            all_draws[chain, i] = plan.constrain(u)
            stats["divergent"][chain, i] = float(st.divergent)
            stats["accept_stat"][chain, i] = st.accept_stat
            stats["depth"][chain, i] = st.depth
            stats["energy"][chain, i] = st.energy
            stats["n_leapfrog"][chain, i] = st.n_leapfrog
            stats["step_size"][chain, i] = eps

    check_all_divergent(stats["divergent"])
    return DrawSet(draws=all_draws, site_names=list(plan.site_names),
                   stats=stats, n_warmup=cfg.n_warmup, seed=cfg.seed,
                   sampling_time=time.perf_counter() - t_start)
