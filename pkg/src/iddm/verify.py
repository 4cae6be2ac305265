"""Named runtime checks for every closed-form identity and oracle in the
package: haze telescoping, quadrature agreement, schedule recursions, forward
telescoping, haze-free reductions, the sampler round trip, restoration
inversion and finite-difference gradient checks. Shipped as a first-class
CLI command so release builds can prove their own math.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .forward import diffuse_closed, diffuse_step
from .io import generate_scene
from .metrics import psnr
from .nets import (
    denoiser_architecture,
    denoiser_forward,
    htnet_architecture,
    htnet_forward,
    init_params,
)
from .physics import (
    HazeParams,
    haze_at_step,
    haze_increment,
    haze_total,
    haze_total_quadrature,
    synthesize_hazy,
    transmission,
)
from .reference import ddim_sample, ddpm_forward_closed, ddpm_forward_step
from .sampler import SamplerConfig, gaussian_blur, restore, sample
from .schedule import make_schedule, subsequence


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    seconds: float
    detail: str = ""


@dataclass
class _Suite:
    results: list[CheckResult] = field(default_factory=list)

    def check(self, name, measured, tolerance, larger_is_better=False, detail=""):
        t = self._t0
        self._t0 = time.perf_counter()
        ok = measured >= tolerance if larger_is_better else measured <= tolerance
        self.results.append(
            CheckResult(name, bool(ok), float(measured), float(tolerance),
                        self._t0 - t, detail)
        )

    def start(self):
        self._t0 = time.perf_counter()
        return self


def _random_params(rng) -> HazeParams:
    return HazeParams(
        airlight=float(rng.uniform(0.7, 1.0)), scattering=float(rng.uniform(0.4, 1.5))
    )


def physics_suite(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    suite = _Suite().start()

    worst = 0.0
    for T in (1, 10, 1000):
        p = _random_params(rng)
        depth = rng.uniform(0, 1, size=(8, 8))
        total = sum(haze_increment(depth, p, t, T) for t in range(1, T + 1))
        worst = max(worst, np.abs(total - haze_total(depth, p)).max())
    suite.check("haze telescoping (T in 1,10,1000)", worst, 1e-6)

    worst = 0.0
    for _ in range(20):
        a = float(rng.uniform(0.7, 1.0))
        sig = float(rng.uniform(0.4, 1.5))
        z = float(rng.uniform(0.05, 1.0))
        closed = haze_total(np.full((1, 1), z), HazeParams(a, sig))[0, 0, 0]
        quad = haze_total_quadrature(z, a, sig)
        worst = max(worst, abs(closed - quad) / abs(quad))
    suite.check("haze quadrature oracle (20 draws, 1e6 panels)", worst, 1e-8)

    p = _random_params(rng)
    depth = rng.uniform(0, 1, size=(6, 6))
    drops = 0.0
    prev = haze_at_step(depth, p, 0, 50)
    for t in range(1, 51):
        cur = haze_at_step(depth, p, t, 50)
        drops = max(drops, float((prev - cur).max()))
        prev = cur
    suite.check("haze monotone in t", drops, 0.0)

    clear, dmap = generate_scene(seed, 16, 16)
    dec = synthesize_hazy(clear, dmap, p)
    suite.check(
        "decomposition identity hazy = attenuated + haze",
        np.abs(dec.hazy - (dec.attenuated + dec.haze_total)).max(),
        0.0,
    )
    a_over_sigma = np.asarray(p.airlight) / p.scattering
    alt = dec.attenuated + a_over_sigma * (1.0 - dec.transmission)
    suite.check("attenuation/haze split consistency", np.abs(alt - dec.hazy).max(), 1e-12)
    return suite.results


def schedule_suite(corrupt: bool = False) -> list[CheckResult]:
    suite = _Suite().start()
    s = make_schedule(1000)
    if corrupt:  # negative-test hook: break alpha_bar monotonicity
        bar = s.alpha_bar.copy()
        bar[500] = bar[400]
        object.__setattr__(s, "alpha_bar", bar)

    lhs = s.alpha * (1.0 - s.alpha_bar[:-1]) + (1.0 - s.alpha)
    rhs = 1.0 - s.alpha_bar[1:]
    suite.check("variance recursion a(1-abar') + (1-a) = 1-abar", np.abs(lhs - rhs).max(), 1e-12)

    suite.check("alpha_bar strictly decreasing", float(np.diff(s.alpha_bar).max()), -1e-300)
    rec = np.abs(s.alpha_bar[1:] - s.alpha * s.alpha_bar[:-1]) / s.alpha_bar[1:]
    suite.check("alpha_bar recursion", rec.max(), 1e-12)
    suite.check("alpha_bar starts at one", abs(s.alpha_bar[0] - 1.0), 0.0)

    steps = subsequence(1000, 10)
    expected = np.array([1, 101, 201, 301, 401, 501, 601, 701, 801, 901, 1000])
    suite.check(
        "subsequence spacing (T=1000, S=10)",
        float(np.abs(steps - expected).max()) if steps.size == expected.size else 1.0,
        0.0,
    )
    return suite.results


def forward_suite(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    suite = _Suite().start()

    for T, tol in ((1000, 1e-4), (50, 1e-6)):
        p = _random_params(rng)
        depth = rng.uniform(0, 1, size=(8, 8))
        x0 = rng.uniform(0, 1, size=(8, 8, 3))
        s = make_schedule(T)
        zeros = np.zeros_like(x0)
        x = x0.copy()
        for t in range(1, T + 1):
            x = diffuse_step(x, haze_increment(depth, p, t, T), t, zeros, s)
        target = np.sqrt(s.alpha_bar[T]) * (x0 + haze_total(depth, p))
        suite.check(f"forward telescoping (T={T})", np.abs(x - target).max(), tol)

    s = make_schedule(100)
    x0 = rng.uniform(0, 1, (8, 8, 3))
    zeros = np.zeros_like(x0)
    worst = 0.0
    for t in (1, 50, 100):
        noise = rng.standard_normal(x0.shape)
        worst = max(
            worst,
            np.abs(diffuse_closed(x0, zeros, t, noise, s).x_t
                   - ddpm_forward_closed(x0, t, noise, s)).max(),
            np.abs(diffuse_step(x0, zeros, t, noise, s)
                   - ddpm_forward_step(x0, t, noise, s)).max(),
        )
    suite.check("haze-free reduction to DDPM (bitwise)", worst, 0.0)
    return suite.results


def sampler_suite(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    suite = _Suite().start()
    T, S = 1000, 10
    s = make_schedule(T)
    cfg = SamplerConfig(subsequence=subsequence(T, S))

    worst_final = 0.0
    worst_trace = 0.0
    for i in range(8):
        clear, depth = generate_scene(1000 + i, 32, 32)
        p = _random_params(rng)
        dec = synthesize_hazy(clear, depth, p)
        x0 = dec.attenuated
        noise = rng.standard_normal(x0.shape)
        x_T = diffuse_closed(x0, haze_at_step(depth, p, T, T), T, noise, s).x_t

        def eps_fn(x_t, h_t, hazy, t, _n=noise):
            return _n

        def h_fn(x_t, hazy, t, _d=depth, _p=p):
            return haze_at_step(_d, _p, t, T)

        trace = sample(dec.hazy, eps_fn, h_fn, s, cfg, seed=0, x_init=x_T)
        worst_final = max(worst_final, np.abs(trace.x0 - x0).max())
        for rec in trace.records:
            tgt = np.sqrt(s.alpha_bar[rec.t]) * (x0 + haze_at_step(depth, p, rec.t, T))
            tgt = tgt + np.sqrt(1.0 - s.alpha_bar[rec.t]) * noise
            worst_trace = max(worst_trace, np.abs(rec.x_t - tgt).max())
    suite.check("oracle sampler round trip (8 scenes)", worst_final, 1e-3)
    suite.check("oracle trace stays on forward trajectory", worst_trace, 1e-3)

    hazy = rng.uniform(0, 1, (8, 8, 3))
    proj = rng.standard_normal((8, 8, 3))
    cfg_small = SamplerConfig(subsequence=subsequence(200, 7))
    s_small = make_schedule(200)

    def eps_plain(x, t):
        return 0.3 * x + (0.01 * t / 200) * proj

    trace = sample(
        hazy,
        lambda x, h, hz, t: eps_plain(x, t),
        lambda x, hz, t: np.zeros_like(x),
        s_small,
        cfg_small,
        seed=17,
    )
    ref = ddim_sample(
        np.random.default_rng(17).standard_normal(hazy.shape),
        eps_plain,
        cfg_small.subsequence,
        s_small,
    )
    suite.check("haze-free reduction to DDIM (bitwise)", np.abs(trace.x0 - ref).max(), 0.0)

    clear, depth = generate_scene(77, 32, 32)
    t_r = transmission(depth, 1.5)
    restored = restore(clear * t_r, (1.0 - t_r) * np.ones((1, 1, 3)),
                       SamplerConfig(subsequence=[1]))
    suite.check(
        "restoration inversion PSNR", psnr(restored, clear), 50.0,
        larger_is_better=True, detail="dB",
    )

    img = np.zeros((17, 17, 3))
    img[8, 8] = 1.0
    sigma = 1.2
    radius = int(np.ceil(3 * sigma))
    ax = np.arange(-radius, radius + 1)
    k1 = np.exp(-0.5 * (ax / sigma) ** 2)
    k1 /= k1.sum()
    k2 = np.outer(k1, k1)
    padded = np.pad(img, ((radius, radius), (radius, radius), (0, 0)), mode="reflect")
    direct = np.zeros_like(img)
    for i in range(17):
        for j in range(17):
            direct[i, j] = (padded[i : i + 2 * radius + 1, j : j + 2 * radius + 1]
                            * k2[:, :, None]).sum(axis=(0, 1))
    suite.check(
        "gaussian blur vs direct convolution",
        np.abs(gaussian_blur(img, sigma) - direct).max(),
        1e-12,
    )
    return suite.results


def gradient_suite(seed: int = 0, coords: int = 100) -> list[CheckResult]:
    suite = _Suite().start()
    rng = np.random.default_rng(seed)

    nets = [
        ("denoiser", denoiser_architecture(),
         lambda p, x, hazy, h: denoiser_forward(p, x, h, hazy, 13)),
        ("haze estimator", htnet_architecture(),
         lambda p, x, hazy, h: htnet_forward(p, x, hazy, 13)),
    ]
    for label, arch, fwd in nets:
        p = init_params(arch, seed=seed, dtype=np.float64)
        head = p.tensors["out.w"]
        bound = np.sqrt(6.0 / np.prod(head.data.shape[:-1]))
        head.data = rng.uniform(-bound, bound, head.data.shape)

        x = rng.standard_normal((1, 8, 8, 3))
        hazy = rng.uniform(0, 1, (1, 8, 8, 3))
        h = rng.uniform(0, 1, (1, 8, 8, 3))
        proj = rng.standard_normal((1, 8, 8, 3))

        def loss():
            return float(ad.sum_(ad.mul(fwd(p, x, hazy, h), Tensor(proj))).data)

        p.zero_grad()
        ad.sum_(ad.mul(fwd(p, x, hazy, h), Tensor(proj))).backward()

        names = sorted(p.tensors)
        worst = 0.0
        step = 1e-4
        for _ in range(coords):
            name = names[int(rng.integers(len(names)))]
            data = p.tensors[name].data
            idx = np.unravel_index(int(rng.integers(data.size)), data.shape)
            old = data[idx]
            data[idx] = old + step
            hi = loss()
            data[idx] = old - step
            lo = loss()
            data[idx] = old
            fd = (hi - lo) / (2 * step)
            an = p.tensors[name].grad[idx]
            err = abs(fd - an)
            denom = max(abs(fd), abs(an))
            if err > 1e-8:  # absolute floor for vanishing gradients
                worst = max(worst, err / denom if denom > 0 else np.inf)
        suite.check(f"{label} gradients vs finite differences ({coords} coords)",
                    worst, 1e-3)
    return suite.results


SUITES = {
    "physics": physics_suite,
    "schedule": schedule_suite,
    "forward": forward_suite,
    "sampler": sampler_suite,
    "gradients": gradient_suite,
}


def run_suites(names: list[str], corrupt_schedule: bool = False) -> tuple[bool, list[CheckResult]]:
    results: list[CheckResult] = []
    for name in names:
        if name == "schedule":
            results.extend(schedule_suite(corrupt=corrupt_schedule))
        else:
            results.extend(SUITES[name]())
    return all(r.passed for r in results), results


def format_result(r: CheckResult) -> str:
    status = "PASS" if r.passed else "FAIL"
    unit = f" {r.detail}" if r.detail else ""
    return (
        f"[{status}] {r.name}: measured {r.measured:.3g}{unit} "
        f"(tolerance {r.tolerance:.3g}, {r.seconds:.2f}s)"
    )
