"""Weighted norms, virial ledgers, and spectral audits for lattice runs.

The spectral pieces live on the shifted contour: multiplying a field by
e^{a n} before the transform evaluates its Fourier series at xi + ia,
so every decay statement becomes a plain supremum or margin on a real
xi-grid.  Reports are small dataclasses with as_dict() for JSON; series
go to CSV and plots to standalone SVG (no plotting dependency).
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .kdv import GridField, SolitonFamily, TauLadder
from .lattice import LatticeField, WeightKind, WeightSpec
from .waves import kappa_of_speed


# ---------------------------------------------------------------------------
# weighted norms, log domain


def _log_weight(spec, n):
    """Log of the factor multiplying the squared field.

    Exponential kinds weight the field itself (the norm is
    ||e^{a(n-x0)} u|| etc.), so their square factor is doubled;
    the sigmoid kind weights the square once, returning
    || psi^(1/2) u ||.
    """
    s = np.asarray(n, dtype=float) - spec.center
    if spec.kind is WeightKind.RIGHT_GROWING:
        return 2.0 * spec.a * s
    if spec.kind is WeightKind.TWO_SIDED:
        return -2.0 * spec.a * np.abs(s)
    return np.log1p(np.tanh(spec.a * s))


def weighted_norm(u, weight):
    """Weighted l2 (lattice) or L2 (grid) norm, computed in the log
    domain so extreme a * window products survive; the final
    exponentiation may still return inf for genuinely huge norms."""
    if isinstance(u, GridField):
        logw = _log_weight(weight, u.x)
        with np.errstate(divide="ignore"):
            terms = 2.0 * np.log(np.abs(u.values)) + logw
        return float(np.exp(0.5 * (logsumexp(terms) + np.log(u.dx))))
    logw = _log_weight(weight, u.sites)
    with np.errstate(divide="ignore"):
        terms = np.concatenate([
            2.0 * np.log(np.abs(u.r)) + logw,
            2.0 * np.log(np.abs(u.p)) + logw,
        ])
    return float(np.exp(0.5 * logsumexp(terms)))


# ---------------------------------------------------------------------------
# decay fitting


@dataclass
class DecayFit:
    rate: float
    intercept: float
    r_squared: float
    t_start: float
    samples: int

    def value_at(self, t):
        return np.exp(self.intercept + self.rate * np.asarray(t))

    def as_dict(self):
        return {
            "rate": self.rate,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "t_start": self.t_start,
            "samples": self.samples,
        }


def decay_fit(times, values, window=0.5):
    """Least-squares fit of log(value) against t over the trailing
    fraction `window` of the samples.

    Multiplying the series by a constant only shifts the intercept.
    Raises ValueError for non-positive values or fewer than 10 samples
    in the window.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.shape != values.shape or times.ndim != 1:
        raise ValueError("times and values must be equal-length vectors")
    if not 0.0 < window <= 1.0:
        raise ValueError("window must be a fraction in (0, 1]")
    start = int(np.floor((1.0 - window) * times.size))
    t = times[start:]
    v = values[start:]
    if t.size < 10:
        raise ValueError("need at least 10 samples in the fit window")
    if np.any(v <= 0.0):
        raise ValueError("decay_fit needs strictly positive values")
    y = np.log(v)
    coeff = np.polyfit(t, y, 1)
    pred = np.polyval(coeff, t)
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return DecayFit(float(coeff[0]), float(coeff[1]), r2, float(t[0]),
                    int(t.size))


# ---------------------------------------------------------------------------
# virial ledger


@dataclass
class VirialReport:
    """Time series of the sigmoid-weighted energy ledger.

    psi_energy is the monotone object (sigmoid-weighted energy density
    sum); sech_energy weights the same density with sech^2; psi_vsq and
    sech_vsq are the corresponding plain squared norms of the state,
    which enter the integrated bound.  flags lists hypothesis
    violations; the series are computed either way.
    """

    times: np.ndarray
    psi_energy: np.ndarray
    sech_energy: np.ndarray
    psi_vsq: np.ndarray
    sech_vsq: np.ndarray
    a: float
    flags: list = field(default_factory=list)
    eps: float = None

    def max_step_increase(self):
        return float(np.max(np.diff(self.psi_energy), initial=-np.inf))

    def fitted_constant(self):
        """Largest C with psi_vsq(T) + C a eps^2 integral(sech_vsq)
        <= psi_vsq(0); requires eps."""
        if self.eps is None:
            raise ValueError("fitted_constant needs eps")
        drop = self.psi_vsq[0] - self.psi_vsq[-1]
        used = np.trapezoid(self.sech_vsq, self.times)
        if used <= 0.0:
            return np.inf
        return float(drop / (self.a * self.eps**2 * used))

    def as_dict(self):
        out = {
            "a": self.a,
            "samples": int(self.times.size),
            "max_step_increase": self.max_step_increase(),
            "initial_psi_energy": float(self.psi_energy[0]),
            "final_psi_energy": float(self.psi_energy[-1]),
            "flags": list(self.flags),
        }
        if self.eps is not None:
            out["eps"] = self.eps
            out["fitted_constant"] = self.fitted_constant()
        return out


def virial_series(trajectory, a, xtilde, model, eps=None, k1=1.0):
    """Sigmoid-weighted energy ledger of a small-solution run.

    trajectory: snapshots of the freely evolving small field; a: weight
    slope; xtilde: callable t -> center position.  The decay hypothesis
    needs the center to outrun the sound speed by k1^2 eps^2 / 24 and
    the combination a*eps + |v(0)| to stay below eps^2 / 2; violations
    are flagged, never fatal.
    """
    if not trajectory.fields:
        raise ValueError("trajectory carries no snapshots")
    times = np.asarray(trajectory.times, dtype=float)
    centers = np.array([float(xtilde(t)) for t in times])
    flags = []
    if eps is not None:
        speed = np.gradient(centers, times) if times.size > 1 else None
        floor = 1.0 + (k1 * eps) ** 2 / 24.0
        if speed is not None and np.min(speed) < floor:
            flags.append(
                "center speed %.6g below the hypothesis floor %.6g"
                % (float(np.min(speed)), floor)
            )
        v0 = trajectory.fields[0].norm()
        if a * eps + v0 > 0.5 * eps**2:
            flags.append(
                "a*eps + |v0| = %.3g exceeds the smallness budget %.3g"
                % (a * eps + v0, 0.5 * eps**2)
            )
    psi_e = np.empty(times.size)
    sech_e = np.empty(times.size)
    psi_v = np.empty(times.size)
    sech_v = np.empty(times.size)
    for i, snap in enumerate(trajectory.fields):
        s = snap.sites - centers[i]
        psi = 1.0 + np.tanh(a * s)
        # sech^2 written so large |a*s| underflows to zero instead of
        # overflowing the intermediate cosh.
        q = np.exp(-2.0 * np.abs(a * s))
        sech2 = 4.0 * q / (1.0 + q) ** 2
        h1 = 0.5 * snap.p**2 + model(snap.r, 0)
        vsq = snap.r**2 + snap.p**2
        psi_e[i] = np.sum(psi * h1)
        sech_e[i] = np.sum(sech2 * h1)
        psi_v[i] = np.sum(psi * vsq)
        sech_v[i] = np.sum(sech2 * vsq)
    return VirialReport(times, psi_e, sech_e, psi_v, sech_v, float(a),
                        flags, eps)


# ---------------------------------------------------------------------------
# smooth cutoffs and the band decomposition


def _bump_side(u):
    out = np.zeros_like(u)
    pos = u > 0.0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def smooth_cutoff(s):
    """C-infinity cutoff: 1 on [-1, 1], 0 outside (-2, 2), built from
    the standard exp(-1/u) bump transition."""
    s = np.abs(np.asarray(s, dtype=float))
    up = _bump_side(2.0 - s)
    down = _bump_side(s - 1.0)
    with np.errstate(invalid="ignore"):
        out = up / (up + down)
    out[s <= 1.0] = 1.0
    out[s >= 2.0] = 0.0
    return out


def _diag_transform(xi, values_f):
    """Apply P(xi)^* to the stacked transform (Fr, Fp) -> (f+, f-)."""
    half = np.exp(0.5j * xi)
    fr, fp = values_f
    fplus = (fr - half * fp) / np.sqrt(2.0)
    fminus = (np.conj(half) * fr + fp) / np.sqrt(2.0)
    return fplus, fminus


def _undiag_transform(xi, fplus, fminus):
    half = np.exp(0.5j * xi)
    fr = (fplus + half * fminus) / np.sqrt(2.0)
    fp = (-np.conj(half) * fplus + fminus) / np.sqrt(2.0)
    return fr, fp


@dataclass
class BandSplit:
    """Frequency decomposition of a contour-shifted lattice field.

    Parts are complex functions of xi in [-pi, pi): f1p (low band,
    |xi| <= 2 K eps), f2p (middle), f3p (high) on the branch moving
    with the waves, fm the counter-moving branch.  The parts of the
    co-moving branch add back to it exactly.
    """

    xi: np.ndarray
    f1p: np.ndarray
    f2p: np.ndarray
    f3p: np.ndarray
    fm: np.ndarray
    cutoffs: tuple
    eps: float
    k1: float
    c1eps: float
    t: float
    offset: int
    length: int

    @property
    def fplus(self):
        return self.f1p + self.f2p + self.f3p

    def _norm_sq(self, part):
        dxi = 2.0 * np.pi / self.xi.size
        return float(np.sum(np.abs(part) ** 2) * dxi)

    def mass_fractions(self):
        total = self._norm_sq(self.fplus) + self._norm_sq(self.fm)
        return {
            "low": self._norm_sq(self.f1p) / total,
            "middle": self._norm_sq(self.f2p) / total,
            "high": self._norm_sq(self.f3p) / total,
            "minus": self._norm_sq(self.fm) / total,
        }

    def reconstruct(self):
        """Invert back to the weighted field e^{k1 eps n} w."""
        xi = np.fft.ifftshift(self.xi)
        fplus = np.fft.ifftshift(self.fplus)
        fminus = np.fft.ifftshift(self.fm)
        phase = np.exp(-1j * self.c1eps * self.t * xi)
        fr, fp = _undiag_transform(xi, phase * fplus, phase * fminus)
        ramp = np.exp(1j * xi * self.offset)
        r = np.fft.ifft(fr * ramp) * np.sqrt(2.0 * np.pi)
        p = np.fft.ifft(fp * ramp) * np.sqrt(2.0 * np.pi)
        return LatticeField(self.offset, r.real[: self.length],
                            p.real[: self.length])


def band_split(w, eps, k1=1.0, c1eps=None, K=2.0, delta=1.0, t=0.0):
    """Split a lattice field into moving-frame frequency bands.

    The contour shift to xi + i k1 eps is realized by weighting with
    e^{k1 eps n} in physical space before transforming; the branch
    phases carry e^{i c1eps t xi} so band contents are stationary in
    the frame of the slowest wave.
    """
    if c1eps is None:
        c1eps = 1.0 + (k1 * eps) ** 2 / 6.0
    length = len(w)
    if length * K * eps < 4.0 * np.pi:
        raise ValueError(
            "window of %d sites cannot resolve the low band; need at "
            "least %d" % (length, int(np.ceil(4.0 * np.pi / (K * eps))))
        )
    n_fft = 1 << max(int(np.ceil(np.log2(2 * length))), 8)
    ramp = np.exp(k1 * eps * w.sites)
    wr = np.zeros(n_fft)
    wp = np.zeros(n_fft)
    wr[:length] = w.r * ramp
    wp[:length] = w.p * ramp
    xi = 2.0 * np.pi * np.fft.fftfreq(n_fft)
    shift = np.exp(-1j * xi * w.offset)
    fr = np.fft.fft(wr) * shift / np.sqrt(2.0 * np.pi)
    fp = np.fft.fft(wp) * shift / np.sqrt(2.0 * np.pi)
    fplus, fminus = _diag_transform(xi, (fr, fp))
    phase = np.exp(1j * c1eps * t * xi)
    fplus = phase * fplus
    fminus = phase * fminus
    xi_s = np.fft.fftshift(xi)
    fplus = np.fft.fftshift(fplus)
    fminus = np.fft.fftshift(fminus)
    low = smooth_cutoff(xi_s / (K * eps))
    wide = smooth_cutoff(xi_s / delta)
    return BandSplit(
        xi=xi_s,
        f1p=low * fplus,
        f2p=(wide - low) * fplus,
        f3p=(1.0 - wide) * fplus,
        fm=fminus,
        cutoffs=(K * eps, delta),
        eps=eps,
        k1=k1,
        c1eps=c1eps,
        t=t,
        offset=w.offset,
        length=length,
    )


# ---------------------------------------------------------------------------
# dispersion margins on the shifted contour


def lambda_branches(xi, c1eps):
    """The two branch symbols c1eps * xi -/+ 2 sin(xi / 2); accepts
    complex xi."""
    xi = np.asarray(xi)
    s = 2.0 * np.sin(xi / 2.0)
    return c1eps * xi - s, c1eps * xi + s


@dataclass
class DispersionReport:
    eps: float
    a: float
    K: float
    delta: float
    k1: float
    c1eps: float
    eta: np.ndarray
    margins: dict
    cubic_error: float
    cubic_scale: float

    @property
    def holds(self):
        return all(v > 0.0 for v in self.margins.values())

    def as_dict(self):
        return {
            "eps": self.eps,
            "a": self.a,
            "K": self.K,
            "delta": self.delta,
            "k1": self.k1,
            "c1eps": self.c1eps,
            "grid_points": int(self.eta.size),
            "margins": {k: float(v) for k, v in self.margins.items()},
            "cubic_error": self.cubic_error,
            "cubic_scale": self.cubic_scale,
            "holds": self.holds,
        }


def dispersion_check(eps, a, K=2.0, delta=1.0, k1=1.0, points=10001):
    """Evaluate the shifted-contour branch bounds on an eta-grid.

    Checks, each on its own eta-range over [-pi/eps, pi/eps]:
      quadratic:  Im lambda_+ >= eps^3 a eta^2 / 16   (K <= |eta| <= 2 delta/eps)
      high_plus:  Im lambda_+ >= eps a (1 - cos delta)  (|eta| >= 2 delta/eps)
      minus:      Im lambda_- >= eps a                  (everywhere)
    plus the cubic-polynomial approximation error of lambda_+ on
    |eta| <= 2K, reported absolutely and relative to eps^5 <eta>^5.

    The high band starts where the quadratic band ends: the constant
    1 - cos(delta) needs eps |eta| >= 2 delta (half-angle under the
    cosine), and the two ranges together still cover everything past K.
    """
    if not 0.0 < a < 2.0 * k1:
        raise ValueError("a must lie in (0, 2 k1)")
    if not 0.0 < delta < np.pi:
        raise ValueError("delta must lie in (0, pi)")
    c1eps = 1.0 + (k1 * eps) ** 2 / 6.0
    eta = np.linspace(-np.pi / eps, np.pi / eps, points)
    z = eps * (eta + 1j * a)
    lam_p, lam_m = lambda_branches(z, c1eps)
    margins = {}
    quad = (np.abs(eta) >= K) & (np.abs(eta) <= 2.0 * delta / eps)
    margins["quadratic"] = float(np.min(
        lam_p.imag[quad] - eps**3 * a * eta[quad] ** 2 / 16.0
    ))
    high = np.abs(eta) >= 2.0 * delta / eps
    margins["high_plus"] = float(np.min(
        lam_p.imag[high] - eps * a * (1.0 - np.cos(delta))
    ))
    margins["minus"] = float(np.min(lam_m.imag - eps * a))
    core = np.abs(eta) <= 2.0 * K
    zeta = eta[core] + 1j * a
    cubic = eps**3 / 24.0 * (zeta**3 + 4.0 * k1**2 * zeta)
    err = np.abs(lam_p[core] - cubic)
    bracket = (1.0 + eta[core] ** 2) ** 2.5
    return DispersionReport(
        eps=eps, a=a, K=K, delta=delta, k1=k1, c1eps=c1eps, eta=eta,
        margins=margins,
        cubic_error=float(np.max(err)),
        cubic_scale=float(np.max(err / (eps**5 * bracket))),
    )


# ---------------------------------------------------------------------------
# resolvent symbol bound and Fourier tail comparison


def _symbol_sup(eps, a, c, xi):
    z = xi + 1j * a * eps
    denom = c**2 * z**2 - 4.0 * np.sin(z / 2.0) ** 2
    return float(np.max(np.abs(z**2 / denom)))


def _train_profile(family, eps):
    """KdV train slope profile at t=0, scaled onto the lattice:
    g(x) = (eps^2 / 6) phi_N(eps x)."""
    fam = SolitonFamily(list(family), [0.0] * len(family))
    ladder = TauLadder(fam, fam.n)
    span = 24.0 / (min(family) * eps)

    def g(x):
        return eps**2 / 6.0 * ladder.second_derivative(0.0, eps * np.asarray(x))

    return g, span


def transform_tail(family, eps, xi):
    """Series-transform and integral-transform of the scaled train
    profile on the given xi values, computed independently (integer
    samples against a fine trapezoid)."""
    g, span = _train_profile(family, eps)
    xi = np.asarray(xi, dtype=float)
    n = np.arange(-np.ceil(span), np.ceil(span) + 1.0)
    gn = g(n)
    disc = np.exp(-1j * np.outer(xi, n)) @ gn / np.sqrt(2.0 * np.pi)
    h = 0.25
    x = np.arange(-np.ceil(span), np.ceil(span) + h / 2.0, h)
    gx = g(x)
    cont = np.exp(-1j * np.outer(xi, x)) @ gx * h / np.sqrt(2.0 * np.pi)
    return disc, cont


@dataclass
class SymbolTailReport:
    eps_values: tuple
    a: float
    family: tuple
    symbol_sup: dict
    tail_diff: dict
    tail_slope: float
    tail_r_squared: float

    @property
    def symbol_ratio(self):
        vals = list(self.symbol_sup.values())
        return max(vals) / min(vals)

    def as_dict(self):
        return {
            "eps_values": list(self.eps_values),
            "a": self.a,
            "family": list(self.family),
            "symbol_sup": {"%g" % k: v for k, v in self.symbol_sup.items()},
            "symbol_ratio": self.symbol_ratio,
            "tail_diff": {"%g" % k: v for k, v in self.tail_diff.items()},
            "tail_slope": self.tail_slope,
            "tail_r_squared": self.tail_r_squared,
        }


def symbol_and_tail_check(eps_values, a, c=None, family=(1.0,),
                          xi_points=4001, tail_eps_values=None):
    """Two shifted-contour audits across a list of eps.

    (i) eps^2 * sup |m(xi + i a eps)| for the wave-speed resolvent
    symbol m(z) = z^2 / (c^2 z^2 - 4 sin^2(z/2)), c defaulting to the
    sonic normalization 1 + eps^2/6 per eps.  (ii) the sup over
    [-pi, pi] of |series transform - integral transform| of the scaled
    train profile, with a log-linear fit of its decay against 1/eps.

    The tail difference drops below double precision near eps ~ 0.15
    for unit wave numbers, so the fit uses tail_eps_values when given
    (pick them large enough that e^{-pi^2/(2 k eps)} clears 1e-15).
    """
    eps_values = tuple(float(e) for e in eps_values)
    if len(eps_values) < 2:
        raise ValueError("need at least two eps values to compare")
    tail_eps = (eps_values if tail_eps_values is None
                else tuple(float(e) for e in tail_eps_values))
    if len(tail_eps) < 2:
        raise ValueError("need at least two tail eps values to fit")
    xi = np.linspace(-np.pi, np.pi, xi_points)
    sym = {}
    tail = {}
    for eps in eps_values:
        ceff = (1.0 + eps**2 / 6.0) if c is None else c
        sym[eps] = eps**2 * _symbol_sup(eps, a, ceff, xi)
    xi_tail = np.linspace(-np.pi, np.pi, 257)
    for eps in tail_eps:
        disc, cont = transform_tail(family, eps, xi_tail)
        tail[eps] = float(np.max(np.abs(disc - cont)))
    inv = np.array([1.0 / e for e in tail_eps])
    logd = np.log([tail[e] for e in tail_eps])
    coeff = np.polyfit(inv, logd, 1)
    pred = np.polyval(coeff, inv)
    ss_res = float(np.sum((logd - pred) ** 2))
    ss_tot = float(np.sum((logd - np.mean(logd)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return SymbolTailReport(
        eps_values=eps_values, a=a, family=tuple(family),
        symbol_sup=sym, tail_diff=tail,
        tail_slope=float(coeff[0]), tail_r_squared=r2,
    )


# ---------------------------------------------------------------------------
# scaled stability metrics


def _w_norm(f, state):
    total = 0.0
    for ci, xi in zip(state.c, state.x):
        spec = WeightSpec(kappa_of_speed(ci), xi, WeightKind.TWO_SIDED)
        total += weighted_norm(f, spec) ** 2
    return np.sqrt(total)


def _time_l2(times, series):
    return float(np.sqrt(np.trapezoid(np.asarray(series) ** 2, times)))


def stability_metrics(track, split, eps):
    """The five scaled suprema of the stability argument, with the
    tracked split standing in for the per-wave cascade pieces; all
    entries are proxies in that sense and marked as such."""
    times = track.times
    states = track.states
    n = track.n_waves
    kap1 = kappa_of_speed(float(np.min(track.speeds[0])))
    dev = np.abs(track.speeds - track.speeds[0][None, :])
    xdot_gap = np.abs(track.xdot - track.speeds)
    m1 = float(np.max(np.sum(dev + xdot_gap, axis=1))) / eps**2
    out = {"M1": m1, "proxy": True}
    if split is None:
        return out
    if split.times.size != times.size:
        raise ValueError("split and track must sample the same times")
    v1_l2 = split.free_l2
    v2_l2 = split.bound_l2
    v1_w = [_w_norm(f, s) for f, s in zip(split.free, states)]
    v2_w = [_w_norm(f, s) for f, s in zip(split.bound, states)]
    psi1 = [
        weighted_norm(f, WeightSpec(kap1, s.x[0], WeightKind.SIGMOID))
        for f, s in zip(split.bound, states)
    ]
    out["M2"] = float(np.max(v2_l2) ** 2) / eps**3
    out["M3"] = float(np.max(v1_l2)) / eps**1.5 + _time_l2(times, v1_w)
    out["M4"] = float(np.max(psi1)) / eps**1.5 + _time_l2(times, v2_w)
    m5 = 0.0
    for k in range(1, n + 1):
        xk = [
            weighted_norm(
                f, WeightSpec(kap1, s.x[n - k], WeightKind.RIGHT_GROWING)
            )
            for f, s in zip(split.bound, states)
        ]
        m5 += float(np.max(xk)) / eps**1.5 + _time_l2(times, xk)
    out["M5"] = m5
    return out


# ---------------------------------------------------------------------------
# artifact output


def series_to_csv(path, columns):
    """Write named equal-length series as CSV with %.17g values."""
    names = list(columns)
    arrays = [np.asarray(columns[k]) for k in names]
    size = arrays[0].size
    if any(a.size != size for a in arrays):
        raise ValueError("all columns must have the same length")
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(size):
            fh.write(",".join("%.17g" % a[i] for a in arrays) + "\n")


def report_to_json(report, path):
    with open(path, "w") as fh:
        json.dump(report.as_dict(), fh, indent=1)
        fh.write("\n")


def svg_series_plot(path, times, values, fit=None, title="", log_scale=False):
    """Standalone SVG of a series against time, optionally overlaying a
    DecayFit as a dashed line.  Values must be positive for log_scale."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size != values.size or times.size < 2:
        raise ValueError("need two or more samples to plot")
    width, height, margin = 640, 400, 50
    y = np.log10(values) if log_scale else values
    if log_scale and not np.all(values > 0.0):
        raise ValueError("log-scale plots need positive values")
    y_min, y_max = float(np.min(y)), float(np.max(y))
    if y_max == y_min:
        y_max = y_min + 1.0
    t_min, t_max = float(times[0]), float(times[-1])

    def sx(t):
        return margin + (t - t_min) / (t_max - t_min) * (width - 2 * margin)

    def sy(v):
        return height - margin - (v - y_min) / (y_max - y_min) * (
            height - 2 * margin)

    def polyline(ts, vs, style):
        pts = " ".join("%.2f,%.2f" % (sx(t), sy(v)) for t, v in zip(ts, vs))
        return '<polyline fill="none" %s points="%s"/>' % (style, pts)

    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d" '
        'viewBox="0 0 %d %d">' % (width, height, width, height),
        '<rect width="%d" height="%d" fill="white"/>' % (width, height),
        '<line x1="%d" y1="%d" x2="%d" y2="%d" stroke="black"/>'
        % (margin, height - margin, width - margin, height - margin),
        '<line x1="%d" y1="%d" x2="%d" y2="%d" stroke="black"/>'
        % (margin, margin, margin, height - margin),
        polyline(times, y, 'stroke="steelblue" stroke-width="1.5"'),
    ]
    if fit is not None:
        fv = fit.value_at(times)
        fy = np.log10(fv) if log_scale else fv
        parts.append(polyline(
            times, fy,
            'stroke="crimson" stroke-width="1.2" stroke-dasharray="6 4"'))
        parts.append(
            '<text x="%d" y="%d" font-size="12">rate %.4g, R^2 %.4f</text>'
            % (margin + 6, margin + 14, fit.rate, fit.r_squared))
    if title:
        parts.append('<text x="%d" y="%d" font-size="13">%s</text>'
                     % (margin, margin - 10, title))
    parts.append(
        '<text x="%d" y="%d" font-size="11">t in [%g, %g]%s</text>'
        % (margin, height - margin + 28, t_min, t_max,
           ", log10 scale" if log_scale else ""))
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
