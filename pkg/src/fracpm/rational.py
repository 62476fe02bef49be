"""Rational approximation of z**(-s) on a positive interval.

The approximant is found by a relative-error weighted AAA iteration
(greedy support points, barycentric form with SVD weights) on log-spaced
samples, converted to partial fractions

    r(z) = c0 + sum_j w_j / (z - p_j),

and certified by evaluating that partial-fraction form on a dense log grid.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import ConvergenceError

N_FIT = 2000
N_VALIDATE = 10_000
MAX_DEGREE = 30


@dataclass(frozen=True)
class RationalApprox:
    s: float
    lo: float
    hi: float
    const: complex
    poles: np.ndarray
    weights: np.ndarray
    error: float

    @property
    def degree(self) -> int:
        return len(self.poles)

    @property
    def is_real(self) -> bool:
        return bool(np.all(self.poles.imag == 0) and np.all(self.weights.imag == 0)
                    and np.imag(self.const) == 0)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        out = np.full(z.shape, self.const, dtype=complex)
        for p, w in zip(self.poles, self.weights):
            out += w / (z - p)
        return out.real if self.is_real else out

    def relative_error(self, z):
        z = np.asarray(z, dtype=float)
        return np.abs(self(z) * z ** self.s - 1.0)


def _aaa_steps(x, f, wt, m):
    """Weighted AAA; yields (support points, values, barycentric weights)
    after each of the first ``m`` greedy steps."""
    mask = np.ones(len(x), dtype=bool)
    R = np.full(len(x), np.mean(f))
    idx = []
    for _ in range(m):
        err = wt * np.abs(f - R)
        err[~mask] = -1.0
        j = int(np.argmax(err))
        idx.append(j)
        mask[j] = False
        zj, fj = x[idx], f[idx]
        C = 1.0 / (x[mask, None] - zj[None, :])
        Aw = wt[mask, None] * (f[mask, None] * C - C * fj[None, :])
        # column scaling keeps the SVD well conditioned across decades
        col = np.linalg.norm(Aw, axis=0)
        col[col == 0] = 1.0
        _, _, Vh = np.linalg.svd(Aw / col, full_matrices=False)
        bw = Vh[-1].conj() / col
        R = f.copy()
        R[mask] = (C @ (bw * fj)) / (C @ bw)
        yield zj, fj, bw


def _partial_fractions(zj, fj, bw):
    m = len(zj)
    if m == 1:
        return complex(fj[0]), np.empty(0, complex), np.empty(0, complex)
    E = np.zeros((m + 1, m + 1), dtype=complex)
    E[0, 1:] = bw
    E[1:, 0] = 1.0
    E[1:, 1:] = np.diag(zj)
    Bm = np.eye(m + 1, dtype=complex)
    Bm[0, 0] = 0.0
    ev = scipy.linalg.eigvals(E, Bm)
    poles = ev[np.isfinite(ev)]
    poles = poles[np.argsort(poles.real)]
    # residues of N/D at simple poles: N(p) / D'(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        C = 1.0 / (poles[:, None] - zj[None, :])
        res = (C @ (bw * fj)) / (-(C ** 2) @ bw)
    const = np.sum(bw * fj) / np.sum(bw)
    return const, poles, res


def _real_poles(poles, res, x_min, imag_tol=1e-2):
    """Real parts of the poles (and residues) that lie near the negative axis.

    The exact function is Stieltjes, so its good rational approximants have
    real negative poles; imaginary parts are rounding artefacts of the
    eigenvalue solve, largest for poles close to the origin.  Anything else
    (Froissart doublets, poles on the right half line) is discarded.
    """
    ok = np.isfinite(poles) & np.isfinite(res)
    p, r = poles[ok], res[ok]
    keep = (np.abs(p.imag) <= imag_tol * np.abs(p) + 1e-3 * x_min) & (p.real < 0)
    p, r = p[keep].real, r[keep].real
    order = np.argsort(p)
    return p[order], r[order]


def _max_rel_err(x, s, const, poles, res):
    vals = const + (res[None, :] / (x[:, None] - poles[None, :])).sum(axis=1)
    return float(np.max(np.abs(vals * x ** s - 1.0)))


def _columns(x, s, poles):
    cols = np.column_stack([np.ones_like(x)] + [1.0 / (x - p) for p in poles])
    cols *= (x ** s)[:, None]
    norms = np.linalg.norm(cols, axis=0)
    return cols / norms, norms


def _lstsq_refit(x, s, poles):
    cols, norms = _columns(x, s, poles)
    coef = np.linalg.lstsq(cols, np.ones_like(x), rcond=None)[0] / norms
    return coef[0], poles, coef[1:]


def _nnls_refit(x, s, poles, lawson_steps=20):
    """Nonnegative constant and residues, poles fixed.

    z**(-s) is a Stieltjes function, so residues (and the constant) are
    nonnegative; this zeroes out spurious or near-duplicate poles.  Lawson
    reweighting pushes the least-squares fit towards minimax.
    """
    cols, norms = _columns(x, s, poles)
    rhs = np.ones_like(x)
    w = np.full(len(x), 1.0 / len(x))
    best = None
    for _ in range(lawson_steps + 1):
        sw = np.sqrt(w)
        try:
            coef, _ = scipy.optimize.nnls(cols * sw[:, None], rhs * sw,
                                          maxiter=50 * cols.shape[1])
        except RuntimeError:
            break
        err = np.abs(cols @ coef - rhs)
        if best is None or err.max() < best[0]:
            best = (err.max(), coef)
        w = w * err
        total = w.sum()
        if total == 0 or not np.isfinite(total):
            break
        w /= total
    if best is None:
        return None
    coef = best[1] / norms
    keep = coef[1:] > 0
    return coef[0], poles[keep], coef[1:][keep]


def _fit(s, x, support):
    """Best of several real partial-fraction forms with nonnegative weights."""
    zj, fj, bw = support
    const, poles, res = _partial_fractions(zj, fj, bw)
    p, r = _real_poles(poles, res, x.min())
    cands = [(float(np.real(const)), p, r), _lstsq_refit(x, s, p), _nnls_refit(x, s, p)]
    best, best_err = None, np.inf
    for c in cands:
        if c is None or c[0] < 0 or np.any(c[2] <= 0):
            continue
        err = _max_rel_err(x, s, *c)
        if err < best_err:
            best, best_err = c, err
    if best is None:
        return None
    return best


def _scaled_samples(s, lo, hi):
    scale = np.sqrt(lo * hi)
    x = np.geomspace(lo / scale, hi / scale, N_FIT)
    return scale, x, x ** (-s)


def _unscale(s, scale, const, poles, res):
    # r(z) = scale^-s * g(z / scale)
    factor = scale ** (-s)
    return (complex(const * factor), np.asarray(poles, complex) * scale,
            np.asarray(res, complex) * factor * scale)


def _certify(s, lo, hi, const, poles, res):
    approx = RationalApprox(s, lo, hi, const, poles, res, np.inf)
    z = np.geomspace(lo, hi, N_VALIDATE)
    err = float(np.max(approx.relative_error(z)))
    return RationalApprox(s, lo, hi, const, poles, res, err)


def build_rational_approx(s, lo, hi, tol=1e-9, degree=None, max_degree=MAX_DEGREE):
    """Partial-fraction approximant of z**(-s) on [lo, hi].

    With ``degree=None`` the number of poles grows until the certified maximum
    relative error on the validation grid is at most ``tol``.  With a fixed
    ``degree`` the best approximant found with at most that many poles is
    returned whatever its error, so errors are non-increasing in ``degree``.

    Raises
    ------
    ConvergenceError
        If ``tol`` is not reached with ``max_degree`` poles.
    """
    if not (0.0 < s < 1.0):
        raise ValueError("s must lie in (0, 1)")
    if not (0.0 < lo <= hi):
        raise ValueError(f"need 0 < lo <= hi, got [{lo}, {hi}]")
    if hi / lo - 1.0 < 1e-14:
        mid = np.sqrt(lo * hi)
        return _certify(s, lo, hi, complex(mid ** (-s)), np.empty(0, complex),
                        np.empty(0, complex))
    scale, x, f = _scaled_samples(s, lo, hi)
    steps = _aaa_steps(x, f, 1.0 / f, (degree if degree is not None else max_degree) + 1)
    next(steps)  # one support point: the constant fit
    best = None
    for support in steps:
        fit = _fit(s, x, support)
        if fit is None:
            continue
        cand = _certify(s, lo, hi, *_unscale(s, scale, *fit))
        if _admissible(cand) and (best is None or cand.error < best.error):
            best = cand
        if degree is None and best is not None and best.error <= tol:
            return best
    if degree is not None and best is not None:
        return best
    raise ConvergenceError(
        f"rational approximation of z^-{s} on [{lo:.4g}, {hi:.4g}] reached only "
        f"{best.error if best else np.inf:.3e} > tol={tol:g} with {max_degree} poles; "
        "loosen the tolerance or raise max_degree")


def _admissible(r: RationalApprox) -> bool:
    """Poles must avoid the approximation interval."""
    p = r.poles
    on_interval = (np.abs(p.imag) <= 1e-12 * np.abs(p)) & (p.real >= r.lo) & (p.real <= r.hi)
    return bool(np.isfinite(r.error) and not np.any(on_interval))
