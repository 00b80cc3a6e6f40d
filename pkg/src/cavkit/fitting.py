"""Shared least-squares fitting and derivative-free optimization kernel.

All fitters are deterministic for identical inputs. Parameter uncertainties
come from a finite-difference Gauss-Newton approximation of the Hessian at
the optimum (relative step 1e-5) unless noted otherwise.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

__all__ = [
    "FitResult",
    "GridSearchResult",
    "lorentzian",
    "fit_lorentzian",
    "fit_exponential",
    "fit_biexponential",
    "fit_linear",
    "nelder_mead",
    "grid_then_local",
]

_FD_RELATIVE_STEP = 1e-5


@dataclass
class FitResult:
    """Named parameter estimates with standard errors and diagnostics."""

    model_id: str
    parameters: dict[str, float]
    uncertainties: dict[str, float]
    residual_rms: float
    iterations: int
    converged: bool
    boundary_flags: dict[str, bool] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def __getitem__(self, name: str) -> float:
        return self.parameters[name]


@dataclass
class GridSearchResult:
    argmin: np.ndarray
    value: float
    trace: list[tuple[np.ndarray, float]]


def lorentzian(x, center, fwhm, amplitude, offset=0.0):
    """Peak-normalized Lorentzian: amplitude at x=center, half max at center +/- fwhm/2."""
    half = 0.5 * fwhm
    return amplitude * half**2 / ((np.asarray(x) - center) ** 2 + half**2) + offset


def _gauss_newton_errors(model, x, theta, residual_rms, weights=None):
    """Standard errors from the finite-difference Jacobian of the model."""
    theta = np.asarray(theta, dtype=float)
    n_pts = len(np.atleast_1d(model(x, *theta)))
    jac = np.empty((n_pts, theta.size))
    for j in range(theta.size):
        step = _FD_RELATIVE_STEP * max(abs(theta[j]), 1e-30)
        up = theta.copy()
        dn = theta.copy()
        up[j] += step
        dn[j] -= step
        jac[:, j] = (model(x, *up) - model(x, *dn)) / (2.0 * step)
    if weights is not None:
        jac = jac * np.asarray(weights)[:, None]
    dof = max(n_pts - theta.size, 1)
    try:
        cov = np.linalg.inv(jac.T @ jac) * residual_rms**2 * n_pts / dof
        err = np.sqrt(np.abs(np.diag(cov)))
    except np.linalg.LinAlgError:
        err = np.full(theta.size, np.nan)
    return err


def _run_least_squares(model, x, y, theta0, bounds=None, weights=None):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = None if weights is None else np.asarray(weights, dtype=float)

    def residuals(theta):
        r = model(x, *theta) - y
        return r if w is None else r * w

    kwargs = {}
    if bounds is not None:
        kwargs["bounds"] = bounds
    sol = least_squares(residuals, np.asarray(theta0, dtype=float), **kwargs)
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    err = _gauss_newton_errors(model, x, sol.x, rms, weights=w)
    return sol, rms, err


def fit_lorentzian(x, y, weights=None) -> FitResult:
    """Fit a Lorentzian peak plus constant offset.

    Initialization uses the peak location and half-maximum crossings. Data
    spanning less than one fitted FWHM is accepted but flagged low-confidence.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 5:
        raise ValueError("Lorentzian fit needs at least 5 points")
    order = np.argsort(x)
    xs, ys = x[order], y[order]

    c0 = float(np.min(ys))
    i_pk = int(np.argmax(ys))
    a0 = float(ys[i_pk] - c0)
    x0 = float(xs[i_pk])
    half = c0 + 0.5 * a0
    above = ys >= half
    idx = np.nonzero(above)[0]
    if idx.size >= 2:
        fwhm0 = float(xs[idx[-1]] - xs[idx[0]])
    else:
        fwhm0 = float(xs[-1] - xs[0]) / 4.0
    fwhm0 = max(fwhm0, float(np.min(np.diff(xs))) if xs.size > 1 else 1.0)

    def model(xx, center, fwhm, amplitude, offset):
        return lorentzian(xx, center, abs(fwhm), amplitude, offset)

    sol, rms, err = _run_least_squares(model, x, y, [x0, fwhm0, a0, c0], weights=weights)
    center, fwhm, amplitude, offset = sol.x
    fwhm = abs(fwhm)
    flags = []
    if (xs[-1] - xs[0]) < fwhm:
        flags.append("narrow_span")
    return FitResult(
        model_id="lorentzian",
        parameters={"center": float(center), "fwhm": float(fwhm),
                    "amplitude": float(amplitude), "offset": float(offset)},
        uncertainties=dict(zip(("center", "fwhm", "amplitude", "offset"), map(float, err))),
        residual_rms=rms,
        iterations=int(sol.nfev),
        converged=bool(sol.success) and not flags,
        flags=flags,
    )


def _log_linear_seed(t, y):
    """Slope/intercept of ln(y) vs t over the points with y > 0."""
    mask = y > 0
    if np.count_nonzero(mask) < 2:
        raise ValueError("log-domain seeding needs at least 2 positive points")
    coef = np.polyfit(t[mask], np.log(y[mask]), 1)
    return float(np.exp(coef[1])), float(-coef[0])  # amplitude, rate


def fit_exponential(t, y) -> FitResult:
    """Fit y = amplitude * exp(-rate * t), seeded by a log-linear fit."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    a0, r0 = _log_linear_seed(t, y)

    def model(tt, amplitude, rate):
        return amplitude * np.exp(-rate * tt)

    sol, rms, err = _run_least_squares(model, t, y, [a0, r0])
    return FitResult(
        model_id="exponential",
        parameters={"amplitude": float(sol.x[0]), "rate": float(sol.x[1])},
        uncertainties={"amplitude": float(err[0]), "rate": float(err[1])},
        residual_rms=rms,
        iterations=int(sol.nfev),
        converged=bool(sol.success),
    )


def fit_biexponential(t, y) -> FitResult:
    """Fit y = A1 exp(-r1 t) + A2 exp(-r2 t) with canonical ordering r1 > r2.

    The slow component is seeded from a log-linear fit of the last third of
    the trace, the fast one from the residual over the first third; this
    avoids the degenerate equal-rates minimum. Rate ratios below 1.5 are
    flagged as effectively single-exponential.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 6:
        raise ValueError("biexponential fit needs at least 6 points")
    order = np.argsort(t)
    ts, ys = t[order], y[order]

    n = ts.size
    a2, r2 = _log_linear_seed(ts[2 * n // 3:], ys[2 * n // 3:])
    resid = ys[: n // 3] - a2 * np.exp(-r2 * ts[: n // 3])
    try:
        a1, r1 = _log_linear_seed(ts[: n // 3], resid)
    except ValueError:
        a1, r1 = 0.5 * a2, 3.0 * r2
    if r1 <= r2:
        r1 = 3.0 * r2

    def model(tt, A1, rate1, A2, rate2):
        return A1 * np.exp(-rate1 * tt) + A2 * np.exp(-rate2 * tt)

    sol, rms, err = _run_least_squares(
        model, t, y, [a1, r1, a2, r2],
        bounds=([-np.inf, 0.0, -np.inf, 0.0], [np.inf, np.inf, np.inf, np.inf]),
    )
    A1, rate1, A2, rate2 = sol.x
    eA1, er1, eA2, er2 = err
    if rate1 < rate2:  # enforce r1 > r2
        A1, rate1, A2, rate2 = A2, rate2, A1, rate1
        eA1, er1, eA2, er2 = eA2, er2, eA1, er1
    flags = []
    if rate2 > 0 and rate1 / rate2 < 1.5:
        flags.append("degenerate_rates")
    return FitResult(
        model_id="biexponential",
        parameters={"A1": float(A1), "r1": float(rate1), "A2": float(A2), "r2": float(rate2)},
        uncertainties={"A1": float(eA1), "r1": float(er1), "A2": float(eA2), "r2": float(er2)},
        residual_rms=rms,
        iterations=int(sol.nfev),
        converged=bool(sol.success),
        flags=flags,
    )


def fit_linear(x, y) -> FitResult:
    """Closed-form ordinary least squares line fit with standard errors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("linear fit needs at least 2 points")
    n = x.size
    sxx = np.sum((x - x.mean()) ** 2)
    slope = float(np.sum((x - x.mean()) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (slope * x + intercept)
    rms = float(np.sqrt(np.mean(resid**2)))
    if n > 2:
        s2 = np.sum(resid**2) / (n - 2)
        slope_err = float(np.sqrt(s2 / sxx))
        intercept_err = float(np.sqrt(s2 * (1.0 / n + x.mean() ** 2 / sxx)))
    else:
        slope_err = intercept_err = 0.0
    return FitResult(
        model_id="linear",
        parameters={"slope": slope, "intercept": intercept},
        uncertainties={"slope": slope_err, "intercept": intercept_err},
        residual_rms=rms,
        iterations=0,
        converged=True,
    )


def _simplex_stage(objective, x0, steps, lo, hi, rel_tolerance, max_iterations, trace):
    def clamp(x):
        return np.minimum(np.maximum(x, lo), hi)

    x0 = clamp(np.asarray(x0, dtype=float))
    n = x0.size
    verts = [x0]
    for i in range(n):
        v = x0.copy()
        step = steps[i] if steps[i] != 0 else 0.05 * max(hi[i] - lo[i], 1e-12)
        v[i] = v[i] + step if v[i] + step <= hi[i] else v[i] - step
        verts.append(clamp(v))
    verts = np.array(verts)
    fvals = np.array([objective(v) for v in verts])

    iterations = 0
    while iterations < max_iterations:
        iterations += 1
        idx = np.argsort(fvals, kind="stable")
        verts, fvals = verts[idx], fvals[idx]
        spread = abs(fvals[-1] - fvals[0]) / (abs(fvals[0]) + 1e-300)
        if spread < rel_tolerance:
            break
        centroid = verts[:-1].mean(axis=0)
        xr = clamp(centroid + (centroid - verts[-1]))
        fr = objective(xr)
        if fr < fvals[0]:
            xe = clamp(centroid + 2.0 * (centroid - verts[-1]))
            fe = objective(xe)
            if fe < fr:
                verts[-1], fvals[-1] = xe, fe
            else:
                verts[-1], fvals[-1] = xr, fr
        elif fr < fvals[-2]:
            verts[-1], fvals[-1] = xr, fr
        else:
            xc = clamp(centroid + 0.5 * (verts[-1] - centroid))
            fc = objective(xc)
            if fc < fvals[-1]:
                verts[-1], fvals[-1] = xc, fc
            else:  # shrink toward the best vertex
                for i in range(1, n + 1):
                    verts[i] = clamp(verts[0] + 0.5 * (verts[i] - verts[0]))
                    fvals[i] = objective(verts[i])
        f_best = float(np.min(fvals))
        if f_best < trace[-1][1]:
            trace.append((verts[int(np.argmin(fvals))].copy(), f_best))

    i_best = int(np.argmin(fvals))
    return verts[i_best], float(fvals[i_best]), iterations


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    x0: Sequence[float],
    steps: Sequence[float],
    bounds: Sequence[tuple[float, float]],
    rel_tolerance: float = 1e-10,
    max_iterations: int = 500,
    restarts: int = 2,
):
    """Box-confined Nelder-Mead simplex (reflect / expand / contract / shrink).

    Vertices are clamped to the bounding box. Each stage terminates when the
    relative spread of vertex values drops below rel_tolerance or on the
    iteration cap; the simplex is then re-seeded at the best point with
    shrunken steps (classic restart) to escape collapse along narrow valleys.
    Returns (x_best, f_best, n_iterations, trace of accepted best values).
    """
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    steps = np.asarray(steps, dtype=float)
    trace = [(np.asarray(x0, dtype=float).copy(), float(objective(np.asarray(x0, dtype=float))))]

    x_best, f_best = np.asarray(x0, dtype=float), trace[0][1]
    total_iter = 0
    for stage in range(restarts + 1):
        x_new, f_new, it = _simplex_stage(objective, x_best, steps * 0.1**stage,
                                          lo, hi, rel_tolerance, max_iterations, trace)
        total_iter += it
        improved = f_new < f_best - rel_tolerance * (abs(f_best) + 1e-300)
        if f_new < f_best:
            x_best, f_best = x_new, f_new
        if not improved and stage > 0:
            break
    return x_best, f_best, total_iter, trace


def grid_then_local(
    objective: Callable[[np.ndarray], float],
    bounds: Sequence[tuple[float, float]],
    grid_counts: Sequence[int],
    local_tolerance: float = 1e-10,
    max_iterations: int = 500,
    restarts: int = 2,
) -> GridSearchResult:
    """Exhaustive grid evaluation followed by simplex refinement in the box.

    The grid argmin is deterministic: strict improvement scanning in
    lexicographic parameter order, so ties resolve to the lexicographically
    smallest tuple regardless of evaluation chunking.
    """
    axes = [np.linspace(lo, hi, max(int(k), 1)) for (lo, hi), k in zip(bounds, grid_counts)]
    best_x, best_f = None, np.inf
    for combo in itertools.product(*axes):
        f = float(objective(np.array(combo)))
        if f < best_f:
            best_f, best_x = f, np.array(combo)
    if best_x is None or not np.isfinite(best_f):
        raise ValueError("objective is not finite anywhere on the grid")

    steps = []
    for ax, (lo, hi) in zip(axes, bounds):
        steps.append(ax[1] - ax[0] if ax.size > 1 else 0.25 * (hi - lo))
    x_loc, f_loc, n_iter, local_trace = nelder_mead(
        objective, best_x, steps, bounds,
        rel_tolerance=local_tolerance, max_iterations=max_iterations, restarts=restarts,
    )
    trace = [(best_x.copy(), best_f)]
    trace.extend(local_trace[1:] if local_trace and local_trace[0][1] == best_f else local_trace)
    if f_loc <= best_f:
        result_x, result_f = x_loc, f_loc
    else:  # refinement never worsens the grid optimum
        result_x, result_f = best_x, best_f
    return GridSearchResult(argmin=result_x, value=result_f, trace=trace)
