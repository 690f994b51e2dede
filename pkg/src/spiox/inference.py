"""MCMC machinery for IOX Gaussian process models.

Implements the Gibbs/Metropolis updates for both observation models:

* response model: y ~ N(X_q beta, C) with C the IOX covariance at S;
* latent model: y = X_q beta + w + eps, eps ~ N(0, Delta x I_n) and
  w ~ N(0, C), with Delta diagonal.

beta and Sigma have conjugate Gaussian / inverse-Wishart full conditionals;
kernel parameters move by adaptive random-walk Metropolis (componentwise
blocks or one joint proposal); the latent field w is updated either one
outcome column at a time (sparse precision solves) or one site at a time
(q x q full conditionals read off the sparse factors); cluster assignments
get sequential discrete Gibbs draws.
"""

import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import NumericalError, ValidationError
from .ioxcore import (IoxModel, conditional_loglik, loglik, whiten_columns,
                      zero_distance_cross_corr)
from .kernels import KernelParams

# ---------------------------------------------------------------------------
# priors


@dataclass
class Priors:
    """Hyperparameters: Gaussian beta, inverse-Wishart Sigma, inverse-gamma
    nugget variances, and box supports for the kernel parameters (phi and nu
    uniform, tau2 log-uniform)."""

    beta_mean: float = 0.0
    beta_var: float = 100.0
    sigma_df: float = 5.0
    sigma_scale: np.ndarray = None
    delta_a: float = 2.0
    delta_b: float = 1.0
    phi_bounds: tuple = (0.5, 80.0)
    nu_bounds: tuple = (0.25, 3.0)
    tau2_bounds: tuple = (1e-6, 1.0)

    def validate(self, q):
        if self.sigma_scale is None:
            self.sigma_scale = np.eye(q)
        self.sigma_scale = np.asarray(self.sigma_scale, dtype=float)
        if self.sigma_df <= q - 1:
            raise ValidationError(f"sigma_df must exceed q - 1 = {q - 1}")
        if self.delta_a <= 0 or self.delta_b <= 0:
            raise ValidationError("delta_a and delta_b must be > 0")
        if self.beta_var <= 0:
            raise ValidationError("beta_var must be > 0")
        for name in ("phi_bounds", "nu_bounds", "tau2_bounds"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo <= 0 or hi < lo:
                raise ValidationError(f"bad {name}: ({lo}, {hi})")
        return self


def default_priors(S, q):
    """Default priors with the phi box scaled to the domain diameter."""
    diam = max(S.diameter(), 1e-8)
    return Priors(phi_bounds=(1.0 / diam, 100.0 / diam), sigma_df=q + 2).validate(q)


# ---------------------------------------------------------------------------
# distribution samplers


def draw_inverse_wishart(nu, Psi, rng):
    """One draw from the inverse Wishart with density proportional to
    det(S)^{-(nu+q+1)/2} exp(-tr(Psi S^{-1}) / 2); mean Psi / (nu - q - 1).

    Uses the Bartlett decomposition: with A A^T ~ Wishart(nu, I) and
    T T^T = Psi^{-1}, the precision T A A^T T^T is Wishart(nu, Psi^{-1}),
    so Sigma = M^T M with M = A^{-1} chol(Psi)^T.
    """
    Psi = np.atleast_2d(np.asarray(Psi, dtype=float))
    q = Psi.shape[0]
    if nu <= q - 1:
        raise ValidationError("inverse Wishart needs nu > q - 1")
    Lp = np.linalg.cholesky(Psi)
    A = np.zeros((q, q))
    A[np.diag_indices(q)] = np.sqrt(rng.chisquare(nu - np.arange(q)))
    if q > 1:
        A[np.tril_indices(q, -1)] = rng.standard_normal(q * (q - 1) // 2)
    M = sla.solve_triangular(A, Lp.T, lower=True)
    Sigma = M.T @ M
    return 0.5 * (Sigma + Sigma.T)


def draw_inverse_gamma(a, b, rng, size=None):
    """Inverse gamma draw(s) with shape a and scale b (mean b / (a - 1))."""
    return b / rng.gamma(a, 1.0, size=size) if np.isscalar(b) \
        else np.asarray(b) / rng.gamma(a, 1.0, size=np.shape(b))


# ---------------------------------------------------------------------------
# state


class McmcState:
    """Current values of all sampled quantities plus the maintained whitened
    matrix V (columns L_j^{-1} of the centered data or latent field)."""

    def __init__(self, model, data, B, Delta=None, W=None):
        self.model = model
        self.data = data
        self.B = np.asarray(B, dtype=float)
        self.Delta = None if Delta is None else np.asarray(Delta, dtype=float)
        self.W = None if W is None else np.asarray(W, dtype=float)
        self.V = None
        self.refresh_V()

    @property
    def Sigma(self):
        return self.model.Sigma

    @property
    def Q(self):
        return self.model.Q

    @property
    def theta(self):
        return self.model.theta

    @property
    def Pi(self):
        return self.model.assignments

    @property
    def latent(self):
        return self.W is not None

    def gp_matrix(self):
        """The matrix the GP-IOX prior applies to: centered data (response
        model) or the latent field (latent model)."""
        if self.latent:
            return self.W
        return self.data.Y - self.data.X @ self.B

    def refresh_V(self):
        self.V = whiten_columns(self.gp_matrix(), self.model)

    def check_V(self, tol=1e-8):
        fresh = whiten_columns(self.gp_matrix(), self.model)
        return float(np.abs(fresh - self.V).max()) <= tol


# ---------------------------------------------------------------------------
# conjugate updates


def update_sigma(state, V, priors, rng):
    """Inverse-Wishart full-conditional draw of Sigma given whitened columns V;
    posterior scale Psi + V^T V with df nu + n. Refreshes Q on the model."""
    n = 0 if V is None or V.size == 0 else V.shape[0]
    Psi = priors.sigma_scale + (V.T @ V if n else 0.0)
    Sigma = draw_inverse_wishart(priors.sigma_df + n, Psi, rng)
    state.model.set_sigma(Sigma)
    return Sigma


def _beta_prior_vecs(priors, p, q):
    m0 = np.full(p * q, priors.beta_mean, dtype=float)
    prec0 = np.full(p * q, 1.0 / priors.beta_var, dtype=float)
    return m0, prec0


def _draw_gaussian_from_precision(P, rhs, rng):
    jitter = 0.0
    for attempt in range(4):
        try:
            R = np.linalg.cholesky(P + jitter * np.eye(P.shape[0]))
            break
        except np.linalg.LinAlgError:
            jitter = 1e-10 * 10 ** attempt
    else:
        raise NumericalError("posterior precision for beta is not SPD after jitter")
    mean = sla.cho_solve((R, True), rhs)
    z = rng.standard_normal(P.shape[0])
    return mean + sla.solve_triangular(R.T, z, lower=False)


def update_beta_response(state, data, model, priors, rng):
    """Exact Gaussian draw of beta in the response model. C^{-1} is applied
    through the per-outcome factors (never forming C): the posterior precision
    has (j, r) block Q_jr Xw_j^T Xw_r with Xw_j = L_j^{-1} X."""
    n, p, q = data.n, data.p, data.q
    Xw = [model.factor_for(j).whiten(data.X) for j in range(q)]
    Vy = np.column_stack([model.factor_for(j).whiten(data.Y[:, j]) for j in range(q)])
    m0, prec0 = _beta_prior_vecs(priors, p, q)
    P = np.zeros((p * q, p * q))
    rhs = prec0 * m0
    VyQ = Vy @ model.Q
    for j in range(q):
        for r in range(j, q):
            blk = model.Q[j, r] * (Xw[j].T @ Xw[r])
            P[j * p:(j + 1) * p, r * p:(r + 1) * p] = blk
            if r > j:
                P[r * p:(r + 1) * p, j * p:(j + 1) * p] = blk.T
        rhs[j * p:(j + 1) * p] += Xw[j].T @ VyQ[:, j]
    P[np.diag_indices(p * q)] += prec0
    beta = _draw_gaussian_from_precision(P, rhs, rng)
    state.B = beta.reshape(q, p).T
    state.refresh_V()
    return state.B


def update_beta_latent(state, data, priors, rng):
    """Gaussian draw of beta in the latent model, conditioning on w and Delta."""
    p, q = data.p, data.q
    m0, prec0 = _beta_prior_vecs(priors, p, q)
    P = np.zeros((p * q, p * q))
    rhs = prec0 * m0
    XtX = data.X.T @ data.X
    for j in range(q):
        sl = slice(j * p, (j + 1) * p)
        P[sl, sl] = XtX / state.Delta[j]
        rhs[sl] += data.X.T @ (data.Y[:, j] - state.W[:, j]) / state.Delta[j]
    P[np.diag_indices(p * q)] += prec0
    beta = _draw_gaussian_from_precision(P, rhs, rng)
    state.B = beta.reshape(q, p).T
    return state.B


def update_delta(state, data, priors, rng):
    """Independent inverse-gamma draws of the noise variances delta_jj with
    shape a + n/2 and scale b + ||y_j - X beta_j - w_j||^2 / 2."""
    resid = data.Y - data.X @ state.B - state.W
    a_post = priors.delta_a + 0.5 * data.n
    b_post = priors.delta_b + 0.5 * (resid ** 2).sum(axis=0)
    state.Delta = b_post / rng.gamma(a_post, 1.0, size=data.q)
    return state.Delta


# ---------------------------------------------------------------------------
# kernel parameter updates


PARAM_NAMES = ("phi", "nu", "tau2")


def _bounds_for(priors, name):
    return {"phi": priors.phi_bounds, "nu": priors.nu_bounds,
            "tau2": priors.tau2_bounds}[name]


def free_components(priors):
    """Names of kernel parameters whose prior box has positive width."""
    return [nm for nm in PARAM_NAMES if _bounds_for(priors, nm)[0] < _bounds_for(priors, nm)[1]]


def _log_prior_transformed(p, priors):
    """Log prior of a KernelParams in log-parameter space (Jacobian included);
    -inf outside the support boxes. tau2 is log-uniform, phi and nu uniform."""
    total = 0.0
    for nm in PARAM_NAMES:
        lo, hi = _bounds_for(priors, nm)
        v = getattr(p, nm)
        if v < lo or v > hi:
            return -math.inf
        if nm != "tau2":
            total += math.log(v)
    return total


class AdaptiveScale:
    """Robbins-Monro adaptation of a log step size toward a target acceptance."""

    def __init__(self, dim=1, target=0.44, init=-0.7):
        self.log_s = np.full(dim, float(init))
        self.target = target
        self.count = 0
        self.frozen = False

    def step(self, idx, alpha):
        if self.frozen:
            return
        self.count += 1
        gain = 1.0 / self.count ** 0.6
        self.log_s[idx] = np.clip(
            self.log_s[idx] + gain * (alpha - self.target), -10.0, 4.0
        )

    def scale(self, idx=0):
        return math.exp(self.log_s[idx])


class JointAdaptive:
    """Adaptive multivariate random-walk proposal: Robbins-Monro tuning of a
    global log scale toward the target acceptance, with the proposal shape
    taken from the running empirical covariance of the visited states once
    enough history has accumulated. Adaptation freezes at burn-in end."""

    def __init__(self, dim, target=0.23, init=-1.2):
        self.dim = dim
        self.target = target
        self.log_s = float(init)
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))
        self._chol = None
        self.frozen = False

    def step_vector(self, rng):
        z = rng.standard_normal(self.dim)
        if self._chol is None:
            return math.exp(self.log_s) * 0.3 * z
        return math.exp(self.log_s) * (self._chol @ z)

    def update(self, alpha, x):
        if self.frozen:
            return
        self.count += 1
        gain = 1.0 / self.count ** 0.6
        self.log_s = float(np.clip(self.log_s + gain * (alpha - self.target),
                                   -8.0, 3.0))
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += np.outer(delta, x - self.mean)
        if self.count >= 10 * self.dim and self.count % 25 == 0:
            cov = self.m2 / (self.count - 1)
            cov = (2.38 ** 2 / self.dim) * cov + 1e-9 * np.eye(self.dim)
            try:
                self._chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                self._chol = None


def _replace(p, name, value):
    kw = {nm: getattr(p, nm) for nm in PARAM_NAMES}
    kw[name] = value
    return KernelParams(**kw)


def update_theta_block(j, state, data, model, priors, rng, scales=None):
    """Componentwise adaptive random-walk Metropolis on log(phi_j), log(nu_j),
    log(tau2_j), targeting p(y_j | y_{j^c}, theta) p(theta_j).

    Only valid when outcome j is the sole user of its component (the full,
    unclustered model). Returns the number of accepted component moves.
    """
    c = int(model.assignments[j])
    names = free_components(priors)
    if scales is None:
        scales = AdaptiveScale(dim=len(names))
    accepted = 0
    resid_j = state.gp_matrix()[:, j]
    for idx, nm in enumerate(names):
        cur = model.theta[c]
        s = scales.scale(idx)
        prop_val = math.exp(math.log(getattr(cur, nm)) + s * rng.standard_normal())
        lo, hi = _bounds_for(priors, nm)
        if prop_val < lo or prop_val > hi:
            scales.step(idx, 0.0)
            continue
        prop = _replace(cur, nm, prop_val)
        lp_new = _log_prior_transformed(prop, priors)
        lp_old = _log_prior_transformed(cur, priors)
        val_old = conditional_loglik(j, state.V, model)
        old_factor = model.factors[c]
        try:
            model.set_theta(c, prop)
        except NumericalError:
            model.theta[c] = cur
            model.factors[c] = old_factor
            scales.step(idx, 0.0)
            continue
        v_new = model.factors[c].whiten(resid_j)
        V_try = state.V.copy()
        V_try[:, j] = v_new
        val_new = conditional_loglik(j, V_try, model)
        logr = val_new - val_old + lp_new - lp_old
        alpha = min(1.0, math.exp(min(logr, 0.0)))
        if rng.random() < alpha:
            state.V[:, j] = v_new
            accepted += 1
        else:
            model.theta[c] = cur
            model.factors[c] = old_factor
        scales.step(idx, alpha)
    return accepted, model.theta[c]


def _pack_log_theta(thetas, names):
    return np.array([math.log(getattr(p, nm)) for p in thetas for nm in names])


def _unpack_log_theta(x, thetas, names):
    out = []
    i = 0
    for p in thetas:
        kw = {nm: getattr(p, nm) for nm in PARAM_NAMES}
        for nm in names:
            kw[nm] = math.exp(x[i])
            i += 1
        out.append(KernelParams(**kw))
    return out


def update_theta_joint(state, data, model, priors, rng, scale=None,
                       components=None, pool=None):
    """One joint adaptive RWM proposal over the stacked log parameters of all
    (or the given) components, accepted against the full log-likelihood.

    With a thread pool, candidate factors for the components are rebuilt in
    parallel (the builds are independent and deterministic).
    """
    names = free_components(priors)
    comps = list(range(model.k)) if components is None else list(components)
    if scale is None:
        scale = JointAdaptive(dim=len(names) * len(comps))
    cur = [model.theta[c] for c in comps]
    x = _pack_log_theta(cur, names)
    x_prop = x + scale.step_vector(rng)
    try:
        prop = _unpack_log_theta(x_prop, cur, names)
    except (ValidationError, OverflowError):
        scale.update(0.0, x)
        return False, model.theta
    lp_new = sum(_log_prior_transformed(p, priors) for p in prop)
    if not np.isfinite(lp_new):
        scale.update(0.0, x)
        return False, model.theta
    lp_old = sum(_log_prior_transformed(p, priors) for p in cur)
    G = state.gp_matrix()
    ll_old = loglik(G, model, state.V)
    old_factors = [model.factors[c] for c in comps]
    try:
        if pool is not None:
            new_factors = list(pool.map(model._build_factor, prop, comps))
        else:
            new_factors = [model._build_factor(p, c)
                           for p, c in zip(prop, comps)]
        for c, p, f in zip(comps, prop, new_factors):
            model.theta[c] = p
            model.factors[c] = f
        V_new = whiten_columns(G, model)
        ll_new = loglik(G, model, V_new)
    except NumericalError:
        for c, p, f in zip(comps, cur, old_factors):
            model.theta[c] = p
            model.factors[c] = f
        scale.update(0.0, x)
        return False, model.theta
    logr = ll_new - ll_old + lp_new - lp_old
    alpha = min(1.0, math.exp(min(logr, 0.0)))
    if rng.random() < alpha:
        state.V = V_new
        scale.update(alpha, x_prop)
        return True, model.theta
    for c, p, f in zip(comps, cur, old_factors):
        model.theta[c] = p
        model.factors[c] = f
    scale.update(alpha, x)
    return False, model.theta


def update_theta_cluster(c, state, data, model, priors, rng, scales=None):
    """Componentwise Metropolis update of the shared kernel params of cluster c,
    targeting the joint likelihood of all outcomes assigned to it."""
    names = free_components(priors)
    if scales is None:
        scales = AdaptiveScale(dim=len(names))
    G = state.gp_matrix()
    members = np.flatnonzero(model.assignments == c)
    accepted = 0
    for idx, nm in enumerate(names):
        cur = model.theta[c]
        s = scales.scale(idx)
        prop_val = math.exp(math.log(getattr(cur, nm)) + s * rng.standard_normal())
        lo, hi = _bounds_for(priors, nm)
        if prop_val < lo or prop_val > hi:
            scales.step(idx, 0.0)
            continue
        prop = _replace(cur, nm, prop_val)
        lp_new = _log_prior_transformed(prop, priors)
        lp_old = _log_prior_transformed(cur, priors)
        ll_old = loglik(G, model, state.V)
        old_factor = model.factors[c]
        try:
            model.set_theta(c, prop)
            V_try = state.V.copy()
            for j in members:
                V_try[:, j] = model.factors[c].whiten(G[:, j])
            ll_new = loglik(G, model, V_try)
        except NumericalError:
            model.theta[c] = cur
            model.factors[c] = old_factor
            scales.step(idx, 0.0)
            continue
        logr = ll_new - ll_old + lp_new - lp_old
        alpha = min(1.0, math.exp(min(logr, 0.0)))
        if rng.random() < alpha:
            state.V = V_try
            accepted += 1
        else:
            model.theta[c] = cur
            model.factors[c] = old_factor
        scales.step(idx, alpha)
    return accepted, model.theta[c]


def update_cluster_assignments(state, data, model, priors, rng):
    """Sequential Gibbs scan over outcomes: each pi(j) is drawn from the
    discrete full conditional over the k components, evaluated through the
    single-outcome conditional density under each candidate factor."""
    G = state.gp_matrix()
    n, q, k = model.n, model.q, model.k
    Q = model.Q
    sld = np.array([f.sum_log_diag() for f in model.factors])
    for j in range(q):
        base = state.V @ Q[j] - Q[j, j] * state.V[:, j]
        logits = np.empty(k)
        cands = []
        for c in range(k):
            vjc = model.factors[c].whiten(G[:, j])
            u = base + Q[j, j] * vjc
            logits[c] = 0.5 * n * math.log(Q[j, j]) + sld[c] \
                - float(u @ u) / (2.0 * Q[j, j])
            cands.append(vjc)
        if not np.any(np.isfinite(logits)):
            raise NumericalError(f"all cluster candidates non-finite for outcome {j}")
        w = np.exp(logits - logits.max())
        w /= w.sum()
        c_new = int(np.searchsorted(np.cumsum(w), rng.random()))
        c_new = min(c_new, k - 1)
        model.assignments[j] = c_new
        state.V[:, j] = cands[c_new]
    return model.assignments


# ---------------------------------------------------------------------------
# latent-field updates


def pcg_solve(matvec, b, diag, tol=1e-8, maxiter=None):
    """Preconditioned conjugate gradients with a diagonal preconditioner.

    Stops when ||r|| <= tol * ||b||; raises NumericalError (reporting the
    residual norm) if maxiter is exhausted.
    """
    n = len(b)
    maxiter = maxiter if maxiter is not None else 5 * n
    x = np.zeros(n)
    r = b.copy()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return x
    z = r / diag
    d = z.copy()
    rz = float(r @ z)
    for _ in range(maxiter):
        if np.linalg.norm(r) <= tol * bnorm:
            return x
        Ad = matvec(d)
        alpha = rz / float(d @ Ad)
        x += alpha * d
        r -= alpha * Ad
        z = r / diag
        rz_new = float(r @ z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    res = float(np.linalg.norm(r))
    if res <= tol * bnorm:
        return x
    raise NumericalError(f"PCG did not converge: residual norm {res:.3e}")


def _factor_col_sq(factor):
    """Column sums of squares of the factor in original indexing (diag of
    rho(S)^{-1}), cached on the factor object."""
    cs = getattr(factor, "_col_sq", None)
    if cs is None:
        if factor.is_sparse:
            cpos = np.asarray(factor.csc.multiply(factor.csc).sum(axis=0)).ravel()
            cs = np.empty_like(cpos)
            cs[factor.order] = cpos
        else:
            cs = (factor.Linv ** 2).sum(axis=0)
        factor._col_sq = cs
    return cs


def _mult_gamma_t(factor, s):
    """L^{-T} s in original indexing."""
    if factor.is_sparse:
        out = np.empty_like(s)
        out[factor.order] = factor.gamma.T @ s[factor.order]
        return out
    return factor.Linv.T @ s


def update_w_single_outcome(j, state, data, model, rng, tol=1e-8, maxiter=None):
    """Draw the full latent column w_j from its Gaussian full conditional with
    precision Q_jj rho_j(S)^{-1} + I_n / delta_jj.

    The prior-side mean term is -L_j^{-T} W~_{j^c} Q_{j^c, j}; a fresh draw is
    obtained by solving against a perturbed right-hand side so the solution is
    an exact sample (up to solver tolerance).
    """
    f = model.factor_for(j)
    Q = model.Q
    qjj = Q[j, j]
    delta = state.Delta[j]
    n = data.n
    s = state.V @ Q[:, j] - qjj * state.V[:, j]
    b_prior = -_mult_gamma_t(f, s)
    yc = data.Y[:, j] - data.X @ state.B[:, j]
    rhs = b_prior + yc / delta
    z1 = rng.standard_normal(n)
    z2 = rng.standard_normal(n)
    perturb = math.sqrt(qjj) * _mult_gamma_t(f, z1) + z2 / math.sqrt(delta)
    if f.is_sparse:
        def matvec(x):
            return qjj * _mult_gamma_t(f, f.whiten(x)) + x / delta
        diag = qjj * _factor_col_sq(f) + 1.0 / delta
        w_j = pcg_solve(matvec, rhs + perturb, diag, tol=tol, maxiter=maxiter)
    else:
        A = qjj * (f.Linv.T @ f.Linv) + np.eye(n) / delta
        w_j = sla.cho_solve(sla.cho_factor(A, lower=True), rhs + perturb)
    state.W[:, j] = w_j
    state.V[:, j] = f.whiten(w_j)
    return w_j


class SiteSweep:
    """Precomputed structure for single-site latent updates on a shared DAG.

    All per-outcome factors built from one workspace share a sparsity pattern,
    so the support of column i (node i and its children) is computed once; per
    iteration only the numeric column values are re-gathered.
    """

    def __init__(self, model):
        if not model.is_vecchia:
            raise ValidationError("single-site updates require the Vecchia path")
        f0 = model.factor_for(0)
        csc = f0.csc
        self.indptr = csc.indptr.copy()
        self.indices = csc.indices.copy()
        self.n = model.n
        self.order = f0.order
        self.refresh(model)

    def refresh(self, model):
        """Re-gather column values after any factor rebuild."""
        q = model.q
        cols = []
        for j in range(q):
            f = model.factor_for(j)
            if (f.csc.indptr != self.indptr).any():
                raise ValidationError("single-site updates need one shared DAG")
            cols.append(f.csc.data)
        self.coldata = np.vstack(cols)  # (q, nnz) csc-ordered
        self.mmt = []
        for i in range(self.n):
            sl = slice(self.indptr[i], self.indptr[i + 1])
            M = self.coldata[:, sl]
            self.mmt.append(M @ M.T)

    def support(self, i):
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def col_block(self, i):
        return self.coldata[:, self.indptr[i]:self.indptr[i + 1]]


def update_w_single_site(i, state, data, model, rng, sweep=None, Up=None, E=None):
    """Draw the q-vector w(l_i) (i a DAG position) from its full conditional
    using the Markov blanket: the conditional precision is
    P(i, i) + Delta^{-1} with P(i, i) = Q hadamard [G_r[:, i]^T G_s[:, i]].

    Standalone calls build the support structure on the fly; sweeps pass the
    precomputed pieces (sweep, permuted whitened matrix Up, permuted centered
    data E) and must keep them consistent.
    """
    standalone = sweep is None
    if standalone:
        sweep = SiteSweep(model)
        Up = state.V[sweep.order]
        E = (data.Y - data.X @ state.B)[sweep.order]
    Q = model.Q
    q = model.q
    sup = sweep.support(i)
    M = sweep.col_block(i)               # (q, k) column values of each factor
    P_ii = Q * sweep.mmt[i]
    Tq = M @ Up[sup, :]                  # (q, q): [r, s] = G_r[:,i] . U_s
    pw = (Q * Tq).sum(axis=1)            # row block of P @ w at site i
    w_i = state.W[sweep.order[i]]
    G = P_ii + np.diag(1.0 / state.Delta)
    b = -(pw - P_ii @ w_i) + E[i] / state.Delta
    L = np.linalg.cholesky(G)
    mean = sla.cho_solve((L, True), b)
    draw = mean + sla.solve_triangular(L.T, rng.standard_normal(q), lower=False)
    dw = draw - w_i
    state.W[sweep.order[i]] = draw
    Up[sup, :] += (M * dw[:, None]).T
    if standalone:
        state.V[sweep.order] = Up
    return draw


def sweep_w_sites(state, data, model, rng, sweep):
    """One full single-site Gibbs sweep over all DAG positions."""
    Up = state.V[sweep.order]
    E = (data.Y - data.X @ state.B)[sweep.order]
    for i in range(model.n):
        update_w_single_site(i, state, data, model, rng, sweep=sweep, Up=Up, E=E)
    state.V[sweep.order] = Up


# ---------------------------------------------------------------------------
# chain driver


class Chain:
    """Stored draws plus acceptance and timing metadata."""

    def __init__(self, draws, acceptance, timings, meta, w_draws=None,
                 w_draw_iters=None, zero_corr=None, zero_corr_iters=None):
        self.draws = draws
        self.acceptance = acceptance
        self.timings = timings
        self.meta = meta
        self.w_draws = w_draws
        self.w_draw_iters = w_draw_iters
        self.zero_corr = zero_corr
        self.zero_corr_iters = zero_corr_iters

    @property
    def n_draws(self):
        return self.meta["n_draws"]


def _init_theta(priors, free):
    vals = {}
    for nm in PARAM_NAMES:
        lo, hi = _bounds_for(priors, nm)
        vals[nm] = math.exp(0.5 * (math.log(lo) + math.log(hi))) if nm in free else lo
    return KernelParams(**vals)


def _profile_loglik_init(resid, S, priors, free, order_seed=0):
    """Deterministic starting values from a coarse per-outcome grid search.

    For each outcome, the univariate Vecchia log-likelihood with the sill
    profiled out is maximized over a small (phi, nu, tau2) grid; the whitened
    columns under those kernels then give a moment estimate of Sigma. This
    lands the chain near the posterior mode, which matters because the
    (theta_j, sigma_jj) pairs are strongly coupled.
    """
    from .geom import build_nn_dag
    from .vecchia import VecchiaWorkspace
    n, q = resid.shape
    m0 = min(10, n - 1)
    dag = build_nn_dag(S, m0, "random", order_seed)
    ws = VecchiaWorkspace(dag)

    def axis(nm, count, log=True):
        lo, hi = _bounds_for(priors, nm)
        if nm not in free:
            return [lo]
        if log:
            return list(np.geomspace(lo * 1.2, hi / 1.2, count))
        return list(np.linspace(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo), count))

    grid = [KernelParams(phi=p, nu=v, tau2=t)
            for p in axis("phi", 6) for v in axis("nu", 5, log=False)
            for t in axis("tau2", 3)]
    factors = []
    for p in grid:
        try:
            factors.append((p, ws.build(p)))
        except NumericalError:
            continue
    thetas = []
    V = np.empty((n, q))
    for j in range(q):
        best = None
        for p, G in factors:
            v = G.whiten(resid[:, j])
            rss = float(v @ v)
            ll = G.sum_log_diag() - 0.5 * n * math.log(max(rss / n, 1e-300))
            if best is None or ll > best[0]:
                best = (ll, p, v)
        thetas.append(best[1])
        V[:, j] = best[2]
    Sigma = V.T @ V / n
    Sigma = 0.5 * (Sigma + Sigma.T) + 1e-4 * np.trace(Sigma) / q * np.eye(q)
    return thetas, Sigma


def _init_sigma(resid):
    q = resid.shape[1]
    if resid.shape[0] > q + 1:
        Sig = np.cov(resid, rowvar=False)
        Sig = np.atleast_2d(Sig) + 1e-4 * np.eye(q) * max(np.trace(np.atleast_2d(Sig)) / q, 1e-8)
        try:
            np.linalg.cholesky(Sig)
            return Sig
        except np.linalg.LinAlgError:
            pass
    return np.eye(q)


def run_chain(config, data, S):
    """Run one MCMC chain per the validated RunConfig; deterministic given the
    seed. Scan order: theta (or cluster assignments), Sigma, beta, then for the
    latent model the w sweep and Delta."""
    rng = np.random.default_rng(config.seed)
    n, q, p = data.n, data.q, data.p
    priors = config.priors(S, q)
    latent = config.model == "latent"
    free = free_components(priors)

    B0 = np.linalg.lstsq(data.X, data.Y, rcond=None)[0]
    resid0 = data.Y - data.X @ B0

    if config.theta_mode == "full":
        k = q
        if free and n > 2 * q:
            thetas, Sigma0 = _profile_loglik_init(resid0, S, priors, free,
                                                  order_seed=config.seed)
        else:
            thetas, Sigma0 = [_init_theta(priors, free)] * k, _init_sigma(resid0)
        assignments = None
    else:
        k = config.k1
        if config.theta_mode == "grid":
            thetas = config.grid_thetas(priors)
            k = len(thetas)
        else:
            thetas = [_init_theta(priors, free)] * k
        Sigma0 = _init_sigma(resid0)
        assignments = np.arange(q) % k

    model = IoxModel(S, thetas, Sigma0, m=config.vecchia_m,
                     assignments=assignments, order_seed=config.seed,
                     order_scheme=config.order_scheme)
    state = McmcState(model, data, B0,
                      Delta=(0.1 * resid0.var(axis=0).clip(1e-6) if latent else None),
                      W=(resid0.copy() if latent else None))

    theta_update = config.theta_update
    if theta_update == "auto":
        theta_update = "joint" if (config.theta_mode == "full" and q <= 4) else "block"

    joint_scale = JointAdaptive(dim=max(1, len(free) * k), target=0.23)
    block_scales = [AdaptiveScale(dim=len(free), target=0.44) for _ in range(k)]
    sweep = None
    if latent and config.w_update == "site":
        sweep = SiteSweep(model)
    pool = None
    if config.threads > 1 and model.is_vecchia:
        from concurrent.futures import ThreadPoolExecutor
        pool = ThreadPoolExecutor(max_workers=config.threads)

    n_stored = max(0, (config.iters - config.burn)) // config.thin
    draws = {
        "beta": np.empty((n_stored, p, q)),
        "sigma": np.empty((n_stored, q, q)),
        "theta": np.empty((n_stored, q, 3)),
        "pi": np.empty((n_stored, q), dtype=int),
        "loglik": np.empty(n_stored),
    }
    if latent:
        draws["delta"] = np.empty((n_stored, q))
    w_every = None
    w_draws, w_iters = [], []
    if latent and config.store_w > 0 and n_stored > 0:
        w_every = max(1, -(-n_stored // config.store_w))
    zc_every = None
    zc_draws, zc_iters = [], []
    if config.zero_corr_draws > 0 and n_stored > 0:
        zc_every = max(1, -(-n_stored // config.zero_corr_draws))

    acc = {"theta_proposals": 0, "theta_accepts": 0,
           "block_proposals": np.zeros(k, dtype=int),
           "block_accepts": np.zeros(k, dtype=int)}
    timings = {"theta": 0.0, "sigma": 0.0, "beta": 0.0, "w": 0.0,
               "delta": 0.0, "pi": 0.0, "store": 0.0}
    stored = 0

    try:
        _run_iterations(config, data, model, state, priors, rng, theta_update,
                        joint_scale, block_scales, sweep, pool, free, k, draws,
                        w_every, w_draws, w_iters, zc_every, zc_draws, zc_iters,
                        acc, timings)
    finally:
        if pool is not None:
            pool.shutdown(wait=False)
    stored = draws["_stored"]
    del draws["_stored"]

    # scan-invariant sanity: Sigma stayed SPD, Delta positive
    np.linalg.cholesky(state.Sigma)
    if latent and np.any(state.Delta <= 0):
        raise NumericalError("negative noise variance in final state")

    meta = {
        "n": n, "q": q, "p": p, "iters": config.iters, "burn": config.burn,
        "thin": config.thin, "seed": config.seed, "model": config.model,
        "theta_mode": config.theta_mode, "theta_update": theta_update,
        "vecchia_m": config.vecchia_m, "n_draws": stored,
        "acceptance_rate": (acc["theta_accepts"] / acc["theta_proposals"]
                            if acc["theta_proposals"] else float("nan")),
    }
    return Chain(draws, acc, timings, meta,
                 w_draws=(np.array(w_draws) if w_draws else None),
                 w_draw_iters=(np.array(w_iters, dtype=int) if w_iters else None),
                 zero_corr=(np.array(zc_draws) if zc_draws else None),
                 zero_corr_iters=(np.array(zc_iters, dtype=int) if zc_iters else None))


def _run_iterations(config, data, model, state, priors, rng, theta_update,
                    joint_scale, block_scales, sweep, pool, free, k, draws,
                    w_every, w_draws, w_iters, zc_every, zc_draws, zc_iters,
                    acc, timings):
    latent = config.model == "latent"
    q = data.q
    stored = 0

    for it in range(config.iters):
        component = "theta"
        try:
            t0 = time.perf_counter()
            if config.theta_mode == "full":
                if theta_update == "joint":
                    ok, _ = update_theta_joint(state, data, model, priors, rng,
                                               scale=joint_scale, pool=pool)
                    acc["theta_proposals"] += 1
                    acc["theta_accepts"] += int(ok)
                else:
                    for j in range(q):
                        a, _ = update_theta_block(j, state, data, model, priors,
                                                  rng, scales=block_scales[j])
                        acc["theta_proposals"] += len(free)
                        acc["theta_accepts"] += a
                        acc["block_proposals"][j] += len(free)
                        acc["block_accepts"][j] += a
            elif config.theta_mode == "cluster":
                for c in range(k):
                    a, _ = update_theta_cluster(c, state, data, model, priors,
                                                rng, scales=block_scales[c])
                    acc["theta_proposals"] += len(free)
                    acc["theta_accepts"] += a
                    acc["block_proposals"][c] += len(free)
                    acc["block_accepts"][c] += a
            timings["theta"] += time.perf_counter() - t0

            if config.theta_mode != "full":
                component = "pi"
                t0 = time.perf_counter()
                update_cluster_assignments(state, data, model, priors, rng)
                timings["pi"] += time.perf_counter() - t0
            if sweep is not None:
                sweep.refresh(model)

            component = "sigma"
            t0 = time.perf_counter()
            update_sigma(state, state.V, priors, rng)
            timings["sigma"] += time.perf_counter() - t0

            component = "beta"
            t0 = time.perf_counter()
            if latent:
                update_beta_latent(state, data, priors, rng)
            else:
                update_beta_response(state, data, model, priors, rng)
            timings["beta"] += time.perf_counter() - t0

            if latent:
                component = "w"
                t0 = time.perf_counter()
                if config.w_update == "site":
                    sweep_w_sites(state, data, model, rng, sweep)
                else:
                    for j in range(q):
                        update_w_single_outcome(j, state, data, model, rng,
                                                tol=config.pcg_tol)
                timings["w"] += time.perf_counter() - t0
                component = "delta"
                t0 = time.perf_counter()
                update_delta(state, data, priors, rng)
                timings["delta"] += time.perf_counter() - t0
        except NumericalError as e:
            raise NumericalError(
                f"iteration {it}, component {component}: {e}") from e

        if it == config.burn - 1:
            joint_scale.frozen = True
            for sc in block_scales:
                sc.frozen = True
        if it >= config.burn and (it - config.burn) % config.thin == 0:
            t0 = time.perf_counter()
            draws["beta"][stored] = state.B
            draws["sigma"][stored] = state.Sigma
            draws["theta"][stored] = np.array(
                [[model.params_for(j).phi, model.params_for(j).nu,
                  model.params_for(j).tau2] for j in range(q)])
            draws["pi"][stored] = model.assignments
            draws["loglik"][stored] = loglik(state.gp_matrix(), model, state.V)
            if latent:
                draws["delta"][stored] = state.Delta
            if w_every is not None and stored % w_every == 0:
                w_draws.append(state.W.copy())
                w_iters.append(stored)
            if zc_every is not None and stored % zc_every == 0:
                zc_draws.append(zero_distance_cross_corr(model))
                zc_iters.append(stored)
            stored += 1
            timings["store"] += time.perf_counter() - t0

    draws["_stored"] = stored
