"""Separated low-rank polynomial regression (sklearn-style estimator).

Fits vector-valued targets as a short sum of separable polynomial terms,

    y(x) ~= sum_r c_r * prod_d P_r,d(x_d),

with P_r,d low-degree Legendre polynomials in the normalized inputs.  Terms
are added greedily against the residual and refined by alternating least
squares; the separable structure keeps the coefficient count linear in the
input dimension, which is what makes regression over ten-plus parameters
with a few hundred samples workable.
"""

import numpy as np
from numpy.polynomial import legendre
from sklearn.base import BaseEstimator, RegressorMixin


class SeparatedPolyRegressor(BaseEstimator, RegressorMixin):
    """Greedy separated polynomial least squares.

    Parameters
    ----------
    rank : int
        Maximum number of separable terms.
    degree : int
        Polynomial degree per input dimension.
    n_sweeps : int
        Alternating least-squares sweeps per added term.
    ridge : float
        Tikhonov factor (relative to the Gram trace) in the ALS solves.
    tol : float
        Relative residual-improvement threshold for early stopping.
    """

    def __init__(self, rank=6, degree=2, n_sweeps=25, ridge=1e-10, tol=1e-10):
        self.rank = rank
        self.degree = degree
        self.n_sweeps = n_sweeps
        self.ridge = ridge
        self.tol = tol

    def _basis(self, X):
        # normalized Legendre-Vandermonde per input dimension
        Xn = 2.0 * (X - self.x_lo_) / np.where(self.x_span_ == 0.0, 1.0,
                                               self.x_span_) - 1.0
        Xn = np.clip(Xn, -1.5, 1.5)
        return [legendre.legvander(Xn[:, d], self.degree)
                for d in range(X.shape[1])]

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError("X must be (n_samples, n_features) matching y")
        self.x_lo_ = X.min(axis=0)
        self.x_span_ = X.max(axis=0) - self.x_lo_
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = y.shape[1]
        phi = self._basis(X)
        n, d = X.shape
        y_scale = np.linalg.norm(y)
        resid = y.copy()

        self.coef_ = []        # per term: (c (m,), thetas list of (degree+1,))
        prev = np.inf
        for _ in range(self.rank):
            thetas = [np.zeros(self.degree + 1) for _ in range(d)]
            for t in thetas:
                t[0] = 1.0
            c = np.zeros(self.n_outputs_)
            for _ in range(self.n_sweeps):
                g = np.ones(n)
                per_dim = [phi[k] @ thetas[k] for k in range(d)]
                for k in range(d):
                    g *= per_dim[k]
                denom = float(g @ g)
                if denom == 0.0:
                    break
                c = resid.T @ g / denom
                for k in range(d):
                    others = np.ones(n)
                    for j in range(d):
                        if j != k:
                            others *= per_dim[j]
                    A = phi[k] * others[:, None]          # (n, deg+1)
                    # joint LS over outputs: theta minimizes ||A th c^T - R||
                    G = (A.T @ A) * float(c @ c)
                    rhs = A.T @ (resid @ c)
                    reg = self.ridge * max(np.trace(G), 1e-300)
                    th = np.linalg.solve(
                        G + reg * np.eye(self.degree + 1), rhs)
                    nrm = np.linalg.norm(th)
                    if nrm == 0.0:
                        break
                    thetas[k] = th / nrm
                    c = c * nrm
                    per_dim[k] = phi[k] @ thetas[k]
            g = np.ones(n)
            for k in range(d):
                g *= phi[k] @ thetas[k]
            resid = resid - np.outer(g, c)
            self.coef_.append((c, thetas))
            res_norm = np.linalg.norm(resid)
            if res_norm <= self.tol * max(y_scale, 1e-300) or \
                    prev - res_norm <= self.tol * max(y_scale, 1e-300):
                break
            prev = res_norm
        self.residual_norm_ = float(np.linalg.norm(resid))
        self.rank_ = len(self.coef_)
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        squeeze = X.ndim == 1
        if squeeze:
            X = X[None, :]
        if not hasattr(self, "coef_"):
            raise RuntimeError("regressor is not fitted")
        phi = self._basis(X)
        out = np.zeros((X.shape[0], self.n_outputs_))
        for c, thetas in self.coef_:
            g = np.ones(X.shape[0])
            for k in range(X.shape[1]):
                g *= phi[k] @ thetas[k]
            out += np.outer(g, c)
        return out[0] if squeeze else out

    # -- plain-data round trip (for catalog persistence) ---------------------

    def to_dict(self):
        return {
            "rank": self.rank, "degree": self.degree,
            "n_sweeps": self.n_sweeps, "ridge": self.ridge, "tol": self.tol,
            "x_lo": self.x_lo_.tolist(), "x_span": self.x_span_.tolist(),
            "n_outputs": self.n_outputs_,
            "residual_norm": self.residual_norm_,
            "terms": [{"c": c.tolist(),
                       "thetas": [t.tolist() for t in thetas]}
                      for c, thetas in self.coef_],
        }

    @classmethod
    def from_dict(cls, doc):
        reg = cls(rank=doc["rank"], degree=doc["degree"],
                  n_sweeps=doc["n_sweeps"], ridge=doc["ridge"], tol=doc["tol"])
        reg.x_lo_ = np.asarray(doc["x_lo"], dtype=float)
        reg.x_span_ = np.asarray(doc["x_span"], dtype=float)
        reg.n_features_in_ = reg.x_lo_.size
        reg.n_outputs_ = doc["n_outputs"]
        reg.residual_norm_ = doc["residual_norm"]
        reg.coef_ = [(np.asarray(t["c"], dtype=float),
                      [np.asarray(x, dtype=float) for x in t["thetas"]])
                     for t in doc["terms"]]
        reg.rank_ = len(reg.coef_)
        return reg
