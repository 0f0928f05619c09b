"""Cached evaluation of problem coefficients on a fixed spatial grid."""

from __future__ import annotations

import numpy as np

from . import expr as ex


def _as_grid(value, x):
    a = np.asarray(value, dtype=float)
    if a.shape != x.shape:
        a = np.broadcast_to(a, x.shape).copy()
    return a


class CoeffCache:
    """Evaluates b, l, sigma, h, h', f on one x-array, caching t-free ones."""

    def __init__(self, spec, x):
        self.spec = spec
        self.x = np.asarray(x, dtype=float)
        self._static = {}
        for name in ("b", "l", "sigma", "h", "h_prime"):
            e = getattr(spec, name)
            if "t" not in ex.variables(e):
                self._static[name] = _as_grid(ex.eval_expr(e, {"x": self.x}), self.x)

    def _field(self, name, t):
        cached = self._static.get(name)
        if cached is not None:
            return cached
        return _as_grid(ex.eval_expr(getattr(self.spec, name), {"t": t, "x": self.x}), self.x)

    def b(self, t):
        return self._field("b", t)

    def l(self, t):
        return self._field("l", t)

    def sigma(self, t):
        return self._field("sigma", t)

    def h(self, t):
        return self._field("h", t)

    def h_prime(self, t):
        return self._field("h_prime", t)

    def phi(self):
        return _as_grid(ex.eval_expr(self.spec.phi, {"x": self.x}), self.x)

    def f(self, t, x, y, z):
        out = ex.eval_expr(self.spec.f, {"t": t, "x": x, "y": y, "z": z})
        a = np.asarray(out, dtype=float)
        if a.shape != np.shape(y):
            a = np.broadcast_to(a, np.shape(y)).copy()
        return a
