# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernels.

Mirrors ``plr._fallback`` function for function. One call to ``train_epoch``
runs every minibatch of an epoch (gather, forward, candidate loss, backward,
Adam) without returning to the interpreter; matrix products go through the
BLAS that scipy links against.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, isfinite, pow, sqrt
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

NAME = "cython"

cdef double WEIGHT_EPS = 1e-8
cdef double ADAM_BETA1 = 0.9
cdef double ADAM_BETA2 = 0.999
cdef double ADAM_EPS = 1e-8
cdef char TR_N = b"N"
cdef char TR_T = b"T"


cdef inline void _pointwise(int loss, double delta, double r, double* value, double* deriv) noexcept nogil:
    cdef double a
    if loss == 0:
        value[0] = r * r
        deriv[0] = 2.0 * r
    elif loss == 1:
        value[0] = fabs(r)
        deriv[0] = (r > 0) - (r < 0)
    else:
        a = fabs(r)
        if a <= delta:
            value[0] = 0.5 * r * r
            deriv[0] = r
        else:
            value[0] = delta * (a - 0.5 * delta)
            deriv[0] = delta * ((r > 0) - (r < 0))


cdef void _batch_loss(int agg, int loss, double delta, double beta1, double beta2,
                      const double* pred, const double[:, ::1] cands, const double[::1] y_true,
                      const long long* rows, Py_ssize_t n,
                      double* values, double* derivs, double* scratch) noexcept nogil:
    # scratch holds 3 * k doubles
    cdef Py_ssize_t i, j, row, best
    cdef Py_ssize_t k = cands.shape[1]
    cdef double* lv = scratch
    cdef double* ld = scratch + k
    cdef double* sc = scratch + 2 * k
    cdef double acc, acc2, z, smax
    for i in range(n):
        row = rows[i]
        if agg == 0:
            _pointwise(loss, delta, pred[i] - y_true[row], &values[i], &derivs[i])
            continue
        if agg == 2:
            acc = cands[row, 0]
            for j in range(1, k):
                acc += cands[row, j]
            _pointwise(loss, delta, pred[i] - acc / k, &values[i], &derivs[i])
            continue
        for j in range(k):
            _pointwise(loss, delta, pred[i] - cands[row, j], &lv[j], &ld[j])
        if agg == 1:
            acc = lv[0]
            acc2 = ld[0]
            for j in range(1, k):
                acc += lv[j]
                acc2 += ld[j]
            values[i] = acc / k
            derivs[i] = acc2 / k
        elif agg == 3:
            best = 0
            for j in range(1, k):
                if lv[j] < lv[best]:
                    best = j
            values[i] = lv[best]
            derivs[i] = ld[best]
        else:
            smax = -1.0
            for j in range(k):
                sc[j] = beta2 * pow(lv[j] if lv[j] > WEIGHT_EPS else WEIGHT_EPS, -beta1)
                if j == 0 or sc[j] > smax:
                    smax = sc[j]
            for j in range(k):
                sc[j] = exp(sc[j] - smax)
            z = sc[0]
            acc = sc[0] * lv[0]
            acc2 = sc[0] * ld[0]
            for j in range(1, k):
                z += sc[j]
                acc += sc[j] * lv[j]
                acc2 += sc[j] * ld[j]
            values[i] = acc / z
            derivs[i] = acc2 / z


cdef class _Net:
    """Buffers for one model shape and a maximum batch size."""
    cdef int n_layers
    cdef int[::1] dims
    cdef Py_ssize_t[::1] w_off
    cdef Py_ssize_t[::1] b_off
    cdef Py_ssize_t[::1] a_off
    cdef Py_ssize_t max_batch
    cdef double[::1] acts
    cdef double[::1] dbuf
    cdef double[::1] dbuf2
    cdef double[::1] values
    cdef double[::1] derivs
    cdef double[::1] scratch

    def __init__(self, dims, Py_ssize_t max_batch, Py_ssize_t k):
        cdef Py_ssize_t off = 0, aoff = 0, widest = 0
        cdef int i
        self.n_layers = len(dims) - 1
        self.dims = np.asarray(dims, dtype=np.intc)
        self.w_off = np.zeros(self.n_layers, dtype=np.intp)
        self.b_off = np.zeros(self.n_layers, dtype=np.intp)
        self.a_off = np.zeros(self.n_layers + 1, dtype=np.intp)
        for i in range(self.n_layers):
            self.w_off[i] = off
            off += self.dims[i] * self.dims[i + 1]
            self.b_off[i] = off
            off += self.dims[i + 1]
        for i in range(self.n_layers + 1):
            self.a_off[i] = aoff
            aoff += max_batch * self.dims[i]
            if self.dims[i] > widest:
                widest = self.dims[i]
        self.max_batch = max_batch
        self.acts = np.zeros(aoff)
        self.dbuf = np.zeros(max_batch * widest)
        self.dbuf2 = np.zeros(max_batch * widest)
        self.values = np.zeros(max_batch)
        self.derivs = np.zeros(max_batch)
        self.scratch = np.zeros(3 * max(k, 1))

    cdef void forward(self, const double* theta, Py_ssize_t n) noexcept nogil:
        # acts[0] must already hold the input rows
        cdef int l, fi, fo
        cdef Py_ssize_t r, c
        cdef double one = 1.0, zero = 0.0
        cdef double* a_in
        cdef double* a_out
        cdef int nn = <int>n
        for l in range(self.n_layers):
            fi = self.dims[l]
            fo = self.dims[l + 1]
            a_in = &self.acts[self.a_off[l]]
            a_out = &self.acts[self.a_off[l + 1]]
            for r in range(n):
                for c in range(fo):
                    a_out[r * fo + c] = theta[self.b_off[l] + c]
            # row-major out(n x fo) += in(n x fi) @ W(fi x fo)
            dgemm(&TR_N, &TR_N, &fo, &nn, &fi, &one, <double*>&theta[self.w_off[l]], &fo,
                  a_in, &fi, &one, a_out, &fo)
            if l < self.n_layers - 1:
                for r in range(n * fo):
                    if a_out[r] < 0.0:
                        a_out[r] = 0.0

    cdef double loss_grad(self, const double* theta, double* grad, Py_ssize_t n,
                          const double[:, ::1] cands, const double[::1] y_true, const long long* rows,
                          int agg, int loss, double delta, double beta1, double beta2) noexcept nogil:
        """Forward, loss and backward on the rows already gathered into acts[0]."""
        cdef int l, fi, fo
        cdef Py_ssize_t r, c
        cdef double one = 1.0, zero = 0.0, total = 0.0
        cdef int nn = <int>n
        cdef double* a_in
        cdef double* d
        cdef double* dprev
        cdef double* tmp
        cdef double* pred
        self.forward(theta, n)
        pred = &self.acts[self.a_off[self.n_layers]]
        _batch_loss(agg, loss, delta, beta1, beta2, pred, cands, y_true, rows, n,
                    &self.values[0], &self.derivs[0], &self.scratch[0])
        for r in range(n):
            total += self.values[r]
        d = &self.dbuf[0]
        dprev = &self.dbuf2[0]
        for r in range(n):
            d[r] = self.derivs[r] / n
        for l in range(self.n_layers - 1, -1, -1):
            fi = self.dims[l]
            fo = self.dims[l + 1]
            a_in = &self.acts[self.a_off[l]]
            # gW(fi x fo) = in^T @ d
            dgemm(&TR_N, &TR_T, &fo, &fi, &nn, &one, d, &fo, a_in, &fi, &zero, &grad[self.w_off[l]], &fo)
            for c in range(fo):
                grad[self.b_off[l] + c] = 0.0
            for r in range(n):
                for c in range(fo):
                    grad[self.b_off[l] + c] += d[r * fo + c]
            if l > 0:
                # dprev(n x fi) = d @ W^T, masked by the ReLU
                dgemm(&TR_T, &TR_N, &fi, &nn, &fo, &one, <double*>&theta[self.w_off[l]], &fo,
                      d, &fo, &zero, dprev, &fi)
                for r in range(n * fi):
                    if not a_in[r] > 0.0:
                        dprev[r] = 0.0
                tmp = d
                d = dprev
                dprev = tmp
        return total

    cdef void gather(self, const double[:, ::1] X, const long long* rows, Py_ssize_t n) noexcept nogil:
        cdef Py_ssize_t r, c
        cdef Py_ssize_t d0 = X.shape[1]
        cdef double* a0 = &self.acts[0]
        for r in range(n):
            for c in range(d0):
                a0[r * d0 + c] = X[rows[r], c]


cdef inline bint _all_finite(const double* x, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(n):
        if not isfinite(x[i]):
            return False
    return True


cdef void _adam(double* theta, double* m, double* v, const double* g, Py_ssize_t p,
                long step, double lr) noexcept nogil:
    cdef Py_ssize_t i
    cdef double bc1 = 1.0 - pow(ADAM_BETA1, <double>step)
    cdef double bc2 = 1.0 - pow(ADAM_BETA2, <double>step)
    for i in range(p):
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i]
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * (g[i] * g[i])
        theta[i] -= lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + ADAM_EPS)


def batch_loss(int agg, int loss, double delta, double beta1, double beta2, pred, cands, y_true):
    cdef double[::1] p = np.ascontiguousarray(pred, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0]
    cdef double[:, ::1] C = np.ascontiguousarray(cands, dtype=np.float64)
    cdef double[::1] y = np.ascontiguousarray(y_true, dtype=np.float64)
    cdef long long[::1] rows = np.arange(n, dtype=np.int64)
    values = np.empty(n)
    derivs = np.empty(n)
    cdef double[::1] vv = values
    cdef double[::1] dd = derivs
    cdef double[::1] scratch = np.empty(3 * max(C.shape[1], 1))
    if n:
        _batch_loss(agg, loss, delta, beta1, beta2, &p[0], C, y, &rows[0], n, &vv[0], &dd[0], &scratch[0])
    return values, derivs


def forward(theta, dims, X):
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0]
    cdef _Net net = _Net(dims, max(n, 1), 1)
    cdef long long[::1] rows = np.arange(n, dtype=np.int64)
    if n == 0:
        return np.empty(0)
    net.gather(Xv, &rows[0], n)
    net.forward(&th[0], n)
    return np.asarray(net.acts[net.a_off[net.n_layers]:net.a_off[net.n_layers] + n]).copy()


def loss_and_grad(theta, dims, X, cands, y_true, int agg, int loss, double delta, double beta1, double beta2):
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] C = np.ascontiguousarray(cands, dtype=np.float64)
    cdef double[::1] y = np.ascontiguousarray(y_true, dtype=np.float64)
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0]
    cdef _Net net = _Net(dims, n, C.shape[1])
    cdef long long[::1] rows = np.arange(n, dtype=np.int64)
    grad = np.zeros(th.shape[0])
    cdef double[::1] g = grad
    net.gather(Xv, &rows[0], n)
    total = net.loss_grad(&th[0], &g[0], n, C, y, &rows[0], agg, loss, delta, beta1, beta2)
    return total, grad


def adam_update(double[::1] theta, double[::1] m, double[::1] v, const double[::1] grad, long step, double lr):
    _adam(&theta[0], &m[0], &v[0], &grad[0], theta.shape[0], step, lr)


def train_epoch(double[::1] theta, double[::1] m, double[::1] v, long step, double lr, dims,
                X, cands, y_true, perm, Py_ssize_t batch_size,
                int agg, int loss, double delta, double beta1, double beta2):
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] C = np.ascontiguousarray(cands, dtype=np.float64)
    cdef double[::1] y = np.ascontiguousarray(y_true, dtype=np.float64)
    cdef long long[::1] pv = np.ascontiguousarray(perm, dtype=np.int64)
    cdef Py_ssize_t n = pv.shape[0]
    cdef Py_ssize_t p = theta.shape[0]
    cdef Py_ssize_t start, nb, bi = 0
    cdef _Net net = _Net(dims, min(batch_size, max(n, 1)), C.shape[1])
    cdef double[::1] g = np.zeros(p)
    cdef double total = 0.0, s
    cdef long bad = -1
    with nogil:
        start = 0
        while start < n:
            nb = batch_size if start + batch_size <= n else n - start
            net.gather(Xv, &pv[start], nb)
            s = net.loss_grad(&theta[0], &g[0], nb, C, y, &pv[start], agg, loss, delta, beta1, beta2)
            total += s
            if not (isfinite(s) and _all_finite(&g[0], p)):
                bad = bi
                break
            step += 1
            _adam(&theta[0], &m[0], &v[0], &g[0], p, step, lr)
            start += nb
            bi += 1
    return total, step, bad
