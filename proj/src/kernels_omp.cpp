#include <cmath>
#include <limits>

#include "eventfm/kernels.hpp"
#include "kernels_detail.hpp"

// OpenMP backend. Parallelism is only over independent output elements and
// every inner reduction runs in the same order as the serial reference, so
// results are bit-identical for any thread count or schedule.

namespace eventfm::kernels::detail_omp {

template <class T>
void linear(const T* x, int m, int k, const T* w, const T* bias, T* y, int n) {
    const int64_t work = static_cast<int64_t>(m) * n * k;
#pragma omp parallel for collapse(2) schedule(static) if (work > 16384)
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            const T* xi = x + static_cast<int64_t>(i) * k;
            const T* wj = w + static_cast<int64_t>(j) * k;
            T acc = bias ? bias[j] : T(0);
            for (int t = 0; t < k; ++t) acc += xi[t] * wj[t];
            y[static_cast<int64_t>(i) * n + j] = acc;
        }
    }
}

template <class T>
void linear_dx(const T* dy, int m, int n, const T* w, int k, T* dx) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(m) * n * k > 16384)
    for (int i = 0; i < m; ++i) {
        const T* dyi = dy + static_cast<int64_t>(i) * n;
        T* dxi = dx + static_cast<int64_t>(i) * k;
        for (int t = 0; t < k; ++t) dxi[t] = T(0);
        for (int j = 0; j < n; ++j) {
            const T a = dyi[j];
            const T* wj = w + static_cast<int64_t>(j) * k;
            for (int t = 0; t < k; ++t) dxi[t] += a * wj[t];
        }
    }
}

template <class T>
void linear_dwdb(const T* dy, int m, int n, const T* x, int k, T* dw, T* db) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(m) * n * k > 16384)
    for (int j = 0; j < n; ++j) {
        T* dwj = dw + static_cast<int64_t>(j) * k;
        T dbj = T(0);
        for (int i = 0; i < m; ++i) {
            const T a = dy[static_cast<int64_t>(i) * n + j];
            dbj += a;
            const T* xi = x + static_cast<int64_t>(i) * k;
            for (int t = 0; t < k; ++t) dwj[t] += a * xi[t];
        }
        if (db) db[j] += dbj;
    }
}

template <class T>
void softmax_rows(T* a, int rows, int cols) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(rows) * cols > 8192)
    for (int i = 0; i < rows; ++i) {
        T* row = a + static_cast<int64_t>(i) * cols;
        T mx = row[0];
        for (int j = 1; j < cols; ++j) mx = row[j] > mx ? row[j] : mx;
        T sum = T(0);
        for (int j = 0; j < cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        const T inv = T(1) / sum;
        for (int j = 0; j < cols; ++j) row[j] *= inv;
    }
}

template <class T>
void attn_forward(const T* q, int lq, const T* k, const T* v, int lkv, int heads, int dh,
                  bool causal, int q_offset, const uint8_t* key_valid, T* probs, T* out) {
    const int dm = heads * dh;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<int64_t>(lq) * lkv * dh > 4096)
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < lq; ++i) {
            const T* qi = q + static_cast<int64_t>(i) * dm + h * dh;
            T* prow = probs + (static_cast<int64_t>(h) * lq + i) * lkv;
            const int bound = causal ? (i + q_offset < lkv - 1 ? i + q_offset : lkv - 1) : lkv - 1;
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j <= bound; ++j) {
                if (key_valid && !key_valid[j]) {
                    prow[j] = -std::numeric_limits<T>::infinity();
                    continue;
                }
                const T* kj = k + static_cast<int64_t>(j) * dm + h * dh;
                T s = T(0);
                for (int t = 0; t < dh; ++t) s += qi[t] * kj[t];
                s *= scale;
                prow[j] = s;
                if (s > mx) mx = s;
            }
            for (int j = bound + 1; j < lkv; ++j) prow[j] = -std::numeric_limits<T>::infinity();
            T* orow = out + static_cast<int64_t>(i) * dm + h * dh;
            for (int t = 0; t < dh; ++t) orow[t] = T(0);
            if (mx == -std::numeric_limits<T>::infinity()) {
                for (int j = 0; j < lkv; ++j) prow[j] = T(0);
                continue;
            }
            T sum = T(0);
            for (int j = 0; j <= bound; ++j) {
                if (prow[j] == -std::numeric_limits<T>::infinity()) {
                    prow[j] = T(0);
                } else {
                    prow[j] = std::exp(prow[j] - mx);
                    sum += prow[j];
                }
            }
            const T inv = T(1) / sum;
            for (int j = 0; j <= bound; ++j) prow[j] *= inv;
            for (int j = bound + 1; j < lkv; ++j) prow[j] = T(0);
            for (int j = 0; j <= bound; ++j) {
                const T p = prow[j];
                if (p == T(0)) continue;
                const T* vj = v + static_cast<int64_t>(j) * dm + h * dh;
                for (int t = 0; t < dh; ++t) orow[t] += p * vj[t];
            }
        }
    }
}

template <class T>
void attn_backward(const T* q, int lq, const T* k, const T* v, int lkv, int heads, int dh,
                   bool causal, int q_offset, const uint8_t* key_valid, const T* probs,
                   const T* dout, T* dq, T* dk, T* dv) {
    const int dm = heads * dh;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<int64_t>(lq) * lkv * dh > 4096)
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < lq; ++i) {
            const T* prow = probs + (static_cast<int64_t>(h) * lq + i) * lkv;
            const T* doi = dout + static_cast<int64_t>(i) * dm + h * dh;
            const int bound = causal ? (i + q_offset < lkv - 1 ? i + q_offset : lkv - 1) : lkv - 1;
            T dot = T(0);
            for (int j = 0; j <= bound; ++j) {
                if (prow[j] == T(0)) continue;
                const T* vj = v + static_cast<int64_t>(j) * dm + h * dh;
                T dp = T(0);
                for (int t = 0; t < dh; ++t) dp += doi[t] * vj[t];
                dot += prow[j] * dp;
            }
            T* dqi = dq + static_cast<int64_t>(i) * dm + h * dh;
            for (int t = 0; t < dh; ++t) dqi[t] = T(0);
            for (int j = 0; j <= bound; ++j) {
                const T p = prow[j];
                if (p == T(0)) continue;
                const T* vj = v + static_cast<int64_t>(j) * dm + h * dh;
                T dp = T(0);
                for (int t = 0; t < dh; ++t) dp += doi[t] * vj[t];
                const T ds = p * (dp - dot) * scale;
                const T* kj = k + static_cast<int64_t>(j) * dm + h * dh;
                for (int t = 0; t < dh; ++t) dqi[t] += ds * kj[t];
            }
        }
    }
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<int64_t>(lq) * lkv * dh > 4096)
    for (int h = 0; h < heads; ++h) {
        for (int j = 0; j < lkv; ++j) {
            T* dkj = dk + static_cast<int64_t>(j) * dm + h * dh;
            T* dvj = dv + static_cast<int64_t>(j) * dm + h * dh;
            for (int t = 0; t < dh; ++t) {
                dkj[t] = T(0);
                dvj[t] = T(0);
            }
            if (key_valid && !key_valid[j]) continue;
            const T* vj = v + static_cast<int64_t>(j) * dm + h * dh;
            for (int i = 0; i < lq; ++i) {
                const int bound = causal ? i + q_offset : lkv - 1;
                if (causal && j > bound) continue;
                const T p = probs[(static_cast<int64_t>(h) * lq + i) * lkv + j];
                if (p == T(0)) continue;
                const T* doi = dout + static_cast<int64_t>(i) * dm + h * dh;
                const T* prow = probs + (static_cast<int64_t>(h) * lq + i) * lkv;
                const int ibound = causal ? (i + q_offset < lkv - 1 ? i + q_offset : lkv - 1) : lkv - 1;
                T dot = T(0);
                for (int l = 0; l <= ibound; ++l) {
                    if (prow[l] == T(0)) continue;
                    const T* vl = v + static_cast<int64_t>(l) * dm + h * dh;
                    T dpl = T(0);
                    for (int t = 0; t < dh; ++t) dpl += doi[t] * vl[t];
                    dot += prow[l] * dpl;
                }
                T dp = T(0);
                for (int t = 0; t < dh; ++t) dp += doi[t] * vj[t];
                const T ds = p * (dp - dot) * scale;
                const T* qi = q + static_cast<int64_t>(i) * dm + h * dh;
                for (int t = 0; t < dh; ++t) {
                    dkj[t] += ds * qi[t];
                    dvj[t] += p * doi[t];
                }
            }
        }
    }
}

template <class T>
void layernorm_forward(const T* x, int m, int d, const T* gamma, const T* beta, T* y, T* mean,
                       T* rstd, T eps) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(m) * d > 8192)
    for (int i = 0; i < m; ++i) {
        const T* xi = x + static_cast<int64_t>(i) * d;
        T mu = T(0);
        for (int t = 0; t < d; ++t) mu += xi[t];
        mu /= static_cast<T>(d);
        T var = T(0);
        for (int t = 0; t < d; ++t) {
            const T c = xi[t] - mu;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T rs = T(1) / std::sqrt(var + eps);
        mean[i] = mu;
        rstd[i] = rs;
        T* yi = y + static_cast<int64_t>(i) * d;
        for (int t = 0; t < d; ++t) yi[t] = gamma[t] * (xi[t] - mu) * rs + beta[t];
    }
}

template <class T>
void layernorm_backward(const T* dy, const T* x, int m, int d, const T* gamma, const T* mean,
                        const T* rstd, T* dx, T* dgamma, T* dbeta) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(m) * d > 8192)
    for (int i = 0; i < m; ++i) {
        const T* dyi = dy + static_cast<int64_t>(i) * d;
        const T* xi = x + static_cast<int64_t>(i) * d;
        T* dxi = dx + static_cast<int64_t>(i) * d;
        const T mu = mean[i];
        const T rs = rstd[i];
        T sum1 = T(0), sum2 = T(0);
        for (int t = 0; t < d; ++t) {
            const T xhat = (xi[t] - mu) * rs;
            const T g = dyi[t] * gamma[t];
            sum1 += g;
            sum2 += g * xhat;
        }
        const T inv_d = T(1) / static_cast<T>(d);
        for (int t = 0; t < d; ++t) {
            const T xhat = (xi[t] - mu) * rs;
            const T g = dyi[t] * gamma[t];
            dxi[t] = rs * (g - inv_d * sum1 - xhat * inv_d * sum2);
        }
    }
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(m) * d > 8192)
    for (int t = 0; t < d; ++t) {
        T dg = T(0), db = T(0);
        for (int i = 0; i < m; ++i) {
            const T xhat = (x[static_cast<int64_t>(i) * d + t] - mean[i]) * rstd[i];
            dg += dy[static_cast<int64_t>(i) * d + t] * xhat;
            db += dy[static_cast<int64_t>(i) * d + t];
        }
        dgamma[t] += dg;
        dbeta[t] += db;
    }
}

template <class T>
void gelu_forward(const T* x, T* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > 8192)
    for (int64_t i = 0; i < n; ++i) y[i] = gelu_scalar(x[i]);
}

template <class T>
void gelu_backward(const T* x, const T* dy, T* dx, int64_t n) {
#pragma omp parallel for schedule(static) if (n > 8192)
    for (int64_t i = 0; i < n; ++i) dx[i] = dy[i] * gelu_grad_scalar(x[i]);
}

template <class T>
void add_inplace(T* a, const T* b, int64_t n) {
#pragma omp parallel for schedule(static) if (n > 32768)
    for (int64_t i = 0; i < n; ++i) a[i] += b[i];
}

template <class T>
void adamw_update(T* p, const T* g, T* m, T* v, int64_t n, T lr, T beta1, T beta2, T eps,
                  T weight_decay, T bias_corr1, T bias_corr2) {
#pragma omp parallel for schedule(static) if (n > 16384)
    for (int64_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
        const T mhat = m[i] / bias_corr1;
        const T vhat = v[i] / bias_corr2;
        p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p[i]);
    }
}

#define EVENTFM_INSTANTIATE_KERNELS(T)                                                            \
    template void linear<T>(const T*, int, int, const T*, const T*, T*, int);                     \
    template void linear_dx<T>(const T*, int, int, const T*, int, T*);                            \
    template void linear_dwdb<T>(const T*, int, int, const T*, int, T*, T*);                      \
    template void softmax_rows<T>(T*, int, int);                                                  \
    template void attn_forward<T>(const T*, int, const T*, const T*, int, int, int, bool, int,    \
                                  const uint8_t*, T*, T*);                                        \
    template void attn_backward<T>(const T*, int, const T*, const T*, int, int, int, bool, int,   \
                                   const uint8_t*, const T*, const T*, T*, T*, T*);               \
    template void layernorm_forward<T>(const T*, int, int, const T*, const T*, T*, T*, T*, T);    \
    template void layernorm_backward<T>(const T*, const T*, int, int, const T*, const T*,         \
                                        const T*, T*, T*, T*);                                    \
    template void gelu_forward<T>(const T*, T*, int64_t);                                         \
    template void gelu_backward<T>(const T*, const T*, T*, int64_t);                              \
    template void add_inplace<T>(T*, const T*, int64_t);                                          \
    template void adamw_update<T>(T*, const T*, T*, T*, int64_t, T, T, T, T, T, T, T);

EVENTFM_INSTANTIATE_KERNELS(float)
EVENTFM_INSTANTIATE_KERNELS(double)

}  // namespace eventfm::kernels::detail_omp
