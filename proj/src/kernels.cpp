#include "eventfm/kernels.hpp"

#include <atomic>

#include "kernels_detail.hpp"

namespace eventfm::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::openmp};
}

Backend backend() { return g_backend.load(std::memory_order_relaxed); }
void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }

#define EVENTFM_DISPATCH(fn, ...)                      \
    do {                                               \
        if (backend() == Backend::openmp)              \
            detail_omp::fn(__VA_ARGS__);               \
        else                                           \
            detail_serial::fn(__VA_ARGS__);            \
    } while (0)

template <class T>
void linear(const T* x, int m, int k, const T* w, const T* bias, T* y, int n) {
    EVENTFM_DISPATCH(linear, x, m, k, w, bias, y, n);
}

template <class T>
void linear_dx(const T* dy, int m, int n, const T* w, int k, T* dx) {
    EVENTFM_DISPATCH(linear_dx, dy, m, n, w, k, dx);
}

template <class T>
void linear_dwdb(const T* dy, int m, int n, const T* x, int k, T* dw, T* db) {
    EVENTFM_DISPATCH(linear_dwdb, dy, m, n, x, k, dw, db);
}

template <class T>
void softmax_rows(T* a, int rows, int cols) {
    EVENTFM_DISPATCH(softmax_rows, a, rows, cols);
}

template <class T>
void attn_forward(const T* q, int lq, const T* k, const T* v, int lkv, int heads, int dh,
                  bool causal, int q_offset, const uint8_t* key_valid, T* probs, T* out) {
    EVENTFM_DISPATCH(attn_forward, q, lq, k, v, lkv, heads, dh, causal, q_offset, key_valid,
                     probs, out);
}

template <class T>
void attn_backward(const T* q, int lq, const T* k, const T* v, int lkv, int heads, int dh,
                   bool causal, int q_offset, const uint8_t* key_valid, const T* probs,
                   const T* dout, T* dq, T* dk, T* dv) {
    EVENTFM_DISPATCH(attn_backward, q, lq, k, v, lkv, heads, dh, causal, q_offset, key_valid,
                     probs, dout, dq, dk, dv);
}

template <class T>
void layernorm_forward(const T* x, int m, int d, const T* gamma, const T* beta, T* y, T* mean,
                       T* rstd, T eps) {
    EVENTFM_DISPATCH(layernorm_forward, x, m, d, gamma, beta, y, mean, rstd, eps);
}

template <class T>
void layernorm_backward(const T* dy, const T* x, int m, int d, const T* gamma, const T* mean,
                        const T* rstd, T* dx, T* dgamma, T* dbeta) {
    EVENTFM_DISPATCH(layernorm_backward, dy, x, m, d, gamma, mean, rstd, dx, dgamma, dbeta);
}

template <class T>
void gelu_forward(const T* x, T* y, int64_t n) {
    EVENTFM_DISPATCH(gelu_forward, x, y, n);
}

template <class T>
void gelu_backward(const T* x, const T* dy, T* dx, int64_t n) {
    EVENTFM_DISPATCH(gelu_backward, x, dy, dx, n);
}

template <class T>
void add_inplace(T* a, const T* b, int64_t n) {
    EVENTFM_DISPATCH(add_inplace, a, b, n);
}

template <class T>
void adamw_update(T* p, const T* g, T* m, T* v, int64_t n, T lr, T beta1, T beta2, T eps,
                  T weight_decay, T bias_corr1, T bias_corr2) {
    EVENTFM_DISPATCH(adamw_update, p, g, m, v, n, lr, beta1, beta2, eps, weight_decay, bias_corr1,
                     bias_corr2);
}

#define EVENTFM_INSTANTIATE_DISPATCH(T)                                                           \
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

EVENTFM_INSTANTIATE_DISPATCH(float)
EVENTFM_INSTANTIATE_DISPATCH(double)

}  // namespace eventfm::kernels
