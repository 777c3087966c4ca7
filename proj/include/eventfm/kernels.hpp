#pragma once

#include <cmath>
#include <cstdint>

namespace eventfm::kernels {

// Two interchangeable kernel backends. `serial` is the reference
// implementation; `openmp` parallelizes over independent output elements with
// the same serial inner-loop order, so both produce bit-identical results.
enum class Backend { serial, openmp };

Backend backend();
void set_backend(Backend b);

// y[m x n] = x[m x k] * w[n x k]^T (+ bias[n] if non-null)
template <class T>
void linear(const T* x, int m, int k, const T* w, const T* bias, T* y, int n);

// dx[m x k] = dy[m x n] * w[n x k]
template <class T>
void linear_dx(const T* dy, int m, int n, const T* w, int k, T* dx);

// dw[n x k] += dy[m x n]^T * x[m x k]; db[n] += column sums of dy (if non-null)
template <class T>
void linear_dwdb(const T* dy, int m, int n, const T* x, int k, T* dw, T* db);

template <class T>
void softmax_rows(T* a, int rows, int cols);

// Multi-head attention over row-major activations laid out [L x (heads*dh)].
// Query position i attends key position j when j <= i + q_offset (causal) or
// unconditionally (causal = false), and key_valid[j] holds (null = all valid).
// probs has shape [heads x Lq x Lkv]; out has shape [Lq x (heads*dh)].
template <class T>
void attn_forward(const T* q, int lq, const T* k, const T* v, int lkv, int heads, int dh,
                  bool causal, int q_offset, const uint8_t* key_valid, T* probs, T* out);

// Gradients of attn_forward. dq/dk/dv are assigned (not accumulated).
template <class T>
void attn_backward(const T* q, int lq, const T* k, const T* v, int lkv, int heads, int dh,
                   bool causal, int q_offset, const uint8_t* key_valid, const T* probs,
                   const T* dout, T* dq, T* dk, T* dv);

// y = gamma * (x - mean) * rstd + beta, per row of x[m x d].
template <class T>
void layernorm_forward(const T* x, int m, int d, const T* gamma, const T* beta, T* y, T* mean,
                       T* rstd, T eps);

template <class T>
void layernorm_backward(const T* dy, const T* x, int m, int d, const T* gamma, const T* mean,
                        const T* rstd, T* dx, T* dgamma, T* dbeta);

template <class T>
void gelu_forward(const T* x, T* y, int64_t n);

// dx = dy * gelu'(x)
template <class T>
void gelu_backward(const T* x, const T* dy, T* dx, int64_t n);

template <class T>
void add_inplace(T* a, const T* b, int64_t n);

template <class T>
void adamw_update(T* p, const T* g, T* m, T* v, int64_t n, T lr, T beta1, T beta2, T eps,
                  T weight_decay, T bias_corr1, T bias_corr2);

// exact gelu: x/2 * (1 + erf(x/sqrt(2)))
template <class T>
inline T gelu_scalar(T x) {
    return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::erf(x * static_cast<T>(0.70710678118654752440)));
}

template <class T>
inline T gelu_grad_scalar(T x) {
    const T phi = static_cast<T>(0.5) * (static_cast<T>(1) + std::erf(x * static_cast<T>(0.70710678118654752440)));
    const T pdf = static_cast<T>(0.39894228040143267794) * std::exp(static_cast<T>(-0.5) * x * x);
    return phi + x * pdf;
}

}  // namespace eventfm::kernels
