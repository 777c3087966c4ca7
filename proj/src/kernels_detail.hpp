#pragma once

#include <cstdint>

// Internal declarations for the two kernel backends. The serial versions are
// the reference; the openmp versions must match them bit for bit.

namespace eventfm::kernels {

namespace detail_serial {

template <class T>
void linear(const T* x, int m, int k, const T* w, const T* bias, T* y, int n);
template <class T>
void linear_dx(const T* dy, int m, int n, const T* w, int k, T* dx);
template <class T>
void linear_dwdb(const T* dy, int m, int n, const T* x, int k, T* dw, T* db);
template <class T>
void softmax_rows(T* a, int rows, int cols);
template <class T>
void attn_forward(const T* q, int lq, const T* k, const T* v, int lkv, int heads, int dh,
                  bool causal, int q_offset, const uint8_t* key_valid, T* probs, T* out);
template <class T>
void attn_backward(const T* q, int lq, const T* k, const T* v, int lkv, int heads, int dh,
                   bool causal, int q_offset, const uint8_t* key_valid, const T* probs,
                   const T* dout, T* dq, T* dk, T* dv);
template <class T>
void layernorm_forward(const T* x, int m, int d, const T* gamma, const T* beta, T* y, T* mean,
                       T* rstd, T eps);
template <class T>
void layernorm_backward(const T* dy, const T* x, int m, int d, const T* gamma, const T* mean,
                        const T* rstd, T* dx, T* dgamma, T* dbeta);
template <class T>
void gelu_forward(const T* x, T* y, int64_t n);
template <class T>
void gelu_backward(const T* x, const T* dy, T* dx, int64_t n);
template <class T>
void add_inplace(T* a, const T* b, int64_t n);
template <class T>
void adamw_update(T* p, const T* g, T* m, T* v, int64_t n, T lr, T beta1, T beta2, T eps,
                  T weight_decay, T bias_corr1, T bias_corr2);

}  // namespace detail_serial

namespace detail_omp {

template <class T>
void linear(const T* x, int m, int k, const T* w, const T* bias, T* y, int n);
template <class T>
void linear_dx(const T* dy, int m, int n, const T* w, int k, T* dx);
template <class T>
void linear_dwdb(const T* dy, int m, int n, const T* x, int k, T* dw, T* db);
template <class T>
void softmax_rows(T* a, int rows, int cols);
template <class T>
void attn_forward(const T* q, int lq, const T* k, const T* v, int lkv, int heads, int dh,
                  bool causal, int q_offset, const uint8_t* key_valid, T* probs, T* out);
template <class T>
void attn_backward(const T* q, int lq, const T* k, const T* v, int lkv, int heads, int dh,
                   bool causal, int q_offset, const uint8_t* key_valid, const T* probs,
                   const T* dout, T* dq, T* dk, T* dv);
template <class T>
void layernorm_forward(const T* x, int m, int d, const T* gamma, const T* beta, T* y, T* mean,
                       T* rstd, T eps);
template <class T>
void layernorm_backward(const T* dy, const T* x, int m, int d, const T* gamma, const T* mean,
                        const T* rstd, T* dx, T* dgamma, T* dbeta);
template <class T>
void gelu_forward(const T* x, T* y, int64_t n);
template <class T>
void gelu_backward(const T* x, const T* dy, T* dx, int64_t n);
template <class T>
void add_inplace(T* a, const T* b, int64_t n);
template <class T>
void adamw_update(T* p, const T* g, T* m, T* v, int64_t n, T lr, T beta1, T beta2, T eps,
                  T weight_decay, T bias_corr1, T bias_corr2);

}  // namespace detail_omp

}  // namespace eventfm::kernels
