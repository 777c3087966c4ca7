#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "eventfm/common.hpp"
#include "eventfm/kernels.hpp"

using namespace eventfm;
namespace ker = eventfm::kernels;

namespace {

std::vector<float> randn(size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

struct BackendGuard {
    ker::Backend saved = ker::backend();
    ~BackendGuard() { ker::set_backend(saved); }
};

}  // namespace

TEST_CASE("openmp kernels match the serial reference bit for bit") {
    BackendGuard guard;
    Rng rng(11);
    const int m = 37, k = 29, n = 53;
    auto x = randn(static_cast<size_t>(m) * k, rng);
    auto w = randn(static_cast<size_t>(n) * k, rng);
    auto bias = randn(static_cast<size_t>(n), rng);
    auto dy = randn(static_cast<size_t>(m) * n, rng);

    std::vector<float> y_s(static_cast<size_t>(m) * n), y_p(y_s.size());
    std::vector<float> dx_s(static_cast<size_t>(m) * k), dx_p(dx_s.size());
    std::vector<float> dw_s(static_cast<size_t>(n) * k, 0.5f), dw_p(dw_s);
    std::vector<float> db_s(static_cast<size_t>(n), 0.25f), db_p(db_s);

    ker::set_backend(ker::Backend::serial);
    ker::linear(x.data(), m, k, w.data(), bias.data(), y_s.data(), n);
    ker::linear_dx(dy.data(), m, n, w.data(), k, dx_s.data());
    ker::linear_dwdb(dy.data(), m, n, x.data(), k, dw_s.data(), db_s.data());
    ker::set_backend(ker::Backend::openmp);
    ker::linear(x.data(), m, k, w.data(), bias.data(), y_p.data(), n);
    ker::linear_dx(dy.data(), m, n, w.data(), k, dx_p.data());
    ker::linear_dwdb(dy.data(), m, n, x.data(), k, dw_p.data(), db_p.data());

    CHECK(bitwise_equal(y_s, y_p));
    CHECK(bitwise_equal(dx_s, dx_p));
    CHECK(bitwise_equal(dw_s, dw_p));
    CHECK(bitwise_equal(db_s, db_p));
}

TEST_CASE("attention kernels match across backends, with masks") {
    BackendGuard guard;
    Rng rng(7);
    const int lq = 19, lkv = 19, heads = 4, dh = 8;
    const int dm = heads * dh;
    auto q = randn(static_cast<size_t>(lq) * dm, rng);
    auto k = randn(static_cast<size_t>(lkv) * dm, rng);
    auto v = randn(static_cast<size_t>(lkv) * dm, rng);
    auto dout = randn(static_cast<size_t>(lq) * dm, rng);
    std::vector<uint8_t> valid(static_cast<size_t>(lkv), 1);
    valid[0] = valid[3] = 0;  // padded keys

    std::vector<float> probs_s(static_cast<size_t>(heads) * lq * lkv), probs_p(probs_s.size());
    std::vector<float> out_s(static_cast<size_t>(lq) * dm), out_p(out_s.size());
    std::vector<float> dq_s(out_s.size()), dq_p(out_s.size());
    std::vector<float> dk_s(out_s.size()), dk_p(out_s.size());
    std::vector<float> dv_s(out_s.size()), dv_p(out_s.size());

    ker::set_backend(ker::Backend::serial);
    ker::attn_forward(q.data(), lq, k.data(), v.data(), lkv, heads, dh, true, 0, valid.data(),
                      probs_s.data(), out_s.data());
    ker::attn_backward(q.data(), lq, k.data(), v.data(), lkv, heads, dh, true, 0, valid.data(),
                       probs_s.data(), dout.data(), dq_s.data(), dk_s.data(), dv_s.data());
    ker::set_backend(ker::Backend::openmp);
    ker::attn_forward(q.data(), lq, k.data(), v.data(), lkv, heads, dh, true, 0, valid.data(),
                      probs_p.data(), out_p.data());
    ker::attn_backward(q.data(), lq, k.data(), v.data(), lkv, heads, dh, true, 0, valid.data(),
                       probs_p.data(), dout.data(), dq_p.data(), dk_p.data(), dv_p.data());

    CHECK(bitwise_equal(probs_s, probs_p));
    CHECK(bitwise_equal(out_s, out_p));
    CHECK(bitwise_equal(dq_s, dq_p));
    CHECK(bitwise_equal(dk_s, dk_p));
    CHECK(bitwise_equal(dv_s, dv_p));

    // attention rows are distributions over attendable keys
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < lq; ++i) {
            double sum = 0.0;
            for (int j = 0; j < lkv; ++j) {
                const float p = probs_s[(static_cast<size_t>(h) * lq + i) * lkv + j];
                CHECK(p >= 0.0f);
                if (j > i || !valid[static_cast<size_t>(j)]) CHECK(p == 0.0f);
                sum += p;
            }
            if (i >= 1) CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
        }
}

TEST_CASE("layernorm, gelu, softmax and adamw match across backends") {
    BackendGuard guard;
    Rng rng(3);
    const int m = 41, d = 33;
    auto x = randn(static_cast<size_t>(m) * d, rng);
    auto gamma = randn(static_cast<size_t>(d), rng);
    auto beta = randn(static_cast<size_t>(d), rng);
    auto dy = randn(static_cast<size_t>(m) * d, rng);

    std::vector<float> y_s(x.size()), y_p(x.size()), mean_s(m), mean_p(m), rstd_s(m), rstd_p(m);
    std::vector<float> dx_s(x.size()), dx_p(x.size());
    std::vector<float> dg_s(static_cast<size_t>(d), 0.0f), dg_p(dg_s), db_s(dg_s), db_p(dg_s);

    ker::set_backend(ker::Backend::serial);
    ker::layernorm_forward(x.data(), m, d, gamma.data(), beta.data(), y_s.data(), mean_s.data(),
                           rstd_s.data(), 1e-5f);
    ker::layernorm_backward(dy.data(), x.data(), m, d, gamma.data(), mean_s.data(), rstd_s.data(),
                            dx_s.data(), dg_s.data(), db_s.data());
    ker::set_backend(ker::Backend::openmp);
    ker::layernorm_forward(x.data(), m, d, gamma.data(), beta.data(), y_p.data(), mean_p.data(),
                           rstd_p.data(), 1e-5f);
    ker::layernorm_backward(dy.data(), x.data(), m, d, gamma.data(), mean_p.data(), rstd_p.data(),
                            dx_p.data(), dg_p.data(), db_p.data());
    CHECK(bitwise_equal(y_s, y_p));
    CHECK(bitwise_equal(dx_s, dx_p));
    CHECK(bitwise_equal(dg_s, dg_p));
    CHECK(bitwise_equal(db_s, db_p));

    auto big = randn(100000, rng);
    std::vector<float> g_s(big.size()), g_p(big.size());
    ker::set_backend(ker::Backend::serial);
    ker::gelu_forward(big.data(), g_s.data(), static_cast<int64_t>(big.size()));
    ker::set_backend(ker::Backend::openmp);
    ker::gelu_forward(big.data(), g_p.data(), static_cast<int64_t>(big.size()));
    CHECK(bitwise_equal(g_s, g_p));

    auto sm_s = randn(static_cast<size_t>(m) * d, rng);
    auto sm_p = sm_s;
    ker::set_backend(ker::Backend::serial);
    ker::softmax_rows(sm_s.data(), m, d);
    ker::set_backend(ker::Backend::openmp);
    ker::softmax_rows(sm_p.data(), m, d);
    CHECK(bitwise_equal(sm_s, sm_p));

    auto p_s = randn(50000, rng);
    auto p_p = p_s;
    auto grad = randn(50000, rng);
    std::vector<float> m1_s(50000, 0.0f), m1_p(50000, 0.0f), v1_s(50000, 0.0f), v1_p(50000, 0.0f);
    ker::set_backend(ker::Backend::serial);
    ker::adamw_update(p_s.data(), grad.data(), m1_s.data(), v1_s.data(), 50000, 1e-3f, 0.9f, 0.999f,
                      1e-8f, 0.01f, 0.1f, 0.001f);
    ker::set_backend(ker::Backend::openmp);
    ker::adamw_update(p_p.data(), grad.data(), m1_p.data(), v1_p.data(), 50000, 1e-3f, 0.9f, 0.999f,
                      1e-8f, 0.01f, 0.1f, 0.001f);
    CHECK(bitwise_equal(p_s, p_p));
}

TEST_CASE("gelu gradient agrees with finite differences") {
    for (double x : {-3.0, -1.0, -0.1, 0.0, 0.5, 2.5}) {
        const double h = 1e-6;
        const double fd = (ker::gelu_scalar(x + h) - ker::gelu_scalar(x - h)) / (2.0 * h);
        CHECK(ker::gelu_grad_scalar(x) == doctest::Approx(fd).epsilon(1e-6));
    }
}
