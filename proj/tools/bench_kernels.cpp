// Timing comparison between the serial reference kernels and the OpenMP
// kernels, over shapes representative of training and generation.

#include <chrono>
#include <cstdio>
#include <vector>

#include "eventfm/common.hpp"
#include "eventfm/kernels.hpp"

namespace ker = eventfm::kernels;
using eventfm::Rng;

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(int reps, const std::function<void()>& fn) {
    fn();  // warm up
    const auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) fn();
    const auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void fill(std::vector<float>& v, Rng& rng) {
    for (auto& x : v) x = static_cast<float>(rng.normal());
}

struct Case {
    const char* name;
    std::function<void()> fn;
};

}  // namespace

int main(int argc, char** argv) {
    int reps = 20;
    if (argc > 1) reps = std::atoi(argv[1]);
    Rng rng(42);

    const int L = 256, D = 64, H = 4, DH = D / H, FH = 4 * D, V = 400;
    std::vector<float> x(static_cast<size_t>(L) * D), w(static_cast<size_t>(FH) * D),
        y(static_cast<size_t>(L) * FH), b(FH);
    std::vector<float> head(static_cast<size_t>(V) * D), logits(static_cast<size_t>(L) * V);
    std::vector<float> q(static_cast<size_t>(L) * D), k(static_cast<size_t>(L) * D),
        v(static_cast<size_t>(L) * D), probs(static_cast<size_t>(H) * L * L),
        att(static_cast<size_t>(L) * D);
    std::vector<float> dq(q.size()), dk(k.size()), dv(v.size()), datt(att.size());
    fill(x, rng);
    fill(w, rng);
    fill(b, rng);
    fill(head, rng);
    fill(q, rng);
    fill(k, rng);
    fill(v, rng);
    fill(datt, rng);

    std::vector<Case> cases = {
        {"linear 256x64 -> 256", [&] { ker::linear(x.data(), L, D, w.data(), b.data(), y.data(), FH); }},
        {"head 256x64 -> 400",
         [&] { ker::linear(x.data(), L, D, head.data(), static_cast<const float*>(nullptr), logits.data(), V); }},
        {"attn fwd 4h x 256", [&] {
             ker::attn_forward(q.data(), L, k.data(), v.data(), L, H, DH, true, 0, nullptr,
                               probs.data(), att.data());
         }},
        {"attn bwd 4h x 256", [&] {
             ker::attn_backward(q.data(), L, k.data(), v.data(), L, H, DH, true, 0, nullptr,
                                probs.data(), datt.data(), dq.data(), dk.data(), dv.data());
         }},
        {"gelu 64k", [&] { ker::gelu_forward(y.data(), y.data(), static_cast<int64_t>(y.size())); }},
    };

    std::printf("%-24s %12s %12s %8s\n", "kernel", "serial(ms)", "openmp(ms)", "speedup");
    for (auto& c : cases) {
        // attn bwd reads probs produced by fwd; refresh them under each backend
        ker::set_backend(ker::Backend::serial);
        ker::attn_forward(q.data(), L, k.data(), v.data(), L, H, DH, true, 0, nullptr, probs.data(),
                          att.data());
        const double serial = time_ms(reps, c.fn);
        ker::set_backend(ker::Backend::openmp);
        ker::attn_forward(q.data(), L, k.data(), v.data(), L, H, DH, true, 0, nullptr, probs.data(),
                          att.data());
        const double omp = time_ms(reps, c.fn);
        std::printf("%-24s %12.3f %12.3f %7.2fx\n", c.name, serial, omp, serial / omp);
    }
    ker::set_backend(ker::Backend::openmp);
    return 0;
}
