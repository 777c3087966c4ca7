#include "eventfm/model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "eventfm/kernels.hpp"
#include "eventfm/tokenizer.hpp"

namespace eventfm {

namespace ker = eventfm::kernels;
using ordered_json = nlohmann::ordered_json;

namespace {
std::atomic<int64_t> g_forward_passes{0};
}

int64_t forward_pass_count() { return g_forward_passes.load(std::memory_order_relaxed); }
void reset_forward_pass_count() { g_forward_passes.store(0, std::memory_order_relaxed); }

const char* fusion_mode_name(FusionMode m) {
    switch (m) {
        case FusionMode::ehr_only: return "ehr_only";
        case FusionMode::prs_prefix: return "prs_prefix";
        case FusionMode::prs_cross: return "prs_cross";
    }
    return "?";
}

std::optional<FusionMode> parse_fusion_mode(std::string_view s) {
    if (s == "ehr_only") return FusionMode::ehr_only;
    if (s == "prs_prefix") return FusionMode::prs_prefix;
    if (s == "prs_cross") return FusionMode::prs_cross;
    return std::nullopt;
}

void ModelConfig::validate() const {
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || vocab_size <= 0)
        throw numeric_error("ModelConfig: sizes must be positive");
    if (d_model % n_heads != 0) throw numeric_error("ModelConfig: d_model must be divisible by n_heads");
    if (window < 2) throw numeric_error("ModelConfig: window must be >= 2");
    if (multimodal() && (prs_dim < 1 || n_soft_tokens < 1))
        throw numeric_error("ModelConfig: multimodal modes need prs_dim >= 1 and n_soft_tokens >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw numeric_error("ModelConfig: dropout_rate must be in [0,1)");
}

template <class T>
Params<T> make_params(const ModelConfig& config) {
    config.validate();
    Params<T> p;
    p.config = config;
    const int d = config.d_model;
    const int h = config.ff_hidden();
    p.tok_emb.resize(config.vocab_size, d);
    p.pos_emb.resize(config.window, d);
    p.layers.resize(static_cast<size_t>(config.n_layers));
    for (auto& l : p.layers) {
        l.ln1_g.resize(1, d);
        l.ln1_b.resize(1, d);
        l.wq.resize(d, d);
        l.wk.resize(d, d);
        l.wv.resize(d, d);
        l.wo.resize(d, d);
        l.bq.resize(1, d);
        l.bk.resize(1, d);
        l.bv.resize(1, d);
        l.bo.resize(1, d);
        if (config.mode == FusionMode::prs_cross) {
            l.lnc_g.resize(1, d);
            l.lnc_b.resize(1, d);
            l.wq_c.resize(d, d);
            l.wk_c.resize(d, d);
            l.wv_c.resize(d, d);
            l.wo_c.resize(d, d);
            l.bq_c.resize(1, d);
            l.bk_c.resize(1, d);
            l.bv_c.resize(1, d);
            l.bo_c.resize(1, d);
        }
        l.ln2_g.resize(1, d);
        l.ln2_b.resize(1, d);
        l.w_ff1.resize(h, d);
        l.b_ff1.resize(1, h);
        l.w_ff2.resize(d, h);
        l.b_ff2.resize(1, d);
    }
    p.lnf_g.resize(1, d);
    p.lnf_b.resize(1, d);
    p.head.resize(config.vocab_size, d);
    if (config.multimodal()) {
        p.proj_w1.resize(config.projector_hidden, config.prs_dim);
        p.proj_b1.resize(1, config.projector_hidden);
        p.proj_w2.resize(config.n_soft_tokens * d, config.projector_hidden);
        p.proj_b2.resize(1, config.n_soft_tokens * d);
    }
    return p;
}

template <class T>
void visit_params(Params<T>& p, const std::function<void(const std::string&, Mat<T>&)>& fn) {
    fn("tok_emb", p.tok_emb);
    fn("pos_emb", p.pos_emb);
    for (size_t i = 0; i < p.layers.size(); ++i) {
        auto& l = p.layers[i];
        const std::string pre = "layer" + std::to_string(i) + ".";
        fn(pre + "ln1.g", l.ln1_g);
        fn(pre + "ln1.b", l.ln1_b);
        fn(pre + "attn.wq", l.wq);
        fn(pre + "attn.wk", l.wk);
        fn(pre + "attn.wv", l.wv);
        fn(pre + "attn.wo", l.wo);
        fn(pre + "attn.bq", l.bq);
        fn(pre + "attn.bk", l.bk);
        fn(pre + "attn.bv", l.bv);
        fn(pre + "attn.bo", l.bo);
        if (p.config.mode == FusionMode::prs_cross) {
            fn(pre + "lnc.g", l.lnc_g);
            fn(pre + "lnc.b", l.lnc_b);
            fn(pre + "cross.wq", l.wq_c);
            fn(pre + "cross.wk", l.wk_c);
            fn(pre + "cross.wv", l.wv_c);
            fn(pre + "cross.wo", l.wo_c);
            fn(pre + "cross.bq", l.bq_c);
            fn(pre + "cross.bk", l.bk_c);
            fn(pre + "cross.bv", l.bv_c);
            fn(pre + "cross.bo", l.bo_c);
        }
        fn(pre + "ln2.g", l.ln2_g);
        fn(pre + "ln2.b", l.ln2_b);
        fn(pre + "ff.w1", l.w_ff1);
        fn(pre + "ff.b1", l.b_ff1);
        fn(pre + "ff.w2", l.w_ff2);
        fn(pre + "ff.b2", l.b_ff2);
    }
    fn("lnf.g", p.lnf_g);
    fn("lnf.b", p.lnf_b);
    fn("head", p.head);
    if (p.config.multimodal()) {
        fn("projector.w1", p.proj_w1);
        fn("projector.b1", p.proj_b1);
        fn("projector.w2", p.proj_w2);
        fn("projector.b2", p.proj_b2);
    }
}

template <class T>
void visit_params(const Params<T>& p, const std::function<void(const std::string&, const Mat<T>&)>& fn) {
    visit_params(const_cast<Params<T>&>(p),
                 std::function<void(const std::string&, Mat<T>&)>(
                     [&](const std::string& name, Mat<T>& m) { fn(name, m); }));
}

template <class T>
void init_params(Params<T>& p, uint64_t seed) {
    Rng rng(derive_seed(seed, {hash_str("model-init")}));
    visit_params(p, std::function<void(const std::string&, Mat<T>&)>([&](const std::string& name, Mat<T>& m) {
                     const size_t dot = name.rfind('.');
                     const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
                     if (leaf == "g") {
                         std::fill(m.v.begin(), m.v.end(), T(1));
                     } else if (!leaf.empty() && leaf[0] == 'b') {
                         m.zero();
                     } else {
                         fill_normal(m, rng, 0.02);
                     }
                 }));
}

template <class T>
int64_t param_count(const Params<T>& p) {
    int64_t n = 0;
    visit_params(p, std::function<void(const std::string&, const Mat<T>&)>(
                        [&](const std::string&, const Mat<T>& m) { n += m.count(); }));
    return n;
}

Params<double> to_double(const Params<float>& p) {
    Params<double> out = make_params<double>(p.config);
    std::vector<const Mat<float>*> src;
    visit_params(p, std::function<void(const std::string&, const Mat<float>&)>(
                        [&](const std::string&, const Mat<float>& m) { src.push_back(&m); }));
    size_t i = 0;
    visit_params(out, std::function<void(const std::string&, Mat<double>&)>(
                          [&](const std::string&, Mat<double>& m) {
                              for (int64_t t = 0; t < m.count(); ++t)
                                  m.v[static_cast<size_t>(t)] = static_cast<double>(src[i]->v[static_cast<size_t>(t)]);
                              ++i;
                          }));
    return out;
}

Params<float> to_float(const Params<double>& p) {
    Params<float> out = make_params<float>(p.config);
    std::vector<const Mat<double>*> src;
    visit_params(p, std::function<void(const std::string&, const Mat<double>&)>(
                        [&](const std::string&, const Mat<double>& m) { src.push_back(&m); }));
    size_t i = 0;
    visit_params(out, std::function<void(const std::string&, Mat<float>&)>(
                          [&](const std::string&, Mat<float>& m) {
                              for (int64_t t = 0; t < m.count(); ++t)
                                  m.v[static_cast<size_t>(t)] = static_cast<float>(src[i]->v[static_cast<size_t>(t)]);
                              ++i;
                          }));
    return out;
}

// ---------------------------------------------------------------------------
// Projector
// ---------------------------------------------------------------------------

template <class T>
struct ProjectorWork {
    std::vector<T> x;    // prs_dim
    std::vector<T> z1;   // hidden (pre-gelu)
    std::vector<T> a1;   // hidden
    std::vector<T> z2;   // n_soft*d (pre-sigmoid, not stored; derivative uses soft)
    Mat<T> soft;         // n_soft x d
};

template <class T>
void projector_forward(const Params<T>& p, const std::vector<double>& prs, ProjectorWork<T>& w) {
    const auto& c = p.config;
    if (static_cast<int>(prs.size()) != c.prs_dim)
        throw numeric_error("project_prs: expected prs length " + std::to_string(c.prs_dim) +
                            ", got " + std::to_string(prs.size()));
    const int hidden = c.projector_hidden;
    const int n_out = c.n_soft_tokens * c.d_model;
    w.x.resize(static_cast<size_t>(c.prs_dim));
    for (int i = 0; i < c.prs_dim; ++i) w.x[static_cast<size_t>(i)] = static_cast<T>(prs[static_cast<size_t>(i)]);
    w.z1.assign(static_cast<size_t>(hidden), T(0));
    ker::linear(w.x.data(), 1, c.prs_dim, p.proj_w1.data(), p.proj_b1.data(), w.z1.data(), hidden);
    w.a1.resize(static_cast<size_t>(hidden));
    ker::gelu_forward(w.z1.data(), w.a1.data(), hidden);
    w.z2.assign(static_cast<size_t>(n_out), T(0));
    ker::linear(w.a1.data(), 1, hidden, p.proj_w2.data(), p.proj_b2.data(), w.z2.data(), n_out);
    w.soft.resize(c.n_soft_tokens, c.d_model);
    for (int i = 0; i < n_out; ++i) {
        const T s = T(1) / (T(1) + std::exp(-w.z2[static_cast<size_t>(i)]));
        w.soft.v[static_cast<size_t>(i)] = T(2) * s - T(1);
    }
}

template <class T>
void projector_backward(const Params<T>& p, const ProjectorWork<T>& w, const Mat<T>& dsoft,
                        Params<T>& grads) {
    const auto& c = p.config;
    const int hidden = c.projector_hidden;
    const int n_out = c.n_soft_tokens * c.d_model;
    std::vector<T> dz2(static_cast<size_t>(n_out));
    for (int i = 0; i < n_out; ++i) {
        const T s = w.soft.v[static_cast<size_t>(i)];
        dz2[static_cast<size_t>(i)] = dsoft.v[static_cast<size_t>(i)] * (T(1) - s * s) / T(2);
    }
    ker::linear_dwdb(dz2.data(), 1, n_out, w.a1.data(), hidden, grads.proj_w2.data(), grads.proj_b2.data());
    std::vector<T> da1(static_cast<size_t>(hidden));
    ker::linear_dx(dz2.data(), 1, n_out, p.proj_w2.data(), hidden, da1.data());
    std::vector<T> dz1(static_cast<size_t>(hidden));
    ker::gelu_backward(w.z1.data(), da1.data(), dz1.data(), hidden);
    ker::linear_dwdb(dz1.data(), 1, hidden, w.x.data(), c.prs_dim, grads.proj_w1.data(), grads.proj_b1.data());
}

template <class T>
Mat<T> project_prs(const Params<T>& p, const std::vector<double>& prs) {
    if (!p.config.multimodal()) throw numeric_error("project_prs: model has no projector");
    ProjectorWork<T> w;
    projector_forward(p, prs, w);
    return w.soft;
}

// ---------------------------------------------------------------------------
// Full-sequence forward/backward workspace
// ---------------------------------------------------------------------------

namespace {

template <class T>
struct LayerWork {
    Mat<T> x_in;  // residual stream entering the layer
    Mat<T> a, q, k, v, probs, att, o;
    Mat<T> ln1_mean, ln1_rstd;
    Mat<T> drop_attn;
    Mat<T> x_mid;  // after self-attention residual
    Mat<T> cq_in;  // lnc output
    Mat<T> lnc_mean, lnc_rstd;
    Mat<T> qc, kc, vc, probs_c, cr, oc;
    Mat<T> drop_cross;
    Mat<T> x_mid2;  // after cross-attention residual
    Mat<T> f, ff1, g, ff2;
    Mat<T> ln2_mean, ln2_rstd;
    Mat<T> drop_ff;
};

template <class T>
struct SeqWork {
    int m = 0;          // total rows (soft prefix + tokens)
    int n_soft = 0;     // soft rows in the residual stream (prs_prefix only)
    int l_tok = 0;
    std::vector<uint8_t> valid;
    std::vector<int> pos;  // position id per token row
    ProjectorWork<T> proj;
    bool has_proj = false;
    Mat<T> x0;
    Mat<T> drop_emb;
    std::vector<LayerWork<T>> layers;
    Mat<T> x_final;  // stream entering final LN
    Mat<T> y;        // lnf output
    Mat<T> lnf_mean, lnf_rstd;
    Mat<T> logits;   // m x vocab (soft rows included, unused)
};

template <class T>
void apply_dropout(Mat<T>& x, Mat<T>& mask, double rate, uint64_t seed) {
    mask.resize(x.rows, x.cols);
    Rng rng(seed);
    const T keep = static_cast<T>(1.0 - rate);
    const T inv = T(1) / keep;
    for (int64_t i = 0; i < x.count(); ++i) {
        const bool k = rng.uniform() >= rate;
        mask.v[static_cast<size_t>(i)] = k ? inv : T(0);
        x.v[static_cast<size_t>(i)] *= mask.v[static_cast<size_t>(i)];
    }
}

template <class T>
void forward_seq(const Params<T>& p, const SeqInput& input, const ForwardOptions& opts, SeqWork<T>& w) {
    const auto& c = p.config;
    const int d = c.d_model;
    const int dh = d / c.n_heads;
    const bool prefix = c.mode == FusionMode::prs_prefix;
    const bool cross = c.mode == FusionMode::prs_cross;
    const int l_tok = static_cast<int>(input.tokens.size());
    if (l_tok == 0) throw numeric_error("forward: empty token sequence");
    if (c.multimodal() && input.prs == nullptr)
        throw numeric_error("forward: mode " + std::string(fusion_mode_name(c.mode)) + " requires a PRS vector");
    const int n_soft = prefix ? c.n_soft_tokens : 0;
    if (l_tok + n_soft > c.window)
        throw numeric_error("forward: context of " + std::to_string(l_tok + n_soft) +
                            " rows overflows window " + std::to_string(c.window));
    const int m = l_tok + n_soft;

    w.m = m;
    w.n_soft = n_soft;
    w.l_tok = l_tok;
    w.has_proj = c.multimodal();
    if (w.has_proj) projector_forward(p, *input.prs, w.proj);

    // validity and positions
    w.valid.assign(static_cast<size_t>(m), 1);
    int leading_pads = 0;
    while (leading_pads < l_tok && input.tokens[static_cast<size_t>(leading_pads)] == Vocabulary::kPad)
        ++leading_pads;
    bool any_real = false;
    w.pos.assign(static_cast<size_t>(l_tok), 0);
    for (int j = 0; j < l_tok; ++j) {
        const int tok = input.tokens[static_cast<size_t>(j)];
        if (tok < 0 || tok >= c.vocab_size)
            throw numeric_error("forward: token id " + std::to_string(tok) + " out of vocab range");
        const bool is_pad = tok == Vocabulary::kPad;
        if (!is_pad) any_real = true;
        w.valid[static_cast<size_t>(n_soft + j)] = is_pad ? 0 : 1;
        w.pos[static_cast<size_t>(j)] = std::max(0, j - leading_pads);
    }
    if (!any_real) throw numeric_error("forward: all-pad sequence");
    if (n_soft > 0 && opts.ablate_soft)
        for (int s = 0; s < n_soft; ++s) w.valid[static_cast<size_t>(s)] = 0;

    // embeddings
    w.x0.resize(m, d);
    for (int s = 0; s < n_soft; ++s) {
        const T* src = opts.ablate_soft ? p.tok_emb.row(Vocabulary::kPad) : w.proj.soft.row(s);
        std::copy(src, src + d, w.x0.row(s));
    }
    for (int j = 0; j < l_tok; ++j) {
        const int tok = input.tokens[static_cast<size_t>(j)];
        const T* te = p.tok_emb.row(tok);
        const T* pe = p.pos_emb.row(w.pos[static_cast<size_t>(j)]);
        T* dst = w.x0.row(n_soft + j);
        for (int t = 0; t < d; ++t) dst[t] = te[t] + pe[t];
    }
    const bool use_dropout = opts.train_mode && c.dropout_rate > 0.0;
    if (use_dropout)
        apply_dropout(w.x0, w.drop_emb, c.dropout_rate, derive_seed(opts.rng_seed, {hash_str("drop-emb")}));

    w.layers.resize(static_cast<size_t>(c.n_layers));
    Mat<T>* x = &w.x0;
    for (int li = 0; li < c.n_layers; ++li) {
        auto& lw = w.layers[static_cast<size_t>(li)];
        const auto& lp = p.layers[static_cast<size_t>(li)];
        lw.x_in = *x;

        lw.a.resize(m, d);
        lw.ln1_mean.resize(1, m);
        lw.ln1_rstd.resize(1, m);
        ker::layernorm_forward(lw.x_in.data(), m, d, lp.ln1_g.data(), lp.ln1_b.data(), lw.a.data(),
                               lw.ln1_mean.data(), lw.ln1_rstd.data(), static_cast<T>(1e-5));
        lw.q.resize(m, d);
        lw.k.resize(m, d);
        lw.v.resize(m, d);
        ker::linear(lw.a.data(), m, d, lp.wq.data(), lp.bq.data(), lw.q.data(), d);
        ker::linear(lw.a.data(), m, d, lp.wk.data(), lp.bk.data(), lw.k.data(), d);
        ker::linear(lw.a.data(), m, d, lp.wv.data(), lp.bv.data(), lw.v.data(), d);
        lw.probs.resize(c.n_heads * m, m);
        lw.att.resize(m, d);
        ker::attn_forward(lw.q.data(), m, lw.k.data(), lw.v.data(), m, c.n_heads, dh, true, 0,
                          w.valid.data(), lw.probs.data(), lw.att.data());
        lw.o.resize(m, d);
        ker::linear(lw.att.data(), m, d, lp.wo.data(), lp.bo.data(), lw.o.data(), d);
        if (use_dropout)
            apply_dropout(lw.o, lw.drop_attn, c.dropout_rate,
                          derive_seed(opts.rng_seed, {hash_str("drop-attn"), static_cast<uint64_t>(li)}));
        lw.x_mid = lw.x_in;
        ker::add_inplace(lw.x_mid.data(), lw.o.data(), lw.x_mid.count());

        Mat<T>* stream = &lw.x_mid;
        if (cross && !opts.ablate_soft) {
            const int s = c.n_soft_tokens;
            lw.cq_in.resize(m, d);
            lw.lnc_mean.resize(1, m);
            lw.lnc_rstd.resize(1, m);
            ker::layernorm_forward(lw.x_mid.data(), m, d, lp.lnc_g.data(), lp.lnc_b.data(),
                                   lw.cq_in.data(), lw.lnc_mean.data(), lw.lnc_rstd.data(),
                                   static_cast<T>(1e-5));
            lw.qc.resize(m, d);
            lw.kc.resize(s, d);
            lw.vc.resize(s, d);
            ker::linear(lw.cq_in.data(), m, d, lp.wq_c.data(), lp.bq_c.data(), lw.qc.data(), d);
            ker::linear(w.proj.soft.data(), s, d, lp.wk_c.data(), lp.bk_c.data(), lw.kc.data(), d);
            ker::linear(w.proj.soft.data(), s, d, lp.wv_c.data(), lp.bv_c.data(), lw.vc.data(), d);
            lw.probs_c.resize(c.n_heads * m, s);
            lw.cr.resize(m, d);
            ker::attn_forward(lw.qc.data(), m, lw.kc.data(), lw.vc.data(), s, c.n_heads, dh, false, 0,
                              nullptr, lw.probs_c.data(), lw.cr.data());
            lw.oc.resize(m, d);
            ker::linear(lw.cr.data(), m, d, lp.wo_c.data(), lp.bo_c.data(), lw.oc.data(), d);
            if (use_dropout)
                apply_dropout(lw.oc, lw.drop_cross, c.dropout_rate,
                              derive_seed(opts.rng_seed, {hash_str("drop-cross"), static_cast<uint64_t>(li)}));
            lw.x_mid2 = lw.x_mid;
            ker::add_inplace(lw.x_mid2.data(), lw.oc.data(), lw.x_mid2.count());
            stream = &lw.x_mid2;
        }

        const int fh = c.ff_hidden();
        lw.f.resize(m, d);
        lw.ln2_mean.resize(1, m);
        lw.ln2_rstd.resize(1, m);
        ker::layernorm_forward(stream->data(), m, d, lp.ln2_g.data(), lp.ln2_b.data(), lw.f.data(),
                               lw.ln2_mean.data(), lw.ln2_rstd.data(), static_cast<T>(1e-5));
        lw.ff1.resize(m, fh);
        ker::linear(lw.f.data(), m, d, lp.w_ff1.data(), lp.b_ff1.data(), lw.ff1.data(), fh);
        lw.g.resize(m, fh);
        ker::gelu_forward(lw.ff1.data(), lw.g.data(), lw.ff1.count());
        lw.ff2.resize(m, d);
        ker::linear(lw.g.data(), m, fh, lp.w_ff2.data(), lp.b_ff2.data(), lw.ff2.data(), d);
        if (use_dropout)
            apply_dropout(lw.ff2, lw.drop_ff, c.dropout_rate,
                          derive_seed(opts.rng_seed, {hash_str("drop-ff"), static_cast<uint64_t>(li)}));
        // reuse x_in slot of the *next* layer as the stream; store into x_final at the end
        Mat<T> out = *stream;
        ker::add_inplace(out.data(), lw.ff2.data(), out.count());
        if (li + 1 < c.n_layers) {
            w.layers[static_cast<size_t>(li) + 1].x_in = std::move(out);
            x = &w.layers[static_cast<size_t>(li) + 1].x_in;
        } else {
            w.x_final = std::move(out);
            x = &w.x_final;
        }
    }

    w.y.resize(m, d);
    w.lnf_mean.resize(1, m);
    w.lnf_rstd.resize(1, m);
    ker::layernorm_forward(w.x_final.data(), m, d, p.lnf_g.data(), p.lnf_b.data(), w.y.data(),
                           w.lnf_mean.data(), w.lnf_rstd.data(), static_cast<T>(1e-5));
    w.logits.resize(m, c.vocab_size);
    ker::linear(w.y.data(), m, d, p.head.data(), static_cast<const T*>(nullptr), w.logits.data(), c.vocab_size);

    g_forward_passes.fetch_add(1, std::memory_order_relaxed);
}

// Cross-entropy over token rows; fills dlogits (same shape as logits) scaled
// by `scale` and returns (sum of CE, number of counted positions).
template <class T>
std::pair<double, int64_t> ce_and_dlogits(const SeqWork<T>& w, const std::vector<int>& tokens,
                                          Mat<T>* dlogits, double scale) {
    const int vs = w.logits.cols;
    double total = 0.0;
    int64_t count = 0;
    if (dlogits) {
        dlogits->resize(w.logits.rows, vs);
        dlogits->zero();
    }
    for (int j = 0; j + 1 < w.l_tok; ++j) {
        const int cur = tokens[static_cast<size_t>(j)];
        const int nxt = tokens[static_cast<size_t>(j) + 1];
        if (cur == Vocabulary::kPad || nxt == Vocabulary::kPad) continue;
        const T* row = w.logits.row(w.n_soft + j);
        T mx = row[0];
        for (int t = 1; t < vs; ++t) mx = row[t] > mx ? row[t] : mx;
        double sum = 0.0;
        for (int t = 0; t < vs; ++t) sum += std::exp(static_cast<double>(row[t] - mx));
        const double logz = std::log(sum) + static_cast<double>(mx);
        total += logz - static_cast<double>(row[nxt]);
        ++count;
        if (dlogits) {
            T* drow = dlogits->row(w.n_soft + j);
            for (int t = 0; t < vs; ++t)
                drow[t] = static_cast<T>((std::exp(static_cast<double>(row[t]) - logz)) * scale);
            drow[nxt] -= static_cast<T>(scale);
        }
    }
    return {total, count};
}

int64_t count_target_positions(const std::vector<int>& tokens) {
    int64_t count = 0;
    for (size_t j = 0; j + 1 < tokens.size(); ++j)
        if (tokens[j] != Vocabulary::kPad && tokens[j + 1] != Vocabulary::kPad) ++count;
    return count;
}

template <class T>
void backward_seq(const Params<T>& p, const SeqInput& input, const ForwardOptions& opts, SeqWork<T>& w,
                  const Mat<T>& dlogits, Params<T>& grads) {
    const auto& c = p.config;
    const int d = c.d_model;
    const int dh = d / c.n_heads;
    const int m = w.m;
    const bool cross = c.mode == FusionMode::prs_cross && !opts.ablate_soft;
    const bool use_dropout = opts.train_mode && c.dropout_rate > 0.0;

    Mat<T> dx(m, d);
    // head
    ker::linear_dwdb(dlogits.data(), m, c.vocab_size, w.y.data(), d, grads.head.data(), static_cast<T*>(nullptr));
    ker::linear_dx(dlogits.data(), m, c.vocab_size, p.head.data(), d, dx.data());
    // final layernorm
    Mat<T> dxf(m, d);
    ker::layernorm_backward(dx.data(), w.x_final.data(), m, d, p.lnf_g.data(), w.lnf_mean.data(),
                            w.lnf_rstd.data(), dxf.data(), grads.lnf_g.data(), grads.lnf_b.data());
    dx = std::move(dxf);

    Mat<T> dsoft;  // gradient wrt projector output, accumulated across layers
    if (w.has_proj) {
        dsoft.resize(c.n_soft_tokens, d);
        dsoft.zero();
    }

    Mat<T> dbranch(m, d), dtmp(m, d), dff(m, c.ff_hidden()), dff2(m, c.ff_hidden());
    for (int li = c.n_layers - 1; li >= 0; --li) {
        auto& lw = w.layers[static_cast<size_t>(li)];
        const auto& lp = p.layers[static_cast<size_t>(li)];
        auto& glp = grads.layers[static_cast<size_t>(li)];
        const Mat<T>& stream_pre_ff = (cross ? lw.x_mid2 : lw.x_mid);

        // feed-forward branch
        dbranch = dx;
        if (use_dropout)
            for (int64_t i = 0; i < dbranch.count(); ++i)
                dbranch.v[static_cast<size_t>(i)] *= lw.drop_ff.v[static_cast<size_t>(i)];
        ker::linear_dwdb(dbranch.data(), m, d, lw.g.data(), c.ff_hidden(), glp.w_ff2.data(), glp.b_ff2.data());
        ker::linear_dx(dbranch.data(), m, d, lp.w_ff2.data(), c.ff_hidden(), dff.data());
        ker::gelu_backward(lw.ff1.data(), dff.data(), dff2.data(), lw.ff1.count());
        ker::linear_dwdb(dff2.data(), m, c.ff_hidden(), lw.f.data(), d, glp.w_ff1.data(), glp.b_ff1.data());
        ker::linear_dx(dff2.data(), m, c.ff_hidden(), lp.w_ff1.data(), d, dbranch.data());
        ker::layernorm_backward(dbranch.data(), stream_pre_ff.data(), m, d, lp.ln2_g.data(),
                                lw.ln2_mean.data(), lw.ln2_rstd.data(), dtmp.data(), glp.ln2_g.data(),
                                glp.ln2_b.data());
        ker::add_inplace(dx.data(), dtmp.data(), dx.count());

        if (cross) {
            const int s = c.n_soft_tokens;
            dbranch = dx;
            if (use_dropout)
                for (int64_t i = 0; i < dbranch.count(); ++i)
                    dbranch.v[static_cast<size_t>(i)] *= lw.drop_cross.v[static_cast<size_t>(i)];
            Mat<T> dcr(m, d);
            ker::linear_dwdb(dbranch.data(), m, d, lw.cr.data(), d, glp.wo_c.data(), glp.bo_c.data());
            ker::linear_dx(dbranch.data(), m, d, lp.wo_c.data(), d, dcr.data());
            Mat<T> dqc(m, d), dkc(s, d), dvc(s, d);
            ker::attn_backward(lw.qc.data(), m, lw.kc.data(), lw.vc.data(), s, c.n_heads, dh, false, 0,
                               nullptr, lw.probs_c.data(), dcr.data(), dqc.data(), dkc.data(), dvc.data());
            ker::linear_dwdb(dqc.data(), m, d, lw.cq_in.data(), d, glp.wq_c.data(), glp.bq_c.data());
            ker::linear_dwdb(dkc.data(), s, d, w.proj.soft.data(), d, glp.wk_c.data(), glp.bk_c.data());
            ker::linear_dwdb(dvc.data(), s, d, w.proj.soft.data(), d, glp.wv_c.data(), glp.bv_c.data());
            Mat<T> dsoft_l(s, d);
            ker::linear_dx(dkc.data(), s, d, lp.wk_c.data(), d, dsoft_l.data());
            ker::add_inplace(dsoft.data(), dsoft_l.data(), dsoft.count());
            ker::linear_dx(dvc.data(), s, d, lp.wv_c.data(), d, dsoft_l.data());
            ker::add_inplace(dsoft.data(), dsoft_l.data(), dsoft.count());
            ker::linear_dx(dqc.data(), m, d, lp.wq_c.data(), d, dbranch.data());
            ker::layernorm_backward(dbranch.data(), lw.x_mid.data(), m, d, lp.lnc_g.data(),
                                    lw.lnc_mean.data(), lw.lnc_rstd.data(), dtmp.data(), glp.lnc_g.data(),
                                    glp.lnc_b.data());
            ker::add_inplace(dx.data(), dtmp.data(), dx.count());
        }

        // self-attention branch
        dbranch = dx;
        if (use_dropout)
            for (int64_t i = 0; i < dbranch.count(); ++i)
                dbranch.v[static_cast<size_t>(i)] *= lw.drop_attn.v[static_cast<size_t>(i)];
        Mat<T> datt(m, d);
        ker::linear_dwdb(dbranch.data(), m, d, lw.att.data(), d, glp.wo.data(), glp.bo.data());
        ker::linear_dx(dbranch.data(), m, d, lp.wo.data(), d, datt.data());
        Mat<T> dq(m, d), dk(m, d), dv(m, d);
        ker::attn_backward(lw.q.data(), m, lw.k.data(), lw.v.data(), m, c.n_heads, dh, true, 0,
                           w.valid.data(), lw.probs.data(), datt.data(), dq.data(), dk.data(), dv.data());
        ker::linear_dwdb(dq.data(), m, d, lw.a.data(), d, glp.wq.data(), glp.bq.data());
        ker::linear_dwdb(dk.data(), m, d, lw.a.data(), d, glp.wk.data(), glp.bk.data());
        ker::linear_dwdb(dv.data(), m, d, lw.a.data(), d, glp.wv.data(), glp.bv.data());
        Mat<T> da(m, d);
        ker::linear_dx(dq.data(), m, d, lp.wq.data(), d, da.data());
        ker::linear_dx(dk.data(), m, d, lp.wk.data(), d, dtmp.data());
        ker::add_inplace(da.data(), dtmp.data(), da.count());
        ker::linear_dx(dv.data(), m, d, lp.wv.data(), d, dtmp.data());
        ker::add_inplace(da.data(), dtmp.data(), da.count());
        ker::layernorm_backward(da.data(), lw.x_in.data(), m, d, lp.ln1_g.data(), lw.ln1_mean.data(),
                                lw.ln1_rstd.data(), dtmp.data(), glp.ln1_g.data(), glp.ln1_b.data());
        ker::add_inplace(dx.data(), dtmp.data(), dx.count());
    }

    if (use_dropout)
        for (int64_t i = 0; i < dx.count(); ++i)
            dx.v[static_cast<size_t>(i)] *= w.drop_emb.v[static_cast<size_t>(i)];

    // embeddings (serial scatter-add keeps accumulation order fixed)
    for (int jrow = 0; jrow < w.l_tok; ++jrow) {
        const int tok = input.tokens[static_cast<size_t>(jrow)];
        const T* src = dx.row(w.n_soft + jrow);
        T* te = grads.tok_emb.row(tok);
        T* pe = grads.pos_emb.row(w.pos[static_cast<size_t>(jrow)]);
        for (int t = 0; t < d; ++t) {
            te[t] += src[t];
            pe[t] += src[t];
        }
    }
    if (w.n_soft > 0 && !opts.ablate_soft) {
        for (int srow = 0; srow < w.n_soft; ++srow) {
            const T* src = dx.row(srow);
            T* dst = dsoft.row(srow);
            for (int t = 0; t < d; ++t) dst[t] += src[t];
        }
    }
    if (w.has_proj && !opts.ablate_soft) projector_backward(p, w.proj, dsoft, grads);
}

}  // namespace

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

template <class T>
Mat<T> forward_logits(const Params<T>& p, const SeqInput& input, const ForwardOptions& opts) {
    SeqWork<T> w;
    forward_seq(p, input, opts, w);
    Mat<T> out(w.l_tok, p.config.vocab_size);
    for (int j = 0; j < w.l_tok; ++j) {
        const T* src = w.logits.row(w.n_soft + j);
        std::copy(src, src + p.config.vocab_size, out.row(j));
    }
    return out;
}

template <class T>
std::vector<T> pooled_state(const Params<T>& p, const SeqInput& input, const ForwardOptions& opts) {
    SeqWork<T> w;
    forward_seq(p, input, opts, w);
    int last = -1;
    for (int j = 0; j < w.l_tok; ++j)
        if (input.tokens[static_cast<size_t>(j)] != Vocabulary::kPad) last = j;
    if (last < 0) throw numeric_error("pooled_state: all-pad sequence");
    const T* row = w.y.row(w.n_soft + last);
    return std::vector<T>(row, row + p.config.d_model);
}

void left_pad_batch(std::vector<SeqInput>& batch, int pad_id) {
    size_t max_len = 0;
    for (const auto& s : batch) max_len = std::max(max_len, s.tokens.size());
    for (auto& s : batch) {
        if (s.tokens.size() == max_len) continue;
        std::vector<int> padded(max_len - s.tokens.size(), pad_id);
        padded.insert(padded.end(), s.tokens.begin(), s.tokens.end());
        s.tokens = std::move(padded);
    }
}

template <class T>
LossStats loss_and_gradients(const Params<T>& p, const std::vector<SeqInput>& batch,
                             const ForwardOptions& opts, Params<T>* grads) {
    if (batch.empty()) throw numeric_error("loss_and_gradients: empty batch");
    int64_t total = 0;
    for (const auto& s : batch) total += count_target_positions(s.tokens);
    if (total == 0) throw numeric_error("loss_and_gradients: no scoreable target positions");
    const double scale = 1.0 / static_cast<double>(total);

    double loss_sum = 0.0;
    SeqWork<T> w;
    Mat<T> dlogits;
    for (size_t e = 0; e < batch.size(); ++e) {
        ForwardOptions o = opts;
        o.rng_seed = derive_seed(opts.rng_seed, {hash_str("batch-entry"), e});
        forward_seq(p, batch[e], o, w);
        auto [sum, count] = ce_and_dlogits(w, batch[e].tokens, grads ? &dlogits : nullptr, scale);
        (void)count;
        loss_sum += sum;
        if (grads) backward_seq(p, batch[e], o, w, dlogits, *grads);
    }
    LossStats stats;
    stats.loss = loss_sum * scale;
    stats.positions = total;
    if (!std::isfinite(stats.loss)) throw numeric_error("loss_and_gradients: non-finite loss");
    return stats;
}

template <class T>
LossStats sequence_loss(const Params<T>& p, const SeqInput& input, const ForwardOptions& opts) {
    SeqWork<T> w;
    forward_seq(p, input, opts, w);
    auto [sum, count] = ce_and_dlogits<T>(w, input.tokens, nullptr, 0.0);
    LossStats stats;
    stats.positions = count;
    stats.loss = count > 0 ? sum / static_cast<double>(count) : 0.0;
    return stats;
}

// ---------------------------------------------------------------------------
// DecoderSession
// ---------------------------------------------------------------------------

DecoderSession::DecoderSession(const Params<float>& p, const std::vector<double>* prs) : p_(p) {
    const auto& c = p_.config;
    if (c.multimodal()) {
        if (!prs) throw numeric_error("DecoderSession: mode requires a PRS vector");
        soft_ = project_prs(p_, *prs);
    }
    k_cache_.resize(static_cast<size_t>(c.n_layers));
    v_cache_.resize(static_cast<size_t>(c.n_layers));
    for (int l = 0; l < c.n_layers; ++l) {
        k_cache_[static_cast<size_t>(l)].resize(c.window, c.d_model);
        v_cache_[static_cast<size_t>(l)].resize(c.window, c.d_model);
    }
    if (c.mode == FusionMode::prs_cross) {
        kc_.resize(static_cast<size_t>(c.n_layers));
        vc_.resize(static_cast<size_t>(c.n_layers));
        for (int l = 0; l < c.n_layers; ++l) {
            const auto& lp = p_.layers[static_cast<size_t>(l)];
            kc_[static_cast<size_t>(l)].resize(c.n_soft_tokens, c.d_model);
            vc_[static_cast<size_t>(l)].resize(c.n_soft_tokens, c.d_model);
            ker::linear(soft_.data(), c.n_soft_tokens, c.d_model, lp.wk_c.data(), lp.bk_c.data(),
                        kc_[static_cast<size_t>(l)].data(), c.d_model);
            ker::linear(soft_.data(), c.n_soft_tokens, c.d_model, lp.wv_c.data(), lp.bv_c.data(),
                        vc_[static_cast<size_t>(l)].data(), c.d_model);
        }
    }
    probs_.assign(static_cast<size_t>(c.vocab_size), 0.0);
    x_.resize(static_cast<size_t>(c.d_model));
    tmp_.resize(static_cast<size_t>(std::max(c.d_model, c.ff_hidden())));
    tmp2_.resize(static_cast<size_t>(std::max(c.d_model, c.ff_hidden())));
    att_.resize(static_cast<size_t>(c.d_model));
    prow_.resize(static_cast<size_t>(c.n_heads) * static_cast<size_t>(c.window));
    q_.resize(static_cast<size_t>(c.d_model));
    h1_.resize(static_cast<size_t>(c.ff_hidden()));
    logits_.resize(static_cast<size_t>(c.vocab_size));
}

int DecoderSession::capacity() const { return p_.config.window; }

void DecoderSession::reset(const std::vector<int>& context) {
    const auto& c = p_.config;
    n_soft_rows_ = c.mode == FusionMode::prs_prefix ? c.n_soft_tokens : 0;
    n_tokens_ = 0;
    n_rows_ = 0;
    if (static_cast<int>(context.size()) + n_soft_rows_ > c.window)
        throw numeric_error("DecoderSession: context overflows window");
    if (context.empty()) throw numeric_error("DecoderSession: empty context");
    for (int s = 0; s < n_soft_rows_; ++s) {
        // soft prefix rows carry no position embedding
        std::copy(soft_.row(s), soft_.row(s) + c.d_model, x_.begin());
        step(-1, false);
    }
    for (size_t i = 0; i < context.size(); ++i) step(context[i], i + 1 == context.size());
    g_forward_passes.fetch_add(1, std::memory_order_relaxed);
}

void DecoderSession::append(int token) {
    step(token, true);
    g_forward_passes.fetch_add(1, std::memory_order_relaxed);
}

// One position through the stack. token >= 0 loads embeddings; token == -1
// means x_ already holds a soft-row embedding.
void DecoderSession::step(int token, bool want_probs) {
    const auto& c = p_.config;
    const int d = c.d_model;
    const int dh = d / c.n_heads;
    if (n_rows_ >= c.window) throw numeric_error("DecoderSession: window overflow");

    if (token >= 0) {
        if (token >= c.vocab_size) throw numeric_error("DecoderSession: token out of range");
        const float* te = p_.tok_emb.row(token);
        const float* pe = p_.pos_emb.row(n_tokens_);
        for (int t = 0; t < d; ++t) x_[static_cast<size_t>(t)] = te[t] + pe[t];
    }

    const int cache_row = n_rows_;
    float mean = 0.0f, rstd = 0.0f;
    float* xrow = x_.data();
    for (int li = 0; li < c.n_layers; ++li) {
        const auto& lp = p_.layers[static_cast<size_t>(li)];
        ker::layernorm_forward(xrow, 1, d, lp.ln1_g.data(), lp.ln1_b.data(), tmp_.data(), &mean,
                               &rstd, 1e-5f);
        ker::linear(tmp_.data(), 1, d, lp.wq.data(), lp.bq.data(), q_.data(), d);
        ker::linear(tmp_.data(), 1, d, lp.wk.data(), lp.bk.data(),
                    k_cache_[static_cast<size_t>(li)].row(cache_row), d);
        ker::linear(tmp_.data(), 1, d, lp.wv.data(), lp.bv.data(),
                    v_cache_[static_cast<size_t>(li)].row(cache_row), d);
        const int lkv = cache_row + 1;
        ker::attn_forward(q_.data(), 1, k_cache_[static_cast<size_t>(li)].data(),
                          v_cache_[static_cast<size_t>(li)].data(), lkv, c.n_heads, dh, true, lkv - 1,
                          nullptr, prow_.data(), att_.data());
        ker::linear(att_.data(), 1, d, lp.wo.data(), lp.bo.data(), tmp_.data(), d);
        for (int t = 0; t < d; ++t) xrow[t] += tmp_[static_cast<size_t>(t)];

        if (c.mode == FusionMode::prs_cross) {
            ker::layernorm_forward(xrow, 1, d, lp.lnc_g.data(), lp.lnc_b.data(), tmp_.data(), &mean,
                                   &rstd, 1e-5f);
            ker::linear(tmp_.data(), 1, d, lp.wq_c.data(), lp.bq_c.data(), q_.data(), d);
            ker::attn_forward(q_.data(), 1, kc_[static_cast<size_t>(li)].data(),
                              vc_[static_cast<size_t>(li)].data(), c.n_soft_tokens, c.n_heads, dh,
                              false, 0, nullptr, prow_.data(), att_.data());
            ker::linear(att_.data(), 1, d, lp.wo_c.data(), lp.bo_c.data(), tmp_.data(), d);
            for (int t = 0; t < d; ++t) xrow[t] += tmp_[static_cast<size_t>(t)];
        }

        ker::layernorm_forward(xrow, 1, d, lp.ln2_g.data(), lp.ln2_b.data(), tmp2_.data(), &mean,
                               &rstd, 1e-5f);
        ker::linear(tmp2_.data(), 1, d, lp.w_ff1.data(), lp.b_ff1.data(), h1_.data(), c.ff_hidden());
        ker::gelu_forward(h1_.data(), tmp_.data(), c.ff_hidden());
        ker::linear(tmp_.data(), 1, c.ff_hidden(), lp.w_ff2.data(), lp.b_ff2.data(), tmp2_.data(), d);
        for (int t = 0; t < d; ++t) xrow[t] += tmp2_[static_cast<size_t>(t)];
    }

    if (want_probs) {
        ker::layernorm_forward(xrow, 1, d, p_.lnf_g.data(), p_.lnf_b.data(), tmp_.data(), &mean,
                               &rstd, 1e-5f);
        ker::linear(tmp_.data(), 1, d, p_.head.data(), static_cast<const float*>(nullptr), logits_.data(), c.vocab_size);
        double mx = logits_[0];
        for (int t = 1; t < c.vocab_size; ++t)
            mx = std::max<double>(mx, logits_[static_cast<size_t>(t)]);
        double sum = 0.0;
        for (int t = 0; t < c.vocab_size; ++t) {
            probs_[static_cast<size_t>(t)] =
                std::exp(static_cast<double>(logits_[static_cast<size_t>(t)]) - mx);
            sum += probs_[static_cast<size_t>(t)];
        }
        for (auto& v : probs_) v /= sum;
    }

    ++n_rows_;
    if (token != -1) ++n_tokens_;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

std::string model_config_to_json(const ModelConfig& c) {
    ordered_json j;
    j["d_model"] = c.d_model;
    j["n_layers"] = c.n_layers;
    j["n_heads"] = c.n_heads;
    j["window"] = c.window;
    j["vocab_size"] = c.vocab_size;
    j["mode"] = fusion_mode_name(c.mode);
    j["n_soft_tokens"] = c.n_soft_tokens;
    j["projector_hidden"] = c.projector_hidden;
    j["prs_dim"] = c.prs_dim;
    j["dropout_rate"] = c.dropout_rate;
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& json_text) {
    auto j = ordered_json::parse(json_text);
    ModelConfig c;
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.window = j.at("window").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    auto mode = parse_fusion_mode(j.at("mode").get<std::string>());
    if (!mode) throw io_error("unknown fusion mode in config");
    c.mode = *mode;
    c.n_soft_tokens = j.at("n_soft_tokens").get<int>();
    c.projector_hidden = j.at("projector_hidden").get<int>();
    c.prs_dim = j.at("prs_dim").get<int>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    return c;
}

namespace {
constexpr char kCheckpointMagic[8] = {'E', 'V', 'F', 'M', 'C', 'K', 'P', 'T'};
}

void save_checkpoint(const ModelCheckpoint& c, const std::string& path) {
    ordered_json header;
    header["format_version"] = c.format_version;
    header["config"] = ordered_json::parse(model_config_to_json(c.params.config));
    ordered_json tensors = ordered_json::array();
    uint64_t offset = 0;
    visit_params(c.params, std::function<void(const std::string&, const Mat<float>&)>(
                               [&](const std::string& name, const Mat<float>& m) {
                                   ordered_json t;
                                   t["name"] = name;
                                   t["rows"] = m.rows;
                                   t["cols"] = m.cols;
                                   t["offset"] = offset;
                                   tensors.push_back(std::move(t));
                                   offset += static_cast<uint64_t>(m.count()) * sizeof(float);
                               }));
    header["tensors"] = std::move(tensors);
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open checkpoint for writing: " + path);
    out.write(kCheckpointMagic, 8);
    const uint32_t version = static_cast<uint32_t>(c.format_version);
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const uint64_t header_len = header_str.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    visit_params(c.params, std::function<void(const std::string&, const Mat<float>&)>(
                               [&](const std::string&, const Mat<float>& m) {
                                   out.write(reinterpret_cast<const char*>(m.data()),
                                             static_cast<std::streamsize>(m.count() * sizeof(float)));
                               }));
    if (!out) throw io_error("checkpoint write failure: " + path);
}

ModelCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw io_error(path + ": not a checkpoint file (bad magic)");
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in) throw io_error(path + ": truncated checkpoint header");
    if (version != kCheckpointFormatVersion)
        throw io_error(path + ": unsupported checkpoint format_version " + std::to_string(version));
    uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    if (!in || header_len > (1ull << 30)) throw io_error(path + ": corrupt checkpoint header");
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw io_error(path + ": truncated checkpoint header");
    auto header = ordered_json::parse(header_str, nullptr, false);
    if (header.is_discarded()) throw io_error(path + ": corrupt checkpoint header json");

    ModelCheckpoint c;
    c.format_version = header.at("format_version").get<int>();
    c.params = make_params<float>(model_config_from_json(header.at("config").dump()));

    // index expected tensors by name, in visit order
    std::vector<std::pair<std::string, Mat<float>*>> expected;
    visit_params(c.params, std::function<void(const std::string&, Mat<float>&)>(
                               [&](const std::string& name, Mat<float>& m) {
                                   expected.emplace_back(name, &m);
                               }));
    const auto& tensors = header.at("tensors");
    if (tensors.size() != expected.size())
        throw io_error(path + ": tensor count mismatch (config expects " +
                       std::to_string(expected.size()) + ", file has " +
                       std::to_string(tensors.size()) + ")");
    for (size_t i = 0; i < expected.size(); ++i) {
        const auto& t = tensors[i];
        const std::string name = t.at("name").get<std::string>();
        if (name != expected[i].first)
            throw io_error(path + ": unexpected tensor '" + name + "' (expected '" +
                           expected[i].first + "')");
        if (t.at("rows").get<int>() != expected[i].second->rows ||
            t.at("cols").get<int>() != expected[i].second->cols)
            throw io_error(path + ": shape mismatch for tensor '" + name + "'");
        in.read(reinterpret_cast<char*>(expected[i].second->data()),
                static_cast<std::streamsize>(expected[i].second->count() * sizeof(float)));
        if (!in) throw io_error(path + ": truncated payload at tensor '" + name + "'");
    }
    return c;
}

// explicit instantiations
#define EVENTFM_INSTANTIATE_MODEL(T)                                                              \
    template Params<T> make_params<T>(const ModelConfig&);                                        \
    template void init_params<T>(Params<T>&, uint64_t);                                           \
    template void visit_params<T>(Params<T>&, const std::function<void(const std::string&, Mat<T>&)>&); \
    template void visit_params<T>(const Params<T>&,                                               \
                                  const std::function<void(const std::string&, const Mat<T>&)>&); \
    template int64_t param_count<T>(const Params<T>&);                                            \
    template Mat<T> project_prs<T>(const Params<T>&, const std::vector<double>&);                 \
    template Mat<T> forward_logits<T>(const Params<T>&, const SeqInput&, const ForwardOptions&);  \
    template std::vector<T> pooled_state<T>(const Params<T>&, const SeqInput&, const ForwardOptions&); \
    template LossStats loss_and_gradients<T>(const Params<T>&, const std::vector<SeqInput>&,      \
                                             const ForwardOptions&, Params<T>*);                  \
    template LossStats sequence_loss<T>(const Params<T>&, const SeqInput&, const ForwardOptions&);

EVENTFM_INSTANTIATE_MODEL(float)
EVENTFM_INSTANTIATE_MODEL(double)

}  // namespace eventfm
