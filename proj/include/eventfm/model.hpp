#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "eventfm/cohort.hpp"
#include "eventfm/tensor.hpp"

namespace eventfm {

enum class FusionMode { ehr_only, prs_prefix, prs_cross };

const char* fusion_mode_name(FusionMode m);
std::optional<FusionMode> parse_fusion_mode(std::string_view s);

struct ModelConfig {
    int d_model = 64;
    int n_layers = 4;
    int n_heads = 4;
    int window = 256;  // max context length, including soft tokens in prs_prefix
    int vocab_size = 0;
    FusionMode mode = FusionMode::ehr_only;
    int n_soft_tokens = 4;
    int projector_hidden = 256;
    int prs_dim = 0;
    double dropout_rate = 0.0;

    int ff_hidden() const { return 4 * d_model; }
    bool multimodal() const { return mode != FusionMode::ehr_only; }
    void validate() const;
};

template <class T>
struct LayerParams {
    Mat<T> ln1_g, ln1_b;
    Mat<T> wq, wk, wv, wo;      // each d x d
    Mat<T> bq, bk, bv, bo;      // 1 x d
    Mat<T> lnc_g, lnc_b;        // cross-attention norm (prs_cross only)
    Mat<T> wq_c, wk_c, wv_c, wo_c;
    Mat<T> bq_c, bk_c, bv_c, bo_c;
    Mat<T> ln2_g, ln2_b;
    Mat<T> w_ff1, b_ff1;        // ff_hidden x d, 1 x ff_hidden
    Mat<T> w_ff2, b_ff2;        // d x ff_hidden, 1 x d
};

template <class T>
struct Params {
    ModelConfig config;
    Mat<T> tok_emb;   // vocab x d
    Mat<T> pos_emb;   // window x d
    std::vector<LayerParams<T>> layers;
    Mat<T> lnf_g, lnf_b;
    Mat<T> head;      // vocab x d
    Mat<T> proj_w1, proj_b1;  // projector_hidden x prs_dim, 1 x hidden
    Mat<T> proj_w2, proj_b2;  // (n_soft*d) x hidden, 1 x (n_soft*d)
};

template <class T>
Params<T> make_params(const ModelConfig& config);  // zero-filled, shapes from config

template <class T>
void init_params(Params<T>& p, uint64_t seed);  // N(0, 0.02) weights, zero biases, unit LN gains

template <class T>
void visit_params(Params<T>& p, const std::function<void(const std::string&, Mat<T>&)>& fn);
template <class T>
void visit_params(const Params<T>& p, const std::function<void(const std::string&, const Mat<T>&)>& fn);

template <class T>
int64_t param_count(const Params<T>& p);

Params<double> to_double(const Params<float>& p);
Params<float> to_float(const Params<double>& p);

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

// out = 2*sigmoid(W2*gelu(W1*x + b1) + b2) - 1, reshaped to n_soft x d rows.
template <class T>
Mat<T> project_prs(const Params<T>& p, const std::vector<double>& prs);

struct SeqInput {
    std::vector<int> tokens;          // may carry left padding
    const std::vector<double>* prs = nullptr;
};

struct ForwardOptions {
    bool train_mode = false;
    uint64_t rng_seed = 0;
    // Ablation hook: mask the soft-token rows like padding (prs_prefix) or
    // skip the cross-attention blocks (prs_cross).
    bool ablate_soft = false;
};

// Full logits for every token position (soft rows excluded); rows are valid
// softmax inputs at pad positions too.
template <class T>
Mat<T> forward_logits(const Params<T>& p, const SeqInput& input, const ForwardOptions& opts = {});

// Final-layer state (post final layernorm) at the last non-pad position.
template <class T>
std::vector<T> pooled_state(const Params<T>& p, const SeqInput& input, const ForwardOptions& opts = {});

struct LossStats {
    double loss = 0.0;        // mean CE over counted target positions
    int64_t positions = 0;    // counted target positions
};

// Mean next-token cross-entropy over non-pad targets, with exact gradients
// accumulated into `grads` (same shapes as p). Gradients are d(mean loss)/dp.
template <class T>
LossStats loss_and_gradients(const Params<T>& p, const std::vector<SeqInput>& batch,
                             const ForwardOptions& opts, Params<T>* grads);

// Per-sequence mean CE without gradients (evaluation path).
template <class T>
LossStats sequence_loss(const Params<T>& p, const SeqInput& input, const ForwardOptions& opts = {});

// Left-pad all sequences in the batch to a common length with <pad>.
void left_pad_batch(std::vector<SeqInput>& batch, int pad_id);

// Instrumentation: number of decoder forward invocations (full-sequence
// forwards and single-token generation steps both count as one).
int64_t forward_pass_count();
void reset_forward_pass_count();

// ---------------------------------------------------------------------------
// Incremental decoding with KV cache (one session per sampled path).
// ---------------------------------------------------------------------------

class DecoderSession {
public:
    DecoderSession(const Params<float>& p, const std::vector<double>* prs);

    void reset(const std::vector<int>& context);
    void append(int token);
    // Temperature-1 softmax over the vocabulary at the current last position.
    const std::vector<double>& next_probs() const { return probs_; }
    int length() const { return n_tokens_; }
    int capacity() const;

private:
    void step(int token, bool want_probs);

    const Params<float>& p_;
    Mat<float> soft_;  // n_soft x d (multimodal)
    std::vector<Mat<float>> k_cache_, v_cache_;
    std::vector<Mat<float>> kc_, vc_;  // per-layer projected soft keys/values (prs_cross)
    int n_soft_rows_ = 0;              // rows occupied by soft tokens (prs_prefix)
    int n_tokens_ = 0;
    int n_rows_ = 0;
    std::vector<double> probs_;
    std::vector<float> x_, tmp_, tmp2_, att_, prow_, q_, h1_, logits_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

struct ModelCheckpoint {
    Params<float> params;
    int format_version = kCheckpointFormatVersion;
};

void save_checkpoint(const ModelCheckpoint& c, const std::string& path);
ModelCheckpoint load_checkpoint(const std::string& path);

std::string model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const std::string& json_text);

}  // namespace eventfm
