#pragma once

// Contribution scores for additive residual updates.
//
// For an update y = sum_k t_k, the raw contribution of term k is
//
//     c_k = max(0, ||y||_1 - ||y - t_k||_1)
//
// and the normalized score is c_k / sum_m c_m (uniform when every c_k is 0).
// Scores are always computed per head x source token and per neuron; head,
// edge and block importances are sums of those fine scores.

#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "lmtrace/tensor.hpp"
#include "lmtrace/transformer.hpp"

namespace lmtrace {

enum class TermKind { Residual, AttnToken, FfnNeuron, Bias };

struct TermLabel {
    TermKind kind = TermKind::Residual;
    std::size_t head = 0;   // AttnToken only
    std::size_t index = 0;  // source position (AttnToken) or neuron (FfnNeuron)

    static TermLabel residual() { return {TermKind::Residual, 0, 0}; }
    static TermLabel bias() { return {TermKind::Bias, 0, 0}; }
    static TermLabel attn_token(std::size_t h, std::size_t j) { return {TermKind::AttnToken, h, j}; }
    static TermLabel ffn_neuron(std::size_t n) { return {TermKind::FfnNeuron, 0, n}; }

    friend bool operator==(const TermLabel&, const TermLabel&) = default;
};

struct TermDecomposition {
    std::vector<float> target;      // y
    std::vector<TermLabel> labels;  // one per row of `terms`
    Tensor terms;                   // [K, d]
};

struct StepAttribution {
    std::vector<TermLabel> labels;
    std::vector<double> scores;
    bool fallback_uniform = false;

    // 0 for labels not present in the step.
    double score(const TermLabel& label) const;
    double residual() const { return score(TermLabel::residual()); }
    double bias() const { return score(TermLabel::bias()); }
};

// Throws DecompositionError if the terms do not add up to the target
// (max-abs 1e-4, scaled by max(1, ||y||_inf)).
StepAttribution contributions(const TermDecomposition& decomp);

double head_importance(const StepAttribution& step, std::size_t head);
double edge_importance(const StepAttribution& step, std::size_t source);
// Sum of all AttnToken / FfnNeuron scores (= 1 - residual - bias).
double block_importance(const StepAttribution& step);

struct NeuronScore {
    std::size_t neuron;
    double score;
    friend bool operator==(const NeuronScore&, const NeuronScore&) = default;
};

// Attribution over one captured run. Caches head projections per layer and
// step attributions; safe to share across threads.
class Attributor {
public:
    Attributor(std::shared_ptr<const ModelParams> params, std::shared_ptr<const RunCapture> capture);

    const ModelParams& params() const { return *params_; }
    const RunCapture& capture() const { return *capture_; }

    // Terms: Residual (x_pre), AttnToken(h, j) for j <= i, Bias; target x_mid.
    const StepAttribution& attention_step(std::size_t layer, std::size_t position) const;
    // Terms: Residual (x_mid), FfnNeuron(n), Bias; target x_post.
    const StepAttribution& ffn_step(std::size_t layer, std::size_t position) const;

    Tensor contribution_map(std::size_t layer, std::size_t head) const;
    std::vector<NeuronScore> top_neurons(std::size_t layer, std::size_t position, std::size_t k) const;

    // Head projections z[h][j] = values_j^h * W_O^h for all positions of the layer.
    const Tensor& head_projection(std::size_t layer) const;
    const std::vector<float>& attention_bias_vector(std::size_t layer) const;

private:
    struct LayerCache {
        std::once_flag once;
        Tensor projection;
        std::vector<float> bias;
    };

    void fill_layer(std::size_t layer) const;
    StepAttribution compute_attention(std::size_t layer, std::size_t position) const;
    StepAttribution compute_ffn(std::size_t layer, std::size_t position) const;

    std::shared_ptr<const ModelParams> params_;
    std::shared_ptr<const RunCapture> capture_;
    mutable std::vector<std::unique_ptr<LayerCache>> layers_;
    mutable std::mutex steps_mutex_;
    mutable std::vector<std::unique_ptr<StepAttribution>> attn_steps_;  // [L * T]
    mutable std::vector<std::unique_ptr<StepAttribution>> ffn_steps_;   // [L * T]
};

// Free-function forms; each builds a throwaway Attributor-equivalent computation.
StepAttribution attention_step(const RunCapture& capture, const ModelParams& params, std::size_t layer,
                               std::size_t position);
StepAttribution ffn_step(const RunCapture& capture, const ModelParams& params, std::size_t layer,
                         std::size_t position);
Tensor contribution_map(const RunCapture& capture, const ModelParams& params, std::size_t layer, std::size_t head);
std::vector<NeuronScore> top_neurons(const RunCapture& capture, const ModelParams& params, std::size_t layer,
                                     std::size_t position, std::size_t k);

}  // namespace lmtrace
