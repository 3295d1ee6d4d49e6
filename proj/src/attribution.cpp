#include "lmtrace/attribution.hpp"

#include <algorithm>
#include <cmath>

#include "lmtrace/errors.hpp"
#include "lmtrace/simd.hpp"

namespace lmtrace {
namespace {

constexpr double kReconstructionTol = 1e-4;

void normalize(std::vector<double>& raw, bool& fallback) {
    double total = 0.0;
    for (double& c : raw) {
        c = std::max(0.0, c);
        total += c;
    }
    fallback = !(total > 0.0);
    if (fallback) {
        std::fill(raw.begin(), raw.end(), 1.0 / static_cast<double>(raw.size()));
        return;
    }
    for (double& c : raw) c /= total;
}

void check_reconstruction(std::span<const double> sum, std::span<const float> target) {
    double scale = 1.0;
    double err = 0.0;
    for (std::size_t c = 0; c < target.size(); ++c) {
        scale = std::max(scale, std::fabs(static_cast<double>(target[c])));
        err = std::max(err, std::fabs(sum[c] - target[c]));
    }
    if (err > kReconstructionTol * scale) {
        throw DecompositionError("terms do not reconstruct the target (max-abs error " + std::to_string(err) + ")");
    }
}

void accumulate(std::vector<double>& sum, std::span<const float> v, float scale = 1.0f) {
    for (std::size_t c = 0; c < v.size(); ++c) sum[c] += static_cast<double>(scale) * v[c];
}

std::shared_ptr<const ModelParams> borrow(const ModelParams& p) { return {std::shared_ptr<void>(), &p}; }
std::shared_ptr<const RunCapture> borrow(const RunCapture& c) { return {std::shared_ptr<void>(), &c}; }

}  // namespace

double StepAttribution::score(const TermLabel& label) const {
    for (std::size_t k = 0; k < labels.size(); ++k) {
        if (labels[k] == label) return scores[k];
    }
    return 0.0;
}

StepAttribution contributions(const TermDecomposition& decomp) {
    const std::size_t d = decomp.target.size();
    const std::size_t K = decomp.labels.size();
    if (K == 0) throw DecompositionError("decomposition has no terms");
    if (decomp.terms.rank() != 2 || decomp.terms.dim(0) != K || decomp.terms.dim(1) != d) {
        throw DecompositionError("term matrix shape " + shape_to_string(decomp.terms.shape()) +
                                 " does not match labels and target");
    }
    std::vector<double> sum(d, 0.0);
    for (std::size_t k = 0; k < K; ++k) accumulate(sum, decomp.terms.row(k));
    check_reconstruction(sum, decomp.target);

    const simd::Kernels& kern = simd::kernels();
    StepAttribution out;
    out.labels = decomp.labels;
    out.scores.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        out.scores[k] = kern.l1_gain(decomp.target.data(), decomp.terms.row(k).data(), 1.0f, d);
    }
    normalize(out.scores, out.fallback_uniform);
    return out;
}

double head_importance(const StepAttribution& step, std::size_t head) {
    double s = 0.0;
    for (std::size_t k = 0; k < step.labels.size(); ++k) {
        if (step.labels[k].kind == TermKind::AttnToken && step.labels[k].head == head) s += step.scores[k];
    }
    return s;
}

double edge_importance(const StepAttribution& step, std::size_t source) {
    double s = 0.0;
    for (std::size_t k = 0; k < step.labels.size(); ++k) {
        if (step.labels[k].kind == TermKind::AttnToken && step.labels[k].index == source) s += step.scores[k];
    }
    return s;
}

double block_importance(const StepAttribution& step) {
    double s = 0.0;
    for (std::size_t k = 0; k < step.labels.size(); ++k) {
        const TermKind kind = step.labels[k].kind;
        if (kind == TermKind::AttnToken || kind == TermKind::FfnNeuron) s += step.scores[k];
    }
    return s;
}

Attributor::Attributor(std::shared_ptr<const ModelParams> params, std::shared_ptr<const RunCapture> capture)
    : params_(std::move(params)), capture_(std::move(capture)) {
    const std::size_t L = capture_->config.n_layer;
    const std::size_t T = capture_->n_tokens();
    if (!(params_->config == capture_->config)) throw Error("capture was produced by a different model config");
    layers_.resize(L);
    for (auto& lc : layers_) lc = std::make_unique<LayerCache>();
    attn_steps_.resize(L * T);
    ffn_steps_.resize(L * T);
}

void Attributor::fill_layer(std::size_t layer) const {
    LayerCache& lc = *layers_.at(layer);
    std::call_once(lc.once, [&] {
        lc.projection = head_value_projection(*capture_, *params_, layer, capture_->n_tokens());
        lc.bias = attention_bias(*params_, layer);
    });
}

const Tensor& Attributor::head_projection(std::size_t layer) const {
    if (layer >= layers_.size()) throw IndexError("layer " + std::to_string(layer) + " out of range");
    fill_layer(layer);
    return layers_[layer]->projection;
}

const std::vector<float>& Attributor::attention_bias_vector(std::size_t layer) const {
    if (layer >= layers_.size()) throw IndexError("layer " + std::to_string(layer) + " out of range");
    fill_layer(layer);
    return layers_[layer]->bias;
}

StepAttribution Attributor::compute_attention(std::size_t layer, std::size_t position) const {
    const RunCapture& cap = *capture_;
    const std::size_t H = cap.config.n_head, d = cap.config.d_model;
    const std::size_t n_src = position + 1;
    const Tensor& z = head_projection(layer);
    const std::vector<float>& bias = attention_bias_vector(layer);
    auto y = cap.residual_mid(layer, position);
    auto x = cap.residual_pre(layer, position);

    std::vector<double> sum(d, 0.0);
    accumulate(sum, x);
    accumulate(sum, bias);
    for (std::size_t h = 0; h < H; ++h) {
        auto arow = cap.attention_row(layer, h, position);
        for (std::size_t j = 0; j < n_src; ++j) accumulate(sum, z.row(h, j), arow[j]);
    }
    check_reconstruction(sum, y);

    const simd::Kernels& kern = simd::kernels();
    StepAttribution out;
    out.labels.reserve(H * n_src + 2);
    out.scores.reserve(H * n_src + 2);
    out.labels.push_back(TermLabel::residual());
    out.scores.push_back(kern.l1_gain(y.data(), x.data(), 1.0f, d));
    for (std::size_t h = 0; h < H; ++h) {
        auto arow = cap.attention_row(layer, h, position);
        for (std::size_t j = 0; j < n_src; ++j) {
            out.labels.push_back(TermLabel::attn_token(h, j));
            out.scores.push_back(kern.l1_gain(y.data(), z.row(h, j).data(), arow[j], d));
        }
    }
    out.labels.push_back(TermLabel::bias());
    out.scores.push_back(kern.l1_gain(y.data(), bias.data(), 1.0f, d));
    normalize(out.scores, out.fallback_uniform);
    return out;
}

StepAttribution Attributor::compute_ffn(std::size_t layer, std::size_t position) const {
    const RunCapture& cap = *capture_;
    const LayerParams& lp = params_->layers[layer];
    const std::size_t f = cap.config.d_ff, d = cap.config.d_model;
    auto y = cap.residual_post(layer, position);
    auto x = cap.residual_mid(layer, position);
    auto act = cap.ffn_post.row(layer, position);

    std::vector<double> sum(d, 0.0);
    accumulate(sum, x);
    accumulate(sum, lp.b_out.flat());
    for (std::size_t n = 0; n < f; ++n) accumulate(sum, lp.w_out.row(n), act[n]);
    check_reconstruction(sum, y);

    const simd::Kernels& kern = simd::kernels();
    StepAttribution out;
    out.labels.reserve(f + 2);
    out.scores.reserve(f + 2);
    out.labels.push_back(TermLabel::residual());
    out.scores.push_back(kern.l1_gain(y.data(), x.data(), 1.0f, d));
    for (std::size_t n = 0; n < f; ++n) {
        out.labels.push_back(TermLabel::ffn_neuron(n));
        out.scores.push_back(kern.l1_gain(y.data(), lp.w_out.row(n).data(), act[n], d));
    }
    out.labels.push_back(TermLabel::bias());
    out.scores.push_back(kern.l1_gain(y.data(), lp.b_out.data(), 1.0f, d));
    normalize(out.scores, out.fallback_uniform);
    return out;
}

const StepAttribution& Attributor::attention_step(std::size_t layer, std::size_t position) const {
    check_layer_position(*capture_, layer, position);
    const std::size_t slot = layer * capture_->n_tokens() + position;
    {
        std::lock_guard lock(steps_mutex_);
        if (attn_steps_[slot]) return *attn_steps_[slot];
    }
    auto step = std::make_unique<StepAttribution>(compute_attention(layer, position));
    std::lock_guard lock(steps_mutex_);
    if (!attn_steps_[slot]) attn_steps_[slot] = std::move(step);
    return *attn_steps_[slot];
}

const StepAttribution& Attributor::ffn_step(std::size_t layer, std::size_t position) const {
    check_layer_position(*capture_, layer, position);
    const std::size_t slot = layer * capture_->n_tokens() + position;
    {
        std::lock_guard lock(steps_mutex_);
        if (ffn_steps_[slot]) return *ffn_steps_[slot];
    }
    auto step = std::make_unique<StepAttribution>(compute_ffn(layer, position));
    std::lock_guard lock(steps_mutex_);
    if (!ffn_steps_[slot]) ffn_steps_[slot] = std::move(step);
    return *ffn_steps_[slot];
}

Tensor Attributor::contribution_map(std::size_t layer, std::size_t head) const {
    const std::size_t T = capture_->n_tokens();
    if (layer >= capture_->config.n_layer) throw IndexError("layer " + std::to_string(layer) + " out of range");
    if (head >= capture_->config.n_head) throw IndexError("head " + std::to_string(head) + " out of range");
    Tensor m({T, T});
    for (std::size_t i = 0; i < T; ++i) {
        const StepAttribution& step = attention_step(layer, i);
        // Residual, then head-major AttnToken(h, j) for j <= i, then Bias.
        const std::size_t base = 1 + head * (i + 1);
        for (std::size_t j = 0; j <= i; ++j) m.at(i, j) = static_cast<float>(step.scores[base + j]);
    }
    return m;
}

std::vector<NeuronScore> Attributor::top_neurons(std::size_t layer, std::size_t position, std::size_t k) const {
    const StepAttribution& step = ffn_step(layer, position);
    std::vector<NeuronScore> all;
    all.reserve(step.labels.size());
    for (std::size_t idx = 0; idx < step.labels.size(); ++idx) {
        if (step.labels[idx].kind == TermKind::FfnNeuron) all.push_back({step.labels[idx].index, step.scores[idx]});
    }
    k = std::min(k, all.size());
    auto better = [](const NeuronScore& a, const NeuronScore& b) {
        return a.score != b.score ? a.score > b.score : a.neuron < b.neuron;
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
    all.resize(k);
    return all;
}

StepAttribution attention_step(const RunCapture& capture, const ModelParams& params, std::size_t layer,
                               std::size_t position) {
    return Attributor(borrow(params), borrow(capture)).attention_step(layer, position);
}

StepAttribution ffn_step(const RunCapture& capture, const ModelParams& params, std::size_t layer,
                         std::size_t position) {
    return Attributor(borrow(params), borrow(capture)).ffn_step(layer, position);
}

Tensor contribution_map(const RunCapture& capture, const ModelParams& params, std::size_t layer, std::size_t head) {
    return Attributor(borrow(params), borrow(capture)).contribution_map(layer, head);
}

std::vector<NeuronScore> top_neurons(const RunCapture& capture, const ModelParams& params, std::size_t layer,
                                     std::size_t position, std::size_t k) {
    return Attributor(borrow(params), borrow(capture)).top_neurons(layer, position, k);
}

}  // namespace lmtrace
