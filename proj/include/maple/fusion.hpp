#pragma once

#include <filesystem>

#include "maple/common.hpp"

namespace maple {

// Shape of the fusion head. z = [essay; prompt; rubric; features] with the
// context and feature segments present only when enabled.
struct HeadConfig {
    std::size_t d = 0;
    std::size_t d_u = 0;  // 0 when features are off
    bool use_context = true;
    double dropout_rate = 0.5;

    std::size_t z_dim() const { return d * (use_context ? 3 : 1) + d_u; }
    void validate() const;

    bool operator==(const HeadConfig&) const = default;
};

// Trainable parameters: gate W_z, projection W_1/b_1 and output W_2/b_2.
struct HeadParams {
    Mat gate;      // z_dim x z_dim
    Mat hidden;    // z_dim x z_dim
    Vec hidden_bias;
    Mat output;    // d x z_dim
    Vec output_bias;

    static HeadParams zeros(const HeadConfig& config);

    bool matches(const HeadConfig& config) const;
    bool all_finite() const;
    std::size_t size() const;

    HeadParams& operator+=(const HeadParams& other);
    HeadParams& operator*=(double s);
    bool operator==(const HeadParams&) const;
};

// Inputs of one essay. Segments not used by the config may be left empty.
struct HeadInput {
    Vec essay;
    Vec prompt;
    Vec rubric;
    Vec features;
};

enum class Mode { train, eval };

struct ForwardTrace {
    HeadConfig config;
    Vec z;
    Vec gate_pre;     // W_z z
    Vec gate;         // sigmoid(W_z z)
    Vec gated;        // z * gate
    Vec hidden_pre;   // W_1 h + b_1
    Vec dropout;      // per-unit multiplier: 0 or 1/(1-rate); all ones in eval
    Vec hidden;       // ReLU(dropout * hidden_pre)
};

struct ForwardResult {
    Vec output;  // h', length d
    ForwardTrace trace;
};

// Concatenated z for the config; only the enabled segments are read.
Vec assemble_z(const HeadConfig& config, const HeadInput& input);

// Train mode needs `rng` for the dropout mask.
ForwardResult forward(const HeadParams& params, const HeadConfig& config, const HeadInput& input, Mode mode,
                      Rng* rng = nullptr);

// Eval-mode output only.
Vec encode(const HeadParams& params, const HeadConfig& config, const HeadInput& input);

struct InputGrads {
    Vec essay;
    Vec prompt;    // empty when context is off
    Vec rubric;    // empty when context is off
    Vec features;  // empty when d_u = 0
};

struct BackwardResult {
    HeadParams params;
    InputGrads inputs;
};

// Gradient of <grad_output, h'> with respect to parameters and inputs.
BackwardResult backward(const ForwardTrace& trace, const HeadParams& params, const Vec& grad_output);

// Xavier-uniform weights, zero biases.
HeadParams init_params(const HeadConfig& config, Rng& rng);

// MHD1 checkpoint: "MHD1", u32 LE header length, JSON header
// {d, d_u, use_context, dropout_rate}, then row-major float64 LE for
// W_z, W_1, b_1, W_2, b_2.
void write_head(const std::filesystem::path& path, const HeadConfig& config, const HeadParams& params);
std::pair<HeadConfig, HeadParams> read_head(const std::filesystem::path& path);

}  // namespace maple
