#include "maple/fusion.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include <json.hpp>

namespace maple {

void HeadConfig::validate() const {
    if (d == 0) throw std::invalid_argument("HeadConfig: d must be positive");
    if (z_dim() == 0) throw std::invalid_argument("HeadConfig: z_dim must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw std::invalid_argument("HeadConfig: dropout_rate must be in [0, 1)");
    }
}

HeadParams HeadParams::zeros(const HeadConfig& config) {
    const auto z = static_cast<Eigen::Index>(config.z_dim());
    const auto d = static_cast<Eigen::Index>(config.d);
    return HeadParams{Mat::Zero(z, z), Mat::Zero(z, z), Vec::Zero(z), Mat::Zero(d, z), Vec::Zero(d)};
}

bool HeadParams::matches(const HeadConfig& config) const {
    const auto z = static_cast<Eigen::Index>(config.z_dim());
    const auto d = static_cast<Eigen::Index>(config.d);
    return gate.rows() == z && gate.cols() == z && hidden.rows() == z && hidden.cols() == z &&
           hidden_bias.size() == z && output.rows() == d && output.cols() == z && output_bias.size() == d;
}

bool HeadParams::all_finite() const {
    return gate.allFinite() && hidden.allFinite() && hidden_bias.allFinite() && output.allFinite() &&
           output_bias.allFinite();
}

std::size_t HeadParams::size() const {
    return static_cast<std::size_t>(gate.size() + hidden.size() + hidden_bias.size() + output.size() +
                                    output_bias.size());
}

HeadParams& HeadParams::operator+=(const HeadParams& o) {
    gate += o.gate;
    hidden += o.hidden;
    hidden_bias += o.hidden_bias;
    output += o.output;
    output_bias += o.output_bias;
    return *this;
}

HeadParams& HeadParams::operator*=(double s) {
    gate *= s;
    hidden *= s;
    hidden_bias *= s;
    output *= s;
    output_bias *= s;
    return *this;
}

bool HeadParams::operator==(const HeadParams& o) const {
    auto same = [](const auto& a, const auto& b) {
        return a.rows() == b.rows() && a.cols() == b.cols() &&
               (a.size() == 0 || std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0);
    };
    return same(gate, o.gate) && same(hidden, o.hidden) && same(hidden_bias, o.hidden_bias) &&
           same(output, o.output) && same(output_bias, o.output_bias);
}

Vec assemble_z(const HeadConfig& config, const HeadInput& input) {
    const auto d = static_cast<Eigen::Index>(config.d);
    const auto du = static_cast<Eigen::Index>(config.d_u);
    auto check = [](const Vec& v, Eigen::Index n, const char* what) {
        if (v.size() != n) {
            throw std::invalid_argument(std::string("fusion input '") + what + "' has length " +
                                        std::to_string(v.size()) + ", expected " + std::to_string(n));
        }
        if (!v.allFinite()) {
            throw std::invalid_argument(std::string("fusion input '") + what + "' is not finite");
        }
    };
    Vec z(static_cast<Eigen::Index>(config.z_dim()));
    check(input.essay, d, "essay");
    z.head(d) = input.essay;
    Eigen::Index at = d;
    if (config.use_context) {
        check(input.prompt, d, "prompt");
        check(input.rubric, d, "rubric");
        z.segment(at, d) = input.prompt;
        z.segment(at + d, d) = input.rubric;
        at += 2 * d;
    }
    if (du > 0) {
        check(input.features, du, "features");
        z.segment(at, du) = input.features;
    }
    return z;
}

ForwardResult forward(const HeadParams& params, const HeadConfig& config, const HeadInput& input, Mode mode,
                      Rng* rng) {
    if (!params.matches(config)) {
        throw std::invalid_argument("fusion forward: parameter shapes do not match config");
    }
    ForwardResult res;
    auto& tr = res.trace;
    tr.config = config;
    tr.z = assemble_z(config, input);
    tr.gate_pre = params.gate * tr.z;
    tr.gate = tr.gate_pre.unaryExpr([](double a) { return 1.0 / (1.0 + std::exp(-a)); });
    tr.gated = tr.z.cwiseProduct(tr.gate);
    tr.hidden_pre = params.hidden * tr.gated + params.hidden_bias;

    const auto n = tr.hidden_pre.size();
    tr.dropout = Vec::Ones(n);
    if (mode == Mode::train && config.dropout_rate > 0.0) {
        if (!rng) throw std::invalid_argument("fusion forward: train mode requires an rng");
        const double keep_scale = 1.0 / (1.0 - config.dropout_rate);
        for (Eigen::Index i = 0; i < n; ++i) {
            tr.dropout[i] = rng->uniform01() < config.dropout_rate ? 0.0 : keep_scale;
        }
    }
    tr.hidden = tr.hidden_pre.cwiseProduct(tr.dropout).cwiseMax(0.0);
    res.output = params.output * tr.hidden + params.output_bias;
    if (!res.output.allFinite()) {
        throw std::domain_error("fusion forward produced a non-finite output");
    }
    return res;
}

Vec encode(const HeadParams& params, const HeadConfig& config, const HeadInput& input) {
    return forward(params, config, input, Mode::eval).output;
}

BackwardResult backward(const ForwardTrace& tr, const HeadParams& params, const Vec& grad_output) {
    const auto& config = tr.config;
    if (!params.matches(config) || tr.z.size() != static_cast<Eigen::Index>(config.z_dim())) {
        throw std::invalid_argument("fusion backward: stale trace (config does not match parameters)");
    }
    if (grad_output.size() != static_cast<Eigen::Index>(config.d)) {
        throw std::invalid_argument("fusion backward: upstream gradient has wrong length");
    }
    BackwardResult res;
    auto& g = res.params;
    g.output = grad_output * tr.hidden.transpose();
    g.output_bias = grad_output;

    // ReLU passes where the masked pre-activation is positive.
    const Vec d_hidden = params.output.transpose() * grad_output;
    Vec d_pre(tr.hidden_pre.size());
    for (Eigen::Index i = 0; i < d_pre.size(); ++i) {
        const double masked = tr.hidden_pre[i] * tr.dropout[i];
        d_pre[i] = masked > 0.0 ? d_hidden[i] * tr.dropout[i] : 0.0;
    }
    g.hidden = d_pre * tr.gated.transpose();
    g.hidden_bias = d_pre;

    const Vec d_gated = params.hidden.transpose() * d_pre;
    const Vec d_gate_pre =
        d_gated.cwiseProduct(tr.z).cwiseProduct(tr.gate).cwiseProduct((1.0 - tr.gate.array()).matrix());
    g.gate = d_gate_pre * tr.z.transpose();
    const Vec d_z = d_gated.cwiseProduct(tr.gate) + params.gate.transpose() * d_gate_pre;

    const auto d = static_cast<Eigen::Index>(config.d);
    const auto du = static_cast<Eigen::Index>(config.d_u);
    res.inputs.essay = d_z.head(d);
    Eigen::Index at = d;
    if (config.use_context) {
        res.inputs.prompt = d_z.segment(at, d);
        res.inputs.rubric = d_z.segment(at + d, d);
        at += 2 * d;
    }
    if (du > 0) res.inputs.features = d_z.segment(at, du);
    return res;
}

HeadParams init_params(const HeadConfig& config, Rng& rng) {
    config.validate();
    HeadParams p = HeadParams::zeros(config);
    auto xavier = [&](Mat& w) {
        const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-bound, bound);
        }
    };
    xavier(p.gate);
    xavier(p.hidden);
    xavier(p.output);
    return p;
}

// ---------------------------------------------------------------------------
// Checkpoint IO

namespace {

constexpr char kHeadMagic[4] = {'M', 'H', 'D', '1'};

template <typename T>
void put_le(std::string& out, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos, const std::filesystem::path& path) {
    if (in.size() - pos < sizeof(T)) throw std::runtime_error("truncated checkpoint: " + path.string());
    T v{};
    unsigned char b[sizeof(T)];
    std::memcpy(b, in.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
    pos += sizeof(T);
    return v;
}

void put_row_major(std::string& out, const Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) put_le<double>(out, m(r, c));
}

void get_row_major(const std::string& in, std::size_t& pos, Mat& m, const std::filesystem::path& path) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get_le<double>(in, pos, path);
}

}  // namespace

void write_head(const std::filesystem::path& path, const HeadConfig& config, const HeadParams& params) {
    if (!params.matches(config)) {
        throw std::invalid_argument("write_head: parameter shapes do not match config");
    }
    const nlohmann::json header{{"d", config.d},
                                {"d_u", config.d_u},
                                {"use_context", config.use_context},
                                {"dropout_rate", config.dropout_rate}};
    const std::string text = header.dump();
    std::string out(kHeadMagic, 4);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    put_row_major(out, params.gate);
    put_row_major(out, params.hidden);
    for (Eigen::Index i = 0; i < params.hidden_bias.size(); ++i) put_le<double>(out, params.hidden_bias[i]);
    put_row_major(out, params.output);
    for (Eigen::Index i = 0; i < params.output_bias.size(); ++i) put_le<double>(out, params.output_bias[i]);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

std::pair<HeadConfig, HeadParams> read_head(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path.string());
    const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (in.size() < 8 || std::memcmp(in.data(), kHeadMagic, 4) != 0) {
        throw DataError("not an MHD1 checkpoint: " + path.string());
    }
    std::size_t pos = 4;
    const auto len = get_le<std::uint32_t>(in, pos, path);
    if (in.size() - pos < len) throw DataError("truncated checkpoint header: " + path.string());
    HeadConfig config;
    try {
        const auto header = nlohmann::json::parse(in.substr(pos, len));
        config.d = header.at("d").get<std::size_t>();
        config.d_u = header.at("d_u").get<std::size_t>();
        config.use_context = header.at("use_context").get<bool>();
        config.dropout_rate = header.at("dropout_rate").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint header in " + path.string() + ": " + e.what());
    }
    pos += len;
    config.validate();
    HeadParams p = HeadParams::zeros(config);
    try {
        get_row_major(in, pos, p.gate, path);
        get_row_major(in, pos, p.hidden, path);
        for (Eigen::Index i = 0; i < p.hidden_bias.size(); ++i) p.hidden_bias[i] = get_le<double>(in, pos, path);
        get_row_major(in, pos, p.output, path);
        for (Eigen::Index i = 0; i < p.output_bias.size(); ++i) p.output_bias[i] = get_le<double>(in, pos, path);
    } catch (const std::runtime_error& e) {
        throw DataError(e.what());
    }
    if (pos != in.size()) throw DataError("trailing bytes in checkpoint: " + path.string());
    return {config, std::move(p)};
}

}  // namespace maple
