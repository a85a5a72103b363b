#include "gfm/layers.hpp"

#include "gfm/errors.hpp"

#include <cmath>

namespace gfm::nn {

Linear Linear::xavier(std::size_t in, std::size_t out, Rng& rng, bool bias) {
    Linear l;
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor w(in, out);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-limit, limit);
    l.weight = ad::Parameter(std::move(w));
    l.has_bias = bias;
    if (bias) l.bias = ad::Parameter(Tensor(1, out));
    return l;
}

Linear Linear::zeros(std::size_t in, std::size_t out, bool bias) {
    Linear l;
    l.weight = ad::Parameter(Tensor(in, out));
    l.has_bias = bias;
    if (bias) l.bias = ad::Parameter(Tensor(1, out));
    return l;
}

ad::Var Linear::operator()(ad::Tape& tape, ad::Var x) {
    if (x.cols() != in_features()) {
        throw ContractViolation("Linear: input has " + std::to_string(x.cols()) + " features, expected " +
                                std::to_string(in_features()));
    }
    ad::Var y = ad::matmul(x, tape.leaf(weight, "linear.weight"));
    return has_bias ? ad::add_row(y, tape.leaf(bias, "linear.bias")) : y;
}

void Linear::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".weight", weight);
    if (has_bias) fn(prefix + ".bias", bias);
}

Mlp Mlp::make(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, Rng& rng, bool zero_last) {
    Mlp m;
    std::size_t prev = in;
    for (std::size_t h : hidden) {
        m.layers.push_back(Linear::xavier(prev, h, rng));
        prev = h;
    }
    m.layers.push_back(zero_last ? Linear::zeros(prev, out) : Linear::xavier(prev, out, rng));
    return m;
}

ad::Var Mlp::operator()(ad::Tape& tape, ad::Var x) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        x = layers[i](tape, x);
        if (i + 1 < layers.size()) x = ad::elu(x);
    }
    return x;
}

void Mlp::visit(const std::string& prefix, const ParamVisitor& fn) {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + "." + std::to_string(i), fn);
}

TimeEmbedding::TimeEmbedding(std::size_t count) {
    if (count == 0) throw ContractViolation("TimeEmbedding: need at least one frequency");
    Tensor f(1, count);
    for (std::size_t k = 0; k < count; ++k) f[k] = static_cast<double>(k + 1);
    freqs = ad::Parameter(std::move(f));
}

ad::Var TimeEmbedding::operator()(ad::Tape& tape, ad::Var times) {
    if (times.cols() != 1) throw ContractViolation("TimeEmbedding: times must be a column");
    ad::Var phase = ad::matmul(times, tape.leaf(freqs, "time.freqs"));
    return ad::concat_cols({ad::sin(phase), ad::cos(phase)});
}

Tensor TimeEmbedding::evaluate(double t) const {
    const std::size_t f = count();
    Tensor out(1, 2 * f);
    for (std::size_t k = 0; k < f; ++k) {
        out[k] = std::sin(freqs.value[k] * t);
        out[f + k] = std::cos(freqs.value[k] * t);
    }
    return out;
}

void TimeEmbedding::visit(const std::string& prefix, const ParamVisitor& fn) { fn(prefix + ".freqs", freqs); }

std::size_t count_parameters(const std::function<void(const ParamVisitor&)>& visit) {
    std::size_t n = 0;
    visit([&n](const std::string&, ad::Parameter& p) { n += p.size(); });
    return n;
}

} // namespace gfm::nn
