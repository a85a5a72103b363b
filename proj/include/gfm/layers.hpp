#pragma once

#include "gfm/autodiff.hpp"
#include "gfm/rng.hpp"

#include <functional>
#include <string>
#include <vector>

namespace gfm::nn {

using ParamVisitor = std::function<void(const std::string& path, ad::Parameter& param)>;

/// y = x W + b with W stored as in x out.
struct Linear {
    ad::Parameter weight;
    ad::Parameter bias;
    bool has_bias = true;

    /// Uniform in +-sqrt(6 / (in + out)), zero bias.
    static Linear xavier(std::size_t in, std::size_t out, Rng& rng, bool bias = true);
    static Linear zeros(std::size_t in, std::size_t out, bool bias = true);

    std::size_t in_features() const { return weight.value.rows(); }
    std::size_t out_features() const { return weight.value.cols(); }

    ad::Var operator()(ad::Tape& tape, ad::Var x);
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Linear layers with ELU between them (none after the last).
struct Mlp {
    std::vector<Linear> layers;

    static Mlp make(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, Rng& rng,
                    bool zero_last = false);

    std::size_t in_features() const { return layers.front().in_features(); }
    std::size_t out_features() const { return layers.back().out_features(); }

    ad::Var operator()(ad::Tape& tape, ad::Var x);
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// [sin(f_k t)]_k ++ [cos(f_k t)]_k with learnable frequencies, initialized f_k = k.
struct TimeEmbedding {
    ad::Parameter freqs; // 1 x F

    explicit TimeEmbedding(std::size_t count = 8);

    std::size_t count() const { return freqs.value.cols(); }
    std::size_t dim() const { return 2 * count(); }

    /// times is B x 1; result is B x 2F.
    ad::Var operator()(ad::Tape& tape, ad::Var times);
    /// Single-time evaluation as a 1 x 2F tensor.
    Tensor evaluate(double t) const;
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

std::size_t count_parameters(const std::function<void(const ParamVisitor&)>& visit);

} // namespace gfm::nn
