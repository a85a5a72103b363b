#pragma once

#include "gfm/autodiff.hpp"
#include "gfm/graph.hpp"
#include "gfm/layers.hpp"
#include "gfm/synthdata.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gfm::velocity {

enum class DiffusionVariant { None, Mpnn, GpsLite, LaplacianKnn };
enum class AdjacencyPolicy { Attention, Knn, Identity, Full };

DiffusionVariant parse_variant(std::string_view s);
std::string_view variant_name(DiffusionVariant v);
AdjacencyPolicy parse_adjacency(std::string_view s);
std::string_view adjacency_name(AdjacencyPolicy a);

struct FieldSpec {
    std::size_t dim = 2;
    std::size_t time_freqs = 8;
    std::vector<std::size_t> reaction_hidden{128, 128};

    DiffusionVariant variant = DiffusionVariant::None;
    AdjacencyPolicy adjacency = AdjacencyPolicy::Attention;
    /// Keep the parameters of `adjacency` but evaluate with A = I (the Adj=I twin).
    bool identity_override = false;
    std::size_t knn_k = 10;
    std::size_t attention_width = 16;

    std::size_t mpnn_hidden = 32;  // N1 output / N2 input width
    std::vector<std::size_t> mpnn_layers{32};

    std::size_t gps_hidden = 64;
    std::size_t gps_rounds = 2;
    std::size_t gps_heads = 4;
    std::size_t gps_walk_length = 4;
    std::size_t gps_pe_dim = 8;

    std::vector<std::size_t> kappa_hidden{32};

    /// Throws ConfigError on inconsistent settings (head count, missing K, ...).
    void validate() const;
    /// The adjacency actually used at evaluation time.
    AdjacencyPolicy effective_adjacency() const;
};

/// Pointwise velocity MLP over [x, time embedding].
struct ReactionNet {
    nn::TimeEmbedding time;
    nn::Mlp mlp;

    ReactionNet(const FieldSpec& spec, Rng& rng);
    ad::Var operator()(ad::Tape& tape, ad::Var x, ad::Var times);
    void visit(const std::string& prefix, const nn::ParamVisitor& fn);
};

/// v_diff = -N2(G^T[ELU(G N1(x, t))], t); N2's last layer starts at zero.
struct MpnnDiffusion {
    nn::TimeEmbedding time;
    nn::Mlp n1;
    nn::Mlp n2;

    MpnnDiffusion(const FieldSpec& spec, Rng& rng);
    ad::Var operator()(ad::Tape& tape, ad::Var x, ad::Var times, ad::Var adjacency);
    void visit(const std::string& prefix, const nn::ParamVisitor& fn);
};

struct GpsRound {
    nn::Linear gate_content; // [h, A h] -> h
    nn::Linear gate;         // [h, A h] -> h, ELU + 1 keeps it positive
    nn::Linear query;
    nn::Linear key;
    nn::Linear value;
    nn::Linear out;
};

/// Graph transformer: RWPE-augmented input projection, rounds of gated local
/// message passing followed by adjacency-masked multi-head attention (each with
/// residual + layer norm), zero-initialized output projection.
struct GpsLiteDiffusion {
    nn::TimeEmbedding time;
    nn::Linear pe_projection;
    nn::Linear input;
    std::vector<GpsRound> rounds;
    nn::Linear output;
    std::size_t heads;
    std::size_t walk_length;

    GpsLiteDiffusion(const FieldSpec& spec, Rng& rng);
    ad::Var operator()(ad::Tape& tape, ad::Var x, ad::Var times, ad::Var adjacency);
    void visit(const std::string& prefix, const nn::ParamVisitor& fn);
};

/// Row-sparse view of an adjacency: B x m weights with column indices.
struct SparseAdjacency {
    ad::Var weights;
    std::vector<std::size_t> neighbors;
};

/// kappa(x, t) * (L x) with kappa = ELU(MLP([x, emb(t)])) and L the normalized Laplacian.
struct LaplacianDiffusion {
    nn::TimeEmbedding time;
    nn::Mlp kappa;

    LaplacianDiffusion(const FieldSpec& spec, Rng& rng);
    ad::Var diffusivity(ad::Tape& tape, ad::Var x, ad::Var times);
    ad::Var operator()(ad::Tape& tape, ad::Var x, ad::Var times, const SparseAdjacency& adjacency);
    void visit(const std::string& prefix, const nn::ParamVisitor& fn);
};

/// Adjacency built for one evaluation, in whichever forms the variant needs.
struct BuiltAdjacency {
    ad::Var dense;                         // B x B
    std::optional<SparseAdjacency> sparse; // present for knn and identity
    bool zero_norm_warning = false;
};

/// v = v_react + v_diff evaluated jointly over a batch.
class CompositeField {
public:
    /// Reaction and diffusion parameters come from separate seed streams so a
    /// composite and a reaction-only field with the same seed share v_react.
    CompositeField(FieldSpec spec, std::uint64_t seed);

    const FieldSpec& spec() const noexcept { return spec_; }

    /// Differentiable evaluation; times is B x 1. Counts as one evaluation.
    ad::Var forward(ad::Tape& tape, ad::Var x, ad::Var times);
    ad::Var reaction(ad::Tape& tape, ad::Var x, ad::Var times);
    /// Diffusion term alone; exact zeros for variant none.
    ad::Var diffusion(ad::Tape& tape, ad::Var x, ad::Var times);
    BuiltAdjacency adjacency(ad::Tape& tape, ad::Var x, ad::Var times);

    /// Inference helpers over a shared time.
    Tensor evaluate(const Tensor& x, double t);
    Tensor evaluate_reaction(const Tensor& x, double t);
    Tensor evaluate_diffusion(const Tensor& x, double t);

    void visit(const nn::ParamVisitor& fn);
    void visit_reaction(const nn::ParamVisitor& fn);
    void visit_diffusion(const nn::ParamVisitor& fn);
    std::vector<ad::Parameter*> parameters();
    void zero_grad();

    std::size_t reaction_parameter_count();
    std::size_t diffusion_parameter_count();
    std::size_t parameter_count() { return reaction_parameter_count() + diffusion_parameter_count(); }

    std::uint64_t evaluations() const noexcept { return evaluations_; }
    void reset_evaluations() noexcept { evaluations_ = 0; }

    ReactionNet& reaction_net() { return reaction_; }
    std::optional<MpnnDiffusion>& mpnn() { return mpnn_; }
    std::optional<GpsLiteDiffusion>& gps() { return gps_; }
    std::optional<LaplacianDiffusion>& laplacian() { return laplacian_; }
    std::optional<graph::AttentionProjection>& attention() { return attention_; }
    std::optional<graph::KnnRankWeights>& rank_weights() { return rank_weights_; }

private:
    ad::Var diffusion_with(ad::Tape& tape, ad::Var x, ad::Var times, const BuiltAdjacency& adj);

    FieldSpec spec_;
    ReactionNet reaction_;
    std::optional<graph::AttentionProjection> attention_;
    std::optional<graph::KnnRankWeights> rank_weights_;
    std::optional<MpnnDiffusion> mpnn_;
    std::optional<GpsLiteDiffusion> gps_;
    std::optional<LaplacianDiffusion> laplacian_;
    std::uint64_t evaluations_ = 0;
};

} // namespace gfm::velocity
