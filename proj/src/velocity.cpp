#include "gfm/velocity.hpp"

#include "gfm/errors.hpp"

#include <cmath>
#include <numeric>

namespace gfm::velocity {

namespace {

constexpr std::string_view kVariantNames[] = {"none", "mpnn", "gps-lite", "laplacian-knn"};
constexpr std::string_view kAdjacencyNames[] = {"attention", "knn", "identity", "full"};

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::string_view (&names)[N], const char* what) {
    for (std::size_t i = 0; i < N; ++i)
        if (names[i] == s) return static_cast<E>(i);
    std::string valid;
    for (auto n : names) valid += (valid.empty() ? "" : ", ") + std::string(n);
    throw ConfigError(std::string("unknown ") + what + " '" + std::string(s) + "'; valid: " + valid);
}

ad::Var shared_times(ad::Tape& tape, std::size_t rows, double t) { return tape.constant(Tensor(rows, 1, t), "time"); }

std::vector<std::size_t> dense_neighbors(std::size_t n) {
    std::vector<std::size_t> nbr(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) nbr[i * n + j] = j;
    return nbr;
}

bool has_edges(const Tensor& a) {
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (i != j && a(i, j) + a(j, i) > 0.0) return true;
    return false;
}

} // namespace

DiffusionVariant parse_variant(std::string_view s) { return parse_enum<DiffusionVariant>(s, kVariantNames, "variant"); }
std::string_view variant_name(DiffusionVariant v) { return kVariantNames[static_cast<std::size_t>(v)]; }
AdjacencyPolicy parse_adjacency(std::string_view s) {
    return parse_enum<AdjacencyPolicy>(s, kAdjacencyNames, "adjacency");
}
std::string_view adjacency_name(AdjacencyPolicy a) { return kAdjacencyNames[static_cast<std::size_t>(a)]; }

void FieldSpec::validate() const {
    if (dim == 0) throw ConfigError("model: dim must be positive");
    if (time_freqs == 0) throw ConfigError("model: time_freqs must be positive");
    if (variant == DiffusionVariant::GpsLite) {
        if (gps_heads == 0 || gps_hidden % gps_heads != 0) {
            throw ConfigError("model: gps heads (" + std::to_string(gps_heads) + ") must divide gps hidden width (" +
                              std::to_string(gps_hidden) + ")");
        }
        if (gps_walk_length == 0 || gps_pe_dim == 0 || gps_rounds == 0) {
            throw ConfigError("model: gps walk length, pe dim and rounds must be positive");
        }
    }
    if (variant != DiffusionVariant::None && adjacency == AdjacencyPolicy::Attention && attention_width == 0) {
        throw ConfigError("model: attention width must be positive");
    }
}

AdjacencyPolicy FieldSpec::effective_adjacency() const {
    return identity_override ? AdjacencyPolicy::Identity : adjacency;
}

// ---- reaction ----------------------------------------------------------------

ReactionNet::ReactionNet(const FieldSpec& spec, Rng& rng)
    : time(spec.time_freqs), mlp(nn::Mlp::make(spec.dim + 2 * spec.time_freqs, spec.reaction_hidden, spec.dim, rng)) {}

ad::Var ReactionNet::operator()(ad::Tape& tape, ad::Var x, ad::Var times) {
    ad::Var out = mlp(tape, ad::concat_cols({x, time(tape, times)}));
    if (!out.value().all_finite()) throw NumericFailure("eval_reaction: non-finite velocity");
    return out;
}

void ReactionNet::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
    time.visit(prefix + ".time", fn);
    mlp.visit(prefix + ".mlp", fn);
}

// ---- MPNN --------------------------------------------------------------------

MpnnDiffusion::MpnnDiffusion(const FieldSpec& spec, Rng& rng)
    : time(spec.time_freqs),
      n1(nn::Mlp::make(spec.dim + 2 * spec.time_freqs, spec.mpnn_layers, spec.mpnn_hidden, rng)),
      n2(nn::Mlp::make(spec.mpnn_hidden + 2 * spec.time_freqs, spec.mpnn_layers, spec.dim, rng, true)) {}

ad::Var MpnnDiffusion::operator()(ad::Tape& tape, ad::Var x, ad::Var times, ad::Var adjacency) {
    // No edges means G = 0 and no diffusion at all, not N2 evaluated on zero messages.
    if (!has_edges(adjacency.value())) return tape.constant(Tensor(x.rows(), x.cols()), "zero_diffusion");
    ad::Var emb = time(tape, times);
    ad::Var h = n1(tape, ad::concat_cols({x, emb}));
    ad::Var agg = ad::incidence_diffusion(adjacency, h);
    return ad::scale(n2(tape, ad::concat_cols({agg, emb})), -1.0);
}

void MpnnDiffusion::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
    time.visit(prefix + ".time", fn);
    n1.visit(prefix + ".n1", fn);
    n2.visit(prefix + ".n2", fn);
}

// ---- GPS-lite ----------------------------------------------------------------

GpsLiteDiffusion::GpsLiteDiffusion(const FieldSpec& spec, Rng& rng)
    : time(spec.time_freqs),
      pe_projection(nn::Linear::xavier(spec.gps_walk_length, spec.gps_pe_dim, rng, false)),
      input(nn::Linear::xavier(spec.dim + 2 * spec.time_freqs + spec.gps_pe_dim, spec.gps_hidden, rng)),
      output(nn::Linear::zeros(spec.gps_hidden, spec.dim)),
      heads(spec.gps_heads),
      walk_length(spec.gps_walk_length) {
    spec.validate();
    const std::size_t h = spec.gps_hidden;
    for (std::size_t r = 0; r < spec.gps_rounds; ++r) {
        rounds.push_back(GpsRound{nn::Linear::xavier(2 * h, h, rng), nn::Linear::xavier(2 * h, h, rng),
                                  nn::Linear::xavier(h, h, rng, false), nn::Linear::xavier(h, h, rng, false),
                                  nn::Linear::xavier(h, h, rng, false), nn::Linear::xavier(h, h, rng)});
    }
}

ad::Var GpsLiteDiffusion::operator()(ad::Tape& tape, ad::Var x, ad::Var times, ad::Var adjacency) {
    const Tensor& a = adjacency.value();
    const std::size_t n = a.rows();
    const std::size_t width = input.out_features();
    if (heads == 0 || width % heads != 0) throw ConfigError("gps-lite: head count must divide the hidden width");

    Tensor mask(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) mask(i, j) = (i == j || a(i, j) > 0.0) ? 1.0 : 0.0;

    ad::Var pe = pe_projection(tape, graph::rwpe_raw(tape, adjacency, walk_length));
    ad::Var h = input(tape, ad::concat_cols({x, time(tape, times), pe}));

    const std::size_t dh = width / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (GpsRound& r : rounds) {
        ad::Var z = ad::concat_cols({h, ad::matmul(adjacency, h)});
        ad::Var gated = ad::mul(ad::add_constant(ad::elu(r.gate(tape, z)), 1.0), r.gate_content(tape, z));
        h = ad::layer_norm_rows(ad::add(h, gated));

        ad::Var q = r.query(tape, h);
        ad::Var k = r.key(tape, h);
        ad::Var v = r.value(tape, h);
        std::vector<ad::Var> head_out;
        for (std::size_t hd = 0; hd < heads; ++hd) {
            const std::size_t b = hd * dh, e = b + dh;
            ad::Var logits = ad::scale(ad::matmul_nt(ad::slice_cols(q, b, e), ad::slice_cols(k, b, e)), inv_sqrt);
            head_out.push_back(ad::matmul(ad::softmax_rows(logits, &mask), ad::slice_cols(v, b, e)));
        }
        h = ad::layer_norm_rows(ad::add(h, r.out(tape, ad::concat_cols(head_out))));
    }
    return output(tape, h);
}

void GpsLiteDiffusion::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
    time.visit(prefix + ".time", fn);
    pe_projection.visit(prefix + ".pe", fn);
    input.visit(prefix + ".input", fn);
    for (std::size_t i = 0; i < rounds.size(); ++i) {
        const std::string p = prefix + ".round" + std::to_string(i);
        rounds[i].gate_content.visit(p + ".gate_content", fn);
        rounds[i].gate.visit(p + ".gate", fn);
        rounds[i].query.visit(p + ".query", fn);
        rounds[i].key.visit(p + ".key", fn);
        rounds[i].value.visit(p + ".value", fn);
        rounds[i].out.visit(p + ".out", fn);
    }
    output.visit(prefix + ".output", fn);
}

// ---- Laplacian ---------------------------------------------------------------

LaplacianDiffusion::LaplacianDiffusion(const FieldSpec& spec, Rng& rng)
    : time(spec.time_freqs),
      kappa(nn::Mlp::make(spec.dim + 2 * spec.time_freqs, spec.kappa_hidden, spec.dim, rng, true)) {}

ad::Var LaplacianDiffusion::diffusivity(ad::Tape& tape, ad::Var x, ad::Var times) {
    return ad::elu(kappa(tape, ad::concat_cols({x, time(tape, times)})));
}

ad::Var LaplacianDiffusion::operator()(ad::Tape& tape, ad::Var x, ad::Var times, const SparseAdjacency& adjacency) {
    return ad::mul(diffusivity(tape, x, times), ad::laplacian_apply(adjacency.weights, adjacency.neighbors, x));
}

void LaplacianDiffusion::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
    time.visit(prefix + ".time", fn);
    kappa.visit(prefix + ".kappa", fn);
}

// ---- composite ----------------------------------------------------------------

CompositeField::CompositeField(FieldSpec spec, std::uint64_t seed)
    : spec_(std::move(spec)),
      reaction_([this, seed] {
          spec_.validate();
          Rng rng(stream_seed(seed, "reaction"));
          return ReactionNet(spec_, rng);
      }()) {
    if (spec_.variant == DiffusionVariant::None) return;
    Rng adj_rng(stream_seed(seed, "adjacency"));
    switch (spec_.adjacency) {
    case AdjacencyPolicy::Attention:
        attention_ = graph::AttentionProjection::make(spec_.dim, spec_.time_freqs, spec_.attention_width, adj_rng);
        break;
    case AdjacencyPolicy::Knn: rank_weights_ = graph::KnnRankWeights(spec_.knn_k); break;
    case AdjacencyPolicy::Identity:
    case AdjacencyPolicy::Full: break;
    }
    Rng rng(stream_seed(seed, "diffusion"));
    switch (spec_.variant) {
    case DiffusionVariant::Mpnn: mpnn_.emplace(spec_, rng); break;
    case DiffusionVariant::GpsLite: gps_.emplace(spec_, rng); break;
    case DiffusionVariant::LaplacianKnn: laplacian_.emplace(spec_, rng); break;
    case DiffusionVariant::None: break;
    }
}

BuiltAdjacency CompositeField::adjacency(ad::Tape& tape, ad::Var x, ad::Var times) {
    const std::size_t n = x.rows();
    BuiltAdjacency out;
    switch (spec_.effective_adjacency()) {
    case AdjacencyPolicy::Attention:
        out.dense = graph::attention_adjacency(tape, x, times, *attention_);
        break;
    case AdjacencyPolicy::Knn: {
        if (spec_.knn_k + 1 > n) {
            throw ContractViolation("knn adjacency: K = " + std::to_string(spec_.knn_k) + " needs a batch of at least " +
                                    std::to_string(spec_.knn_k + 1));
        }
        graph::KnnAdjacencyVar knn = graph::knn_adjacency(tape, x.value(), *rank_weights_);
        out.zero_norm_warning = knn.graph.zero_norm_warning;
        out.dense = ad::scatter_dense(knn.weights, knn.graph.neighbors);
        out.sparse = SparseAdjacency{knn.weights, std::move(knn.graph.neighbors)};
        break;
    }
    case AdjacencyPolicy::Identity: {
        out.dense = tape.constant(Tensor::identity(n), "identity_adjacency");
        std::vector<std::size_t> self(n);
        std::iota(self.begin(), self.end(), std::size_t{0});
        out.sparse = SparseAdjacency{tape.constant(Tensor(n, 1, 1.0), "identity_weights"), std::move(self)};
        break;
    }
    case AdjacencyPolicy::Full:
        out.dense = tape.constant(graph::full_adjacency(n).weights, "full_adjacency");
        break;
    }
    return out;
}

ad::Var CompositeField::diffusion_with(ad::Tape& tape, ad::Var x, ad::Var times, const BuiltAdjacency& adj) {
    switch (spec_.variant) {
    case DiffusionVariant::Mpnn: return (*mpnn_)(tape, x, times, adj.dense);
    case DiffusionVariant::GpsLite: return (*gps_)(tape, x, times, adj.dense);
    case DiffusionVariant::LaplacianKnn:
        if (adj.sparse) return (*laplacian_)(tape, x, times, *adj.sparse);
        return (*laplacian_)(tape, x, times, SparseAdjacency{adj.dense, dense_neighbors(x.rows())});
    case DiffusionVariant::None: break;
    }
    return tape.constant(Tensor(x.rows(), x.cols()), "zero_diffusion");
}

ad::Var CompositeField::reaction(ad::Tape& tape, ad::Var x, ad::Var times) { return reaction_(tape, x, times); }

ad::Var CompositeField::diffusion(ad::Tape& tape, ad::Var x, ad::Var times) {
    if (spec_.variant == DiffusionVariant::None) return tape.constant(Tensor(x.rows(), x.cols()), "zero_diffusion");
    return diffusion_with(tape, x, times, adjacency(tape, x, times));
}

ad::Var CompositeField::forward(ad::Tape& tape, ad::Var x, ad::Var times) {
    if (x.cols() != spec_.dim) {
        throw ContractViolation("CompositeField: batch has dimension " + std::to_string(x.cols()) + ", field expects " +
                                std::to_string(spec_.dim));
    }
    if (!x.value().all_finite()) throw NumericFailure("CompositeField: non-finite batch");
    ++evaluations_;
    ad::Var r = reaction(tape, x, times);
    if (spec_.variant == DiffusionVariant::None) return r;
    ad::Var out = ad::add(r, diffusion(tape, x, times));
    if (!out.value().all_finite()) throw NumericFailure("CompositeField: non-finite velocity");
    return out;
}

Tensor CompositeField::evaluate(const Tensor& x, double t) {
    ad::Tape tape(false);
    return forward(tape, tape.constant(x), shared_times(tape, x.rows(), t)).value();
}

Tensor CompositeField::evaluate_reaction(const Tensor& x, double t) {
    ad::Tape tape(false);
    return reaction(tape, tape.constant(x), shared_times(tape, x.rows(), t)).value();
}

Tensor CompositeField::evaluate_diffusion(const Tensor& x, double t) {
    ad::Tape tape(false);
    return diffusion(tape, tape.constant(x), shared_times(tape, x.rows(), t)).value();
}

void CompositeField::visit_reaction(const nn::ParamVisitor& fn) { reaction_.visit("reaction", fn); }

void CompositeField::visit_diffusion(const nn::ParamVisitor& fn) {
    if (attention_) attention_->visit("adjacency.attention", fn);
    if (rank_weights_) rank_weights_->visit("adjacency.knn", fn);
    if (mpnn_) mpnn_->visit("diffusion.mpnn", fn);
    if (gps_) gps_->visit("diffusion.gps", fn);
    if (laplacian_) laplacian_->visit("diffusion.laplacian", fn);
}

void CompositeField::visit(const nn::ParamVisitor& fn) {
    visit_reaction(fn);
    visit_diffusion(fn);
}

std::vector<ad::Parameter*> CompositeField::parameters() {
    std::vector<ad::Parameter*> out;
    visit([&out](const std::string&, ad::Parameter& p) { out.push_back(&p); });
    return out;
}

void CompositeField::zero_grad() {
    visit([](const std::string&, ad::Parameter& p) { p.zero_grad(); });
}

std::size_t CompositeField::reaction_parameter_count() {
    return nn::count_parameters([this](const nn::ParamVisitor& fn) { visit_reaction(fn); });
}

std::size_t CompositeField::diffusion_parameter_count() {
    return nn::count_parameters([this](const nn::ParamVisitor& fn) { visit_diffusion(fn); });
}

} // namespace gfm::velocity
