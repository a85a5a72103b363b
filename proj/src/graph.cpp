#include "gfm/graph.hpp"

#include "gfm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gfm::graph {

std::string_view kind_name(AdjacencyKind k) {
    switch (k) {
    case AdjacencyKind::Attention: return "attention";
    case AdjacencyKind::Knn: return "knn";
    case AdjacencyKind::Identity: return "identity";
    case AdjacencyKind::Full: return "full";
    }
    return "?";
}

Adjacency identity_adjacency(std::size_t nodes) {
    return {Tensor::identity(nodes), AdjacencyKind::Identity, true};
}

Adjacency full_adjacency(std::size_t nodes) {
    return {Tensor(nodes, nodes, 1.0 / static_cast<double>(nodes)), AdjacencyKind::Full, true};
}

IncidenceOperator::IncidenceOperator(std::size_t nodes, std::vector<Edge> edges)
    : nodes_(nodes), edges_(std::move(edges)) {
    for (const Edge& e : edges_) {
        if (e.from == e.to) throw ContractViolation("IncidenceOperator: self-loop edge");
        if (e.from >= nodes_ || e.to >= nodes_) throw ContractViolation("IncidenceOperator: edge out of range");
        if (!(e.weight > 0.0)) throw ContractViolation("IncidenceOperator: edge weight must be positive");
    }
}

Tensor IncidenceOperator::apply(const Tensor& x) const {
    if (x.rows() != nodes_) throw ContractViolation("IncidenceOperator::apply: wrong node count");
    if (edges_.empty()) return Tensor();
    const std::size_t d = x.cols();
    Tensor out(edges_.size(), d);
    for (std::size_t e = 0; e < edges_.size(); ++e) {
        const double s = std::sqrt(edges_[e].weight);
        for (std::size_t f = 0; f < d; ++f) out(e, f) = s * (x(edges_[e].from, f) - x(edges_[e].to, f));
    }
    return out;
}

Tensor IncidenceOperator::apply_transpose(const Tensor& e, std::size_t feature_dim) const {
    Tensor out(nodes_, feature_dim);
    if (edges_.empty()) return out;
    if (e.rows() != edges_.size() || e.cols() != feature_dim) {
        throw ContractViolation("IncidenceOperator::apply_transpose: edge tensor has shape " + e.shape_string());
    }
    for (std::size_t k = 0; k < edges_.size(); ++k) {
        const double s = std::sqrt(edges_[k].weight);
        for (std::size_t f = 0; f < feature_dim; ++f) {
            out(edges_[k].from, f) += s * e(k, f);
            out(edges_[k].to, f) -= s * e(k, f);
        }
    }
    return out;
}

IncidenceOperator incidence_from_adjacency(const Tensor& a) {
    const std::size_t n = a.rows();
    if (a.cols() != n) throw ContractViolation("incidence_from_adjacency: adjacency must be square");
    if (!a.all_finite()) throw NumericFailure("incidence_from_adjacency: non-finite adjacency");
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            if (a(i, j) < 0.0) throw ContractViolation("incidence_from_adjacency: negative weight");
            const double w = 0.5 * (a(i, j) + a(j, i));
            if (w > 0.0) edges.push_back({i, j, 0.5 * w});
        }
    return IncidenceOperator(n, std::move(edges));
}

IncidenceOperator incidence_from_adjacency(const Adjacency& adj) { return incidence_from_adjacency(adj.weights); }

Tensor combinatorial_laplacian(const Tensor& a) {
    const std::size_t n = a.rows();
    Tensor lap(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double w = 0.5 * (a(i, j) + a(j, i));
            lap(i, j) -= w;
            lap(i, i) += w;
        }
    return lap;
}

namespace {

std::vector<double> degrees(const Tensor& a, const char* who) {
    if (a.rows() != a.cols()) throw ContractViolation(std::string(who) + ": adjacency must be square");
    std::vector<double> d(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) d[i] += a(i, j);
        if (!(d[i] > 0.0)) {
            throw DegenerateDegree(i, std::string(who) + ": node " + std::to_string(i) + " has zero degree");
        }
    }
    return d;
}

} // namespace

Tensor normalized_laplacian(const Tensor& a) {
    const auto d = degrees(a, "normalized_laplacian");
    const std::size_t n = a.rows();
    Tensor lap(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            lap(i, j) = (i == j ? 1.0 : 0.0) - a(i, j) / (std::sqrt(d[i]) * std::sqrt(d[j]));
    return lap;
}

Tensor normalized_laplacian(const Adjacency& adj) { return normalized_laplacian(adj.weights); }

Tensor rwpe_raw(const Tensor& a, std::size_t walk_length) {
    if (walk_length == 0) throw ContractViolation("rwpe_raw: walk length must be positive");
    const auto d = degrees(a, "rwpe");
    const std::size_t n = a.rows();
    Tensor rw = a;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) rw(i, j) /= d[i];

    // Only diagonals are needed: diag(P_a P_b) costs O(B^2), so powers up to
    // ceil(L/2) are formed explicitly and the rest are paired.
    const std::size_t half = (walk_length + 1) / 2;
    std::vector<Tensor> powers{Tensor(), rw};
    for (std::size_t k = 2; k <= half; ++k) powers.push_back(matmul(powers.back(), rw));

    Tensor raw(n, walk_length);
    for (std::size_t k = 1; k <= walk_length; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            double v;
            if (k <= half) {
                v = powers[k](i, i);
            } else {
                const Tensor& p = powers[half];
                const Tensor& q = powers[k - half];
                v = 0.0;
                for (std::size_t j = 0; j < n; ++j) v += p(i, j) * q(j, i);
            }
            raw(i, k - 1) = std::clamp(v, 0.0, 1.0);
        }
    }
    return raw;
}

ad::Var rwpe_raw(ad::Tape& tape, ad::Var weights, std::size_t walk_length) {
    if (walk_length == 0) throw ContractViolation("rwpe_raw: walk length must be positive");
    const std::size_t n = weights.rows();
    (void)degrees(weights.value(), "rwpe");
    ad::Var rw = ad::row_normalize(weights);
    const std::size_t half = (walk_length + 1) / 2;
    std::vector<ad::Var> powers{tape.constant(Tensor::identity(n), "identity"), rw};
    for (std::size_t k = 2; k <= half; ++k) powers.push_back(ad::matmul(powers.back(), rw));
    std::vector<ad::Var> cols;
    for (std::size_t k = 1; k <= walk_length; ++k) {
        if (k <= half) {
            cols.push_back(ad::diag_product(powers[k - 1], rw));
        } else {
            cols.push_back(ad::diag_product(powers[half], powers[k - half]));
        }
    }
    return ad::concat_cols(cols);
}

PositionalEncoding rwpe(const Adjacency& adj, std::size_t walk_length, nn::Linear& projection) {
    PositionalEncoding pe;
    pe.raw = rwpe_raw(adj.weights, walk_length);
    ad::Tape tape(false);
    pe.projected = projection(tape, tape.constant(pe.raw)).value();
    return pe;
}

AttentionProjection AttentionProjection::make(std::size_t dim, std::size_t time_freqs, std::size_t width, Rng& rng) {
    AttentionProjection p{nn::TimeEmbedding(time_freqs), {}, {}};
    const std::size_t in = dim + p.time.dim();
    p.query = nn::Linear::xavier(in, width, rng, false);
    p.key = nn::Linear::xavier(in, width, rng, false);
    return p;
}

void AttentionProjection::visit(const std::string& prefix, const nn::ParamVisitor& fn) {
    time.visit(prefix + ".time", fn);
    query.visit(prefix + ".query", fn);
    key.visit(prefix + ".key", fn);
}

ad::Var attention_adjacency(ad::Tape& tape, ad::Var points, ad::Var times, AttentionProjection& proj) {
    ad::Var features = ad::concat_cols({points, proj.time(tape, times)});
    ad::Var q = proj.query(tape, features);
    ad::Var k = proj.key(tape, features);
    ad::Var logits = ad::scale(ad::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(proj.width())));
    if (!logits.value().all_finite()) throw NumericFailure("attention_adjacency: non-finite logits");
    return ad::softmax_rows(logits);
}

Adjacency build_attention_adjacency(const Tensor& points, double time, AttentionProjection& proj) {
    ad::Tape tape(false);
    ad::Var t = tape.constant(Tensor(points.rows(), 1, time));
    ad::Var a = attention_adjacency(tape, tape.constant(points), t, proj);
    return {a.value(), AdjacencyKind::Attention, true};
}

KnnGraph knn_graph(const Tensor& points, std::size_t k) {
    const std::size_t n = points.rows();
    const std::size_t d = points.cols();
    if (k + 1 > n) throw ContractViolation("knn_graph: K must be at most B - 1");
    KnnGraph g;
    g.nodes = n;
    g.k = k;
    g.neighbors.assign(n * (k + 1), 0);

    std::vector<double> norms(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t f = 0; f < d; ++f) s += points(i, f) * points(i, f);
        norms[i] = std::sqrt(s);
    }
    std::vector<double> sim(n);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (norms[i] == 0.0 || norms[j] == 0.0) {
                sim[j] = 0.0;
                if (i != j) g.zero_norm_warning = true;
                continue;
            }
            double dot = 0.0;
            for (std::size_t f = 0; f < d; ++f) dot += points(i, f) * points(j, f);
            sim[j] = dot / (norms[i] * norms[j]);
        }
        g.neighbors[i * (k + 1)] = i;
        if (k == 0) continue;
        order.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) order.push_back(j);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&sim](std::size_t a, std::size_t b) { return sim[a] > sim[b] || (sim[a] == sim[b] && a < b); });
        for (std::size_t r = 0; r < k; ++r) g.neighbors[i * (k + 1) + 1 + r] = order[r];
    }
    return g;
}

KnnRankWeights::KnnRankWeights(std::size_t k) : weights(Tensor(1, k + 1, 1.0)) {}

void KnnRankWeights::visit(const std::string& prefix, const nn::ParamVisitor& fn) { fn(prefix + ".rank", weights); }

KnnAdjacencyVar knn_adjacency(ad::Tape& tape, const Tensor& points, KnnRankWeights& rank_weights) {
    // `points` may live on the tape, so it is not touched after the first push.
    KnnAdjacencyVar out{knn_graph(points, rank_weights.k()), {}};
    const std::size_t n = out.graph.nodes;
    ad::Var w = ad::abs(tape.leaf(rank_weights.weights, "knn.rank"));
    out.weights = ad::row_normalize(ad::broadcast_rows(w, n));
    return out;
}

Adjacency build_knn_adjacency(const Tensor& points, std::size_t k, KnnRankWeights& rank_weights,
                              bool* zero_norm_warning) {
    if (rank_weights.k() != k) {
        throw ContractViolation("build_knn_adjacency: rank weights hold K = " + std::to_string(rank_weights.k()) +
                                ", requested K = " + std::to_string(k));
    }
    ad::Tape tape(false);
    KnnAdjacencyVar knn = knn_adjacency(tape, points, rank_weights);
    if (zero_norm_warning) *zero_norm_warning = knn.graph.zero_norm_warning;
    ad::Var dense = ad::scatter_dense(knn.weights, knn.graph.neighbors);
    return {dense.value(), AdjacencyKind::Knn, true};
}

} // namespace gfm::graph
