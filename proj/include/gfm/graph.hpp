#pragma once

#include "gfm/autodiff.hpp"
#include "gfm/layers.hpp"
#include "gfm/tensor.hpp"

#include <string_view>
#include <vector>

namespace gfm::graph {

enum class AdjacencyKind { Attention, Knn, Identity, Full };

std::string_view kind_name(AdjacencyKind k);

/// B x B non-negative edge weights over one batch.
struct Adjacency {
    Tensor weights;
    AdjacencyKind kind = AdjacencyKind::Identity;
    bool row_stochastic = false;

    std::size_t nodes() const { return weights.rows(); }
    /// Stored entries: B^2 for the dense builders.
    std::size_t entry_count() const { return weights.size(); }
};

Adjacency identity_adjacency(std::size_t nodes);
/// Uniform 1/B weights on every pair, self included.
Adjacency full_adjacency(std::size_t nodes);

// ---- incidence operator (graph gradient) -------------------------------

struct Edge {
    std::size_t from;
    std::size_t to;
    double weight; // > 0
};

/// Graph gradient G over the symmetrized adjacency (A + A^T)/2. Every unordered
/// pair with positive symmetric weight w yields the directed edges (i,j) and
/// (j,i), each carrying weight w/2, so that G^T G = D_w - A_sym exactly and the
/// operator commutes with node permutations.
class IncidenceOperator {
public:
    IncidenceOperator(std::size_t nodes, std::vector<Edge> edges);

    std::size_t nodes() const noexcept { return nodes_; }
    std::size_t edge_count() const noexcept { return edges_.size(); }
    const std::vector<Edge>& edges() const noexcept { return edges_; }

    /// Node features (B x d) to edge features (E x d): sqrt(w_e) (x_from - x_to).
    /// With no edges the result has zero rows and is returned as an empty tensor.
    Tensor apply(const Tensor& x) const;
    /// Edge features back to nodes by signed accumulation.
    Tensor apply_transpose(const Tensor& e, std::size_t feature_dim) const;

private:
    std::size_t nodes_;
    std::vector<Edge> edges_;
};

IncidenceOperator incidence_from_adjacency(const Adjacency& adj);
IncidenceOperator incidence_from_adjacency(const Tensor& weights);

/// (D_w - A_sym) for the symmetrized adjacency, the reference G^T G.
Tensor combinatorial_laplacian(const Tensor& weights);

// ---- Laplacian and random-walk encodings --------------------------------

/// L = I - D^{-1/2} A D^{-1/2}, D = diag(row sums). Throws DegenerateDegree.
Tensor normalized_laplacian(const Tensor& weights);
Tensor normalized_laplacian(const Adjacency& adj);

/// raw(i, k-1) = (RW^k)_ii for k = 1..L with RW = D^{-1} A. Throws DegenerateDegree.
Tensor rwpe_raw(const Tensor& weights, std::size_t walk_length);

/// Differentiable form of rwpe_raw (no clamping). Throws DegenerateDegree.
ad::Var rwpe_raw(ad::Tape& tape, ad::Var weights, std::size_t walk_length);

struct PositionalEncoding {
    Tensor raw;       // B x L
    Tensor projected; // B x P
};

PositionalEncoding rwpe(const Adjacency& adj, std::size_t walk_length, nn::Linear& projection);

// ---- attention adjacency --------------------------------------------------

/// Learnable query/key projections of [x, time embedding].
struct AttentionProjection {
    nn::TimeEmbedding time;
    nn::Linear query;
    nn::Linear key;

    static AttentionProjection make(std::size_t dim, std::size_t time_freqs, std::size_t width, Rng& rng);
    std::size_t width() const { return query.out_features(); }
    void visit(const std::string& prefix, const nn::ParamVisitor& fn);
};

/// Row-softmax of (Q K^T)/sqrt(h); dense B x B, differentiable in the points,
/// the times and the projection parameters. times is B x 1.
ad::Var attention_adjacency(ad::Tape& tape, ad::Var points, ad::Var times, AttentionProjection& proj);
Adjacency build_attention_adjacency(const Tensor& points, double time, AttentionProjection& proj);

// ---- KNN adjacency ------------------------------------------------------------

/// Neighbor table from cosine similarity: row i lists i itself (rank 0) and
/// then its K most similar other points in descending similarity, ties broken
/// by lower index. Stores exactly B (K + 1) indices.
struct KnnGraph {
    std::size_t nodes = 0;
    std::size_t k = 0;
    std::vector<std::size_t> neighbors; // B x (K + 1), row-major
    bool zero_norm_warning = false;     // a zero vector was compared (similarity 0 substituted)

    std::size_t edge_count() const { return nodes * k; }
    std::size_t neighbor(std::size_t i, std::size_t rank) const { return neighbors[i * (k + 1) + rank]; }
};

KnnGraph knn_graph(const Tensor& points, std::size_t k);

/// One learnable weight per neighbor rank, shared by all rows; |w_r| is used.
struct KnnRankWeights {
    ad::Parameter weights; // 1 x (K + 1)

    explicit KnnRankWeights(std::size_t k = 0);
    std::size_t k() const { return weights.value.cols() - 1; }
    void visit(const std::string& prefix, const nn::ParamVisitor& fn);
};

struct KnnAdjacencyVar {
    KnnGraph graph;
    ad::Var weights; // B x (K + 1) row-normalized, aligned with graph.neighbors
};

KnnAdjacencyVar knn_adjacency(ad::Tape& tape, const Tensor& points, KnnRankWeights& rank_weights);
Adjacency build_knn_adjacency(const Tensor& points, std::size_t k, KnnRankWeights& rank_weights,
                              bool* zero_norm_warning = nullptr);

} // namespace gfm::graph
