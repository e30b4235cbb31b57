#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hgn/tensor.hpp"

namespace hgn {

class GraphError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// HEM cannot reach a requested level size.
class CoarseningError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Text input with a 1-based line number in the message.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

struct Edge {
    std::size_t i = 0;
    std::size_t j = 0;
    double w = 1.0;
    friend bool operator==(const Edge&, const Edge&) = default;
};

/// Undirected weighted graph; every edge stored once with i < j, sorted.
class Graph {
public:
    Graph() = default;
    /// Accepts edges in either orientation; rejects self-loops, duplicates,
    /// out-of-range endpoints and non-positive weights.
    Graph(std::size_t n_nodes, std::vector<Edge> edges, std::vector<std::string> names = {});

    std::size_t n_nodes() const noexcept { return n_; }
    const std::vector<Edge>& edges() const noexcept { return edges_; }
    const std::vector<std::string>& node_names() const noexcept { return names_; }

    /// Neighbor lists (index, weight), ascending by index.
    const std::vector<std::vector<std::pair<std::size_t, double>>>& adjacency() const noexcept {
        return adj_;
    }
    std::size_t degree(std::size_t v) const { return adj_.at(v).size(); }
    double weighted_degree(std::size_t v) const;
    std::size_t component_count() const;
    bool connected() const { return n_ > 0 && component_count() == 1; }
    double total_weight() const;
    Tensor dense_adjacency() const;

    friend bool operator==(const Graph& a, const Graph& b) {
        return a.n_ == b.n_ && a.edges_ == b.edges_;
    }

private:
    std::size_t n_ = 0;
    std::vector<Edge> edges_;
    std::vector<std::string> names_;
    std::vector<std::vector<std::pair<std::size_t, double>>> adj_;
};

/// D^{-1/2} (A + I) D^{-1/2} with D the degree matrix of A + I.
struct NormalizedAdjacency {
    Tensor matrix;
    std::size_t size() const { return matrix.empty() ? 0 : matrix.dim(0); }
};

NormalizedAdjacency normalize_adjacency(const Graph& g);

/// 0/1 matrix of the support of A + I.
Tensor support_mask(const Graph& g);

/// 17-node Human3.6M kinematic tree (see skeleton.hpp for the node order).
Graph build_skeleton_graph();

enum class MatchScore {
    normalized_cut,  // w_ij * (1/d_i + 1/d_j)
    weight,          // w_ij
};

struct CoarseningLevel {
    Graph graph;                           // the coarse graph
    std::vector<std::size_t> cluster_map;  // finer node -> node of `graph`
};

/// One greedy heavy-edge-matching pass. Nodes are visited in a seeded
/// uniformly random order; each unmatched node pairs with the unmatched
/// neighbour of best score (ties: lowest index). Coarse ids follow visiting
/// order, coarse edge weights sum the fine weights between clusters.
CoarseningLevel hem_coarsen_once(const Graph& g, std::uint64_t seed,
                                 MatchScore score = MatchScore::normalized_cut);
/// Same pass with an explicit visiting order (a permutation of 0..n-1).
CoarseningLevel hem_coarsen_ordered(const Graph& g, std::span<const std::size_t> order,
                                    MatchScore score = MatchScore::normalized_cut);

struct CoarseningHierarchy {
    Graph source;
    /// Full chain, finest first: levels[0] coarsens `source`, levels[l]
    /// coarsens levels[l-1].graph.
    std::vector<CoarseningLevel> levels;
    std::vector<std::size_t> targets;
    /// selected[k]: index into `levels` nearest to targets[k].
    std::vector<std::size_t> selected;
    /// composed[k]: source node -> node of the selected level k.
    std::vector<std::vector<std::size_t>> composed;

    const Graph& selected_graph(std::size_t k) const { return levels.at(selected.at(k)).graph; }
    std::size_t selected_size(std::size_t k) const { return selected_graph(k).n_nodes(); }
    std::vector<std::size_t> composed_map(std::size_t level) const;
};

/// Coarsens until the node count drops below the smallest target, then picks
/// for each target the level of closest size (ties: the finer level).
/// Throws CoarseningError when a pick is not within a factor of 2.
CoarseningHierarchy build_hierarchy(const Graph& g, std::vector<std::size_t> targets,
                                    std::uint64_t seed,
                                    MatchScore score = MatchScore::normalized_cut);

/// Stable 64-bit FNV-1a digest of the source graph and selected levels.
std::uint64_t hierarchy_checksum(const CoarseningHierarchy& h);

/// Centroid pooling: row c of the result is the mean of the rows of
/// `positions` mapped to c.
Tensor pool_positions(std::span<const std::size_t> cluster_map, const Tensor& positions);

// Edge-list text format: "nodes <N>" then one "i j w" per line.
void write_edge_list(std::ostream& os, const Graph& g);
Graph read_edge_list(std::istream& is);
void write_cluster_map(std::ostream& os, std::span<const std::size_t> map);
std::vector<std::size_t> read_cluster_map(std::istream& is);

}  // namespace hgn
