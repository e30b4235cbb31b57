#include "hgn/graph.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <tuple>

#include "hgn/skeleton.hpp"

namespace hgn {

// ------------------------------------------------------------------- Graph

Graph::Graph(std::size_t n_nodes, std::vector<Edge> edges, std::vector<std::string> names)
    : n_(n_nodes), edges_(std::move(edges)), names_(std::move(names)) {
    if (!names_.empty() && names_.size() != n_) {
        throw GraphError("graph: " + std::to_string(names_.size()) + " names for " +
                         std::to_string(n_) + " nodes");
    }
    for (auto& e : edges_) {
        if (e.i > e.j) std::swap(e.i, e.j);
        if (e.i == e.j) throw GraphError("graph: self-loop at node " + std::to_string(e.i));
        if (e.j >= n_) {
            throw GraphError("graph: edge (" + std::to_string(e.i) + ", " + std::to_string(e.j) +
                             ") out of range for " + std::to_string(n_) + " nodes");
        }
        if (!(e.w > 0.0) || !std::isfinite(e.w)) {
            throw GraphError("graph: edge (" + std::to_string(e.i) + ", " + std::to_string(e.j) +
                             ") has non-positive weight");
        }
    }
    std::sort(edges_.begin(), edges_.end(),
              [](const Edge& a, const Edge& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; });
    for (std::size_t k = 1; k < edges_.size(); ++k) {
        if (edges_[k].i == edges_[k - 1].i && edges_[k].j == edges_[k - 1].j) {
            throw GraphError("graph: duplicate edge (" + std::to_string(edges_[k].i) + ", " +
                             std::to_string(edges_[k].j) + ")");
        }
    }
    adj_.assign(n_, {});
    for (const auto& e : edges_) {
        adj_[e.i].emplace_back(e.j, e.w);
        adj_[e.j].emplace_back(e.i, e.w);
    }
    for (auto& a : adj_) std::sort(a.begin(), a.end());
}

double Graph::weighted_degree(std::size_t v) const {
    double d = 0.0;
    for (const auto& [u, w] : adj_.at(v)) d += w;
    return d;
}

std::size_t Graph::component_count() const {
    std::vector<std::size_t> comp(n_, n_);
    std::size_t count = 0;
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < n_; ++s) {
        if (comp[s] != n_) continue;
        comp[s] = count;
        stack.push_back(s);
        while (!stack.empty()) {
            const std::size_t v = stack.back();
            stack.pop_back();
            for (const auto& [u, w] : adj_[v]) {
                if (comp[u] == n_) {
                    comp[u] = count;
                    stack.push_back(u);
                }
            }
        }
        ++count;
    }
    return count;
}

double Graph::total_weight() const {
    double s = 0.0;
    for (const auto& e : edges_) s += e.w;
    return s;
}

Tensor Graph::dense_adjacency() const {
    Tensor a({n_, n_});
    for (const auto& e : edges_) {
        a.at(e.i, e.j) = e.w;
        a.at(e.j, e.i) = e.w;
    }
    return a;
}

NormalizedAdjacency normalize_adjacency(const Graph& g) {
    const std::size_t n = g.n_nodes();
    if (n == 0) throw GraphError("normalize_adjacency: empty graph");
    Tensor a = g.dense_adjacency();
    std::vector<double> inv_sqrt(n);
    for (std::size_t i = 0; i < n; ++i) {
        a.at(i, i) = 1.0;
        inv_sqrt[i] = 1.0 / std::sqrt(1.0 + g.weighted_degree(i));
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) a.at(i, j) *= inv_sqrt[i] * inv_sqrt[j];
    }
    return {std::move(a)};
}

Tensor support_mask(const Graph& g) {
    Tensor m = g.dense_adjacency();
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = m[i] != 0.0 ? 1.0 : 0.0;
    for (std::size_t i = 0; i < g.n_nodes(); ++i) m.at(i, i) = 1.0;
    return m;
}

Graph build_skeleton_graph() {
    std::vector<Edge> edges;
    for (std::size_t b = 0; b < skeleton::kBones; ++b) {
        edges.push_back({skeleton::bone_parent(b), skeleton::bone_child(b), 1.0});
    }
    std::vector<std::string> names(skeleton::kJointNames.begin(), skeleton::kJointNames.end());
    return Graph(skeleton::kJoints, std::move(edges), std::move(names));
}

// ------------------------------------------------------------- coarsening

CoarseningLevel hem_coarsen_ordered(const Graph& g, std::span<const std::size_t> order,
                                    MatchScore score) {
    const std::size_t n = g.n_nodes();
    if (n < 2) throw GraphError("hem_coarsen: need at least 2 nodes, got " + std::to_string(n));
    if (order.size() != n) throw GraphError("hem_coarsen: visiting order has wrong length");

    std::vector<double> deg(n);
    for (std::size_t v = 0; v < n; ++v) deg[v] = g.weighted_degree(v);

    constexpr std::size_t kUnset = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> map(n, kUnset);
    std::size_t next = 0;
    for (std::size_t v : order) {
        if (v >= n) throw GraphError("hem_coarsen: visiting order out of range");
        if (map[v] != kUnset) continue;
        std::size_t best = kUnset;
        double best_score = -1.0;
        for (const auto& [u, w] : g.adjacency()[v]) {
            if (map[u] != kUnset) continue;
            const double s =
                score == MatchScore::normalized_cut ? w * (1.0 / deg[v] + 1.0 / deg[u]) : w;
            if (s > best_score) {  // neighbours ascend, so ties keep the lowest index
                best_score = s;
                best = u;
            }
        }
        map[v] = next;
        if (best != kUnset) map[best] = next;
        ++next;
    }

    // Coarse edges: accumulate fine weights between distinct clusters.
    std::vector<Edge> coarse;
    {
        std::vector<std::tuple<std::size_t, std::size_t, double>> acc;
        acc.reserve(g.edges().size());
        for (const auto& e : g.edges()) {
            std::size_t a = map[e.i], b = map[e.j];
            if (a == b) continue;
            if (a > b) std::swap(a, b);
            acc.emplace_back(a, b, e.w);
        }
        std::stable_sort(acc.begin(), acc.end(), [](const auto& x, const auto& y) {
            return std::get<0>(x) != std::get<0>(y) ? std::get<0>(x) < std::get<0>(y)
                                                    : std::get<1>(x) < std::get<1>(y);
        });
        for (const auto& [a, b, w] : acc) {
            if (!coarse.empty() && coarse.back().i == a && coarse.back().j == b) {
                coarse.back().w += w;
            } else {
                coarse.push_back({a, b, w});
            }
        }
    }
    return {Graph(next, std::move(coarse)), std::move(map)};
}

CoarseningLevel hem_coarsen_once(const Graph& g, std::uint64_t seed, MatchScore score) {
    if (g.n_nodes() < 2) {
        throw GraphError("hem_coarsen: need at least 2 nodes, got " +
                         std::to_string(g.n_nodes()));
    }
    std::vector<std::size_t> order(g.n_nodes());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    return hem_coarsen_ordered(g, order, score);
}

std::vector<std::size_t> CoarseningHierarchy::composed_map(std::size_t level) const {
    std::vector<std::size_t> m(source.n_nodes());
    std::iota(m.begin(), m.end(), std::size_t{0});
    for (std::size_t l = 0; l <= level; ++l) {
        for (auto& v : m) v = levels.at(l).cluster_map[v];
    }
    return m;
}

CoarseningHierarchy build_hierarchy(const Graph& g, std::vector<std::size_t> targets,
                                    std::uint64_t seed, MatchScore score) {
    if (targets.empty()) throw GraphError("build_hierarchy: no targets");
    for (std::size_t k = 0; k < targets.size(); ++k) {
        if (targets[k] == 0 || targets[k] >= g.n_nodes()) {
            throw GraphError("build_hierarchy: target " + std::to_string(targets[k]) +
                             " must be in [1, " + std::to_string(g.n_nodes()) + ")");
        }
        if (k > 0 && targets[k] >= targets[k - 1]) {
            throw GraphError("build_hierarchy: targets must be strictly decreasing");
        }
    }
    CoarseningHierarchy h;
    h.source = g;
    h.targets = targets;
    const std::size_t smallest = targets.back();
    const Graph* cur = &h.source;
    for (std::uint64_t level = 0; cur->n_nodes() >= 2 && cur->n_nodes() >= smallest; ++level) {
        std::seed_seq seq{seed, level};
        std::uint64_t level_seed = 0;
        {
            std::array<std::uint32_t, 2> words{};
            seq.generate(words.begin(), words.end());
            level_seed = (std::uint64_t{words[0]} << 32) | words[1];
        }
        CoarseningLevel next = hem_coarsen_once(*cur, level_seed, score);
        if (next.graph.n_nodes() == cur->n_nodes()) break;  // nothing left to match
        h.levels.push_back(std::move(next));
        cur = &h.levels.back().graph;
    }
    for (std::size_t t : targets) {
        std::size_t best = h.levels.size();
        std::size_t best_dist = std::numeric_limits<std::size_t>::max();
        for (std::size_t l = 0; l < h.levels.size(); ++l) {
            const std::size_t n = h.levels[l].graph.n_nodes();
            const std::size_t dist = n > t ? n - t : t - n;
            if (dist < best_dist) {
                best_dist = dist;
                best = l;
            }
        }
        if (best == h.levels.size()) {
            throw CoarseningError("build_hierarchy: coarsening stalled before reaching target " +
                                  std::to_string(t));
        }
        const std::size_t n = h.levels[best].graph.n_nodes();
        if (n > 2 * t || 2 * n < t) {
            throw CoarseningError("build_hierarchy: target " + std::to_string(t) +
                                  " unreachable; nearest level has " + std::to_string(n) +
                                  " nodes");
        }
        h.selected.push_back(best);
        h.composed.push_back(h.composed_map(best));
    }
    return h;
}

namespace {

struct Fnv1a {
    std::uint64_t h = 1469598103934665603ull;
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= c[i];
            h *= 1099511628211ull;
        }
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            const unsigned char b = static_cast<unsigned char>(v >> (8 * i));
            bytes(&b, 1);
        }
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void graph(const Graph& g) {
        u64(g.n_nodes());
        u64(g.edges().size());
        for (const auto& e : g.edges()) {
            u64(e.i);
            u64(e.j);
            f64(e.w);
        }
    }
};

}  // namespace

std::uint64_t hierarchy_checksum(const CoarseningHierarchy& h) {
    Fnv1a f;
    f.graph(h.source);
    f.u64(h.selected.size());
    for (std::size_t k = 0; k < h.selected.size(); ++k) {
        f.u64(h.selected[k]);
        f.graph(h.selected_graph(k));
        for (auto v : h.composed[k]) f.u64(v);
    }
    return f.h;
}

Tensor pool_positions(std::span<const std::size_t> cluster_map, const Tensor& positions) {
    if (positions.rank() != 2 || positions.dim(0) != cluster_map.size()) {
        throw GraphError("pool_positions: " + std::to_string(cluster_map.size()) +
                         " cluster entries for positions of shape " +
                         shape_str(positions.shape()));
    }
    const std::size_t cols = positions.dim(1);
    std::size_t n_coarse = 0;
    for (auto c : cluster_map) n_coarse = std::max(n_coarse, c + 1);
    Tensor out({n_coarse, cols});
    std::vector<std::size_t> count(n_coarse, 0);
    for (std::size_t v = 0; v < cluster_map.size(); ++v) {
        const std::size_t c = cluster_map[v];
        ++count[c];
        for (std::size_t k = 0; k < cols; ++k) out.at(c, k) += positions.at(v, k);
    }
    for (std::size_t c = 0; c < n_coarse; ++c) {
        if (count[c] == 0) throw GraphError("pool_positions: cluster map is not surjective");
        for (std::size_t k = 0; k < cols; ++k) out.at(c, k) /= static_cast<double>(count[c]);
    }
    return out;
}

// --------------------------------------------------------------------- I/O

void write_edge_list(std::ostream& os, const Graph& g) {
    os << "nodes " << g.n_nodes() << '\n';
    const auto old = os.precision(17);
    for (const auto& e : g.edges()) os << e.i << ' ' << e.j << ' ' << e.w << '\n';
    os.precision(old);
}

namespace {

bool next_content_line(std::istream& is, std::string& line, std::size_t& lineno) {
    while (std::getline(is, line)) {
        ++lineno;
        const auto pos = line.find_first_not_of(" \t\r");
        if (pos == std::string::npos || line[pos] == '#') continue;
        return true;
    }
    return false;
}

}  // namespace

Graph read_edge_list(std::istream& is) {
    std::string line;
    std::size_t lineno = 0;
    if (!next_content_line(is, line, lineno)) throw ParseError(lineno + 1, "missing 'nodes <N>' header");
    std::size_t n = 0;
    {
        std::istringstream ss(line);
        std::string kw;
        std::string rest;
        if (!(ss >> kw >> n) || kw != "nodes" || (ss >> rest)) {
            throw ParseError(lineno, "expected 'nodes <N>', got '" + line + "'");
        }
    }
    std::vector<Edge> edges;
    while (next_content_line(is, line, lineno)) {
        std::istringstream ss(line);
        long long i = -1, j = -1;
        double w = 0.0;
        std::string rest;
        if (!(ss >> i >> j >> w) || (ss >> rest) || i < 0 || j < 0) {
            throw ParseError(lineno, "expected 'i j w', got '" + line + "'");
        }
        edges.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), w});
        try {
            if (edges.back().i >= n || edges.back().j >= n) {
                throw GraphError("endpoint out of range for " + std::to_string(n) + " nodes");
            }
            if (!(w > 0.0)) throw GraphError("non-positive weight");
        } catch (const GraphError& e) {
            throw ParseError(lineno, e.what());
        }
    }
    try {
        return Graph(n, std::move(edges));
    } catch (const GraphError& e) {
        throw ParseError(lineno, e.what());
    }
}

void write_cluster_map(std::ostream& os, std::span<const std::size_t> map) {
    for (auto v : map) os << v << '\n';
}

std::vector<std::size_t> read_cluster_map(std::istream& is) {
    std::vector<std::size_t> map;
    std::string line;
    std::size_t lineno = 0;
    while (next_content_line(is, line, lineno)) {
        std::istringstream ss(line);
        long long v = -1;
        std::string rest;
        if (!(ss >> v) || (ss >> rest) || v < 0) {
            throw ParseError(lineno, "expected a non-negative integer, got '" + line + "'");
        }
        map.push_back(static_cast<std::size_t>(v));
    }
    return map;
}

}  // namespace hgn
