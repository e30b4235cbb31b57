#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "hgn/graph.hpp"
#include "hgn/tensor.hpp"

namespace hgn {

/// Where a surface vertex sits relative to its bone: fraction `t` along
/// parent->child, `radius` and `angle` around the bone axis.
struct VertexAnchor {
    std::size_t bone = 0;
    double t = 0.0;
    double radius = 0.0;
    double angle = 0.0;
};

/// Tube-segment surface standing in for a dense body mesh: each bone of the
/// 17-joint skeleton carries a cylinder of ring-connected vertices and
/// neighbouring tubes are stitched at shared joints.
struct SyntheticBodyMesh {
    Graph graph;
    Tensor skinning;  // (n_vertices, 17); row v blends the two joints of its bone
    std::vector<VertexAnchor> anchors;

    std::size_t n_vertices() const { return anchors.size(); }
};

/// Deterministic in (n_vertices, seed); the seed only perturbs ring phases.
SyntheticBodyMesh build_synthetic_body_mesh(std::size_t n_vertices, std::uint64_t seed);

/// Surface vertex positions (n_vertices, 3) for a (17, 3) joint set. A pure
/// function of the joints: each bone's ring frame is built from the bone
/// direction and the torso axes.
Tensor pose_mesh(const SyntheticBodyMesh& mesh, const Tensor& joints3d);

}  // namespace hgn
