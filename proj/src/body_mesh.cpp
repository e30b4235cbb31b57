#include "hgn/body_mesh.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "hgn/skeleton.hpp"

namespace hgn {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 scaled(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
Vec3 normalized(const Vec3& a) {
    const double n = std::sqrt(dot(a, a));
    return n > 0.0 ? scaled(a, 1.0 / n) : Vec3{0, 0, 0};
}

struct BoneLayout {
    std::size_t first = 0;   // first vertex id
    std::size_t count = 0;   // vertices on this bone
    std::size_t ring = 0;    // vertices per full ring
    std::size_t rings = 0;
};

// Largest-remainder split of n proportional to weights.
std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    std::vector<std::size_t> out(weights.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t used = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = static_cast<double>(n) * weights[i] / total;
        out[i] = static_cast<std::size_t>(std::floor(exact));
        used += out[i];
        rem.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(rem.begin(), rem.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; used < n; ++k, ++used) ++out[rem[k % rem.size()].second];
    return out;
}

// Bone ending at `joint`, or none for the pelvis.
std::size_t incoming_bone(std::size_t joint) { return joint - 1; }

constexpr std::size_t kSpineBone = 6;

}  // namespace

SyntheticBodyMesh build_synthetic_body_mesh(std::size_t n_vertices, std::uint64_t seed) {
    using namespace skeleton;
    if (n_vertices < 200) {
        throw GraphError("build_synthetic_body_mesh: need at least 200 vertices, got " +
                         std::to_string(n_vertices));
    }
    std::vector<double> area(kBones);
    for (std::size_t b = 0; b < kBones; ++b) area[b] = kDefaultBoneLengthMm[b] * kBoneRadiusMm[b];
    const auto counts = apportion(n_vertices, area);

    std::vector<BoneLayout> layout(kBones);
    std::size_t next = 0;
    for (std::size_t b = 0; b < kBones; ++b) {
        BoneLayout& L = layout[b];
        L.first = next;
        L.count = counts[b];
        const double circumference = 2.0 * std::numbers::pi * kBoneRadiusMm[b];
        const double k = std::sqrt(static_cast<double>(L.count) * circumference /
                                   kDefaultBoneLengthMm[b]);
        L.ring = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(k)), 3, L.count);
        L.rings = (L.count + L.ring - 1) / L.ring;
        next += L.count;
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(-0.15, 0.15);

    SyntheticBodyMesh mesh;
    mesh.anchors.resize(n_vertices);
    mesh.skinning = Tensor({n_vertices, kJoints});
    std::set<std::pair<std::size_t, std::size_t>> edges;
    auto link = [&](std::size_t a, std::size_t b) {
        if (a != b) edges.emplace(std::min(a, b), std::max(a, b));
    };

    for (std::size_t b = 0; b < kBones; ++b) {
        const BoneLayout& L = layout[b];
        std::vector<double> phase(L.rings);
        for (auto& p : phase) p = jitter(rng);
        for (std::size_t k = 0; k < L.count; ++k) {
            const std::size_t q = k / L.ring, s = k % L.ring;
            const std::size_t v = L.first + k;
            const double t = 0.04 + 0.92 * (static_cast<double>(q) + 0.5) /
                                        static_cast<double>(L.rings);
            const double ang = 2.0 * std::numbers::pi *
                               (static_cast<double>(s) + 0.5 * static_cast<double>(q % 2) + phase[q]) /
                               static_cast<double>(L.ring);
            mesh.anchors[v] = {b, t, kBoneRadiusMm[b], ang};
            mesh.skinning.at(v, bone_parent(b)) = 1.0 - t;
            mesh.skinning.at(v, bone_child(b)) = t;
            if (s > 0) link(v - 1, v);
            if (q > 0) link(v - L.ring, v);
            const bool ring_full = (q + 1) * L.ring <= L.count;
            if (s == L.ring - 1 && ring_full && L.ring >= 3) link(v - s, v);
        }
    }

    // Stitch each tube's first ring to the ring it grows out of.
    for (std::size_t b = 0; b < kBones; ++b) {
        if (b == kSpineBone) continue;
        const std::size_t p = bone_parent(b);
        std::size_t host_first = 0, host_size = 0;
        if (p == kPelvis) {
            const BoneLayout& H = layout[kSpineBone];
            host_first = H.first;
            host_size = std::min(H.ring, H.count);
        } else {
            const BoneLayout& H = layout[incoming_bone(p)];
            host_first = H.first + (H.rings - 1) * H.ring;
            host_size = H.count - (H.rings - 1) * H.ring;
        }
        const BoneLayout& L = layout[b];
        const std::size_t first_ring = std::min(L.ring, L.count);
        for (std::size_t s = 0; s < first_ring; ++s) {
            link(L.first + s, host_first + (s * host_size) / first_ring);
        }
    }

    std::vector<Edge> list;
    list.reserve(edges.size());
    for (const auto& [a, b] : edges) list.push_back({a, b, 1.0});
    mesh.graph = Graph(n_vertices, std::move(list));
    return mesh;
}

Tensor pose_mesh(const SyntheticBodyMesh& mesh, const Tensor& joints3d) {
    using namespace skeleton;
    if (joints3d.shape() != Shape{kJoints, 3}) {
        throw ShapeError("pose_mesh", joints3d.shape(), Shape{kJoints, 3});
    }
    auto joint = [&](std::size_t j) {
        return Vec3{joints3d.at(j, 0), joints3d.at(j, 1), joints3d.at(j, 2)};
    };
    const Vec3 up = normalized(sub(joint(kThorax), joint(kPelvis)));
    Vec3 lat = sub(joint(kLeftHip), joint(kRightHip));
    lat = normalized(sub(lat, scaled(up, dot(lat, up))));
    const Vec3 fwd = cross(lat, up);

    // Preferred ring reference per bone, with a fallback when the bone runs
    // nearly parallel to it.
    enum Ref { F, U, L };
    static constexpr std::array<std::array<Ref, 2>, kBones> kRefs{{
        {U, F}, {F, L}, {F, L}, {U, F}, {F, L}, {F, L},
        {F, L}, {F, L}, {F, L}, {F, L},
        {U, F}, {F, U}, {F, U}, {U, F}, {F, U}, {F, U}}};
    auto axis = [&](Ref r) { return r == F ? fwd : (r == U ? up : lat); };

    std::array<Vec3, kBones> ex{}, ey{}, base{}, span{};
    for (std::size_t b = 0; b < kBones; ++b) {
        const Vec3 p = joint(bone_parent(b));
        const Vec3 c = joint(bone_child(b));
        const Vec3 d = normalized(sub(c, p));
        Vec3 ref = axis(kRefs[b][0]);
        if (std::abs(dot(ref, d)) > 0.9) ref = axis(kRefs[b][1]);
        ex[b] = normalized(sub(ref, scaled(d, dot(ref, d))));
        ey[b] = cross(d, ex[b]);
        base[b] = p;
        span[b] = sub(c, p);
    }

    Tensor out({mesh.n_vertices(), 3});
    for (std::size_t v = 0; v < mesh.n_vertices(); ++v) {
        const auto& a = mesh.anchors[v];
        const double cr = a.radius * std::cos(a.angle), sr = a.radius * std::sin(a.angle);
        for (std::size_t k = 0; k < 3; ++k) {
            out.at(v, k) = base[a.bone][k] + a.t * span[a.bone][k] + cr * ex[a.bone][k] +
                           sr * ey[a.bone][k];
        }
    }
    return out;
}

}  // namespace hgn
