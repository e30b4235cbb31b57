#pragma once

#include <array>
#include <cstddef>
#include <string_view>
#include <utility>

namespace hgn::skeleton {

// Human3.6M 17-joint order:
//   0 pelvis, 1 r_hip, 2 r_knee, 3 r_ankle, 4 l_hip, 5 l_knee, 6 l_ankle,
//   7 spine, 8 thorax, 9 neck, 10 head, 11 l_shoulder, 12 l_elbow,
//   13 l_wrist, 14 r_shoulder, 15 r_elbow, 16 r_wrist.
// Every joint except the pelvis is the child end of exactly one bone, so
// bone k (k = 0..15) ends at joint k + 1.

inline constexpr std::size_t kJoints = 17;
inline constexpr std::size_t kBones = 16;
inline constexpr std::size_t kPelvis = 0;
inline constexpr std::size_t kThorax = 8;
inline constexpr std::size_t kLeftHip = 4;
inline constexpr std::size_t kRightHip = 1;

inline constexpr std::array<std::string_view, kJoints> kJointNames{
    "pelvis",     "r_hip",   "r_knee",  "r_ankle",    "l_hip",    "l_knee",
    "l_ankle",    "spine",   "thorax",  "neck",       "head",     "l_shoulder",
    "l_elbow",    "l_wrist", "r_shoulder", "r_elbow", "r_wrist"};

inline constexpr std::array<int, kJoints> kParent{-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15};

/// (left, right) joint index pairs.
inline constexpr std::array<std::pair<std::size_t, std::size_t>, 6> kLeftRightPairs{
    {{4, 1}, {5, 2}, {6, 3}, {11, 14}, {12, 15}, {13, 16}}};

/// Joint index after a left/right mirror.
constexpr std::size_t mirrored(std::size_t j) {
    for (const auto& [l, r] : kLeftRightPairs) {
        if (j == l) return r;
        if (j == r) return l;
    }
    return j;
}

constexpr std::size_t bone_parent(std::size_t bone) {
    return static_cast<std::size_t>(kParent[bone + 1]);
}
constexpr std::size_t bone_child(std::size_t bone) { return bone + 1; }

// Rest geometry in the body frame (x toward the subject's left, y up,
// z forward), millimetres. Indexed by bone.

inline constexpr std::array<double, kBones> kDefaultBoneLengthMm{
    132.0, 442.0, 454.0,  // pelvis-r_hip, r_hip-r_knee, r_knee-r_ankle
    132.0, 442.0, 454.0,  // left leg
    233.0, 257.0, 121.0, 115.0,  // spine, thorax, neck, head
    151.0, 278.0, 251.0,  // thorax-l_shoulder, upper arm, forearm
    151.0, 278.0, 251.0};

inline constexpr std::array<std::array<double, 3>, kBones> kRestDirection{{
    {-1, 0, 0}, {0, -1, 0}, {0, -1, 0},
    {1, 0, 0}, {0, -1, 0}, {0, -1, 0},
    {0, 1, 0}, {0, 1, 0}, {0, 0.98058067569092, 0.19611613513818}, {0, 1, 0},
    {1, 0, 0}, {0, -1, 0}, {0, -1, 0},
    {-1, 0, 0}, {0, -1, 0}, {0, -1, 0}}};

/// Tube radius of the synthetic body surface around each bone.
inline constexpr std::array<double, kBones> kBoneRadiusMm{
    85.0, 75.0, 52.0, 85.0, 75.0, 52.0, 120.0, 130.0, 50.0, 90.0,
    60.0, 46.0, 38.0, 60.0, 46.0, 38.0};

}  // namespace hgn::skeleton
