#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hgn/graph.hpp"
#include "hgn/skeleton.hpp"
#include "hgn/tensor.hpp"

namespace hgn {

/// Bad dataset file or generator config.
class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One record. Joints and meshes in millimetres, pelvis at the origin.
/// joints2d is in normalized image units (see project_joints).
struct PoseSample {
    Tensor joints2d;  // (17, 2)
    Tensor joints3d;  // (17, 3)
    std::optional<Tensor> mesh_mid;  // (n_mid, 3), the coarsest selected level
    std::optional<Tensor> mesh_top;  // (n_top, 3), the finer selected level
    std::string action;
    std::string subject;
    /// Depth of the pelvis in front of the camera (mm), when known.
    std::optional<double> camera_distance_mm;

    friend bool operator==(const PoseSample&, const PoseSample&) = default;
};

struct Dataset {
    std::vector<PoseSample> samples;
    /// generator config echo, hierarchy checksum, joint names, left/right pairs
    nlohmann::json meta = nlohmann::json::object();

    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }
    bool has_mesh() const { return !samples.empty() && samples.front().mesh_mid.has_value(); }
    /// hierarchy checksum recorded in meta, if any
    std::optional<std::uint64_t> hierarchy_checksum() const;
};

/// Euler limits (radians) for the local rotation at a bone's parent joint,
/// applied as Rx(x) Ry(y) Rz(z).
struct AngleRange {
    std::array<double, 3> lo{0, 0, 0};
    std::array<double, 3> hi{0, 0, 0};
};

std::array<AngleRange, skeleton::kBones> default_angle_ranges();

struct SyntheticGenConfig {
    std::size_t n_samples = 2048;
    std::uint64_t seed = 0;
    std::array<double, skeleton::kBones> bone_length_mm = skeleton::kDefaultBoneLengthMm;
    std::array<AngleRange, skeleton::kBones> angle_range = default_angle_ranges();
    /// body yaw about the vertical axis, radians
    double yaw_lo = -0.8;
    double yaw_hi = 0.8;
    double focal_length = 1000.0;
    double distance_lo_mm = 4000.0;
    double distance_hi_mm = 6000.0;
    double noise_std_2d = 0.0;
    /// 0 disables mesh targets
    std::size_t n_mesh_vertices = 6890;
    std::uint64_t mesh_seed = 0;
    std::vector<std::string> actions{"standing", "walking", "reaching", "sitting", "bending"};
    /// subject i is "S<i+1>" with every bone scaled by subject_scale[i]
    std::vector<double> subject_scale{0.94, 0.97, 1.0, 1.03, 1.06};

    void validate() const;
    nlohmann::json to_json() const;
    static SyntheticGenConfig from_json(const nlohmann::json& j);
};

/// Ranges for one action: the defaults narrowed or shifted per body part.
/// Throws DatasetError for unknown actions.
std::array<AngleRange, skeleton::kBones> action_angle_ranges(
    const std::array<AngleRange, skeleton::kBones>& base, const std::string& action);

/// Joint positions (17, 3) for per-bone Euler angles and a body yaw, pelvis
/// at the origin, body frame x left / y up / z forward.
Tensor forward_kinematics(const std::array<double, skeleton::kBones>& bone_length_mm,
                          const std::array<std::array<double, 3>, skeleton::kBones>& angles,
                          double yaw);

/// Perspective projection with the pelvis at depth `distance_mm` on the
/// optical axis, rescaled by distance / focal so the output is a
/// weak-perspective image in metres: (x, y) * d / (d + z) / 1000.
Tensor project_joints(const Tensor& joints3d, double distance_mm);

Tensor root_center(const Tensor& joints3d);

/// (mesh_top, mesh_mid): dense vertices pooled to the two selected levels.
std::pair<Tensor, Tensor> make_pseudo_gt(const Tensor& mesh_vertices, const CoarseningHierarchy& h);

/// Needs a hierarchy over the matching synthetic mesh when
/// cfg.n_mesh_vertices > 0.
Dataset generate_synthetic(const SyntheticGenConfig& cfg, const CoarseningHierarchy* hierarchy);

/// Deterministic (train, test) partition: a seeded shuffle, the first
/// round(test_fraction * n) indices go to test. Both keep their file order.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double test_fraction,
                                          std::uint64_t seed);

inline constexpr int kDatasetVersion = 1;

void save_dataset(const Dataset& ds, std::ostream& os);
void save_dataset(const Dataset& ds, const std::string& path);
/// Throws DatasetError on version or checksum problems and ParseError (with a
/// line number) on malformed or missing records.
Dataset load_dataset(std::istream& is);
Dataset load_dataset(const std::string& path);

/// FNV-1a digest of the sample lines as written by save_dataset.
std::uint64_t dataset_checksum(const Dataset& ds);

std::string hex64(std::uint64_t v);

}  // namespace hgn
