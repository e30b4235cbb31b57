#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "hgn/graph.hpp"
#include "hgn/model.hpp"
#include "hgn/training.hpp"

namespace hgn {

/// Truncated, corrupt or foreign checkpoint bytes.
class CheckpointFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Checkpoint and dataset were built on different hierarchies, or a file
/// was written by an incompatible version.
class CompatibilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const HGNConfig& c);
HGNConfig hgn_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Graph& g);
Graph graph_from_json(const nlohmann::json& j);

/// Source graph, every level (graph + cluster map), targets and picks.
nlohmann::json to_json(const CoarseningHierarchy& h);
/// Rebuilds the hierarchy and checks it against the stored checksum.
CoarseningHierarchy hierarchy_from_json(const nlohmann::json& j);

struct Checkpoint {
    HGNParams model;
    CoarseningHierarchy hierarchy;
    std::optional<AdamState> optimizer;
    nlohmann::json run_config = nlohmann::json::object();
};

// Layout: 8-byte magic "HGNCKPT1", u64 header length, JSON header, then
// every tensor listed in the header as little-endian float64 in order, then
// a u64 FNV-1a digest of all preceding bytes. Integers are little-endian.
void save_checkpoint(std::ostream& os, const HGNParams& model, const CoarseningHierarchy& hierarchy,
                     const AdamState* optimizer = nullptr,
                     const nlohmann::json& run_config = nlohmann::json::object());
void save_checkpoint(const std::string& path, const HGNParams& model,
                     const CoarseningHierarchy& hierarchy, const AdamState* optimizer = nullptr,
                     const nlohmann::json& run_config = nlohmann::json::object());

/// Throws CheckpointFormatError for truncated, corrupt or unknown files and
/// CompatibilityError for a newer format version.
Checkpoint load_checkpoint(std::istream& is);
Checkpoint load_checkpoint(const std::string& path);

/// Throws CompatibilityError unless the dataset was generated on this
/// checkpoint's hierarchy. Datasets without a recorded checksum pass.
void require_compatible(const Checkpoint& ckpt, const Dataset& ds);

}  // namespace hgn
