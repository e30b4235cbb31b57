#pragma once

#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hgn/data.hpp"
#include "hgn/model.hpp"
#include "hgn/training.hpp"

namespace hgn::cli {

enum ExitCode : int {
    kOk = 0,
    kParse = 2,
    kCoarsening = 3,
    kNumeric = 4,
    kCompatibility = 5,
    kUsage = 64,
};

/// Bad command line (exit 64).
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Bad configuration value (exit 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Flat key=value run configuration. Every key has a default; layers are
/// applied in call order, so load defaults, then a file, then flags.
class RunConfig {
public:
    RunConfig();

    /// Throws UsageError for an unknown key.
    void set(const std::string& key, const std::string& value);
    /// "key = value" lines; '#' starts a comment. Malformed lines throw
    /// ParseError and unknown keys ConfigError, both with the line number.
    void merge(std::istream& is);
    void merge_file(const std::string& path);

    bool has(const std::string& key) const { return values_.contains(key); }
    const std::string& str(const std::string& key) const;
    std::size_t size(const std::string& key) const;
    std::uint64_t u64(const std::string& key) const;
    double real(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::vector<std::size_t> sizes(const std::string& key) const;
    std::vector<double> reals(const std::string& key) const;
    std::vector<std::string> words(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }
    /// The effective configuration, key -> value text.
    nlohmann::json echo() const;
    /// Same content in the key = value file format.
    std::string text() const;

    HGNConfig model_config() const;
    TrainConfig train_config() const;
    SyntheticGenConfig gen_config() const;
    EvalOptions eval_options() const;

private:
    std::map<std::string, std::string> values_;
};

int cmd_coarsen(const RunConfig& cfg, std::ostream& out);
int cmd_gen_data(const RunConfig& cfg, std::ostream& out);
int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_eval(const RunConfig& cfg, std::ostream& out);
int cmd_param_count(const RunConfig& cfg, std::ostream& out);

/// Parses argv, runs one subcommand and maps errors to exit codes.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hgn::cli
