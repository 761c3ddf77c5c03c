#ifndef SIAG_IO_HPP
#define SIAG_IO_HPP

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "siag/harness.hpp"

namespace siag {

using json = nlohmann::json;

json to_json(const ProblemSpec& spec);
json to_json(const ScheduleConfig& config);
json to_json(const StepConfig& steps);
json to_json(const ExperimentConfig& config);
json to_json(const AnalysisConstants& c);

/// Parses a schedule description. `n` fills in a missing "n" field when positive.
ScheduleConfig schedule_from_json(const json& j, int n = 0, std::uint64_t fallback_seed = 0);
/// Parses and validates an experiment config; throws ConfigError on any problem.
ExperimentConfig config_from_json(const json& j);

/// Applies a dotted-path override "a.b.c=value". The value is parsed as JSON when
/// possible (numbers, booleans, arrays) and taken as a string otherwise.
void apply_override(json& j, std::string_view assignment);

json load_json_file(const std::filesystem::path& path);
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);
/// Hash of the canonical (sorted-key, compact) JSON form of a config.
std::string config_hash(const ExperimentConfig& config);
/// Hash of the bit patterns of (t, mean, stderr, trials) of every curve point.
std::string curve_hash(const std::vector<GapEstimate>& curve);

/// CSV with header t,mean,stderr,trials; values printed with 17 significant digits.
void write_curve_csv(std::ostream& out, const std::vector<GapEstimate>& curve);
std::vector<GapEstimate> read_curve_csv(std::istream& in);

/// Manifest embedding the config, hashes and run metadata.
json manifest(const ResultSet& result);

/// Writes `content` to a sibling temp file and renames it over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view content);

}  // namespace siag

#endif  // SIAG_IO_HPP
