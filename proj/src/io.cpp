#include "siag/io.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "siag/error.hpp"

namespace siag {

namespace {

constexpr std::uint64_t kProblemSeedTag = 0x70726f62;   // "prob"
constexpr std::uint64_t kScheduleSeedTag = 0x73636864;  // "schd"

std::string_view step_kind_name(StepConfig::Kind k) {
  switch (k) {
    case StepConfig::Kind::kConstant: return "constant";
    case StepConfig::Kind::kInverseT: return "inverse_t";
    case StepConfig::Kind::kTheorem: return "theorem";
  }
  return "unknown";
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  }
}

template <typename T>
T require(const json& j, const char* key, const char* where) {
  if (!j.is_object() || !j.contains(key))
    throw ConfigError(std::string(where) + "." + key + " is required");
  return get_or<T>(j, key, T{});
}

}  // namespace

json to_json(const ProblemSpec& spec) {
  return {{"n", spec.n},
          {"d", spec.d},
          {"p", spec.p},
          {"noise_std", spec.noise_std},
          {"seed", spec.master_seed}};
}

json to_json(const ScheduleConfig& c) {
  json j = {{"kind", std::string(to_string(c.kind))},
            {"n", c.n},
            {"cover_T", c.cover_T},
            {"Ti_range", {c.ti_min, c.ti_max}},
            {"active_per_iter", c.active_per_iter},
            {"seed", c.seed}};
  if (c.active_fraction > 0.0) j["active_fraction"] = c.active_fraction;
  if (!c.caps.empty()) j["caps"] = c.caps;
  if (!c.draw_weights.empty()) j["draw_weights"] = c.draw_weights;
  return j;
}

json to_json(const StepConfig& s) {
  json j = {{"kind", std::string(step_kind_name(s.kind))}};
  if (s.kind == StepConfig::Kind::kConstant) {
    j["eta"] = s.eta;
  } else {
    j["beta"] = s.beta;
    j["gamma"] = s.gamma;
  }
  return j;
}

json to_json(const ExperimentConfig& c) {
  json j = {{"seed", c.seed},
            {"problem", to_json(c.problem)},
            {"schedule", to_json(c.schedule)},
            {"method", std::string(to_string(c.method))},
            {"sgd_normalization", c.sgd_normalization == SgdNormalization::kActive ? "active" : "n"},
            {"steps", to_json(c.steps)},
            {"horizon", c.horizon},
            {"trials", c.trials},
            {"noise_samples", c.noise_samples}};
  if (c.grid.kind == RecordGrid::Kind::kLog)
    j["grid"] = {{"kind", "log"}, {"points", c.grid.points}};
  else
    j["grid"] = {{"kind", "linear"}, {"record_every", c.grid.record_every}};
  if (!c.w0.empty()) j["w0"] = c.w0;
  return j;
}

json to_json(const AnalysisConstants& c) {
  return {{"mu", c.mu},           {"L", c.L},           {"sigma2", c.sigma2},
          {"n", c.n},             {"T", c.T},           {"beta", c.beta},
          {"gamma", c.gamma},     {"gamma_min", c.gamma_min}, {"C_L", c.C_L},
          {"rho_bar", c.rho_bar}, {"delta1", c.delta1}, {"delta2", c.delta2},
          {"E0", c.E0}};
}

ScheduleConfig schedule_from_json(const json& j, int n, std::uint64_t fallback_seed) {
  if (!j.is_object()) throw ConfigError("schedule must be an object");
  ScheduleConfig c;
  c.kind = schedule_kind_from_string(require<std::string>(j, "kind", "schedule"));
  c.n = get_or<int>(j, "n", n);
  if (n > 0 && c.n != n) throw ConfigError("schedule.n disagrees with problem.n");
  c.cover_T = get_or<int>(j, "cover_T", c.cover_T);
  if (j.contains("Ti_range")) {
    const auto range = get_or<std::vector<int>>(j, "Ti_range", {});
    if (range.size() != 2) throw ConfigError("schedule.Ti_range must be [min, max]");
    c.ti_min = range[0];
    c.ti_max = range[1];
  }
  c.active_per_iter = get_or<int>(j, "active_per_iter", c.active_per_iter);
  c.active_fraction = get_or<double>(j, "active_fraction", c.active_fraction);
  if (j.contains("seed"))
    c.seed = get_or<std::uint64_t>(j, "seed", 0);
  else
    c.seed = derive_key(fallback_seed, {kScheduleSeedTag});
  c.caps = get_or<std::vector<int>>(j, "caps", {});
  c.draw_weights = get_or<std::vector<double>>(j, "draw_weights", {});
  c.validate();
  return c;
}

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  if (!j.contains("seed") || !j.at("seed").is_number_integer() ||
      (!j.at("seed").is_number_unsigned() && j.at("seed").get<long long>() < 0))
    throw ConfigError("config.seed is required and must be a non-negative integer");
  c.seed = j.at("seed").get<std::uint64_t>();

  const json& pj = j.contains("problem") ? j.at("problem") : throw ConfigError("config.problem is required");
  c.problem.n = require<int>(pj, "n", "problem");
  c.problem.d = get_or<int>(pj, "d", 20);
  c.problem.p = get_or<int>(pj, "p", 10);
  c.problem.noise_std = get_or<double>(pj, "noise_std", 0.1);
  c.problem.master_seed = pj.contains("seed") ? get_or<std::uint64_t>(pj, "seed", 0)
                                              : derive_key(c.seed, {kProblemSeedTag});
  c.problem.validate();

  if (!j.contains("schedule")) throw ConfigError("config.schedule is required");
  c.schedule = schedule_from_json(j.at("schedule"), c.problem.n, c.seed);

  c.method = method_from_string(get_or<std::string>(j, "method", "sIAG"));
  const auto norm = get_or<std::string>(j, "sgd_normalization", "n");
  if (norm == "n")
    c.sgd_normalization = SgdNormalization::kWorkers;
  else if (norm == "active")
    c.sgd_normalization = SgdNormalization::kActive;
  else
    throw ConfigError("sgd_normalization must be 'n' or 'active'");

  if (!j.contains("steps")) throw ConfigError("config.steps is required");
  const json& sj = j.at("steps");
  const auto kind = require<std::string>(sj, "kind", "steps");
  if (kind == "constant") {
    c.steps.kind = StepConfig::Kind::kConstant;
    c.steps.eta = require<double>(sj, "eta", "steps");
  } else if (kind == "inverse_t") {
    c.steps.kind = StepConfig::Kind::kInverseT;
    c.steps.beta = require<double>(sj, "beta", "steps");
    c.steps.gamma = require<double>(sj, "gamma", "steps");
  } else if (kind == "theorem") {
    c.steps.kind = StepConfig::Kind::kTheorem;
    c.steps.beta = require<double>(sj, "beta", "steps");
    c.steps.gamma = get_or<double>(sj, "gamma", 0.0);
  } else {
    throw ConfigError("steps.kind must be constant, inverse_t or theorem");
  }

  c.horizon = get_or<long>(j, "horizon", c.horizon);
  c.trials = get_or<long>(j, "trials", c.trials);
  c.noise_samples = get_or<long>(j, "noise_samples", c.noise_samples);
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    const auto gk = get_or<std::string>(g, "kind", "log");
    if (gk == "log") {
      c.grid.kind = RecordGrid::Kind::kLog;
      c.grid.points = get_or<int>(g, "points", c.grid.points);
    } else if (gk == "linear") {
      c.grid.kind = RecordGrid::Kind::kLinear;
      c.grid.record_every = get_or<long>(g, "record_every", c.grid.record_every);
    } else {
      throw ConfigError("grid.kind must be log or linear");
    }
  }
  c.w0 = get_or<std::vector<double>>(j, "w0", {});
  c.validate();
  return c;
}

void apply_override(json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override must look like key.path=value: '" + std::string(assignment) + "'");
  const std::string path(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("empty key in override path '" + path + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("'" + path.string() + "' is not valid JSON");
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides) {
  json j = load_json_file(path);
  // a manifest embeds its config under "config"
  if (j.is_object() && j.contains("config") && !j.contains("problem")) j = j.at("config");
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256 failed");
  std::ostringstream hex;
  for (unsigned int k = 0; k < len; ++k)
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[k]);
  return hex.str();
}

std::string config_hash(const ExperimentConfig& config) {
  return sha256_hex(to_json(config).dump());
}

std::string curve_hash(const std::vector<GapEstimate>& curve) {
  std::string bytes;
  auto put = [&](const auto& v) {
    char buf[sizeof v];
    std::memcpy(buf, &v, sizeof v);
    bytes.append(buf, sizeof v);
  };
  for (const auto& g : curve) {
    put(g.t);
    put(g.mean);
    put(g.std_err);
    put(g.trials);
  }
  return sha256_hex(bytes);
}

void write_curve_csv(std::ostream& out, const std::vector<GapEstimate>& curve) {
  out << "t,mean,stderr,trials\n";
  out << std::setprecision(17);
  for (const auto& g : curve) out << g.t << ',' << g.mean << ',' << g.std_err << ',' << g.trials << '\n';
}

std::vector<GapEstimate> read_curve_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "t,mean,stderr,trials")
    throw IoError("curve CSV: unexpected header");
  std::vector<GapEstimate> curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    GapEstimate g;
    if (std::sscanf(line.c_str(), "%ld,%lf,%lf,%ld", &g.t, &g.mean, &g.std_err, &g.trials) != 4)
      throw IoError("curve CSV: malformed row '" + line + "'");
    curve.push_back(g);
  }
  return curve;
}

json manifest(const ResultSet& r) {
  json j = {{"config", to_json(r.config)},
            {"config_hash", r.config_hash},
            {"curve_hash", r.curve_hash},
            {"wall_time_s", r.wall_time_s},
            {"observed_max_staleness", r.observed_max_staleness},
            {"certified_T", r.certified_T},
            {"E0", r.E0},
            {"recorded_points", r.curve.size()},
            {"grid", r.config.grid.kind == RecordGrid::Kind::kLog ? "log" : "linear"}};
  if (r.constants) j["constants"] = to_json(*r.constants);
  return j;
}

void atomic_write(const std::filesystem::path& path, std::string_view content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("write to '" + tmp.string() + "' failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename onto '" + path.string() + "'");
  }
}

}  // namespace siag
