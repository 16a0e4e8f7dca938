#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rwtree/environment.hpp"

namespace rwtree {

/// Everything needed to re-run one command. The spec is kept inline so a
/// saved config does not depend on the spec file still being around.
struct RunConfig {
  std::string command;  // claim id for verify
  std::string spec_path;
  std::string spec_label;
  nlohmann::json spec = nullptr;  // atoms + seed, as in a spec file
  std::uint64_t seed = 1;
  std::string out_dir;
  unsigned workers = 1;
  nlohmann::json params = nlohmann::json::object();
  std::map<std::string, double> tolerances;

  double tol(const std::string& key, double fallback) const;
  double param(const std::string& key, double fallback) const;
  std::vector<double> param_list(const std::string& key, std::vector<double> fallback) const;
  bool has_spec() const { return !spec.is_null(); }
  SpecFile spec_file() const;
};

nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& doc);
/// Reads the spec file into config.spec and sets the label from the file name.
void attach_spec(RunConfig& config, const std::string& path);

struct ClaimInfo {
  std::string id;
  std::string anchor;
  std::string regime;  // any, none, homogeneous, finite-kappa, kappa<2, kappa=2, kappa>2
  std::string statement;
};

/// Parsed from the checked-in registry; throws ConfigError on an entry
/// without an anchor.
const std::vector<ClaimInfo>& claim_registry();
const ClaimInfo& find_claim(const std::string& id);
bool claim_applies(const ClaimInfo& claim, const EnvironmentSpec& spec);

enum class Status { Pass, Fail, Info };
std::string to_string(Status status);

struct CsvTable {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

void write_csv(const std::string& path, const CsvTable& table);

struct VerificationReport {
  std::string claim_id;
  std::string anchor;
  std::string spec_label;
  std::string regime;
  double estimate = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double predicted = 0.0;
  std::string tolerance;
  Status status = Status::Fail;
  double runtime_seconds = 0.0;
  std::string detail;
  std::vector<CsvTable> tables;
};

nlohmann::json to_json(const VerificationReport& report);
VerificationReport report_from_json(const nlohmann::json& doc);

/// Runs the pipeline behind `claim_id` and, when config.out_dir is set,
/// writes <claim>.csv tables, <claim>.config.json and <claim>.report.json.
/// Throws RegimeMismatch when the spec is outside the claim's regime.
VerificationReport verify(const std::string& claim_id, const RunConfig& config);

/// CSV summary with one row per report, sorted by claim and spec. Runtimes
/// are left out so that reruns give the same bytes.
std::string report_bundle(std::span<const VerificationReport> reports);

/// 0 when nothing failed, 1 otherwise.
int exit_code(std::span<const VerificationReport> reports);

}  // namespace rwtree
