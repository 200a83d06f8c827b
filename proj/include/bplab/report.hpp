#pragma once

#include <nlohmann/json.hpp>
#include <string>

namespace bplab {

/// Serializable result of one metric run. `timestamp` is informational and
/// never enters a hash.
struct MetricReport {
  std::string metric;
  nlohmann::json payload;
  nlohmann::json config;  // everything that determined the payload
  nlohmann::json seeds;
  std::string timestamp;

  /// SHA-256 of the canonical config JSON.
  std::string config_hash() const;

  nlohmann::json to_json(bool include_timestamp = true) const;
  static MetricReport from_json(const nlohmann::json& j);
};

/// UTC ISO-8601 time; honours SOURCE_DATE_EPOCH when set.
std::string utc_timestamp();

}  // namespace bplab
