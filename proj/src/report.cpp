#include "bplab/report.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <stdexcept>

#include "bplab/io.hpp"

namespace bplab {

std::string MetricReport::config_hash() const { return io::sha256_hex(config.dump()); }

nlohmann::json MetricReport::to_json(bool include_timestamp) const {
  nlohmann::json j{
      {"metric", metric}, {"payload", payload}, {"config", config}, {"config_hash", config_hash()}, {"seeds", seeds}};
  if (include_timestamp) j["timestamp"] = timestamp;
  return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  try {
    r.metric = j.at("metric").get<std::string>();
    r.payload = j.at("payload");
    r.config = j.at("config");
    r.seeds = j.value("seeds", nlohmann::json::object());
    r.timestamp = j.value("timestamp", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("not a metric report: ") + e.what());
  }
  if (j.contains("config_hash") && j.at("config_hash").get<std::string>() != r.config_hash()) {
    throw std::invalid_argument("metric report config_hash does not match its config");
  }
  return r;
}

std::string utc_timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::strtoll(env, nullptr, 10));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace bplab
