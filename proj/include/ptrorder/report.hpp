#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ptrorder/metrics.hpp"
#include "ptrorder/training.hpp"

namespace ptrorder {

inline ConfigEntries metric_entries(const MetricsReport& r) {
  return {
      {"pm_p", format_double(r.pm.p)},     {"pm_r", format_double(r.pm.r)},
      {"pm_f", format_double(r.pm.f)},     {"lsr_p", format_double(r.lsr.p)},
      {"lsr_r", format_double(r.lsr.r)},   {"lsr_f", format_double(r.lsr.f)},
      {"pmr", format_double(r.pmr)},       {"head_acc", format_double(r.head_acc)},
      {"tail_acc", format_double(r.tail_acc)}, {"count", std::to_string(r.count)},
  };
}

// `key=value` lines: metrics first, then `config.<key>` echo lines and any
// extra run settings as `run.<key>`.
inline std::string report_text(const MetricsReport& r, const TrainConfig& cfg, const ConfigEntries& run = {}) {
  std::string out;
  for (const auto& [k, v] : metric_entries(r)) out += k + "=" + v + "\n";
  for (const auto& [k, v] : config_entries(cfg)) out += "config." + k + "=" + v + "\n";
  for (const auto& [k, v] : run) out += "run." + k + "=" + v + "\n";
  return out;
}

inline nlohmann::ordered_json metrics_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["pm"] = {{"p", r.pm.p}, {"r", r.pm.r}, {"f", r.pm.f}};
  j["lsr"] = {{"p", r.lsr.p}, {"r", r.lsr.r}, {"f", r.lsr.f}};
  j["pmr"] = r.pmr;
  j["head_acc"] = r.head_acc;
  j["tail_acc"] = r.tail_acc;
  j["count"] = r.count;
  return j;
}

inline nlohmann::ordered_json config_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config_entries(cfg)) j[k] = v;
  return j;
}

inline std::string report_json(const MetricsReport& r, const TrainConfig& cfg, const ConfigEntries& run = {}) {
  nlohmann::ordered_json j;
  j["metrics"] = metrics_json(r);
  j["config"] = config_json(cfg);
  nlohmann::ordered_json rj = nlohmann::ordered_json::object();
  for (const auto& [k, v] : run) rj[k] = v;
  j["run"] = rj;
  return j.dump(2) + "\n";
}

}  // namespace ptrorder
