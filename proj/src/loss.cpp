#include "bytelm/loss.hpp"

#include <json.hpp>

namespace bytelm {

std::string to_metrics_line(const LossReport& report, int64_t step) {
  nlohmann::json components = nlohmann::json::object();
  for (const auto& [key, bits] : report.component_bits)
    components[std::to_string(key.first) + ":" + std::to_string(key.second)] = bits;
  return nlohmann::json{{"step", step},
                        {"loss_bits", report.total_bits},
                        {"active_layers", report.active},
                        {"components", components}}
      .dump();
}

}  // namespace bytelm
