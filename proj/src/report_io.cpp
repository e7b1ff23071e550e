#include "dlmuq/report_io.hpp"

#include <istream>

#include <fmt/format.h>

namespace dlmuq {

nlohmann::json report_to_json(const UncertaintyReport& report) {
  nlohmann::json signals = nlohmann::json::object();
  for (const auto& [name, v] : report.signals) {
    signals[name] = {{"value", v.well_defined ? nlohmann::json(v.value) : nlohmann::json(nullptr)},
                     {"well_defined", v.well_defined}};
  }
  return {{"instance_id", report.instance_id}, {"signals", std::move(signals)}};
}

UncertaintyReport report_from_json(const nlohmann::json& j) {
  UncertaintyReport r;
  r.instance_id = j.at("instance_id").get<std::string>();
  for (const auto& [name, v] : j.at("signals").items()) {
    SignalValue s;
    s.name = name;
    s.well_defined = v.at("well_defined").get<bool>();
    if (s.well_defined) s.value = v.at("value").get<double>();
    r.signals[name] = s;
  }
  return r;
}

std::vector<UncertaintyReport> read_reports(std::istream& in) {
  std::vector<UncertaintyReport> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(report_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(fmt::format("report line {}: {}", line_no, e.what()));
    }
  }
  return out;
}

}  // namespace dlmuq
