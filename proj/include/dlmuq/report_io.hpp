#pragma once

#include <iosfwd>
#include <vector>

#include <json.hpp>

#include "dlmuq/signals.hpp"

namespace dlmuq {

/// {"instance_id":..., "signals":{name:{"value":..., "well_defined":...}}};
/// undefined values serialize as null.
nlohmann::json report_to_json(const UncertaintyReport& report);
UncertaintyReport report_from_json(const nlohmann::json& j);
std::vector<UncertaintyReport> read_reports(std::istream& in);

}  // namespace dlmuq
