#pragma once

#include <iosfwd>
#include <string>

#include <json.hpp>

#include "shapfor/sampler.hpp"
#include "shapfor/sensitivity.hpp"

namespace shapfor {

/// Header row required; `response` names the y column, the remaining columns
/// are inputs in header order. Errors name the offending line and column.
Dataset read_csv(std::istream& in, const std::string& response = "y");
Dataset read_csv_file(const std::string& path, const std::string& response = "y");
void write_csv(std::ostream& out, const Dataset& data, const std::string& response = "y");

nlohmann::json report_to_json(const SensitivityReport& report);
/// Aligned columns; numbers are printed with 17 significant digits so they
/// match the JSON values exactly.
std::string report_to_text(const SensitivityReport& report);
/// Rows: input,index_type,point,lo,hi for V,T,S and their normalized forms.
void write_plot_csv(std::ostream& out, const SensitivityReport& report);
/// Per-draw values for every index (requires keep_draws).
void write_draws_csv(std::ostream& out, const SensitivityReport& report);

std::string format_real(double v);

}  // namespace shapfor
