#pragma once

#include <map>
#include <string>
#include <vector>

#include "affordrep/encoder.hpp"
#include "affordrep/evalbench.hpp"
#include "json.hpp"

namespace affordrep {

// One probed (or fine-tuned) model evaluated on a test set.
struct ProbeRow {
  std::string stage;   // "probe" or "finetune"
  std::string method;  // pretraining method
  std::string data;    // policy that produced Du: "expert" or "random"
  ProbeReport report;  // report.seed is the pretraining seed
  double heldout_loss = 0.0;
};

nlohmann::json to_json(const ProbeReport& r);
ProbeReport probe_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ProbeRow& r);
ProbeRow probe_row_from_json(const nlohmann::json& j);

// Rows are sorted by (stage, data, method, seed) before formatting, so the
// output only depends on the set of rows.
std::string probe_csv(std::vector<ProbeRow> rows);
// Seed mean and sample std per (stage, data, method); MAE in degrees.
std::string probe_markdown(std::vector<ProbeRow> rows);

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

// Static line chart; log_y plots log10 of positive values.
std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series, bool log_y = false);
// Grouped bar chart: one group per category, one bar per series entry.
std::string svg_bar_chart(const std::string& title, const std::string& y_label,
                          const std::vector<std::string>& categories, const std::vector<Series>& series);

std::vector<LogRow> read_training_log(const std::filesystem::path& path);

}  // namespace affordrep
