#include "affordrep/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <tuple>

#include "affordrep/stats.hpp"

namespace affordrep {

using nlohmann::json;

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> optional_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v, int digits = 6) { return v ? fmt(*v, digits) : std::string(); }

void sort_rows(std::vector<ProbeRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const ProbeRow& a, const ProbeRow& b) {
    return std::tie(a.stage, a.data, a.method, a.report.seed, a.report.town) <
           std::tie(b.stage, b.data, b.method, b.report.seed, b.report.town);
  });
}

std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
constexpr double kW = 720, kH = 420, kLeft = 70, kRight = 170, kTop = 40, kBottom = 50;

std::string svg_header(const std::string& title) {
  std::ostringstream ss;
  ss << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 " << kW
     << ' ' << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  ss << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  ss << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
     << "</text>\n";
  return ss.str();
}

std::string axes(double y0, double y1, const std::string& y_label, bool log_y) {
  std::ostringstream ss;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  ss << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = y0 + (y1 - y0) * k / 4.0;
    const double y = kTop + ph * (1.0 - k / 4.0);
    ss << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << fmt(y, 2) << "\" x2=\"" << kLeft << "\" y2=\"" << fmt(y, 2)
       << "\" stroke=\"black\"/>\n";
    ss << "<text x=\"" << kLeft - 6 << "\" y=\"" << fmt(y + 4, 2) << "\" text-anchor=\"end\">"
       << (log_y ? "1e" + fmt(v, 2) : fmt(v, 3)) << "</text>\n";
  }
  ss << "<text x=\"16\" y=\"" << fmt(kTop + ph / 2, 2) << "\" transform=\"rotate(-90 16 " << fmt(kTop + ph / 2, 2)
     << ")\" text-anchor=\"middle\">" << xml_escape(y_label) << "</text>\n";
  return ss.str();
}

std::string legend(const std::vector<Series>& series) {
  std::ostringstream ss;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double y = kTop + 10 + 18.0 * static_cast<double>(i);
    ss << "<rect x=\"" << kW - kRight + 12 << "\" y=\"" << fmt(y - 9, 2) << "\" width=\"12\" height=\"12\" fill=\""
       << kPalette[i % 8] << "\"/>\n";
    ss << "<text x=\"" << kW - kRight + 30 << "\" y=\"" << fmt(y + 1, 2) << "\">" << xml_escape(series[i].name)
       << "</text>\n";
  }
  return ss.str();
}

void padded_range(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
}

}  // namespace

json to_json(const ProbeReport& r) {
  return {{"town", r.town},
          {"seed", r.seed},
          {"f1_hp", r.f1_hp},
          {"f1_hv", r.f1_hv},
          {"f1_hr", r.f1_hr},
          {"mae_left", optional_json(r.mae.left)},
          {"mae_straight", optional_json(r.mae.straight)},
          {"mae_right", optional_json(r.mae.right)},
          {"mae_pooled", r.mae.pooled},
          {"n_left", r.mae.n_left},
          {"n_straight", r.mae.n_straight},
          {"n_right", r.mae.n_right}};
}

ProbeReport probe_report_from_json(const json& j) {
  ProbeReport r;
  r.town = j.at("town").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.f1_hp = j.at("f1_hp").get<double>();
  r.f1_hv = j.at("f1_hv").get<double>();
  r.f1_hr = j.at("f1_hr").get<double>();
  r.mae.left = optional_from(j.at("mae_left"));
  r.mae.straight = optional_from(j.at("mae_straight"));
  r.mae.right = optional_from(j.at("mae_right"));
  r.mae.pooled = j.at("mae_pooled").get<double>();
  r.mae.n_left = j.at("n_left").get<std::size_t>();
  r.mae.n_straight = j.at("n_straight").get<std::size_t>();
  r.mae.n_right = j.at("n_right").get<std::size_t>();
  return r;
}

json to_json(const ProbeRow& r) {
  return {{"stage", r.stage},
          {"method", r.method},
          {"data", r.data},
          {"heldout_loss", r.heldout_loss},
          {"report", to_json(r.report)}};
}

ProbeRow probe_row_from_json(const json& j) {
  ProbeRow r;
  r.stage = j.at("stage").get<std::string>();
  r.method = j.at("method").get<std::string>();
  r.data = j.at("data").get<std::string>();
  r.heldout_loss = j.at("heldout_loss").get<double>();
  r.report = probe_report_from_json(j.at("report"));
  return r;
}

std::string probe_csv(std::vector<ProbeRow> rows) {
  sort_rows(rows);
  std::ostringstream ss;
  ss << "stage,data,method,seed,town,f1_hp,f1_hv,f1_hr,f1_mean,mae_left,mae_straight,mae_right,mae_pooled,"
        "n_left,n_straight,n_right,heldout_loss\n";
  for (const ProbeRow& r : rows) {
    const ProbeReport& p = r.report;
    ss << r.stage << ',' << r.data << ',' << r.method << ',' << p.seed << ',' << p.town << ',' << fmt(p.f1_hp, 6)
       << ',' << fmt(p.f1_hv, 6) << ',' << fmt(p.f1_hr, 6) << ',' << fmt(p.mean_f1(), 6) << ','
       << fmt_opt(p.mae.left) << ',' << fmt_opt(p.mae.straight) << ',' << fmt_opt(p.mae.right) << ','
       << fmt(p.mae.pooled, 6) << ',' << p.mae.n_left << ',' << p.mae.n_straight << ',' << p.mae.n_right << ','
       << fmt(r.heldout_loss, 6) << '\n';
  }
  return ss.str();
}

std::string probe_markdown(std::vector<ProbeRow> rows) {
  sort_rows(rows);
  std::ostringstream ss;
  ss << "| Stage | Data | Method | Seeds | F1 hp | F1 hv | F1 hr | MAE left (deg) | MAE straight (deg) | "
        "MAE right (deg) |\n|---|---|---|---|---|---|---|---|---|---|\n";
  const double deg = 180.0 / std::numbers::pi;
  auto cell = [](const std::vector<double>& v, double scale, int digits) {
    if (v.empty()) return std::string("n/a");
    std::vector<double> s;
    for (double x : v) s.push_back(x * scale);
    return fmt(mean(s), digits) + " ± " + fmt(sample_std(s), digits);
  };
  for (std::size_t i = 0; i < rows.size();) {
    std::size_t j = i;
    std::vector<double> hp, hv, hr, ml, ms, mr;
    while (j < rows.size() && rows[j].stage == rows[i].stage && rows[j].data == rows[i].data &&
           rows[j].method == rows[i].method) {
      const ProbeReport& p = rows[j].report;
      hp.push_back(p.f1_hp);
      hv.push_back(p.f1_hv);
      hr.push_back(p.f1_hr);
      if (p.mae.left) ml.push_back(*p.mae.left);
      if (p.mae.straight) ms.push_back(*p.mae.straight);
      if (p.mae.right) mr.push_back(*p.mae.right);
      ++j;
    }
    ss << "| " << rows[i].stage << " | " << rows[i].data << " | " << rows[i].method << " | " << j - i << " | "
       << cell(hp, 1.0, 3) << " | " << cell(hv, 1.0, 3) << " | " << cell(hr, 1.0, 3) << " | " << cell(ml, deg, 2)
       << " | " << cell(ms, deg, 2) << " | " << cell(mr, deg, 2) << " |\n";
    i = j;
  }
  return ss.str();
}

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series, bool log_y) {
  auto ty = [&](double v) { return log_y ? std::log10(std::max(v, 1e-12)) : v; };
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, ty(y));
      y1 = std::max(y1, ty(y));
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  padded_range(x0, x1);
  padded_range(y0, y1);
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  std::ostringstream ss;
  ss << svg_header(title) << axes(y0, y1, y_label, log_y);
  for (int k = 0; k <= 4; ++k) {
    const double v = x0 + (x1 - x0) * k / 4.0;
    ss << "<text x=\"" << fmt(kLeft + pw * k / 4.0, 2) << "\" y=\"" << kH - kBottom + 16
       << "\" text-anchor=\"middle\">" << fmt(v, 0) << "</text>\n";
  }
  ss << "<text x=\"" << fmt(kLeft + pw / 2, 2) << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">"
     << xml_escape(x_label) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    ss << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << kPalette[i % 8] << "\" points=\"";
    bool first = true;
    for (const auto& [x, y] : series[i].points) {
      const double px = kLeft + pw * (x - x0) / (x1 - x0);
      const double py = kTop + ph * (1.0 - (ty(y) - y0) / (y1 - y0));
      ss << (first ? "" : " ") << fmt(px, 2) << ',' << fmt(py, 2);
      first = false;
    }
    ss << "\"/>\n";
  }
  ss << legend(series) << "</svg>\n";
  return ss.str();
}

std::string svg_bar_chart(const std::string& title, const std::string& y_label,
                          const std::vector<std::string>& categories, const std::vector<Series>& series) {
  // series[i].points[c] = (category index, value)
  double y1 = 0.0;
  for (const auto& s : series)
    for (const auto& p : s.points) y1 = std::max(y1, p.second);
  if (y1 <= 0.0) y1 = 1.0;
  y1 *= 1.1;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  std::ostringstream ss;
  ss << svg_header(title) << axes(0.0, y1, y_label, false);
  const double group = pw / std::max<std::size_t>(1, categories.size());
  const double bar = group * 0.8 / std::max<std::size_t>(1, series.size());
  for (std::size_t c = 0; c < categories.size(); ++c)
    ss << "<text x=\"" << fmt(kLeft + group * (c + 0.5), 2) << "\" y=\"" << kH - kBottom + 16
       << "\" text-anchor=\"middle\">" << xml_escape(categories[c]) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i)
    for (const auto& [cx, v] : series[i].points) {
      const double x = kLeft + group * cx + group * 0.1 + bar * static_cast<double>(i);
      const double h = ph * v / y1;
      ss << "<rect x=\"" << fmt(x, 2) << "\" y=\"" << fmt(kTop + ph - h, 2) << "\" width=\"" << fmt(bar, 2)
         << "\" height=\"" << fmt(h, 2) << "\" fill=\"" << kPalette[i % 8] << "\"/>\n";
    }
  ss << legend(series) << "</svg>\n";
  return ss.str();
}

std::vector<LogRow> read_training_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read training log " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "iteration,loss,lr") throw std::runtime_error("unexpected training log header in " + path.string());
  std::vector<LogRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LogRow r;
    char c1 = 0, c2 = 0;
    std::istringstream ls(line);
    if (!(ls >> r.iteration >> c1 >> r.loss >> c2 >> r.lr) || c1 != ',' || c2 != ',')
      throw std::runtime_error("malformed training log line in " + path.string());
    rows.push_back(r);
  }
  return rows;
}

}  // namespace affordrep
