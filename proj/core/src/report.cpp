#include "tdcount/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "tdcount/binio.hpp"
#include "tdcount/errors.hpp"

namespace tdc::report {
namespace {

using nlohmann::json;

json metrics_json(const EvalMetrics& m) {
  return {{"game", m.game}, {"rmse", m.rmse}, {"mae", m.mae}, {"images", m.images}};
}

EvalMetrics metrics_from(const json& j) {
  EvalMetrics m;
  m.game = j.at("game").get<std::array<double, kGameLevels>>();
  m.rmse = j.at("rmse").get<double>();
  m.mae = j.at("mae").get<double>();
  m.images = j.at("images").get<int>();
  return m;
}

std::string check(const EvalMetrics& m, const std::string& where) {
  if (m.images == 0) return "";
  if (m.game[0] != m.mae) return where + ": GAME(0) " + fmt(m.game[0], 17) + " != MAE " + fmt(m.mae, 17);
  for (int l = 0; l + 1 < kGameLevels; ++l)
    if (m.game[static_cast<std::size_t>(l) + 1] < m.game[static_cast<std::size_t>(l)] * (1.0 - 1e-12) - 1e-12)
      return where + ": GAME(" + std::to_string(l + 1) + ") < GAME(" + std::to_string(l) + ")";
  return "";
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;

std::string svg_open(const std::string& title) {
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
    << "</text>\n";
  return o.str();
}

std::string axes(double y_min, double y_max, const std::string& x_label, const std::string& y_label) {
  std::ostringstream o;
  const double x0 = kLeft, x1 = kW - kRight, y0 = kH - kBottom, y1 = kTop;
  o << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1 << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = y_min + (y_max - y_min) * t / 4.0;
    const double y = y0 - (y0 - y1) * t / 4.0;
    o << "<text x=\"" << x0 - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt(v, 3) << "</text>\n";
  }
  o << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << xml_escape(x_label)
    << "</text>\n";
  o << "<text x=\"16\" y=\"" << (y0 + y1) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (y0 + y1) / 2 << ")\">" << xml_escape(y_label) << "</text>\n";
  return o.str();
}

std::pair<double, double> value_range(const std::vector<double>& v) {
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (double x : v) {
    if (!std::isfinite(x)) continue;
    lo = first ? x : std::min(lo, x);
    hi = first ? x : std::max(hi, x);
    first = false;
  }
  lo = std::min(lo, 0.0);
  if (hi <= lo) hi = lo + 1.0;
  return {lo, hi};
}

}  // namespace

std::string fmt(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

std::string MetricsReport::integrity_error() const {
  if (auto e = check(best, "best"); !e.empty()) return e;
  for (const auto& ep : epochs)
    if (ep.evaluated)
      if (auto e = check(ep.test, "epoch " + std::to_string(ep.epoch)); !e.empty()) return e;
  return "";
}

std::string metrics_csv(const MetricsReport& r) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& e : r.epochs) {
    if (!e.evaluated) continue;
    rows.push_back({r.run_id, std::to_string(e.epoch), fmt(e.train_loss, 10), fmt(e.reg_loss, 10),
                    fmt(e.aux_loss, 10), fmt(e.test.game[0], 10), fmt(e.test.game[1], 10),
                    fmt(e.test.game[2], 10), fmt(e.test.game[3], 10), fmt(e.test.rmse, 10),
                    fmt(e.test.mae, 10), fmt(e.seconds, 6)});
  }
  return csv_table({"run_id", "epoch", "train_loss", "reg_loss", "aux_loss", "game0", "game1", "game2",
                    "game3", "rmse", "mae", "seconds"},
                   rows);
}

std::string report_text(const MetricsReport& r, const std::string& title) {
  std::ostringstream o;
  o << title << "\n"
    << "run id:       " << r.run_id << "\n"
    << "config hash:  " << r.config_hash << "\n"
    << "split:        " << r.split << " (" << r.best.images << " images)\n"
    << "best epoch:   " << r.best_epoch << "\n"
    << "final train loss: " << fmt(r.final_train_loss, 6) << "\n"
    << "wall clock:   " << fmt(r.wall_seconds, 4) << " s\n\n";
  o << text_table({"GAME(0)", "GAME(1)", "GAME(2)", "GAME(3)", "RMSE", "MAE"},
                  {{fmt(r.best.game[0]), fmt(r.best.game[1]), fmt(r.best.game[2]), fmt(r.best.game[3]),
                    fmt(r.best.rmse), fmt(r.best.mae)}});
  return o.str();
}

std::string to_json(const MetricsReport& r) {
  json j;
  j["run_id"] = r.run_id;
  j["config_hash"] = r.config_hash;
  j["split"] = r.split;
  j["best_epoch"] = r.best_epoch;
  j["best"] = metrics_json(r.best);
  j["final_train_loss"] = r.final_train_loss;
  j["wall_seconds"] = r.wall_seconds;
  j["step_losses"] = r.step_losses;
  json eps = json::array();
  for (const auto& e : r.epochs) {
    json je = {{"epoch", e.epoch},       {"train_loss", e.train_loss}, {"reg_loss", e.reg_loss},
               {"aux_loss", e.aux_loss}, {"evaluated", e.evaluated},   {"seconds", e.seconds}};
    if (e.evaluated) je["test"] = metrics_json(e.test);
    eps.push_back(je);
  }
  j["epochs"] = eps;
  return j.dump(2) + "\n";
}

MetricsReport from_json(const std::string& text, const std::string& source) {
  try {
    const json j = json::parse(text);
    MetricsReport r;
    r.run_id = j.at("run_id").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.best_epoch = j.at("best_epoch").get<int>();
    r.best = metrics_from(j.at("best"));
    r.final_train_loss = j.at("final_train_loss").get<double>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.step_losses = j.at("step_losses").get<std::vector<double>>();
    for (const auto& je : j.at("epochs")) {
      EpochRecord e;
      e.epoch = je.at("epoch").get<int>();
      e.train_loss = je.at("train_loss").get<double>();
      e.reg_loss = je.at("reg_loss").get<double>();
      e.aux_loss = je.at("aux_loss").get<double>();
      e.evaluated = je.at("evaluated").get<bool>();
      e.seconds = je.at("seconds").get<double>();
      if (e.evaluated) e.test = metrics_from(je.at("test"));
      r.epochs.push_back(e);
    }
    return r;
  } catch (const json::exception& e) {
    throw ParseError(source + ": " + e.what());
  }
}

void write_run(const MetricsReport& r, const std::string& title, const std::filesystem::path& dir) {
  binio::write_file(dir / "metrics.csv", metrics_csv(r));
  binio::write_file(dir / "report.txt", report_text(r, title));
  binio::write_file(dir / "report.json", to_json(r));
  std::vector<double> train, game0;
  for (const auto& e : r.epochs) {
    train.push_back(e.train_loss);
    game0.push_back(e.evaluated ? e.test.game[0] : NAN);
  }
  binio::write_file(dir / "loss.svg", line_plot_svg(title + ": training loss", "epoch", "loss", {{"train", train}}));
  binio::write_file(dir / "game0.svg", line_plot_svg(title + ": test GAME(0)", "epoch", "GAME(0)", {{"test", game0}}));
}

MetricsReport read_run(const std::filesystem::path& dir) {
  const auto path = dir / "report.json";
  if (!std::filesystem::exists(path)) throw MissingArtifact("no report.json in " + dir.string());
  return from_json(binio::read_file(path), path.string());
}

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series) {
  std::vector<double> all;
  std::size_t n = 1;
  for (const auto& s : series) {
    all.insert(all.end(), s.values.begin(), s.values.end());
    n = std::max(n, s.values.size());
  }
  const auto [lo, hi] = value_range(all);
  const double x0 = kLeft, x1 = kW - kRight, y0 = kH - kBottom, y1 = kTop;
  auto px = [&](std::size_t i) { return n == 1 ? (x0 + x1) / 2 : x0 + (x1 - x0) * static_cast<double>(i) / (n - 1); };
  auto py = [&](double v) { return y0 - (y0 - y1) * (v - lo) / (hi - lo); };
  std::ostringstream o;
  o << svg_open(title) << axes(lo, hi, x_label, y_label);
  o << "<text x=\"" << x0 << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">1</text>\n";
  o << "<text x=\"" << x1 << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">" << n << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % std::size(kPalette)];
    std::string pts;
    for (std::size_t i = 0; i < series[s].values.size(); ++i) {
      const double v = series[s].values[i];
      if (!std::isfinite(v)) continue;
      pts += fmt(px(i), 6) + "," + fmt(py(v), 6) + " ";
    }
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << pts << "\"/>\n";
    o << "<text x=\"" << x1 + 10 << "\" y=\"" << y1 + 16 * (s + 1) << "\" fill=\"" << color << "\">"
      << xml_escape(series[s].label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string bar_plot_svg(const std::string& title, const std::string& y_label, const std::vector<std::string>& labels,
                         const std::vector<double>& values) {
  const auto [lo, hi] = value_range(values);
  const double x0 = kLeft, x1 = kW - kRight, y0 = kH - kBottom, y1 = kTop;
  const double slot = (x1 - x0) / std::max<std::size_t>(1, values.size());
  auto py = [&](double v) { return y0 - (y0 - y1) * (v - lo) / (hi - lo); };
  std::ostringstream o;
  o << svg_open(title) << axes(lo, hi, "", y_label);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = x0 + slot * i + slot * 0.15;
    const double top = py(values[i]), base = py(0.0);
    o << "<rect x=\"" << x << "\" y=\"" << std::min(top, base) << "\" width=\"" << slot * 0.7 << "\" height=\""
      << std::abs(base - top) << "\" fill=\"" << kPalette[i % std::size(kPalette)] << "\"/>\n";
    o << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">"
      << xml_escape(i < labels.size() ? labels[i] : "") << "</text>\n";
    o << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << std::min(top, base) - 4 << "\" text-anchor=\"middle\">"
      << fmt(values[i], 4) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string text_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
  auto line = [&](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t c = 0; c < width.size(); ++c) {
      const std::string& v = c < cells.size() ? cells[c] : std::string();
      s += (c ? "  " : "") + v + std::string(width[c] - v.size(), ' ');
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s + "\n";
  };
  std::string out = line(header);
  std::string rule;
  for (std::size_t c = 0; c < width.size(); ++c) rule += (c ? "  " : "") + std::string(width[c], '-');
  out += rule + "\n";
  for (const auto& r : rows) out += line(r);
  return out;
}

std::string csv_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  auto join = [](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
    return s + "\n";
  };
  std::string out = join(header);
  for (const auto& r : rows) out += join(r);
  return out;
}

}  // namespace tdc::report
