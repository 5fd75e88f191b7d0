#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "ctdistill/harness.hpp"

namespace ctd {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string num(double v) {
  if (!std::isfinite(v)) return "nan";
  return fmt::format("{:.6f}", v);
}

ordered_json metrics_json(const CaseMetrics& m) {
  ordered_json j;
  for (const auto& name : metric_names()) j[name] = metric_value(m, name);
  return j;
}

CaseMetrics metrics_from(const json& j) {
  CaseMetrics m;
  m.ssim = j.at("ssim").get<double>();
  m.psnr_db = j.at("psnr_db").get<double>();
  m.l_pp_mean = j.at("l_pp_mean").get<double>();
  m.l_pp_sum = j.at("l_pp_sum").get<double>();
  m.l_hu = j.at("l_hu").get<double>();
  m.dice_lung = j.at("dice_lung").get<double>();
  m.dice_airway = j.at("dice_airway").get<double>();
  m.label_agreement = j.at("label_agreement").get<double>();
  return m;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out) throw Error(fmt::format("write failed for {}", path.string()));
}

// Mean of the degraded-input metrics per degradation, over the first
// enhancer's rows (every enhancer sees the same degraded volume).
std::vector<std::optional<CaseMetrics>> degraded_means(const EvalReport& r) {
  std::vector<std::optional<CaseMetrics>> out;
  for (const auto& deg : r.degradations) {
    double ssim = 0.0, psnr = 0.0;
    std::size_t n = 0;
    for (const auto& row : r.rows) {
      if (row.enhancer != r.enhancers.front() || row.degradation != deg || !row.degraded_ok) continue;
      ssim += row.degraded.ssim;
      psnr += row.degraded.psnr_db;
      ++n;
    }
    if (n == 0) {
      out.emplace_back();
      continue;
    }
    CaseMetrics m;
    m.ssim = ssim / static_cast<double>(n);
    m.psnr_db = psnr / static_cast<double>(n);
    out.emplace_back(m);
  }
  return out;
}

std::string pair_cell(std::optional<double> ssim, std::optional<double> psnr) {
  const std::string s = ssim && std::isfinite(*ssim) ? fmt::format("{:.1f}", 100.0 * *ssim) : "-";
  const std::string p = psnr && std::isfinite(*psnr) ? fmt::format("{:.1f}", *psnr) : "-";
  return fmt::format("{:>6} {:>6}", s, p);
}

std::string table_header(const std::string& first, const std::vector<std::string>& degs,
                         std::size_t width) {
  std::string line1 = fmt::format("{:<{}}", first, width);
  std::string line2 = fmt::format("{:<{}}", "", width);
  for (const auto& d : degs) {
    line1 += fmt::format(" | {:^13}", d.size() > 13 ? d.substr(0, 13) : d);
    line2 += fmt::format(" | {:>6} {:>6}", "SSIM", "PSNR");
  }
  return line1 + "\n" + line2 + "\n";
}

std::string params_str(const std::map<std::string, double>& params) {
  if (params.empty()) return "-";
  std::string out;
  for (const auto& [k, v] : params) {
    if (!out.empty()) out += ";";
    out += fmt::format("{}={:g}", k, v);
  }
  return out;
}

}  // namespace

std::string report_csv(const EvalReport& report) {
  std::string out = "enhancer,degradation,case_id";
  for (const auto& name : metric_names()) out += "," + name;
  out += "\n";
  auto line = [&](const std::string& e, const std::string& d, const std::string& id,
                  const CaseMetrics& m) {
    out += fmt::format("{},{},{}", e, d, id);
    for (const auto& name : metric_names()) out += "," + num(metric_value(m, name));
    out += "\n";
  };
  for (const auto& cell : report.cells) {
    for (const auto& row : report.rows) {
      if (row.enhancer == cell.enhancer && row.degradation == cell.degradation && row.ok) {
        line(row.enhancer, row.degradation, row.case_id, row.metrics);
      }
    }
    if (cell.n_ok > 0) line(cell.enhancer, cell.degradation, "mean", cell.mean);
  }
  return out;
}

std::string report_json(const EvalReport& report, const PipelineConfig& cfg) {
  ordered_json j;
  j["toolkit"] = "ctdistill";
  j["version"] = report.version;
  j["config_hash"] = report.config_hash;
  j["seed"] = report.seed;
  j["conventions"] = {
      {"ssim", "single-scale SSIM, 11-tap Gaussian sigma 1.5, K1 0.01, K2 0.03, valid "
               "window positions, mean over slices; tables print x100"},
      {"data_range", kHuDataRange},
      {"psnr_cap_db", kPsnrCap},
      {"std", "sample standard deviation over successful cases"},
      {"dice", "threshold segmenter on both volumes; a region absent from both scores 1"}};
  j["config"] = ordered_json::parse(cfg.canonical_json());
  j["enhancers"] = report.enhancers;
  j["degradations"] = report.degradations;
  j["cases"] = report.case_ids;
  ordered_json rows = ordered_json::array();
  for (const auto& row : report.rows) {
    ordered_json r;
    r["enhancer"] = row.enhancer;
    r["degradation"] = row.degradation;
    r["case_id"] = row.case_id;
    r["ok"] = row.ok;
    if (!row.error.empty()) r["error"] = row.error;
    if (row.ok) r["metrics"] = metrics_json(row.metrics);
    if (row.degraded_ok) r["degraded"] = metrics_json(row.degraded);
    rows.push_back(std::move(r));
  }
  j["rows"] = std::move(rows);
  ordered_json cells = ordered_json::array();
  for (const auto& c : report.cells) {
    ordered_json cj;
    cj["enhancer"] = c.enhancer;
    cj["degradation"] = c.degradation;
    cj["n_ok"] = c.n_ok;
    cj["n_failed"] = c.n_failed;
    if (c.n_ok > 0) {
      cj["mean"] = metrics_json(c.mean);
      cj["std"] = metrics_json(c.std);
      cj["min"] = metrics_json(c.min);
      cj["max"] = metrics_json(c.max);
    }
    cells.push_back(std::move(cj));
  }
  j["cells"] = std::move(cells);
  ordered_json corr = ordered_json::array();
  for (const auto& c : report.correlations) {
    ordered_json cj;
    cj["enhancer"] = c.enhancer;
    cj["degradation"] = c.degradation;
    cj["region_id"] = c.region_id;
    cj["measure"] = c.measure;
    if (c.r) {
      cj["r"] = *c.r;
    } else {
      cj["r"] = nullptr;
      cj["note"] = c.note;
    }
    corr.push_back(std::move(cj));
  }
  j["correlations"] = std::move(corr);
  return j.dump(2) + "\n";
}

EvalReport parse_report_json(std::string_view text) {
  EvalReport r;
  try {
    const json j = json::parse(text);
    r.version = j.at("version").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.enhancers = j.at("enhancers").get<std::vector<std::string>>();
    r.degradations = j.at("degradations").get<std::vector<std::string>>();
    r.case_ids = j.at("cases").get<std::vector<std::string>>();
    for (const auto& rj : j.at("rows")) {
      CaseRow row;
      row.enhancer = rj.at("enhancer").get<std::string>();
      row.degradation = rj.at("degradation").get<std::string>();
      row.case_id = rj.at("case_id").get<std::string>();
      row.ok = rj.at("ok").get<bool>();
      if (rj.contains("error")) row.error = rj.at("error").get<std::string>();
      if (row.ok) row.metrics = metrics_from(rj.at("metrics"));
      if (rj.contains("degraded")) {
        row.degraded = metrics_from(rj.at("degraded"));
        row.degraded_ok = true;
      }
      r.rows.push_back(std::move(row));
    }
    for (const auto& cj : j.at("cells")) {
      CellSummary c;
      c.enhancer = cj.at("enhancer").get<std::string>();
      c.degradation = cj.at("degradation").get<std::string>();
      c.n_ok = cj.at("n_ok").get<std::size_t>();
      c.n_failed = cj.at("n_failed").get<std::size_t>();
      if (c.n_ok > 0) {
        c.mean = metrics_from(cj.at("mean"));
        c.std = metrics_from(cj.at("std"));
        c.min = metrics_from(cj.at("min"));
        c.max = metrics_from(cj.at("max"));
      }
      r.cells.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw Error(fmt::format("malformed report: {}", e.what()));
  }
  return r;
}

std::string render_table1(const EvalReport& report) {
  std::size_t width = std::string("Degraded input").size();
  for (const auto& e : report.enhancers) width = std::max(width, e.size());
  std::string out = table_header("Method", report.degradations, width);
  out += std::string(out.find('\n'), '-') + "\n";
  const auto degraded = degraded_means(report);
  std::string line = fmt::format("{:<{}}", "Degraded input", width);
  for (const auto& m : degraded) {
    line += " | " + (m ? pair_cell(m->ssim, m->psnr_db) : pair_cell(std::nullopt, std::nullopt));
  }
  out += line + "\n";
  for (const auto& e : report.enhancers) {
    line = fmt::format("{:<{}}", e, width);
    for (const auto& d : report.degradations) {
      const CellSummary* c = report.cell(e, d);
      if (c && c->n_ok > 0) {
        line += " | " + pair_cell(c->mean.ssim, c->mean.psnr_db);
      } else {
        line += " | " + pair_cell(std::nullopt, std::nullopt);
      }
    }
    out += line + "\n";
  }
  out += fmt::format("\nSSIM x100 (slice mean), PSNR in dB (data range {:g} HU). config {}\n",
                     kHuDataRange, report.config_hash.substr(0, 16));
  return out;
}

void write_report(const EvalReport& report, const PipelineConfig& cfg) {
  std::filesystem::create_directories(cfg.output_dir);
  write_text(cfg.output_dir / "report.csv", report_csv(report));
  write_text(cfg.output_dir / "report.json", report_json(report, cfg));
  write_text(cfg.output_dir / "table1.txt", render_table1(report));
}

std::string ablation_csv(const AblationResult& result) {
  std::string out = "enhancer,setting,tuned,degradation,ssim,psnr_db\n";
  for (const auto& g : result.grids) {
    for (const auto& row : g.rows) {
      for (std::size_t di = 0; di < result.degradations.size(); ++di) {
        out += fmt::format("{},{},{},{},{},{}\n", g.enhancer, row.label, params_str(row.params),
                           result.degradations[di], num(row.cells[di].ssim),
                           num(row.cells[di].psnr_db));
      }
    }
  }
  return out;
}

std::string ablation_json(const AblationResult& result) {
  ordered_json j;
  j["toolkit"] = "ctdistill";
  j["version"] = result.version;
  j["config_hash"] = result.config_hash;
  j["seed"] = result.seed;
  j["degradations"] = result.degradations;
  j["failed_evaluations"] = result.failures;
  ordered_json grids = ordered_json::array();
  for (const auto& g : result.grids) {
    ordered_json gj;
    gj["enhancer"] = g.enhancer;
    ordered_json rows = ordered_json::array();
    for (const auto& row : g.rows) {
      ordered_json rj;
      rj["setting"] = row.label;
      rj["held_out"] = row.held_out;
      rj["tuned"] = row.params;
      ordered_json cells = ordered_json::array();
      for (std::size_t di = 0; di < row.cells.size(); ++di) {
        cells.push_back({{"degradation", result.degradations[di]},
                         {"ssim", row.cells[di].ssim},
                         {"psnr_db", row.cells[di].psnr_db}});
      }
      rj["cells"] = std::move(cells);
      rows.push_back(std::move(rj));
    }
    gj["rows"] = std::move(rows);
    ordered_json cov = ordered_json::array();
    for (const auto& c : g.coverage) {
      cov.push_back({{"held_out", c.held_out},
                     {"without_db", c.without_db},
                     {"all_db", c.all_db},
                     {"status", c.status}});
    }
    gj["coverage"] = std::move(cov);
    grids.push_back(std::move(gj));
  }
  j["grids"] = std::move(grids);
  return j.dump(2) + "\n";
}

std::string render_table5(const AblationResult& result) {
  std::string out;
  for (const auto& g : result.grids) {
    std::size_t width = std::string("all degrades").size();
    for (const auto& row : g.rows) width = std::max(width, row.label.size());
    out += fmt::format("[{}]\n", g.enhancer);
    const std::string header = table_header("Setting", result.degradations, width);
    out += header + std::string(header.find('\n'), '-') + "\n";
    for (const auto& row : g.rows) {
      std::string line = fmt::format("{:<{}}", row.label, width);
      for (const auto& c : row.cells) line += " | " + pair_cell(c.ssim, c.psnr_db);
      out += line + fmt::format("   ({})\n", params_str(row.params));
    }
    for (const auto& c : g.coverage) {
      out += fmt::format("coverage {}: w/o {:.2f} dB vs all {:.2f} dB -> {}\n", c.held_out,
                         c.without_db, c.all_db, c.status);
    }
    out += "\n";
  }
  out += fmt::format("SSIM x100 (slice mean), PSNR in dB. config {}\n",
                     result.config_hash.substr(0, 16));
  return out;
}

void write_ablation(const AblationResult& result, const PipelineConfig& cfg) {
  std::filesystem::create_directories(cfg.output_dir);
  write_text(cfg.output_dir / "ablation.csv", ablation_csv(result));
  write_text(cfg.output_dir / "ablation.json", ablation_json(result));
  write_text(cfg.output_dir / "table5.txt", render_table5(result));
}

Histogram score_histogram(const EvalReport& report, std::string_view metric, std::size_t bins) {
  if (bins < 1) throw Error("histogram needs at least 1 bin");
  Histogram h;
  h.metric = std::string(metric);
  h.bins = bins;
  std::vector<std::vector<double>> values;
  for (const auto& deg : report.degradations) {
    {
      HistSeries s{"degraded", deg, {}, 0, 0.0, 0.0};
      std::vector<double> v;
      for (const auto& row : report.rows) {
        if (row.enhancer == report.enhancers.front() && row.degradation == deg && row.degraded_ok) {
          v.push_back(metric_value(row.degraded, metric));
        }
      }
      h.series.push_back(std::move(s));
      values.push_back(std::move(v));
    }
    for (const auto& enh : report.enhancers) {
      HistSeries s{enh, deg, {}, 0, 0.0, 0.0};
      std::vector<double> v;
      for (const auto& row : report.rows) {
        if (row.enhancer == enh && row.degradation == deg && row.ok) {
          v.push_back(metric_value(row.metrics, metric));
        }
      }
      h.series.push_back(std::move(s));
      values.push_back(std::move(v));
    }
  }
  bool any = false;
  for (const auto& v : values) {
    for (double x : v) {
      if (!any) {
        h.lo = h.hi = x;
        any = true;
      }
      h.lo = std::min(h.lo, x);
      h.hi = std::max(h.hi, x);
    }
  }
  if (!any) throw Error("histogram: report has no successful cases");
  for (std::size_t k = 0; k < h.series.size(); ++k) {
    auto& s = h.series[k];
    s.counts.assign(bins, 0);
    s.n = values[k].size();
    double sum = 0.0, bin_sum = 0.0;
    for (double x : values[k]) {
      std::size_t b = 0;
      if (h.hi > h.lo) {
        const double u = (x - h.lo) / (h.hi - h.lo) * static_cast<double>(bins);
        b = std::min(bins - 1, static_cast<std::size_t>(std::max(0.0, u)));
      }
      ++s.counts[b];
      sum += x;
      bin_sum += static_cast<double>(b);
    }
    if (s.n > 0) {
      s.mean_value = sum / static_cast<double>(s.n);
      s.mean_bin = bin_sum / static_cast<double>(s.n);
    }
  }
  return h;
}

std::string histogram_csv(const Histogram& h) {
  std::string out = "series,degradation,bin,bin_lo,bin_hi,count\n";
  const double width = (h.hi - h.lo) / static_cast<double>(h.bins);
  for (const auto& s : h.series) {
    for (std::size_t b = 0; b < h.bins; ++b) {
      out += fmt::format("{},{},{},{},{},{}\n", s.enhancer, s.degradation, b,
                         num(h.lo + width * static_cast<double>(b)),
                         num(h.lo + width * static_cast<double>(b + 1)), s.counts[b]);
    }
  }
  return out;
}

std::string histogram_svg(const Histogram& h) {
  static const char* kColors[] = {"#7f7f7f", "#1f77b4", "#d62728", "#2ca02c",
                                  "#9467bd", "#ff7f0e", "#8c564b", "#e377c2"};
  std::vector<std::string> degs;
  std::vector<std::string> names;
  for (const auto& s : h.series) {
    if (std::find(degs.begin(), degs.end(), s.degradation) == degs.end()) degs.push_back(s.degradation);
    if (std::find(names.begin(), names.end(), s.enhancer) == names.end()) names.push_back(s.enhancer);
  }
  const double panel_w = 640.0, panel_h = 160.0, left = 60.0, top = 40.0, gap = 50.0;
  const double total_h = top + static_cast<double>(degs.size()) * (panel_h + gap) + 20.0;
  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" "
      "font-family=\"sans-serif\" font-size=\"11\">\n",
      left + panel_w + 160.0, total_h);
  out += fmt::format("<text x=\"{:.0f}\" y=\"20\" font-size=\"14\">{} distribution</text>\n", left, h.metric);
  for (std::size_t k = 0; k < names.size(); ++k) {
    const double y = top + 14.0 * static_cast<double>(k);
    out += fmt::format("<rect x=\"{:.0f}\" y=\"{:.0f}\" width=\"10\" height=\"10\" fill=\"{}\"/>"
                       "<text x=\"{:.0f}\" y=\"{:.0f}\">{}</text>\n",
                       left + panel_w + 20.0, y, kColors[k % 8], left + panel_w + 35.0, y + 9.0,
                       names[k]);
  }
  for (std::size_t d = 0; d < degs.size(); ++d) {
    const double y0 = top + static_cast<double>(d) * (panel_h + gap);
    std::size_t peak = 1;
    for (const auto& s : h.series) {
      if (s.degradation == degs[d]) {
        for (auto c : s.counts) peak = std::max(peak, c);
      }
    }
    out += fmt::format("<text x=\"{:.0f}\" y=\"{:.0f}\">{}</text>\n", left, y0 - 4.0, degs[d]);
    out += fmt::format("<line x1=\"{:.0f}\" y1=\"{:.0f}\" x2=\"{:.0f}\" y2=\"{:.0f}\" stroke=\"black\"/>\n",
                       left, y0 + panel_h, left + panel_w, y0 + panel_h);
    const double bin_w = panel_w / static_cast<double>(h.bins);
    const double bar_w = bin_w / static_cast<double>(names.size() + 1);
    for (std::size_t k = 0; k < names.size(); ++k) {
      const auto it = std::find_if(h.series.begin(), h.series.end(), [&](const HistSeries& s) {
        return s.degradation == degs[d] && s.enhancer == names[k];
      });
      if (it == h.series.end()) continue;
      for (std::size_t b = 0; b < h.bins; ++b) {
        if (it->counts[b] == 0) continue;
        const double bh = panel_h * static_cast<double>(it->counts[b]) / static_cast<double>(peak);
        out += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\"/>\n",
                           left + bin_w * static_cast<double>(b) + bar_w * static_cast<double>(k),
                           y0 + panel_h - bh, bar_w, bh, kColors[k % 8]);
      }
    }
    out += fmt::format("<text x=\"{:.0f}\" y=\"{:.0f}\">{:.4g}</text>"
                       "<text x=\"{:.0f}\" y=\"{:.0f}\" text-anchor=\"end\">{:.4g}</text>\n",
                       left, y0 + panel_h + 14.0, h.lo, left + panel_w, y0 + panel_h + 14.0, h.hi);
  }
  out += "</svg>\n";
  return out;
}

}  // namespace ctd
