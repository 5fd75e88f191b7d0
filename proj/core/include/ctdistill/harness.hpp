#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctdistill/config.hpp"
#include "ctdistill/metrics.hpp"
#include "ctdistill/volume.hpp"

namespace ctd {

/// Toolkit version string stamped into reports.
std::string_view toolkit_version();

struct CaseInput {
  std::string id;
  VolumeF32 truth;
  LabelMap labels;
  Geometry geom;
};

/// Number of cases the source provides (phantom count or directory listing).
std::size_t case_count(const PipelineConfig& cfg);

/// Builds or loads case `index`. Phantom cases derive their seed and tissue
/// jitter from (cfg.seed, index).
CaseInput load_case(const PipelineConfig& cfg, std::size_t index);

/// Metric names accepted by metric_value, in report column order.
const std::vector<std::string>& metric_names();
double metric_value(const CaseMetrics& m, std::string_view name);

struct CaseRow {
  std::string enhancer;
  std::string degradation;
  std::string case_id;
  bool ok = false;
  bool degraded_ok = false;
  std::string error;
  CaseMetrics metrics;   // enhanced vs truth
  CaseMetrics degraded;  // degraded input vs truth
};

struct CellSummary {
  std::string enhancer;
  std::string degradation;
  std::size_t n_ok = 0;
  std::size_t n_failed = 0;
  CaseMetrics mean;
  CaseMetrics std;  // sample std, 0 for a single case
  CaseMetrics min;
  CaseMetrics max;
};

/// Cohort correlation between truth and enhanced organ measurements.
struct Correlation {
  std::string enhancer;
  std::string degradation;
  std::uint16_t region_id = 0;
  std::string measure;  // "mean_hu" or "voxel_count"
  std::optional<double> r;
  std::string note;     // why r is undefined
};

struct EvalReport {
  std::string version;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> enhancers;
  std::vector<std::string> degradations;
  std::vector<std::string> case_ids;
  std::vector<CaseRow> rows;  // sorted by (enhancer, degradation, case)
  std::vector<CellSummary> cells;
  std::vector<Correlation> correlations;

  std::size_t failures() const;
  const CellSummary* cell(std::string_view enhancer, std::string_view degradation) const;
};

/// Degrade, enhance and evaluate every case. Per-case errors are recorded in
/// the affected rows and the run continues. Cases run concurrently; the
/// report order is fixed.
EvalReport run_pipeline(const PipelineConfig& cfg);

std::string report_csv(const EvalReport& report);
std::string report_json(const EvalReport& report, const PipelineConfig& cfg);
EvalReport parse_report_json(std::string_view text);

/// Table-1 layout: one row per method (plus the degraded input), SSIM x100
/// and PSNR per degradation.
std::string render_table1(const EvalReport& report);

/// Writes report.csv, report.json and table1.txt into cfg.output_dir.
void write_report(const EvalReport& report, const PipelineConfig& cfg);

struct AblationCell {
  double ssim = 0.0;
  double psnr_db = 0.0;
};

struct AblationRow {
  std::string label;     // "w/o. <name>" or "all degrades"
  std::string held_out;  // empty for the all row
  std::map<std::string, double> params;  // tuned values
  std::vector<AblationCell> cells;       // one per degradation
};

struct CoverageCheck {
  std::string held_out;
  double without_db = 0.0;  // PSNR on the held-out condition, w/o row
  double all_db = 0.0;      // same condition, all row
  std::string status;       // "ok", "flagged" (<= 0.5 dB above) or "violated"
};

struct AblationGrid {
  std::string enhancer;
  std::vector<AblationRow> rows;
  std::vector<CoverageCheck> coverage;
};

struct AblationResult {
  std::string version;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> degradations;
  std::vector<AblationGrid> grids;
  std::size_t failures = 0;
};

/// Leave-one-out grid. For every non-mixed degradation d, tunable enhancers
/// pick the grid point maximizing mean SSIM over the other non-mixed
/// degradations, then are scored on all degradations. The "all degrades" row
/// tunes on every non-mixed degradation.
AblationResult ablate(const PipelineConfig& cfg);

std::string ablation_csv(const AblationResult& result);
std::string ablation_json(const AblationResult& result);
std::string render_table5(const AblationResult& result);

/// Writes ablation.csv, ablation.json and table5.txt into cfg.output_dir.
void write_ablation(const AblationResult& result, const PipelineConfig& cfg);

struct HistSeries {
  std::string enhancer;  // "degraded" for the degraded inputs
  std::string degradation;
  std::vector<std::size_t> counts;
  std::size_t n = 0;
  double mean_value = 0.0;
  double mean_bin = 0.0;
};

struct Histogram {
  std::string metric;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t bins = 0;
  std::vector<HistSeries> series;
};

/// Bins one metric over successful case rows on a shared [min, max] range,
/// per (enhancer, degradation), plus the degraded inputs per degradation.
Histogram score_histogram(const EvalReport& report, std::string_view metric,
                          std::size_t bins);

std::string histogram_csv(const Histogram& h);
std::string histogram_svg(const Histogram& h);

}  // namespace ctd
