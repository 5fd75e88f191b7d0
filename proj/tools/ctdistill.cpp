// ctdistill: command-line front end for the degradation/enhancement toolkit.
//
// Exit codes: 0 success, 1 runtime error, 2 usage or config error,
// 3 pipeline finished with per-case failures.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "ctdistill/config.hpp"
#include "ctdistill/degrade.hpp"
#include "ctdistill/enhance.hpp"
#include "ctdistill/harness.hpp"
#include "ctdistill/io.hpp"
#include "ctdistill/metrics.hpp"
#include "ctdistill/parallel.hpp"
#include "ctdistill/phantom.hpp"
#include "ctdistill/projector.hpp"
#include "ctdistill/segment.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitPartial = 3;

struct UsageError : ctd::Error {
  using ctd::Error::Error;
};

ctd::FbpFilter parse_filter(const std::string& kind, double cutoff) {
  ctd::FbpFilter f;
  if (kind == "ramlak") {
    f.kind = ctd::FbpFilter::Kind::kRamLak;
  } else if (kind == "hann") {
    f.kind = ctd::FbpFilter::Kind::kHann;
  } else {
    throw UsageError(fmt::format("--filter must be ramlak or hann, got {}", kind));
  }
  f.cutoff = cutoff;
  f.validate();
  return f;
}

ctd::Geometry geometry_for(const ctd::VolumeF32& v, std::size_t angles, double mu_water) {
  if (v.dims().nx != v.dims().ny) {
    throw UsageError(fmt::format("slices must be square, got {}", v.dims().str()));
  }
  ctd::Geometry g = ctd::Geometry::for_image(v.dims().nx, angles, v.spacing().sx);
  g.mu_water = mu_water;
  return g.resolved();
}

ctd::DegradeKind degrade_kind(const std::string& s) {
  if (s == "sparse_view") return ctd::DegradeKind::kSparseView;
  if (s == "low_dose") return ctd::DegradeKind::kLowDose;
  if (s == "conventional") return ctd::DegradeKind::kConventional;
  if (s == "mixed") return ctd::DegradeKind::kMixed;
  throw UsageError(fmt::format("unknown degradation kind {}", s));
}

ctd::EnhancerKind enhancer_kind(const std::string& s) {
  if (s == "identity") return ctd::EnhancerKind::kIdentity;
  if (s == "nlm") return ctd::EnhancerKind::kNlm;
  if (s == "tv") return ctd::EnhancerKind::kTv;
  if (s == "sirt") return ctd::EnhancerKind::kSirt;
  if (s == "external") return ctd::EnhancerKind::kExternal;
  throw UsageError(fmt::format("unknown enhancer kind {}", s));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw ctd::Error(fmt::format("cannot write {}", path.string()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctdistill: CT degradation-to-enhancement benchmark toolkit"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = hardware concurrency)");

  // phantom
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom");
  std::string ph_kind = "lung";
  ctd::PhantomSpec ph_spec;
  std::string ph_out, ph_labels;
  phantom->add_option("--kind", ph_kind, "lung or shepp_logan")->check(CLI::IsMember({"lung", "shepp_logan"}));
  phantom->add_option("--n", ph_spec.n, "Side length in pixels");
  phantom->add_option("--seed", ph_spec.seed, "Seed");
  phantom->add_option("--n-vessels", ph_spec.n_vessels, "Vessel count (lung)");
  phantom->add_option("--airway-depth", ph_spec.airway_depth, "Airway branching levels (lung)");
  phantom->add_option("--pixel-size", ph_spec.pixel_size, "Pixel size in mm");
  phantom->add_option("--out", ph_out, "Output volume (.ctk)")->required();
  phantom->add_option("--labels", ph_labels, "Output label map (.ctk)");

  // project
  auto* project = app.add_subcommand("project", "Forward-project one slice into a sinogram");
  std::string pr_in, pr_out;
  std::size_t pr_angles = 720, pr_slice = 0;
  double mu_water = ctd::kDefaultMuWater;
  project->add_option("--in", pr_in, "Input volume")->required();
  project->add_option("--out", pr_out, "Output sinogram")->required();
  project->add_option("--angles", pr_angles, "Number of angles over [0, pi)");
  project->add_option("--slice", pr_slice, "Slice index");
  project->add_option("--mu-water", mu_water, "Water attenuation, mm^-1");

  // fbp
  auto* fbp_cmd = app.add_subcommand("fbp", "Filtered back-projection of a sinogram");
  std::string fb_in, fb_out, fb_filter = "ramlak";
  std::size_t fb_n = 0;
  double fb_cutoff = 1.0, fb_pixel = 1.0;
  fbp_cmd->add_option("--in", fb_in, "Input sinogram")->required();
  fbp_cmd->add_option("--out", fb_out, "Output slice (HU)")->required();
  fbp_cmd->add_option("--n", fb_n, "Image side length")->required();
  fbp_cmd->add_option("--pixel-size", fb_pixel, "Pixel size in mm");
  fbp_cmd->add_option("--filter", fb_filter, "ramlak or hann");
  fbp_cmd->add_option("--cutoff", fb_cutoff, "Fraction of Nyquist");
  fbp_cmd->add_option("--mu-water", mu_water, "Water attenuation, mm^-1");

  // degrade
  auto* degrade_cmd = app.add_subcommand("degrade", "Apply one degradation");
  std::string dg_kind = "sparse_view", dg_in, dg_out, dg_mode = "paper", dg_mixed_mode = "random";
  std::string dg_filter = "ramlak";
  std::vector<std::string> dg_components = {"sparse_view", "low_dose", "conventional"};
  ctd::DegradeSpec dg;
  std::uint64_t dg_seed = 0, dg_case = 0;
  std::size_t dg_angles = 720;
  double dg_cutoff = 1.0;
  degrade_cmd->add_option("--kind", dg_kind, "sparse_view, low_dose, conventional or mixed");
  degrade_cmd->add_option("--in", dg_in, "Input volume")->required();
  degrade_cmd->add_option("--out", dg_out, "Output volume")->required();
  degrade_cmd->add_option("--seed", dg_seed, "Seed");
  degrade_cmd->add_option("--case", dg_case, "Case index for stream derivation");
  degrade_cmd->add_option("--k,--stride", dg.stride, "Sparse-view stride");
  degrade_cmd->add_option("--alpha", dg.alpha, "Low-dose factor (paper mode)");
  degrade_cmd->add_option("--mode", dg_mode, "paper or transmission")->check(CLI::IsMember({"paper", "transmission"}));
  degrade_cmd->add_option("--i0", dg.i0, "Photons per bin (transmission mode)");
  degrade_cmd->add_option("--scale", dg.scale, "Conventional downsampling factor");
  degrade_cmd->add_option("--sigma-gauss", dg.sigma_gauss, "Conventional Gaussian sigma, HU");
  degrade_cmd->add_option("--photon-scale", dg.photon_scale, "Conventional photon scale");
  degrade_cmd->add_option("--components", dg_components, "Mixed components (defaults per kind)")->delimiter(',');
  degrade_cmd->add_option("--mixed-mode", dg_mixed_mode, "random or sequential")->check(CLI::IsMember({"random", "sequential"}));
  degrade_cmd->add_option("--angles", dg_angles, "Number of projection angles");
  degrade_cmd->add_option("--filter", dg_filter, "ramlak or hann");
  degrade_cmd->add_option("--cutoff", dg_cutoff, "Fraction of Nyquist");
  degrade_cmd->add_option("--mu-water", mu_water, "Water attenuation, mm^-1");

  // enhance
  auto* enhance_cmd = app.add_subcommand("enhance", "Apply one enhancer");
  enhance_cmd->set_help_flag("--help", "Print this help message and exit");
  std::string en_kind = "nlm", en_in, en_out, en_sino, en_exchange = "exchange";
  ctd::EnhancerSpec en;
  std::size_t en_angles = 720;
  enhance_cmd->add_option("--kind", en_kind, "identity, nlm, tv, sirt or external");
  enhance_cmd->add_option("--in", en_in, "Input volume (HU)")->required();
  enhance_cmd->add_option("--out", en_out, "Output volume")->required();
  enhance_cmd->add_option("--patch-radius", en.nlm.patch_radius, "NLM patch radius");
  enhance_cmd->add_option("--search-radius", en.nlm.search_radius, "NLM search radius");
  enhance_cmd->add_option("--h", en.nlm.h, "NLM filtering strength, HU");
  enhance_cmd->add_option("--sigma", en.nlm.sigma, "NLM noise compensation, HU");
  enhance_cmd->add_option("--lambda", en.tv.lambda, "TV weight");
  enhance_cmd->add_option("--tv-iters", en.tv.iters, "TV iterations");
  enhance_cmd->add_option("--sirt-iters", en.sirt.iters, "SIRT iterations");
  enhance_cmd->add_option("--relaxation", en.sirt.relaxation, "SIRT relaxation omega");
  enhance_cmd->add_option("--sinogram", en_sino, "SIRT: measured sinogram (single slice)");
  enhance_cmd->add_option("--angles", en_angles, "SIRT: angles when reprojecting the input");
  enhance_cmd->add_option("--command", en.external.command, "External: command with {in} and {out}");
  enhance_cmd->add_option("--exchange", en_exchange, "External: exchange directory");
  enhance_cmd->add_option("--mu-water", mu_water, "Water attenuation, mm^-1");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score a volume against ground truth");
  std::string ev_in, ev_truth, ev_labels;
  eval_cmd->add_option("--in", ev_in, "Volume to score")->required();
  eval_cmd->add_option("--truth", ev_truth, "Ground-truth volume")->required();
  eval_cmd->add_option("--labels", ev_labels, "Ground-truth labels (default: threshold segmenter)");

  // pipeline / ablate
  auto* pipeline = app.add_subcommand("pipeline", "Run the degrade/enhance/evaluate cohort");
  auto* ablate = app.add_subcommand("ablate", "Run the leave-one-out ablation grid");
  std::string cfg_path, out_override;
  for (auto* sub : {pipeline, ablate}) {
    sub->add_option("--config", cfg_path, "JSON config")->required();
    sub->add_option("--out", out_override, "Override output_dir");
  }

  // hist
  auto* hist = app.add_subcommand("hist", "Histogram one metric from a report");
  std::string hi_report, hi_metric = "ssim", hi_prefix;
  std::size_t hi_bins = 20;
  hist->add_option("--report", hi_report, "report.json from pipeline")->required();
  hist->add_option("--metric", hi_metric, "Metric name");
  hist->add_option("--bins", hi_bins, "Bin count");
  hist->add_option("--out", hi_prefix, "Output prefix (default: <report dir>/hist_<metric>)");

  // import
  auto* import_cmd = app.add_subcommand("import", "Import 16-bit raw data with a JSON sidecar");
  std::string im_raw, im_sidecar, im_out;
  import_cmd->add_option("--raw", im_raw, "Raw file")->required();
  import_cmd->add_option("--sidecar", im_sidecar, "Sidecar JSON (default: <raw>.json)");
  import_cmd->add_option("--out", im_out, "Output volume")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (threads != 0) ctd::set_num_threads(threads);

    if (*phantom) {
      ph_spec.kind = ph_kind == "lung" ? ctd::PhantomKind::kLung : ctd::PhantomKind::kSheppLogan;
      const auto ph = ctd::make_phantom(ph_spec);
      ctd::write_volume(ph.volume, ph_out);
      if (!ph_labels.empty()) ctd::write_volume(ph.labels, ph_labels);
      return 0;
    }

    if (*project) {
      const auto v = ctd::read_hu_volume(pr_in);
      if (pr_slice >= v.dims().nz) throw UsageError(fmt::format("--slice {} out of range", pr_slice));
      const auto g = geometry_for(v, pr_angles, mu_water);
      ctd::write_sinogram(ctd::sinogram_of(v, pr_slice, g), pr_out);
      return 0;
    }

    if (*fbp_cmd) {
      const auto s = ctd::read_sinogram(fb_in);
      ctd::Geometry g = ctd::Geometry::for_image(fb_n, s.n_angles, fb_pixel);
      g.n_bins = s.n_bins;
      g.bin_spacing = s.bin_spacing;
      g.mu_water = mu_water;
      ctd::write_volume(ctd::fbp(s, parse_filter(fb_filter, fb_cutoff), g.resolved()), fb_out);
      return 0;
    }

    if (*degrade_cmd) {
      const auto x = ctd::read_hu_volume(dg_in);
      dg.kind = degrade_kind(dg_kind);
      dg.mode = dg_mode == "paper" ? ctd::LowDoseMode::kPaper : ctd::LowDoseMode::kTransmission;
      if (dg.kind == ctd::DegradeKind::kMixed) {
        dg.mixed_mode = dg_mixed_mode == "random" ? ctd::MixedMode::kRandomChoice : ctd::MixedMode::kSequential;
        for (const auto& c : dg_components) {
          ctd::DegradeSpec comp = dg;
          comp.kind = degrade_kind(c);
          if (comp.kind == ctd::DegradeKind::kMixed) throw UsageError("mixed components cannot be mixed");
          comp.components.clear();
          dg.components.push_back(comp);
        }
      }
      ctd::DegradeContext ctx;
      ctx.geom = geometry_for(x, dg_angles, mu_water);
      ctx.filter = parse_filter(dg_filter, dg_cutoff);
      ctx.seed = dg_seed;
      ctx.case_index = dg_case;
      ctd::write_volume(ctd::degrade(x, dg, ctx), dg_out);
      return 0;
    }

    if (*enhance_cmd) {
      const auto x = ctd::read_hu_volume(en_in);
      en.kind = enhancer_kind(en_kind);
      ctd::EnhanceInputs in;
      in.degraded = &x;
      in.exchange_dir = en_exchange;
      ctd::Geometry g;
      std::vector<ctd::Sinogram> sinos;
      if (en.kind == ctd::EnhancerKind::kSirt) {
        if (!en_sino.empty()) {
          sinos.push_back(ctd::read_sinogram(en_sino));
          g = ctd::Geometry::for_image(x.dims().nx, sinos.front().n_angles, x.spacing().sx);
          g.n_bins = sinos.front().n_bins;
          g.bin_spacing = sinos.front().bin_spacing;
          g.mu_water = mu_water;
          g = g.resolved();
          in.sinograms = &sinos;
        } else {
          g = geometry_for(x, en_angles, mu_water);
        }
        in.geom = &g;
      }
      ctd::write_volume(ctd::enhance(en, in), en_out);
      return 0;
    }

    if (*eval_cmd) {
      const auto x = ctd::read_hu_volume(ev_in);
      const auto truth = ctd::read_hu_volume(ev_truth);
      const auto labels = ev_labels.empty() ? ctd::threshold_segment(truth) : ctd::read_label_map(ev_labels);
      const auto m = ctd::evaluate_case(x, truth, labels);
      std::string out = "{";
      bool first = true;
      for (const auto& name : ctd::metric_names()) {
        out += fmt::format("{}\"{}\": {:.6f}", first ? "" : ", ", name, ctd::metric_value(m, name));
        first = false;
      }
      std::cout << out << "}\n";
      return 0;
    }

    if (*pipeline || *ablate) {
      ctd::PipelineConfig cfg = ctd::load_config(cfg_path);
      if (!out_override.empty()) cfg.output_dir = out_override;
      if (threads != 0) cfg.threads = threads;
      if (*pipeline) {
        const auto report = ctd::run_pipeline(cfg);
        ctd::write_report(report, cfg);
        std::cout << ctd::render_table1(report);
        if (report.failures() > 0) {
          std::cerr << fmt::format("{} case evaluations failed; see report.json\n", report.failures());
          return kExitPartial;
        }
        return 0;
      }
      const auto result = ctd::ablate(cfg);
      ctd::write_ablation(result, cfg);
      std::cout << ctd::render_table5(result);
      if (result.failures > 0) {
        std::cerr << fmt::format("{} evaluations failed\n", result.failures);
        return kExitPartial;
      }
      return 0;
    }

    if (*hist) {
      std::ifstream in(hi_report, std::ios::binary);
      if (!in) throw UsageError(fmt::format("cannot open {}", hi_report));
      std::ostringstream text;
      text << in.rdbuf();
      const auto report = ctd::parse_report_json(text.str());
      (void)ctd::metric_value(ctd::CaseMetrics{}, hi_metric);
      const auto h = ctd::score_histogram(report, hi_metric, hi_bins);
      const std::filesystem::path prefix =
          hi_prefix.empty() ? std::filesystem::path(hi_report).parent_path() / ("hist_" + hi_metric)
                            : std::filesystem::path(hi_prefix);
      write_text(prefix.string() + ".csv", ctd::histogram_csv(h));
      write_text(prefix.string() + ".svg", ctd::histogram_svg(h));
      for (const auto& s : h.series) {
        std::cout << fmt::format("{:<14} {:<14} n={:<3} mean={:.4f} mean_bin={:.2f}\n", s.enhancer,
                                 s.degradation, s.n, s.mean_value, s.mean_bin);
      }
      return 0;
    }

    if (*import_cmd) {
      const std::filesystem::path sidecar = im_sidecar.empty() ? im_raw + ".json" : im_sidecar;
      ctd::write_volume(ctd::import_raw16(im_raw, sidecar), im_out);
      return 0;
    }
  } catch (const ctd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
