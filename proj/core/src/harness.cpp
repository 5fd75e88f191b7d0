#include "ctdistill/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <set>

#include <fmt/format.h>

#include "ctdistill/degrade.hpp"
#include "ctdistill/enhance.hpp"
#include "ctdistill/io.hpp"
#include "ctdistill/parallel.hpp"
#include "ctdistill/phantom.hpp"
#include "ctdistill/rng.hpp"
#include "ctdistill/segment.hpp"

namespace ctd {

std::string_view toolkit_version() { return "0.3.0"; }

namespace {

std::vector<std::filesystem::path> directory_cases(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw ConfigError(fmt::format("source.directory {} is not a directory", dir.string()));
  }
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto& p = entry.path();
    if (!entry.is_regular_file() || p.extension() != ".ctk") continue;
    if (p.stem().extension() == ".labels") continue;
    out.push_back(p);
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw ConfigError(fmt::format("source.directory {} has no .ctk volumes", dir.string()));
  return out;
}

std::string safe_name(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    if (!keep) c = '_';
  }
  return out;
}

DegradeContext column_context(const PipelineConfig& cfg, const NamedDegrade& d,
                              const Geometry& geom, std::size_t case_index) {
  DegradeContext ctx;
  ctx.geom = geom;
  ctx.filter = cfg.filter;
  ctx.seed = splitmix64_mix(cfg.seed ^ fnv1a64(d.name));
  ctx.case_index = case_index;
  return ctx;
}

template <typename Fn>
CaseMetrics map_members(Fn fn) {
  CaseMetrics m;
  m.ssim = fn(&CaseMetrics::ssim);
  m.psnr_db = fn(&CaseMetrics::psnr_db);
  m.l_pp_mean = fn(&CaseMetrics::l_pp_mean);
  m.l_pp_sum = fn(&CaseMetrics::l_pp_sum);
  m.l_hu = fn(&CaseMetrics::l_hu);
  m.dice_lung = fn(&CaseMetrics::dice_lung);
  m.dice_airway = fn(&CaseMetrics::dice_airway);
  m.label_agreement = fn(&CaseMetrics::label_agreement);
  return m;
}

CellSummary summarize(const std::string& enhancer, const std::string& degradation,
                      const std::vector<CaseMetrics>& ok, std::size_t failed) {
  CellSummary c;
  c.enhancer = enhancer;
  c.degradation = degradation;
  c.n_ok = ok.size();
  c.n_failed = failed;
  if (ok.empty()) return c;
  c.mean = map_members([&](double CaseMetrics::*member) {
    double s = 0.0;
    for (const auto& x : ok) s += x.*member;
    return s / static_cast<double>(ok.size());
  });
  c.std = map_members([&](double CaseMetrics::*member) {
    if (ok.size() < 2) return 0.0;
    const double mu = c.mean.*member;
    double s = 0.0;
    for (const auto& x : ok) s += (x.*member - mu) * (x.*member - mu);
    return std::sqrt(s / static_cast<double>(ok.size() - 1));
  });
  c.min = map_members([&](double CaseMetrics::*member) {
    double v = ok.front().*member;
    for (const auto& x : ok) v = std::min(v, x.*member);
    return v;
  });
  c.max = map_members([&](double CaseMetrics::*member) {
    double v = ok.front().*member;
    for (const auto& x : ok) v = std::max(v, x.*member);
    return v;
  });
  return c;
}

// Organ measurements of one enhanced output, for cohort correlations.
struct Measurements {
  std::map<std::uint16_t, double> truth_mean;
  std::map<std::uint16_t, double> enhanced_mean;
  std::map<std::uint16_t, double> truth_count;
  std::map<std::uint16_t, double> enhanced_count;
};

std::map<std::uint16_t, double> seg_counts(const VolumeF32& x) {
  const LabelMap seg = threshold_segment(x);
  std::map<std::uint16_t, double> out = {{label::kBody, 0.0}, {label::kLung, 0.0}, {label::kAirway, 0.0}};
  for (auto id : seg.data()) {
    if (id != 0) out[id] += 1.0;
  }
  return out;
}

Measurements measure(const VolumeF32& enhanced, const CaseInput& c,
                     const std::map<std::uint16_t, double>& truth_counts) {
  Measurements m;
  for (const auto& r : region_stats(c.truth, c.labels)) m.truth_mean[r.region_id] = r.mean_hu;
  for (const auto& r : region_stats(enhanced, c.labels)) m.enhanced_mean[r.region_id] = r.mean_hu;
  m.truth_count = truth_counts;
  m.enhanced_count = seg_counts(enhanced);
  return m;
}

void add_correlations(EvalReport& report, const std::vector<std::optional<Measurements>>& meas) {
  for (const auto& enh : report.enhancers) {
    for (const auto& deg : report.degradations) {
      std::vector<const Measurements*> cell;
      for (std::size_t k = 0; k < report.rows.size(); ++k) {
        const auto& row = report.rows[k];
        if (row.enhancer == enh && row.degradation == deg && row.ok && meas[k]) {
          cell.push_back(&*meas[k]);
        }
      }
      auto emit = [&](const char* measure_name,
                      std::map<std::uint16_t, double> Measurements::*truth,
                      std::map<std::uint16_t, double> Measurements::*enhanced) {
        std::set<std::uint16_t> ids;
        for (const auto* m : cell) {
          for (const auto& [id, v] : m->*truth) ids.insert(id);
        }
        for (auto id : ids) {
          std::vector<std::pair<double, double>> pairs;
          for (const auto* m : cell) {
            const auto t = (m->*truth).find(id);
            const auto e = (m->*enhanced).find(id);
            if (t != (m->*truth).end() && e != (m->*enhanced).end()) {
              pairs.emplace_back(t->second, e->second);
            }
          }
          Correlation c{enh, deg, id, measure_name, std::nullopt, ""};
          try {
            c.r = pearson_r(pairs);
          } catch (const UndefinedResult& err) {
            c.note = err.what();
          }
          report.correlations.push_back(std::move(c));
        }
      };
      emit("mean_hu", &Measurements::truth_mean, &Measurements::enhanced_mean);
      emit("voxel_count", &Measurements::truth_count, &Measurements::enhanced_count);
    }
  }
}

struct DegradedCase {
  bool ok = false;
  std::string error;
  VolumeF32 volume;
  std::vector<Sinogram> measured;
  CaseMetrics metrics;
};

DegradedCase run_degradation(const PipelineConfig& cfg, const NamedDegrade& d,
                             const CaseInput& c, std::size_t case_index) {
  DegradedCase out;
  try {
    const DegradeContext ctx = column_context(cfg, d, c.geom, case_index);
    out.volume = degrade(c.truth, d.spec, ctx, &out.measured);
    out.metrics = evaluate_case(out.volume, c.truth, c.labels);
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = fmt::format("degradation {}: {}", d.name, e.what());
  }
  return out;
}

VolumeF32 run_enhancer(const PipelineConfig& cfg, const EnhancerSpec& spec,
                       const DegradedCase& d, const CaseInput& c,
                       const std::string& deg_name, const std::string& enh_name) {
  EnhanceInputs in;
  in.degraded = &d.volume;
  in.sinograms = d.measured.empty() ? nullptr : &d.measured;
  in.geom = &c.geom;
  in.exchange_dir = cfg.output_dir / "exchange" / safe_name(c.id) / safe_name(deg_name) /
                    safe_name(enh_name);
  return enhance(spec, in);
}

}  // namespace

std::size_t case_count(const PipelineConfig& cfg) {
  if (!cfg.source.directory.empty()) return directory_cases(cfg.source.directory).size();
  return cfg.source.cases;
}

CaseInput load_case(const PipelineConfig& cfg, std::size_t index) {
  CaseInput c;
  if (!cfg.source.directory.empty()) {
    const auto files = directory_cases(cfg.source.directory);
    if (index >= files.size()) throw Error(fmt::format("case index {} out of range", index));
    const auto& path = files[index];
    c.id = path.stem().string();
    c.truth = read_hu_volume(path);
    const auto& d = c.truth.dims();
    if (d.nx != d.ny) throw Error(fmt::format("{}: slices must be square, got {}", c.id, d.str()));
    const auto label_path = path.parent_path() / (path.stem().string() + ".labels.ctk");
    c.labels = std::filesystem::exists(label_path) ? read_label_map(label_path)
                                                   : threshold_segment(c.truth);
    if (c.labels.dims() != d) {
      throw Error(fmt::format("{}: labels {} do not match volume {}", c.id,
                              c.labels.dims().str(), d.str()));
    }
    c.geom = cfg.geom;
    c.geom.image_n = d.nx;
    c.geom.pixel_size = c.truth.spacing().sx;
    c.geom = c.geom.resolved();
    return c;
  }
  PhantomSpec spec = cfg.source.phantom;
  spec.seed = RngStream::derive(cfg.seed, "phantom", index, 0).stream_id;
  if (cfg.source.tissue_jitter_hu > 0.0) {
    CounterRng rng(RngStream::derive(cfg.seed, "phantom.tissue", index, 0));
    const double j = cfg.source.tissue_jitter_hu;
    auto jitter = [&](float base) {
      return std::clamp(static_cast<float>(base + j * (2.0 * rng.uniform() - 1.0)), kHuMin, kHuMax);
    };
    spec.hu.body = jitter(spec.hu.body);
    spec.hu.lung = jitter(spec.hu.lung);
    spec.hu.vessel = jitter(spec.hu.vessel);
  }
  auto ph = make_phantom(spec);
  c.id = fmt::format("case{:03d}", index);
  c.truth = std::move(ph.volume);
  c.labels = std::move(ph.labels);
  c.geom = cfg.geom;
  c.geom.image_n = spec.n;
  c.geom.pixel_size = spec.pixel_size;
  c.geom = c.geom.resolved();
  return c;
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {
      "ssim", "psnr_db", "l_pp_mean", "l_pp_sum", "l_hu", "dice_lung", "dice_airway", "label_agreement"};
  return names;
}

double metric_value(const CaseMetrics& m, std::string_view name) {
  if (name == "ssim") return m.ssim;
  if (name == "psnr_db") return m.psnr_db;
  if (name == "l_pp_mean") return m.l_pp_mean;
  if (name == "l_pp_sum") return m.l_pp_sum;
  if (name == "l_hu") return m.l_hu;
  if (name == "dice_lung") return m.dice_lung;
  if (name == "dice_airway") return m.dice_airway;
  if (name == "label_agreement") return m.label_agreement;
  throw Error(fmt::format("unknown metric \"{}\"", name));
}

std::size_t EvalReport::failures() const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(),
                                                [](const CaseRow& r) { return !r.ok; }));
}

const CellSummary* EvalReport::cell(std::string_view enhancer, std::string_view degradation) const {
  for (const auto& c : cells) {
    if (c.enhancer == enhancer && c.degradation == degradation) return &c;
  }
  return nullptr;
}

EvalReport run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  if (cfg.threads != 0) set_num_threads(cfg.threads);
  const std::size_t n_cases = case_count(cfg);
  const std::size_t n_deg = cfg.degradations.size();
  const std::size_t n_enh = cfg.enhancers.size();

  struct Slot {
    CaseRow row;
    std::optional<Measurements> meas;
  };
  // slots[case][enh * n_deg + deg]
  std::vector<std::vector<Slot>> slots(n_cases, std::vector<Slot>(n_enh * n_deg));
  std::vector<std::string> ids(n_cases);

  parallel_for(n_cases, [&](std::size_t ci) {
    auto& mine = slots[ci];
    CaseInput c;
    std::string case_error;
    try {
      c = load_case(cfg, ci);
    } catch (const std::exception& e) {
      case_error = fmt::format("case load: {}", e.what());
    }
    ids[ci] = case_error.empty() ? c.id : fmt::format("case{:03d}", ci);
    for (std::size_t di = 0; di < n_deg; ++di) {
      for (std::size_t ei = 0; ei < n_enh; ++ei) {
        auto& row = mine[ei * n_deg + di].row;
        row.enhancer = cfg.enhancers[ei].name;
        row.degradation = cfg.degradations[di].name;
        row.case_id = ids[ci];
        row.error = case_error;
      }
    }
    if (!case_error.empty()) return;
    const auto truth_counts = seg_counts(c.truth);
    if (cfg.write_volumes) {
      const auto dir = cfg.output_dir / "volumes";
      std::filesystem::create_directories(dir);
      write_volume(c.truth, dir / fmt::format("{}_truth.ctk", safe_name(c.id)));
    }
    for (std::size_t di = 0; di < n_deg; ++di) {
      const auto& dname = cfg.degradations[di].name;
      const DegradedCase d = run_degradation(cfg, cfg.degradations[di], c, ci);
      if (d.ok && cfg.write_volumes) {
        write_volume(d.volume, cfg.output_dir / "volumes" /
                                   fmt::format("{}_{}_degraded.ctk", safe_name(c.id), safe_name(dname)));
      }
      for (std::size_t ei = 0; ei < n_enh; ++ei) {
        auto& slot = mine[ei * n_deg + di];
        if (!d.ok) {
          slot.row.error = d.error;
          continue;
        }
        slot.row.degraded = d.metrics;
        slot.row.degraded_ok = true;
        const auto& ename = cfg.enhancers[ei].name;
        try {
          const VolumeF32 out = run_enhancer(cfg, cfg.enhancers[ei].spec, d, c, dname, ename);
          slot.row.metrics = evaluate_case(out, c.truth, c.labels);
          slot.meas = measure(out, c, truth_counts);
          slot.row.ok = true;
          if (cfg.write_volumes) {
            write_volume(out, cfg.output_dir / "volumes" /
                                  fmt::format("{}_{}_{}.ctk", safe_name(c.id), safe_name(dname),
                                              safe_name(ename)));
          }
        } catch (const std::exception& e) {
          slot.row.error = fmt::format("enhancer {}: {}", ename, e.what());
        }
      }
    }
  });

  EvalReport report;
  report.version = std::string(toolkit_version());
  report.config_hash = cfg.hash();
  report.seed = cfg.seed;
  for (const auto& e : cfg.enhancers) report.enhancers.push_back(e.name);
  for (const auto& d : cfg.degradations) report.degradations.push_back(d.name);
  report.case_ids = ids;
  std::vector<std::optional<Measurements>> meas;
  for (std::size_t ei = 0; ei < n_enh; ++ei) {
    for (std::size_t di = 0; di < n_deg; ++di) {
      std::vector<CaseMetrics> ok;
      std::size_t failed = 0;
      for (std::size_t ci = 0; ci < n_cases; ++ci) {
        auto& slot = slots[ci][ei * n_deg + di];
        if (slot.row.ok) {
          ok.push_back(slot.row.metrics);
        } else {
          ++failed;
        }
        report.rows.push_back(slot.row);
        meas.push_back(slot.meas);
      }
      report.cells.push_back(summarize(cfg.enhancers[ei].name, cfg.degradations[di].name, ok, failed));
    }
  }
  add_correlations(report, meas);
  return report;
}

namespace {

std::vector<std::map<std::string, double>> candidates(const NamedEnhancer& e) {
  std::vector<std::map<std::string, double>> out = {{}};
  for (const auto& [param, values] : e.tune) {
    std::vector<std::map<std::string, double>> next;
    for (const auto& base : out) {
      for (double v : values) {
        auto c = base;
        c[param] = v;
        next.push_back(std::move(c));
      }
    }
    out = std::move(next);
  }
  return out;
}

EnhancerSpec with_params(const EnhancerSpec& spec, const std::map<std::string, double>& params) {
  EnhancerSpec out = spec;
  for (const auto& [name, value] : params) out = out.with_param(name, value);
  return out;
}

std::string row_label(const std::string& name) {
  std::string s = name;
  std::replace(s.begin(), s.end(), '_', ' ');
  return "w/o. " + s;
}

}  // namespace

AblationResult ablate(const PipelineConfig& cfg) {
  cfg.validate();
  if (cfg.degradations.size() < 2) throw ConfigError("ablate needs at least 2 degradations");
  std::vector<std::size_t> trainable;
  for (std::size_t di = 0; di < cfg.degradations.size(); ++di) {
    if (cfg.degradations[di].spec.kind != DegradeKind::kMixed) trainable.push_back(di);
  }
  if (trainable.size() < 2) throw ConfigError("ablate needs at least 2 non-mixed degradations");
  if (cfg.threads != 0) set_num_threads(cfg.threads);

  const std::size_t n_cases = case_count(cfg);
  const std::size_t n_deg = cfg.degradations.size();
  std::vector<std::vector<std::map<std::string, double>>> cands;
  for (const auto& e : cfg.enhancers) cands.push_back(candidates(e));

  // scores[case][enh][cand][deg], nullopt on failure
  using Score = std::optional<AblationCell>;
  std::vector<std::vector<std::vector<std::vector<Score>>>> scores(n_cases);
  parallel_for(n_cases, [&](std::size_t ci) {
    auto& mine = scores[ci];
    mine.resize(cfg.enhancers.size());
    for (std::size_t ei = 0; ei < cfg.enhancers.size(); ++ei) {
      mine[ei].assign(cands[ei].size(), std::vector<Score>(n_deg));
    }
    CaseInput c;
    try {
      c = load_case(cfg, ci);
    } catch (const std::exception&) {
      return;
    }
    for (std::size_t di = 0; di < n_deg; ++di) {
      const DegradedCase d = run_degradation(cfg, cfg.degradations[di], c, ci);
      if (!d.ok) continue;
      for (std::size_t ei = 0; ei < cfg.enhancers.size(); ++ei) {
        for (std::size_t k = 0; k < cands[ei].size(); ++k) {
          try {
            const EnhancerSpec spec = with_params(cfg.enhancers[ei].spec, cands[ei][k]);
            const VolumeF32 out = run_enhancer(cfg, spec, d, c, cfg.degradations[di].name,
                                               cfg.enhancers[ei].name);
            mine[ei][k][di] = AblationCell{ssim(out, c.truth), psnr(out, c.truth)};
          } catch (const std::exception&) {
          }
        }
      }
    }
  });

  AblationResult result;
  result.version = std::string(toolkit_version());
  result.config_hash = cfg.hash();
  result.seed = cfg.seed;
  for (const auto& d : cfg.degradations) result.degradations.push_back(d.name);

  for (std::size_t ei = 0; ei < cfg.enhancers.size(); ++ei) {
    const std::size_t nc = cands[ei].size();
    // Cohort means per candidate and degradation.
    std::vector<std::vector<AblationCell>> mean(nc, std::vector<AblationCell>(n_deg));
    for (std::size_t k = 0; k < nc; ++k) {
      for (std::size_t di = 0; di < n_deg; ++di) {
        double s = 0.0, p = 0.0;
        std::size_t n = 0;
        for (std::size_t ci = 0; ci < n_cases; ++ci) {
          const Score& sc = scores[ci][ei][k][di];
          if (!sc) {
            ++result.failures;
            continue;
          }
          s += sc->ssim;
          p += sc->psnr_db;
          ++n;
        }
        mean[k][di] = n == 0 ? AblationCell{std::nan(""), std::nan("")}
                             : AblationCell{s / static_cast<double>(n), p / static_cast<double>(n)};
      }
    }
    auto pick = [&](const std::vector<std::size_t>& tuning) {
      std::size_t best = 0;
      double best_score = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < nc; ++k) {
        double total = 0.0;
        for (auto di : tuning) total += mean[k][di].ssim;
        const double score = total / static_cast<double>(tuning.size());
        if (score > best_score) {
          best_score = score;
          best = k;
        }
      }
      return best;
    };
    AblationGrid grid;
    grid.enhancer = cfg.enhancers[ei].name;
    for (auto held : trainable) {
      std::vector<std::size_t> tuning;
      for (auto di : trainable) {
        if (di != held) tuning.push_back(di);
      }
      const std::size_t k = pick(tuning);
      grid.rows.push_back({row_label(cfg.degradations[held].name), cfg.degradations[held].name,
                           cands[ei][k], mean[k]});
    }
    const std::size_t k_all = pick(trainable);
    grid.rows.push_back({"all degrades", "", cands[ei][k_all], mean[k_all]});
    const auto& all_row = grid.rows.back();
    for (std::size_t r = 0; r < trainable.size(); ++r) {
      const std::size_t di = trainable[r];
      CoverageCheck check;
      check.held_out = cfg.degradations[di].name;
      check.without_db = grid.rows[r].cells[di].psnr_db;
      check.all_db = all_row.cells[di].psnr_db;
      if (check.without_db <= check.all_db) {
        check.status = "ok";
      } else if (check.without_db <= check.all_db + 0.5) {
        check.status = "flagged";
      } else {
        check.status = "violated";
      }
      grid.coverage.push_back(std::move(check));
    }
    result.grids.push_back(std::move(grid));
  }
  return result;
}

}  // namespace ctd
