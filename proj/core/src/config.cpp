#include "ctdistill/config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace ctd {

using nlohmann::json;

namespace {

// Wraps one JSON object; every key read is recorded so leftovers can be
// reported as unknown.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("{}: expected an object", where()));
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string key_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(fmt::format("{}: expected a number", key_path(key)));
    return v.get<double>();
  }

  std::uint64_t unsigned_int(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
      return static_cast<std::uint64_t>(v.get<std::int64_t>());
    }
    throw ConfigError(fmt::format("{}: expected a non-negative integer", key_path(key)));
  }

  int integer(const std::string& key, int fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(fmt::format("{}: expected an integer", key_path(key)));
    return v.get<int>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(fmt::format("{}: expected true or false", key_path(key)));
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(fmt::format("{}: expected a string", key_path(key)));
    return v.get<std::string>();
  }

  std::string required_string(const std::string& key) {
    if (!has(key)) throw ConfigError(fmt::format("{}: missing", key_path(key)));
    return string(key, "");
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) {
        throw ConfigError(fmt::format("{}: unknown key", key_path(key)));
      }
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

DegradeKind degrade_kind(const std::string& s, const std::string& path) {
  if (s == "sparse_view") return DegradeKind::kSparseView;
  if (s == "low_dose") return DegradeKind::kLowDose;
  if (s == "conventional") return DegradeKind::kConventional;
  if (s == "mixed") return DegradeKind::kMixed;
  throw ConfigError(fmt::format("{}: unknown degradation kind \"{}\"", path, s));
}

EnhancerKind enhancer_kind(const std::string& s, const std::string& path) {
  if (s == "identity") return EnhancerKind::kIdentity;
  if (s == "nlm") return EnhancerKind::kNlm;
  if (s == "tv") return EnhancerKind::kTv;
  if (s == "sirt") return EnhancerKind::kSirt;
  if (s == "external") return EnhancerKind::kExternal;
  throw ConfigError(fmt::format("{}: unknown enhancer kind \"{}\"", path, s));
}

struct PendingComponent {
  std::string ref;  // empty for inline specs
  DegradeSpec spec;
};

// Parses the kind-specific fields of a degradation; component references of
// mixed specs are returned for later resolution.
DegradeSpec parse_degrade_fields(Obj& o, const std::string& path,
                                 std::vector<PendingComponent>* pending);

DegradeSpec parse_degrade_object(const json& j, const std::string& path,
                                 std::vector<PendingComponent>* pending, std::string* name) {
  Obj o(j, path);
  if (name) *name = o.required_string("name");
  DegradeSpec spec = parse_degrade_fields(o, path, pending);
  o.finish();
  return spec;
}

DegradeSpec parse_degrade_fields(Obj& o, const std::string& path,
                                 std::vector<PendingComponent>* pending) {
  DegradeSpec d;
  d.kind = degrade_kind(o.required_string("kind"), o.key_path("kind"));
  switch (d.kind) {
    case DegradeKind::kSparseView: {
      d.stride = o.unsigned_int("stride", d.stride);
      break;
    }
    case DegradeKind::kLowDose: {
      d.alpha = o.number("alpha", d.alpha);
      const std::string mode = o.string("mode", "paper");
      if (mode == "paper") {
        d.mode = LowDoseMode::kPaper;
      } else if (mode == "transmission") {
        d.mode = LowDoseMode::kTransmission;
      } else {
        throw ConfigError(fmt::format("{}: mode must be \"paper\" or \"transmission\"", o.key_path("mode")));
      }
      d.i0 = o.number("i0", d.i0);
      break;
    }
    case DegradeKind::kConventional: {
      d.scale = o.integer("scale", d.scale);
      d.sigma_gauss = o.number("sigma_gauss", d.sigma_gauss);
      d.photon_scale = o.number("photon_scale", d.photon_scale);
      break;
    }
    case DegradeKind::kMixed: {
      const std::string mode = o.string("mixed_mode", "random");
      if (mode == "random") {
        d.mixed_mode = MixedMode::kRandomChoice;
      } else if (mode == "sequential") {
        d.mixed_mode = MixedMode::kSequential;
      } else {
        throw ConfigError(fmt::format("{}: must be \"random\" or \"sequential\"", o.key_path("mixed_mode")));
      }
      if (!o.has("components")) throw ConfigError(fmt::format("{}: missing", o.key_path("components")));
      const json& list = o.raw("components");
      if (!list.is_array() || list.empty()) {
        throw ConfigError(fmt::format("{}: expected a non-empty array", o.key_path("components")));
      }
      for (std::size_t i = 0; i < list.size(); ++i) {
        const std::string cpath = fmt::format("{}[{}]", o.key_path("components"), i);
        PendingComponent c;
        if (list[i].is_string()) {
          c.ref = list[i].get<std::string>();
        } else {
          c.spec = parse_degrade_object(list[i], cpath, nullptr, nullptr);
          if (c.spec.kind == DegradeKind::kMixed) {
            throw ConfigError(fmt::format("{}: mixed degradations cannot nest", cpath));
          }
        }
        if (pending) {
          pending->push_back(c);
        } else if (c.ref.empty()) {
          d.components.push_back(c.spec);
        } else {
          throw ConfigError(fmt::format("{}: named components are only allowed at top level", cpath));
        }
      }
      break;
    }
  }
  if (d.kind != DegradeKind::kMixed || !pending) {
    try {
      d.validate();
    } catch (const Error& e) {
      throw ConfigError(fmt::format("{}: {}", path, e.what()));
    }
  }
  return d;
}

NamedEnhancer parse_enhancer(const json& j, const std::string& path) {
  Obj o(j, path);
  NamedEnhancer out;
  out.name = o.required_string("name");
  EnhancerSpec& e = out.spec;
  e.kind = enhancer_kind(o.required_string("kind"), o.key_path("kind"));
  switch (e.kind) {
    case EnhancerKind::kIdentity:
      break;
    case EnhancerKind::kNlm:
      e.nlm.patch_radius = o.integer("patch_radius", e.nlm.patch_radius);
      e.nlm.search_radius = o.integer("search_radius", e.nlm.search_radius);
      e.nlm.h = o.number("h", e.nlm.h);
      e.nlm.sigma = o.number("sigma", e.nlm.sigma);
      break;
    case EnhancerKind::kTv:
      e.tv.lambda = o.number("lambda", e.tv.lambda);
      e.tv.iters = o.integer("iters", e.tv.iters);
      break;
    case EnhancerKind::kSirt:
      e.sirt.iters = o.integer("iters", e.sirt.iters);
      e.sirt.relaxation = o.number("relaxation", e.sirt.relaxation);
      break;
    case EnhancerKind::kExternal:
      e.external.command = o.required_string("command");
      break;
  }
  try {
    e.validate();
  } catch (const Error& err) {
    throw ConfigError(fmt::format("{}: {}", path, err.what()));
  }
  if (o.has("tune")) {
    const json& grid = o.raw("tune");
    if (!grid.is_object()) throw ConfigError(fmt::format("{}: expected an object", o.key_path("tune")));
    for (const auto& [param, values] : grid.items()) {
      const std::string vpath = o.key_path("tune") + "." + param;
      if (!values.is_array() || values.empty()) {
        throw ConfigError(fmt::format("{}: expected a non-empty array of numbers", vpath));
      }
      std::vector<double> list;
      for (const auto& v : values) {
        if (!v.is_number()) throw ConfigError(fmt::format("{}: expected numbers", vpath));
        list.push_back(v.get<double>());
        try {
          (void)e.with_param(param, list.back());
        } catch (const Error& err) {
          throw ConfigError(fmt::format("{}: {}", vpath, err.what()));
        }
      }
      out.tune[param] = std::move(list);
    }
  }
  o.finish();
  return out;
}

json degrade_to_json(const DegradeSpec& d) {
  json j;
  j["kind"] = to_string(d.kind);
  switch (d.kind) {
    case DegradeKind::kSparseView:
      j["stride"] = d.stride;
      break;
    case DegradeKind::kLowDose:
      j["alpha"] = d.alpha;
      j["mode"] = to_string(d.mode);
      j["i0"] = d.i0;
      break;
    case DegradeKind::kConventional:
      j["scale"] = d.scale;
      j["sigma_gauss"] = d.sigma_gauss;
      j["photon_scale"] = d.photon_scale;
      break;
    case DegradeKind::kMixed: {
      j["mixed_mode"] = to_string(d.mixed_mode);
      json list = json::array();
      for (const auto& c : d.components) list.push_back(degrade_to_json(c));
      j["components"] = std::move(list);
      break;
    }
  }
  return j;
}

json enhancer_to_json(const NamedEnhancer& n) {
  const EnhancerSpec& e = n.spec;
  json j;
  j["name"] = n.name;
  j["kind"] = to_string(e.kind);
  switch (e.kind) {
    case EnhancerKind::kIdentity:
      break;
    case EnhancerKind::kNlm:
      j["patch_radius"] = e.nlm.patch_radius;
      j["search_radius"] = e.nlm.search_radius;
      j["h"] = e.nlm.h;
      j["sigma"] = e.nlm.sigma;
      break;
    case EnhancerKind::kTv:
      j["lambda"] = e.tv.lambda;
      j["iters"] = e.tv.iters;
      break;
    case EnhancerKind::kSirt:
      j["iters"] = e.sirt.iters;
      j["relaxation"] = e.sirt.relaxation;
      break;
    case EnhancerKind::kExternal:
      j["command"] = e.external.command;
      break;
  }
  if (!n.tune.empty()) {
    json grid = json::object();
    for (const auto& [param, values] : n.tune) grid[param] = values;
    j["tune"] = std::move(grid);
  }
  return j;
}

}  // namespace

void PipelineConfig::validate() const {
  if (degradations.empty()) throw ConfigError("degradations: at least one is required");
  if (enhancers.empty()) throw ConfigError("enhancers: at least one is required");
  std::set<std::string> names;
  for (const auto& d : degradations) {
    if (d.name.empty()) throw ConfigError("degradations: empty name");
    if (!names.insert(d.name).second) {
      throw ConfigError(fmt::format("degradations: duplicate name \"{}\"", d.name));
    }
    try {
      d.spec.validate();
    } catch (const Error& e) {
      throw ConfigError(fmt::format("degradations.{}: {}", d.name, e.what()));
    }
  }
  names.clear();
  for (const auto& e : enhancers) {
    if (e.name.empty()) throw ConfigError("enhancers: empty name");
    if (!names.insert(e.name).second) {
      throw ConfigError(fmt::format("enhancers: duplicate name \"{}\"", e.name));
    }
  }
  if (source.directory.empty()) {
    if (source.cases < 1) throw ConfigError("source.cases must be >= 1");
    try {
      source.phantom.validate();
    } catch (const Error& e) {
      throw ConfigError(fmt::format("source: {}", e.what()));
    }
    if (!(source.tissue_jitter_hu >= 0.0)) throw ConfigError("source.tissue_jitter_hu must be >= 0");
  }
  try {
    filter.validate();
    if (source.directory.empty()) (void)geom.resolved();
  } catch (const Error& e) {
    throw ConfigError(fmt::format("geometry: {}", e.what()));
  }
}

std::string PipelineConfig::canonical_json() const {
  json j;
  json src;
  if (!source.directory.empty()) {
    src["directory"] = source.directory.generic_string();
  } else {
    const PhantomSpec& p = source.phantom;
    src["phantom"] = p.kind == PhantomKind::kLung ? "lung" : "shepp_logan";
    src["n"] = p.n;
    src["cases"] = source.cases;
    src["pixel_size"] = p.pixel_size;
    if (p.kind == PhantomKind::kLung) {
      src["n_vessels"] = p.n_vessels;
      src["airway_depth"] = p.airway_depth;
      src["tissue_hu"] = {{"body", p.hu.body}, {"lung", p.hu.lung},
                          {"vessel", p.hu.vessel}, {"airway", p.hu.airway}};
      src["tissue_jitter_hu"] = source.tissue_jitter_hu;
    }
  }
  j["source"] = std::move(src);
  j["geometry"] = {{"n_angles", geom.n_angles},
                   {"n_bins", geom.n_bins},
                   {"bin_spacing", geom.bin_spacing},
                   {"mu_water", geom.mu_water}};
  j["filter"] = {{"kind", filter.kind == FbpFilter::Kind::kHann ? "hann" : "ramlak"},
                 {"cutoff", filter.cutoff}};
  json degs = json::array();
  for (const auto& d : degradations) {
    json dj = degrade_to_json(d.spec);
    dj["name"] = d.name;
    degs.push_back(std::move(dj));
  }
  j["degradations"] = std::move(degs);
  json enhs = json::array();
  for (const auto& e : enhancers) enhs.push_back(enhancer_to_json(e));
  j["enhancers"] = std::move(enhs);
  j["seed"] = seed;
  j["output_dir"] = output_dir.generic_string();
  j["write_volumes"] = write_volumes;
  return j.dump(2);
}

std::string PipelineConfig::hash() const { return sha256_hex(canonical_json()); }

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
  return out;
}

PipelineConfig parse_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  Obj o(root, "");
  PipelineConfig cfg;

  if (!o.has("source")) throw ConfigError("source: missing");
  {
    Obj s(o.raw("source"), "source");
    const std::string dir = s.string("directory", "");
    if (!dir.empty()) {
      cfg.source.directory = dir;
    } else {
      PhantomSpec& p = cfg.source.phantom;
      const std::string kind = s.string("phantom", "lung");
      if (kind == "lung") {
        p.kind = PhantomKind::kLung;
      } else if (kind == "shepp_logan") {
        p.kind = PhantomKind::kSheppLogan;
      } else {
        throw ConfigError(fmt::format("source.phantom: unknown phantom \"{}\"", kind));
      }
      p.n = s.unsigned_int("n", p.n);
      cfg.source.cases = s.unsigned_int("cases", cfg.source.cases);
      p.pixel_size = static_cast<float>(s.number("pixel_size", p.pixel_size));
      p.n_vessels = s.unsigned_int("n_vessels", p.n_vessels);
      p.airway_depth = s.integer("airway_depth", p.airway_depth);
      cfg.source.tissue_jitter_hu = s.number("tissue_jitter_hu", 0.0);
      if (s.has("tissue_hu")) {
        Obj t(s.raw("tissue_hu"), "source.tissue_hu");
        p.hu.body = static_cast<float>(t.number("body", p.hu.body));
        p.hu.lung = static_cast<float>(t.number("lung", p.hu.lung));
        p.hu.vessel = static_cast<float>(t.number("vessel", p.hu.vessel));
        p.hu.airway = static_cast<float>(t.number("airway", p.hu.airway));
        t.finish();
      }
    }
    s.finish();
  }

  cfg.geom.image_n = cfg.source.phantom.n;
  cfg.geom.pixel_size = cfg.source.phantom.pixel_size;
  if (o.has("geometry")) {
    Obj g(o.raw("geometry"), "geometry");
    cfg.geom.n_angles = g.unsigned_int("n_angles", cfg.geom.n_angles);
    cfg.geom.n_bins = g.unsigned_int("n_bins", 0);
    cfg.geom.bin_spacing = g.number("bin_spacing", 0.0);
    cfg.geom.mu_water = g.number("mu_water", cfg.geom.mu_water);
    g.finish();
  }
  if (o.has("filter")) {
    Obj f(o.raw("filter"), "filter");
    const std::string kind = f.string("kind", "ramlak");
    if (kind == "ramlak") {
      cfg.filter.kind = FbpFilter::Kind::kRamLak;
    } else if (kind == "hann") {
      cfg.filter.kind = FbpFilter::Kind::kHann;
    } else {
      throw ConfigError(fmt::format("filter.kind: must be \"ramlak\" or \"hann\", got \"{}\"", kind));
    }
    cfg.filter.cutoff = f.number("cutoff", cfg.filter.cutoff);
    f.finish();
  }

  if (!o.has("degradations")) throw ConfigError("degradations: missing");
  {
    const json& list = o.raw("degradations");
    if (!list.is_array()) throw ConfigError("degradations: expected an array");
    std::vector<std::vector<PendingComponent>> pending(list.size());
    for (std::size_t i = 0; i < list.size(); ++i) {
      NamedDegrade d;
      d.spec = parse_degrade_object(list[i], fmt::format("degradations[{}]", i), &pending[i], &d.name);
      cfg.degradations.push_back(std::move(d));
    }
    for (std::size_t i = 0; i < list.size(); ++i) {
      auto& spec = cfg.degradations[i].spec;
      if (spec.kind != DegradeKind::kMixed) continue;
      for (const auto& c : pending[i]) {
        if (c.ref.empty()) {
          spec.components.push_back(c.spec);
          continue;
        }
        const auto it = std::find_if(cfg.degradations.begin(), cfg.degradations.end(),
                                     [&](const NamedDegrade& d) { return d.name == c.ref; });
        if (it == cfg.degradations.end()) {
          throw ConfigError(fmt::format("degradations[{}].components: no degradation named \"{}\"", i, c.ref));
        }
        if (it->spec.kind == DegradeKind::kMixed) {
          throw ConfigError(fmt::format("degradations[{}].components: \"{}\" is itself mixed", i, c.ref));
        }
        spec.components.push_back(it->spec);
      }
    }
  }

  if (!o.has("enhancers")) throw ConfigError("enhancers: missing");
  {
    const json& list = o.raw("enhancers");
    if (!list.is_array()) throw ConfigError("enhancers: expected an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      cfg.enhancers.push_back(parse_enhancer(list[i], fmt::format("enhancers[{}]", i)));
    }
  }

  cfg.seed = o.unsigned_int("seed", 0);
  cfg.output_dir = o.string("output_dir", "out");
  cfg.write_volumes = o.boolean("write_volumes", false);
  cfg.threads = o.unsigned_int("threads", 0);
  o.finish();
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

}  // namespace ctd
