#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ctdistill/degrade.hpp"
#include "ctdistill/enhance.hpp"
#include "ctdistill/phantom.hpp"
#include "ctdistill/projector.hpp"

namespace ctd {

/// Malformed or invalid pipeline configuration. The CLI maps it to exit 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct SourceConfig {
  /// Empty: generate phantoms. Otherwise read every *.ctk volume in the
  /// directory (labels from a sibling <stem>.labels.ctk when present).
  std::filesystem::path directory;
  PhantomSpec phantom;
  std::size_t cases = 4;
  /// Per-case jitter of the tissue HU assignments, so cohort statistics have
  /// spread. Zero keeps every case at the base values.
  double tissue_jitter_hu = 0.0;
};

struct NamedDegrade {
  std::string name;
  DegradeSpec spec;
};

struct NamedEnhancer {
  std::string name;
  EnhancerSpec spec;
  /// Parameter grid searched by ablate, e.g. {"h": [10, 20, 40, 80]}.
  std::map<std::string, std::vector<double>> tune;
};

struct PipelineConfig {
  SourceConfig source;
  Geometry geom;  // image_n follows the source
  FbpFilter filter;
  std::vector<NamedDegrade> degradations;
  std::vector<NamedEnhancer> enhancers;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  bool write_volumes = false;
  /// Worker count; 0 means hardware concurrency. Left out of the canonical
  /// form and hash since results do not depend on it.
  std::size_t threads = 0;

  /// Throws ConfigError.
  void validate() const;

  /// Canonical JSON with every default filled in and keys sorted. Equal
  /// configurations serialize identically.
  std::string canonical_json() const;

  /// Hex SHA-256 of canonical_json().
  std::string hash() const;
};

/// Parses a JSON document. Unknown keys, wrong types and invalid values are
/// ConfigErrors naming the offending key path.
PipelineConfig parse_config(std::string_view json_text);
PipelineConfig load_config(const std::filesystem::path& path);

/// Hex SHA-256 of arbitrary bytes.
std::string sha256_hex(std::string_view bytes);

}  // namespace ctd
