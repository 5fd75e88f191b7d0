#include "ctdistill/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <fmt/format.h>

#include "ctdistill/rng.hpp"

namespace ctd {

void PhantomSpec::validate() const {
  if (n < 16) throw Error(fmt::format("phantom n must be >= 16, got {}", n));
  if (airway_depth < 0 || airway_depth > 6) {
    throw Error(fmt::format("airway_depth must be in [0, 6], got {}", airway_depth));
  }
  for (float hu : {hu.body, hu.lung, hu.vessel, hu.airway}) {
    if (!(hu >= kHuMin && hu <= kHuMax)) {
      throw Error(fmt::format("tissue HU {} outside [{}, {}]", hu, kHuMin, kHuMax));
    }
  }
  if (!(pixel_size > 0)) throw Error("phantom pixel_size must be positive");
}

bool Ellipse::contains(double x, double y) const {
  const double t = angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(t);
  const double s = std::sin(t);
  const double dx = x - cx;
  const double dy = y - cy;
  const double u = (dx * c + dy * s) / semi_x;
  const double v = (-dx * s + dy * c) / semi_y;
  return u * u + v * v <= 1.0;
}

const std::array<Ellipse, 10>& shepp_logan_ellipses() {
  static const std::array<Ellipse, 10> kEllipses = {{
      {0.0, 0.0, 0.69, 0.92, 0.0, 2.0},
      {0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98},
      {0.22, 0.0, 0.11, 0.31, -18.0, -0.02},
      {-0.22, 0.0, 0.16, 0.41, 18.0, -0.02},
      {0.0, 0.35, 0.21, 0.25, 0.0, 0.01},
      {0.0, 0.1, 0.046, 0.046, 0.0, 0.01},
      {0.0, -0.1, 0.046, 0.046, 0.0, 0.01},
      {-0.08, -0.605, 0.046, 0.023, 0.0, 0.01},
      {0.0, -0.605, 0.023, 0.023, 0.0, 0.01},
      {0.06, -0.605, 0.023, 0.046, 0.0, 0.01},
  }};
  return kEllipses;
}

double shepp_logan_intensity(double x, double y) {
  double sum = 0.0;
  for (const auto& e : shepp_logan_ellipses()) {
    if (e.contains(x, y)) sum += e.value;
  }
  return sum;
}

double shepp_logan_to_hu(double intensity) { return -1000.0 + 1500.0 * intensity; }

std::pair<double, double> pixel_center(std::size_t i, std::size_t j,
                                       std::size_t n) {
  const double half = static_cast<double>(n) / 2.0;
  return {(static_cast<double>(i) + 0.5 - half) / half,
          (half - static_cast<double>(j) - 0.5) / half};
}

VolumeF32 shepp_logan(std::size_t n, float pixel_size) {
  if (n < 16) throw Error(fmt::format("phantom n must be >= 16, got {}", n));
  std::vector<float> hu(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto [x, y] = pixel_center(i, j, n);
      hu[j * n + i] = static_cast<float>(shepp_logan_to_hu(shepp_logan_intensity(x, y)));
    }
  }
  return VolumeF32({n, n, 1}, {pixel_size, pixel_size, pixel_size}, std::move(hu));
}

namespace {

struct Point {
  double x, y;
};

double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x;
  const double vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx);
  const double dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

class LungPainter {
 public:
  LungPainter(const PhantomSpec& spec, VolumeF32& vol, LabelMap& labels)
      : spec_(spec), vol_(vol), labels_(labels), n_(spec.n),
        px_(2.0 / static_cast<double>(spec.n)) {}

  void fill(const Ellipse& e, std::uint16_t id, float hu) {
    for (std::size_t j = 0; j < n_; ++j) {
      for (std::size_t i = 0; i < n_; ++i) {
        const auto [x, y] = pixel_center(i, j, n_);
        if (e.contains(x, y)) set(i, j, id, hu);
      }
    }
  }

  // Paints a disk, restricted to pixels currently labelled `inside`.
  void disk(Point c, double r, std::uint16_t inside, std::uint16_t id, float hu) {
    for_box(c, c, r, [&](std::size_t i, std::size_t j, double x, double y) {
      const double dx = x - c.x;
      const double dy = y - c.y;
      if (dx * dx + dy * dy <= r * r && labels_.at(i, j) == inside) {
        set(i, j, id, hu);
      }
    });
  }

  // Thick segment clipped to non-background pixels. Half-width never drops
  // below 0.75 px so thin branches stay 8-connected.
  void segment(Point a, Point b, double width, std::uint16_t id, float hu) {
    const double hw = std::max(width / 2.0, 0.75 * px_);
    for_box(a, b, hw, [&](std::size_t i, std::size_t j, double x, double y) {
      if (labels_.at(i, j) != label::kBackground &&
          segment_distance({x, y}, a, b) <= hw) {
        set(i, j, id, hu);
      }
    });
  }

 private:
  template <typename Fn>
  void for_box(Point a, Point b, double pad, Fn&& fn) {
    const double half = static_cast<double>(n_) / 2.0;
    auto to_col = [&](double x) { return (x * half) + half - 0.5; };
    auto to_row = [&](double y) { return half - 0.5 - (y * half); };
    const double x0 = std::min(a.x, b.x) - pad;
    const double x1 = std::max(a.x, b.x) + pad;
    const double y0 = std::min(a.y, b.y) - pad;
    const double y1 = std::max(a.y, b.y) + pad;
    const auto lo = [&](double v) {
      return static_cast<std::size_t>(std::clamp(std::floor(v) - 1, 0.0, double(n_ - 1)));
    };
    const auto hi = [&](double v) {
      return static_cast<std::size_t>(std::clamp(std::ceil(v) + 1, 0.0, double(n_ - 1)));
    };
    for (std::size_t j = lo(to_row(y1)); j <= hi(to_row(y0)); ++j) {
      for (std::size_t i = lo(to_col(x0)); i <= hi(to_col(x1)); ++i) {
        const auto [x, y] = pixel_center(i, j, n_);
        fn(i, j, x, y);
      }
    }
  }

  void set(std::size_t i, std::size_t j, std::uint16_t id, float hu) {
    labels_.at(i, j) = id;
    vol_.at(i, j) = hu;
  }

  const PhantomSpec& spec_;
  VolumeF32& vol_;
  LabelMap& labels_;
  std::size_t n_;
  double px_;  // pixel size in normalized units
};

// Airway cuts can isolate small lung slivers. Each sliver is absorbed into
// the structure that cut it off, so only the two lungs remain labelled lung.
void absorb_lung_slivers(const PhantomSpec& spec, VolumeF32& vol, LabelMap& labels) {
  const std::size_t n = spec.n;
  std::vector<int> comp(n * n, -1);
  std::vector<std::vector<std::size_t>> parts;
  auto lab = labels.data();
  for (std::size_t start = 0; start < n * n; ++start) {
    if (lab[start] != label::kLung || comp[start] >= 0) continue;
    const int id = static_cast<int>(parts.size());
    parts.emplace_back();
    std::vector<std::size_t> stack{start};
    comp[start] = id;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      parts[id].push_back(p);
      const std::size_t x = p % n, y = p / n;
      const std::size_t nb[4] = {x > 0 ? p - 1 : p, x + 1 < n ? p + 1 : p,
                                 y > 0 ? p - n : p, y + 1 < n ? p + n : p};
      for (std::size_t k : nb) {
        if (lab[k] == label::kLung && comp[k] < 0) {
          comp[k] = id;
          stack.push_back(k);
        }
      }
    }
  }
  if (parts.size() <= 2) return;
  std::vector<std::size_t> order(parts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return parts[a].size() > parts[b].size();
  });
  for (std::size_t r = 2; r < order.size(); ++r) {
    const auto& part = parts[order[r]];
    bool touches_airway = false;
    for (std::size_t p : part) {
      const std::size_t x = p % n, y = p / n;
      const std::size_t nb[4] = {x > 0 ? p - 1 : p, x + 1 < n ? p + 1 : p,
                                 y > 0 ? p - n : p, y + 1 < n ? p + n : p};
      for (std::size_t k : nb) touches_airway = touches_airway || lab[k] == label::kAirway;
    }
    const std::uint16_t id = touches_airway ? label::kAirway : label::kVessel;
    const float hu = touches_airway ? spec.hu.airway : spec.hu.vessel;
    for (std::size_t p : part) {
      lab[p] = id;
      vol.data()[p] = hu;
    }
  }
}

struct Branch {
  Point start;
  double angle;  // radians, direction of growth
  double length;
  double width;
  int level;
  std::size_t lung;  // 0 = right side of image, 1 = left
};

}  // namespace

LabeledVolume lung_phantom(const PhantomSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n;
  const Spacing spacing{spec.pixel_size, spec.pixel_size, spec.pixel_size};
  VolumeF32 vol = VolumeF32::filled({n, n, 1}, spacing, static_cast<float>(kAirHu));
  LabelMap labels({n, n, 1}, spacing);

  CounterRng rng(RngStream::derive(spec.seed, "phantom.lung", 0, 0));
  auto jitter = [&](double amount) { return 1.0 + amount * (2.0 * rng.uniform() - 1.0); };

  const Ellipse body{0.0, 0.0, 0.85, 0.62, 0.0, 0.0};
  const std::array<Ellipse, 2> lungs = {{
      {0.38, 0.02, 0.30 * jitter(0.05), 0.45 * jitter(0.05), 0.0, 0.0},
      {-0.38, 0.02, 0.30 * jitter(0.05), 0.45 * jitter(0.05), 0.0, 0.0},
  }};

  LungPainter paint(spec, vol, labels);
  paint.fill(body, label::kBody, spec.hu.body);
  for (const auto& lung : lungs) paint.fill(lung, label::kLung, spec.hu.lung);

  for (std::size_t v = 0; v < spec.n_vessels; ++v) {
    const Ellipse& lung = lungs[rng.uniform() < 0.5 ? 0 : 1];
    Point c{};
    do {
      c = {lung.cx + lung.semi_x * (2.0 * rng.uniform() - 1.0),
           lung.cy + lung.semi_y * (2.0 * rng.uniform() - 1.0)};
    } while (!lung.contains(c.x, c.y));
    const double r = 0.012 + 0.018 * rng.uniform();
    paint.disk(c, r, label::kLung, label::kVessel, spec.hu.vessel);
  }

  if (spec.airway_depth > 0) {
    const Point top{0.0, 0.45};
    const Point carina{0.0, 0.15};
    const double trachea_width = 0.05;
    paint.segment(top, carina, trachea_width, label::kAirway, spec.hu.airway);

    std::vector<Branch> stack;
    for (std::size_t side = 0; side < 2; ++side) {
      const Ellipse& lung = lungs[side];
      const Point target{lung.cx * 0.75, lung.cy + 0.05};
      const double dx = target.x - carina.x;
      const double dy = target.y - carina.y;
      stack.push_back({carina, std::atan2(dy, dx), std::hypot(dx, dy),
                       trachea_width / 2.0, 1, side});
    }
    while (!stack.empty()) {
      const Branch b = stack.back();
      stack.pop_back();
      const Point end{b.start.x + b.length * std::cos(b.angle),
                      b.start.y + b.length * std::sin(b.angle)};
      paint.segment(b.start, end, b.width, label::kAirway, spec.hu.airway);
      if (b.level >= spec.airway_depth) continue;
      if (!lungs[b.lung].contains(end.x, end.y)) continue;
      // Children bend downward-outward with seeded angular jitter.
      const double spread = 0.5 * jitter(0.3);
      const double child_len = (b.level == 1 ? 0.16 : b.length * 0.72) * jitter(0.1);
      for (double sign : {-1.0, 1.0}) {
        stack.push_back({end, b.angle + sign * spread, child_len, b.width / 2.0,
                         b.level + 1, b.lung});
      }
    }
  }
  absorb_lung_slivers(spec, vol, labels);
  return {std::move(vol), std::move(labels)};
}

LabeledVolume make_phantom(const PhantomSpec& spec) {
  spec.validate();
  if (spec.kind == PhantomKind::kLung) return lung_phantom(spec);
  VolumeF32 vol = shepp_logan(spec.n, spec.pixel_size);
  LabelMap labels(vol.dims(), vol.spacing());
  const auto& skull = shepp_logan_ellipses()[0];
  for (std::size_t j = 0; j < spec.n; ++j) {
    for (std::size_t i = 0; i < spec.n; ++i) {
      const auto [x, y] = pixel_center(i, j, spec.n);
      if (skull.contains(x, y)) labels.at(i, j) = 1;
    }
  }
  return {std::move(vol), std::move(labels)};
}

}  // namespace ctd
