#include "ctdistill/segment.hpp"

#include <algorithm>
#include <vector>

#include "ctdistill/phantom.hpp"

namespace ctd {

namespace {

struct Component {
  std::size_t size = 0;
  std::size_t first = 0;
  bool touches_border = false;
  std::vector<std::size_t> pixels;
};

std::vector<Component> components(const std::vector<char>& mask, std::size_t nx,
                                  std::size_t ny) {
  std::vector<Component> out;
  std::vector<char> seen(mask.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || seen[start]) continue;
    Component c;
    c.first = start;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t k = stack.back();
      stack.pop_back();
      c.pixels.push_back(k);
      const std::size_t i = k % nx;
      const std::size_t j = k / nx;
      if (i == 0 || j == 0 || i + 1 == nx || j + 1 == ny) c.touches_border = true;
      auto visit = [&](std::size_t q) {
        if (mask[q] && !seen[q]) {
          seen[q] = 1;
          stack.push_back(q);
        }
      };
      if (i > 0) visit(k - 1);
      if (i + 1 < nx) visit(k + 1);
      if (j > 0) visit(k - nx);
      if (j + 1 < ny) visit(k + nx);
    }
    c.size = c.pixels.size();
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

LabelMap threshold_segment(const VolumeF32& x, const SegmentThresholds& t) {
  const auto& d = x.dims();
  LabelMap out(d, x.spacing());
  const std::size_t n = d.slice_count();
  for (std::size_t z = 0; z < d.nz; ++z) {
    const auto s = x.slice(z);
    std::uint16_t* lab = out.data().data() + z * n;
    std::vector<char> low(n);
    for (std::size_t k = 0; k < n; ++k) {
      if (s[k] > t.body) lab[k] = label::kBody;
      low[k] = s[k] < t.lung ? 1 : 0;
    }
    auto comps = components(low, d.nx, d.ny);
    std::erase_if(comps, [](const Component& c) { return c.touches_border; });
    std::stable_sort(comps.begin(), comps.end(), [](const Component& a, const Component& b) {
      return a.size != b.size ? a.size > b.size : a.first < b.first;
    });
    const auto keep = std::min<std::size_t>(comps.size(), static_cast<std::size_t>(std::max(t.max_lungs, 0)));
    for (std::size_t c = 0; c < keep; ++c) {
      for (std::size_t k : comps[c].pixels) {
        lab[k] = s[k] < t.airway ? label::kAirway : label::kLung;
      }
    }
  }
  return out;
}

}  // namespace ctd
