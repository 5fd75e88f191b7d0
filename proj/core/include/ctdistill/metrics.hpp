#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "ctdistill/volume.hpp"

namespace ctd {

inline constexpr double kPsnrCap = 99.0;

/// Raised when a statistic has no defined value for its input, e.g. a
/// correlation with zero variance.
class UndefinedResult : public Error {
 public:
  using Error::Error;
};

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = kHuDataRange;
};

/// 10 log10(range^2 / MSE); identical inputs give kPsnrCap.
double psnr(std::span<const float> a, std::span<const float> b,
            double data_range = kHuDataRange);
double psnr(const VolumeF32& a, const VolumeF32& b, double data_range = kHuDataRange);

/// Mean SSIM of one nx x ny slice over window positions fully inside it.
double ssim_slice(std::span<const float> a, std::span<const float> b,
                  std::size_t nx, std::size_t ny, const SsimParams& params = {});

/// Slice mean of ssim_slice.
double ssim(const VolumeF32& a, const VolumeF32& b, const SsimParams& params = {});

/// Normalized 1D Gaussian taps used by ssim.
std::vector<double> gaussian_window(int size, double sigma);

struct PixelLoss {
  double mean = 0.0;  // mean |a - b|, HU
  double sum = 0.0;   // sum |a - b|, HU
};

PixelLoss l_pp(const VolumeF32& a, const VolumeF32& b);

struct RegionStats {
  std::uint16_t region_id = 0;
  std::size_t voxel_count = 0;
  double mean_hu = 0.0;
  double std_hu = 0.0;  // population std
};

/// Statistics for every label ID >= 1 present in `labels`, sorted by ID.
std::vector<RegionStats> region_stats(const VolumeF32& x, const LabelMap& labels);

/// Sum over regions c >= 1 of |mean_c(a) - mean_c(b)|.
double l_hu(const VolumeF32& a, const VolumeF32& b, const LabelMap& labels);

struct SegAgreement {
  std::map<std::uint16_t, double> dice;  // per ID >= 1 present in either map
  double label_agreement = 0.0;          // fraction of voxels with equal labels
};

/// Dice 2|A n B| / (|A| + |B|) per region; an ID absent from both maps is
/// not reported.
SegAgreement seg_agreement(const LabelMap& a, const LabelMap& b);

/// Segments both volumes with threshold_segment, then compares.
SegAgreement seg_agreement(const VolumeF32& a, const VolumeF32& b);

/// Sample Pearson coefficient, single pass. Throws UndefinedResult for fewer
/// than 3 pairs or zero variance on either side.
double pearson_r(std::span<const std::pair<double, double>> pairs);

struct CaseMetrics {
  double ssim = 0.0;
  double psnr_db = 0.0;
  double l_pp_mean = 0.0;
  double l_pp_sum = 0.0;
  double l_hu = 0.0;
  double dice_lung = 0.0;
  double dice_airway = 0.0;
  double label_agreement = 0.0;
};

/// All case metrics of `x` against ground truth `truth`. L_HU uses the
/// ground-truth labels; Dice and agreement use the threshold segmenter. A
/// region missing from both segmentations scores Dice 1.
CaseMetrics evaluate_case(const VolumeF32& x, const VolumeF32& truth,
                          const LabelMap& truth_labels);

}  // namespace ctd
