#pragma once

#include <cstdint>

#include "ctdistill/volume.hpp"

namespace ctd {

struct SegmentThresholds {
  float body = -200.0f;    // HU above -> body
  float lung = -400.0f;    // HU below, enclosed -> lung candidate
  float airway = -950.0f;  // HU below inside lung -> airway
  int max_lungs = 2;
};

/// Built-in threshold segmenter, per slice. Labels follow the lung phantom:
/// 1 body, 2 lung, 4 airway, 0 otherwise. Lung is the union of the largest
/// (up to max_lungs) 4-connected components below the lung threshold that do
/// not touch the slice border.
LabelMap threshold_segment(const VolumeF32& x, const SegmentThresholds& t = {});

}  // namespace ctd
