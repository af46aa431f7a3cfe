#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "spine/labels.hpp"
#include "spine/volume.hpp"

namespace spine {

// Masks are LabelVolumes with nonzero = foreground. Geometries must agree for
// pairwise metrics. Surface distances are Euclidean between voxel centers,
// spacing-scaled, computed with an exact separable squared-distance transform.

// 2|A inter B| / (|A| + |B|); defined as 1.0 when both masks are empty.
double dice(const LabelVolume& a, const LabelVolume& b);

// Foreground voxels with at least one 6-neighbor that is background or
// outside the volume. Scan order.
std::vector<Int3> surface_voxels(const LabelVolume& m);

// Average symmetric surface distance in mm: the mean over both directed sets
// of nearest-surface distances. Both masks must be nonempty.
double assd(const LabelVolume& a, const LabelVolume& b);

// Max of the two directed maxima of nearest-surface distances, in mm.
double hausdorff(const LabelVolume& a, const LabelVolume& b);

// --- localization / identification ------------------------------------------

struct LabeledCentroid {
  AnatomicalLabel label;
  Double3 centroid_mm;
};

struct RegionLocId {
  int n_truth = 0;
  int n_matched = 0;     // label-matched pairs entering the distance stats
  int n_identified = 0;  // same label, mutually nearest, within radius
  double mean_mm = 0.0;  // over matched pairs (population statistics)
  double std_mm = 0.0;
  double id_rate = 0.0;  // n_identified / n_truth
};

struct LocIdMetrics {
  RegionLocId all, cervical, thoracic, lumbar;
  const RegionLocId& region(SpineClass c) const {
    switch (c) {
      case SpineClass::cervical: return cervical;
      case SpineClass::thoracic: return thoracic;
      case SpineClass::lumbar: return lumbar;
    }
    return all;
  }
};

struct LocIdCase {
  std::vector<LabeledCentroid> pred, truth;
};

// Distance stats over truth vertebrae whose label appears in pred; truth
// without a matching predicted label counts toward n_truth (an id miss) but
// not toward the mean. Duplicate labels within one list are an error.
LocIdMetrics localization_stats(const std::vector<LabeledCentroid>& pred,
                                const std::vector<LabeledCentroid>& truth);

// A truth vertebra is identified iff a prediction with the same label exists,
// that prediction's nearest truth centroid is this vertebra, and the distance
// is below radius_mm.
double id_rate(const std::vector<LabeledCentroid>& pred,
               const std::vector<LabeledCentroid>& truth, double radius_mm = 20.0);

// Pooled stats across cases (matching is per case, distances and counts pool).
LocIdMetrics aggregate_loc_id(std::span<const LocIdCase> cases, double radius_mm = 20.0);

// CSV schema: region,mean_mm,std_mm,id_rate,n - one row per region plus "all";
// n is the truth vertebra count. Stats cells are empty when undefined.
std::string loc_id_csv(const LocIdMetrics& m);
std::string loc_id_text(const LocIdMetrics& m);

// Flat centroid/label file: JSON array of {"label":"T12","centroid_mm":[x,y,z]}.
std::vector<LabeledCentroid> read_labeled_centroids(const std::filesystem::path& path);
void write_labeled_centroids(const std::vector<LabeledCentroid>& list,
                             const std::filesystem::path& path);

}  // namespace spine
