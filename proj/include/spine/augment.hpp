#pragma once

#include "spine/rng.hpp"
#include "spine/volume.hpp"

namespace spine {

// Training-time augmentation ranges. Rotation is sampled per axis, scaling is
// isotropic, noise sigma is in normalized intensity units.
struct AugmentSpec {
  double rotation_deg_min = -15.0, rotation_deg_max = 15.0;
  double scale_min = 0.8, scale_max = 1.2;
  double noise_sigma_min = 0.0, noise_sigma_max = 50.0 / 1536.0;
  Int3 crop_dims{32, 32, 32};
};

void validate(const AugmentSpec& spec);

// Aligned crop of image and labels at a uniformly sampled offset. Inputs
// smaller than the crop are padded first (image with fill_image, labels 0).
std::pair<Volume, LabelVolume> random_crop(const Volume& v, const LabelVolume& labels, Int3 dims,
                                           Rng& rng, float fill_image = -1.0f);

// Deterministic core of the affine augmentation: rotate by angles_deg (about
// x, y, z in that order, i.e. R = Rz*Ry*Rx) and scale isotropically about the
// volume center in index space. Trilinear for intensities, nearest for
// labels; out-of-range voxels become fill_image / 0.
std::pair<Volume, LabelVolume> apply_affine(const Volume& v, const LabelVolume& labels,
                                            const Double3& angles_deg, double scale,
                                            float fill_image = -1.0f);

// Samples one rotation per axis ~ U(min,max) (x, y, z order), one isotropic
// scale ~ U(min,max), then calls apply_affine.
std::pair<Volume, LabelVolume> random_affine(const Volume& v, const LabelVolume& labels,
                                             const AugmentSpec& spec, Rng& rng);

// sigma ~ U(noise_sigma_min, noise_sigma_max), then i.i.d. zero-mean Gaussian
// noise per voxel. The result is not re-clipped.
Volume add_gaussian_noise(const Volume& v, const AugmentSpec& spec, Rng& rng);

}  // namespace spine
