#pragma once

// Ground-truth-backed stand-ins for the two nets, shared by the pipeline
// tests and the acceptance suite. They implement the forward contracts from
// truth labels instead of learned weights.

#include "spine/phantom.hpp"
#include "spine/pipeline.hpp"

namespace oracle {

// Emits one-hot class logits (+10 for the true class) from truth labels.
inline spine::SemanticLogitsFn semantic_from_truth(const spine::LabelVolume& class_labels) {
  return [&class_labels](const spine::Tensor& patch, const spine::VoxelBox& box) {
    const spine::Int3 e = box.extent();
    (void)patch;
    spine::Tensor logits = spine::Tensor::zeros({1, 4, e.z, e.y, e.x});
    const std::int64_t s = std::int64_t(e.x) * e.y * e.z;
    float* lp = logits.data().data();
    std::int64_t i = 0;
    for (int z = 0; z < e.z; ++z)
      for (int y = 0; y < e.y; ++y)
        for (int x = 0; x < e.x; ++x, ++i) {
          const spine::Int3 p{x + box.lo.x, y + box.lo.y, z + box.lo.z};
          // windows may live on a zero-padded grid; padding is background
          const std::uint16_t c =
              (p.x < class_labels.dims.x && p.y < class_labels.dims.y &&
               p.z < class_labels.dims.z)
                  ? class_labels.at(p.x, p.y, p.z)
                  : 0;
          lp[c * s + i] = 10.0f;
        }
    return logits;
  };
}

// Returns probability 1 on the mask of the most cranial instance that has
// voxels inside the patch and no overlap with the memory channel.
inline spine::InstanceProbFn instance_from_truth(const spine::LabelVolume& instance_labels,
                                                 int instance_count) {
  return [&instance_labels, instance_count](const spine::Tensor&, const spine::Tensor& mem,
                                            const spine::VoxelBox& box) {
    const spine::Int3 e = box.extent();
    const float* mp = mem.data().data();
    std::vector<std::int64_t> in_patch(std::size_t(instance_count) + 1, 0);
    std::vector<std::int64_t> in_memory(std::size_t(instance_count) + 1, 0);
    std::int64_t i = 0;
    for (int z = 0; z < e.z; ++z)
      for (int y = 0; y < e.y; ++y)
        for (int x = 0; x < e.x; ++x, ++i) {
          const std::uint16_t id =
              instance_labels.at(x + box.lo.x, y + box.lo.y, z + box.lo.z);
          if (!id || id > instance_count) continue;
          in_patch[id] += 1;
          if (mp[i] > 0.5f) in_memory[id] += 1;
        }
    int next = 0;
    for (int id = 1; id <= instance_count; ++id)
      if (in_patch[std::size_t(id)] > 0 && in_memory[std::size_t(id)] == 0) {
        next = id;
        break;
      }
    spine::Tensor prob = spine::Tensor::zeros({1, 1, e.z, e.y, e.x});
    if (next > 0) {
      float* pp = prob.data().data();
      i = 0;
      for (int z = 0; z < e.z; ++z)
        for (int y = 0; y < e.y; ++y)
          for (int x = 0; x < e.x; ++x, ++i)
            if (instance_labels.at(x + box.lo.x, y + box.lo.y, z + box.lo.z) == next)
              pp[i] = 1.0f;
    }
    return prob;
  };
}

}  // namespace oracle
