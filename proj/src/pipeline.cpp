#include "spine/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "spine/errors.hpp"
#include "spine/metrics.hpp"
#include "spine/volume_io.hpp"

namespace spine {

SemanticLogitsFn make_semantic_fn(UNet3D& net) {
  return [&net](const Tensor& patch, const VoxelBox&) {
    NoGradGuard no_grad;
    return net.forward_logits(patch, false);
  };
}

InstanceProbFn make_instance_fn(UNet3D& net) {
  return [&net](const Tensor& ct, const Tensor& mem, const VoxelBox&) {
    NoGradGuard no_grad;
    return forward_instance(net, ct, mem, false);
  };
}

Tensor volume_patch_to_tensor(const Volume& v, const VoxelBox& box) {
  const Int3 e = box.extent();
  Tensor t = Tensor::zeros({1, 1, e.z, e.y, e.x});
  float* p = t.data().data();
  for (int z = 0; z < e.z; ++z)
    for (int y = 0; y < e.y; ++y)
      for (int x = 0; x < e.x; ++x)
        *p++ = v.at(x + box.lo.x, y + box.lo.y, z + box.lo.z);
  return t;
}

Tensor mask_patch_to_tensor(const LabelVolume& labels, const VoxelBox& box,
                            std::uint32_t id_below) {
  const Int3 e = box.extent();
  Tensor t = Tensor::zeros({1, 1, e.z, e.y, e.x});
  float* p = t.data().data();
  for (int z = 0; z < e.z; ++z)
    for (int y = 0; y < e.y; ++y)
      for (int x = 0; x < e.x; ++x) {
        const std::uint16_t id = labels.at(x + box.lo.x, y + box.lo.y, z + box.lo.z);
        *p++ = (id > 0 && id < id_below) ? 1.0f : 0.0f;
      }
  return t;
}

namespace {

std::vector<int> window_starts(int dim, int win, double overlap) {
  const int stride = std::max(1, int(std::llround(win * (1.0 - overlap))));
  std::vector<int> starts;
  for (int p = 0;; p += stride) {
    if (p + win >= dim) {
      starts.push_back(dim - win);
      break;
    }
    starts.push_back(p);
  }
  return starts;
}

}  // namespace

LabelVolume stage1_infer(const SemanticLogitsFn& fn, const Volume& working, Int3 window,
                         double overlap_fraction) {
  if (window.x < 1 || window.y < 1 || window.z < 1) throw DataError("stage1 window must be >= 1");
  if (!(overlap_fraction >= 0.0) || overlap_fraction >= 1.0)
    throw DataError("stage1 overlap_fraction must be in [0, 1)");

  // zero-pad volumes smaller than the window, crop the labels back afterwards
  Volume padded = working;
  if (working.dims.x < window.x || working.dims.y < window.y || working.dims.z < window.z) {
    const Int3 pd{std::max(working.dims.x, window.x), std::max(working.dims.y, window.y),
                  std::max(working.dims.z, window.z)};
    padded = make_volume(pd, working.spacing, working.origin, 0.0f);
    for (int z = 0; z < working.dims.z; ++z)
      for (int y = 0; y < working.dims.y; ++y)
        for (int x = 0; x < working.dims.x; ++x) padded.at(x, y, z) = working.at(x, y, z);
  }
  const Int3 d = padded.dims;
  const std::int64_t nvox = padded.voxel_count();
  std::vector<float> logit_sum(std::size_t(4 * nvox), 0.0f);
  std::vector<std::uint16_t> hits(std::size_t(nvox), 0);

  for (int z0 : window_starts(d.z, window.z, overlap_fraction))
    for (int y0 : window_starts(d.y, window.y, overlap_fraction))
      for (int x0 : window_starts(d.x, window.x, overlap_fraction)) {
        const VoxelBox box{{x0, y0, z0}, {x0 + window.x, y0 + window.y, z0 + window.z}};
        const Tensor logits = fn(volume_patch_to_tensor(padded, box), box);
        if (logits.shape() !=
            std::vector<std::int64_t>{1, 4, window.z, window.y, window.x})
          throw ShapeError("stage1 forward returned unexpected shape");
        const float* lp = logits.data().data();
        const std::int64_t ws = std::int64_t(window.x) * window.y * window.z;
        for (int z = 0; z < window.z; ++z)
          for (int y = 0; y < window.y; ++y)
            for (int x = 0; x < window.x; ++x) {
              const std::int64_t vi = padded.index(x + x0, y + y0, z + z0);
              const std::int64_t pi = (std::int64_t(z) * window.y + y) * window.x + x;
              for (int c = 0; c < 4; ++c)
                logit_sum[std::size_t(4 * vi + c)] += lp[c * ws + pi];
              hits[std::size_t(vi)] += 1;
            }
      }

  LabelVolume out = make_label_volume(working.dims, working.spacing, working.origin);
  for (int z = 0; z < working.dims.z; ++z)
    for (int y = 0; y < working.dims.y; ++y)
      for (int x = 0; x < working.dims.x; ++x) {
        const std::int64_t vi = padded.index(x, y, z);
        const float inv = 1.0f / float(hits[std::size_t(vi)]);
        int best = 0;
        float best_v = logit_sum[std::size_t(4 * vi)] * inv;
        for (int c = 1; c < 4; ++c) {
          const float v = logit_sum[std::size_t(4 * vi + c)] * inv;
          if (v > best_v) {
            best_v = v;
            best = c;
          }
        }
        out.at(x, y, z) = std::uint16_t(best);
      }
  return out;
}

SpineRoi spine_roi(const LabelVolume& stage1, int margin_vox) {
  SpineRoi roi;
  bool any = false;
  for (std::uint16_t cls = 1; cls <= 3; ++cls) {
    LabelVolume mask = make_label_volume(stage1.dims, stage1.spacing, stage1.origin);
    bool present = false;
    for (std::size_t i = 0; i < stage1.data.size(); ++i) {
      mask.data[i] = stage1.data[i] == cls;
      present |= mask.data[i] != 0;
    }
    if (!present) continue;
    const LabelVolume kept = largest_component(mask, 6);
    const auto boxes = class_bounding_boxes(kept, 0);
    if (boxes.empty()) continue;
    const VoxelBox b = boxes.begin()->second;
    roi.class_boxes[cls] = b;
    roi.union_box = any ? roi.union_box.united(b) : b;
    any = true;
  }
  if (!any) throw NoSpineFound("stage-1 labels contain no foreground");
  roi.union_box = roi.union_box.expanded(margin_vox, stage1.dims);
  return roi;
}

namespace {

VoxelBox patch_box_at(Int3 center, Int3 patch, Int3 dims) {
  Int3 lo{center.x - patch.x / 2, center.y - patch.y / 2, center.z - patch.z / 2};
  lo.x = std::clamp(lo.x, 0, dims.x - patch.x);
  lo.y = std::clamp(lo.y, 0, dims.y - patch.y);
  lo.z = std::clamp(lo.z, 0, dims.z - patch.z);
  return {lo, {lo.x + patch.x, lo.y + patch.y, lo.z + patch.z}};
}

}  // namespace

Stage2Output stage2_iterate(const InstanceProbFn& fn, const Volume& working,
                            const VoxelBox& roi, const Stage2Params& params,
                            const LabelVolume* initial_memory) {
  if (!roi.valid()) throw DataError("stage2 roi is empty");
  const Int3 d = working.dims;
  if (params.patch_dims.x > d.x || params.patch_dims.y > d.y || params.patch_dims.z > d.z)
    throw DataError("stage2 patch does not fit into the working volume");
  if (params.min_voxels < 1 || params.max_instances < 1)
    throw DataError("stage2 params out of range");

  Stage2Output out;
  out.instance_labels = make_label_volume(d, working.spacing, working.origin);
  // pre-seeded memory occupies the reserved id 0xffff: it blocks voxels and
  // feeds the memory channel without ever becoming an instance
  if (initial_memory) {
    if (initial_memory->dims != d) throw ShapeError("stage2 initial memory dims mismatch");
    for (std::size_t i = 0; i < out.instance_labels.data.size(); ++i)
      if (initial_memory->data[i]) out.instance_labels.data[i] = 0xffff;
  }

  Int3 center{(roi.lo.x + roi.hi.x) / 2, (roi.lo.y + roi.hi.y) / 2,
              roi.lo.z + params.patch_dims.z / 2};
  std::vector<std::int64_t> fresh;
  while (true) {
    if (center.z < roi.lo.z || center.z >= roi.hi.z) break;  // patch center left the roi
    const VoxelBox box = patch_box_at(center, params.patch_dims, d);
    const Tensor ct = volume_patch_to_tensor(working, box);
    const Tensor mem = mask_patch_to_tensor(out.instance_labels, box, 0x10000);
    const Tensor prob = fn(ct, mem, box);
    const Int3 e = box.extent();
    if (prob.shape() != std::vector<std::int64_t>{1, 1, e.z, e.y, e.x})
      throw ShapeError("stage2 forward returned unexpected shape");

    fresh.clear();
    const float* pp = prob.data().data();
    for (int z = 0; z < e.z; ++z)
      for (int y = 0; y < e.y; ++y)
        for (int x = 0; x < e.x; ++x) {
          if (*pp++ < params.prob_threshold) continue;
          const std::int64_t vi =
              out.instance_labels.index(x + box.lo.x, y + box.lo.y, z + box.lo.z);
          if (out.instance_labels.data[std::size_t(vi)] == 0) fresh.push_back(vi);
        }
    if (std::int64_t(fresh.size()) < params.min_voxels) break;

    VertebraInstance inst;
    inst.id = int(out.instances.size()) + 1;
    inst.voxels = std::int64_t(fresh.size());
    double sx = 0, sy = 0, sz = 0;
    Int3 lo{d.x, d.y, d.z}, hi{0, 0, 0};
    for (const std::int64_t vi : fresh) {
      out.instance_labels.data[std::size_t(vi)] = std::uint16_t(inst.id);
      const int x = int(vi % d.x);
      const int y = int((vi / d.x) % d.y);
      const int z = int(vi / (std::int64_t(d.x) * d.y));
      sx += x;
      sy += y;
      sz += z;
      lo = {std::min(lo.x, x), std::min(lo.y, y), std::min(lo.z, z)};
      hi = {std::max(hi.x, x + 1), std::max(hi.y, y + 1), std::max(hi.z, z + 1)};
    }
    const double n = double(fresh.size());
    const Double3 ci{sx / n, sy / n, sz / n};  // index-space centroid
    inst.centroid_mm = {working.origin.x + (ci.x + 0.5) * working.spacing.x,
                        working.origin.y + (ci.y + 0.5) * working.spacing.y,
                        working.origin.z + (ci.z + 0.5) * working.spacing.z};
    inst.bbox = {lo, hi};
    inst.truncated = lo.x == 0 || lo.y == 0 || lo.z == 0 || hi.x == d.x || hi.y == d.y ||
                     hi.z == d.z;
    out.instances.push_back(inst);
    if (int(out.instances.size()) >= params.max_instances) break;

    center = {int(std::llround(ci.x)), int(std::llround(ci.y)),
              int(std::llround(ci.z + double(hi.z - lo.z)))};
  }
  return out;
}

void assign_classes(std::vector<VertebraInstance>& instances,
                    const LabelVolume& instance_labels, const LabelVolume& stage1,
                    std::vector<std::string>& warnings) {
  if (instance_labels.dims != stage1.dims)
    throw ShapeError("assign_classes: stage1/instance geometry mismatch");
  std::vector<int> assigned(instances.size(), 0);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const VertebraInstance& inst = instances[i];
    std::int64_t counts[4] = {0, 0, 0, 0};
    for (int z = inst.bbox.lo.z; z < inst.bbox.hi.z; ++z)
      for (int y = inst.bbox.lo.y; y < inst.bbox.hi.y; ++y)
        for (int x = inst.bbox.lo.x; x < inst.bbox.hi.x; ++x)
          if (instance_labels.at(x, y, z) == inst.id) ++counts[stage1.at(x, y, z)];
    const std::int64_t best = std::max({counts[1], counts[2], counts[3]});
    if (best == 0) continue;  // resolved from neighbors below
    std::vector<int> tied;
    for (int c = 1; c <= 3; ++c)
      if (counts[c] == best) tied.push_back(c);
    int choice = tied.front();
    if (tied.size() > 1 && i > 0 && assigned[i - 1] != 0 &&
        std::find(tied.begin(), tied.end(), assigned[i - 1]) != tied.end())
      choice = assigned[i - 1];
    assigned[i] = choice;
  }
  // instances with no stage-1 overlap inherit the nearest classified neighbor
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (assigned[i] != 0) continue;
    int best_j = -1, best_d = 1 << 30;
    for (std::size_t j = 0; j < instances.size(); ++j) {
      if (assigned[j] == 0) continue;
      const int dist = int(i > j ? i - j : j - i);
      if (dist < best_d) {
        best_d = dist;
        best_j = int(j);
      }
    }
    if (best_j < 0) {
      assigned[i] = int(SpineClass::thoracic);
      warnings.push_back("instance " + std::to_string(instances[i].id) +
                         " has no stage-1 overlap and no classified neighbor; assumed thoracic");
    } else {
      assigned[i] = assigned[std::size_t(best_j)];
      warnings.push_back("instance " + std::to_string(instances[i].id) +
                         " has no stage-1 overlap; inherited class of instance " +
                         std::to_string(instances[std::size_t(best_j)].id));
    }
  }
  for (std::size_t i = 0; i < instances.size(); ++i)
    instances[i].coarse_class = SpineClass(assigned[i]);
}

void assign_anatomical_labels(std::vector<VertebraInstance>& instances,
                              std::vector<std::string>& warnings) {
  if (instances.empty()) throw DataError("assign_anatomical_labels: empty instance list");
  const int n = int(instances.size());

  // best monotone C..T..L partition by agreement; ties prefer earlier cuts
  std::vector<int> pc(std::size_t(n) + 1, 0), pt(std::size_t(n) + 1, 0), pl(std::size_t(n) + 1, 0);
  for (int i = 0; i < n; ++i) {
    pc[std::size_t(i) + 1] = pc[std::size_t(i)] +
                             (instances[std::size_t(i)].coarse_class == SpineClass::cervical);
    pt[std::size_t(i) + 1] = pt[std::size_t(i)] +
                             (instances[std::size_t(i)].coarse_class == SpineClass::thoracic);
    pl[std::size_t(i) + 1] = pl[std::size_t(i)] +
                             (instances[std::size_t(i)].coarse_class == SpineClass::lumbar);
  }
  int bi = 0, bj = 0, best = -1;
  for (int i = 0; i <= n; ++i)
    for (int j = i; j <= n; ++j) {
      const int agree = pc[std::size_t(i)] + (pt[std::size_t(j)] - pt[std::size_t(i)]) +
                        (pl[std::size_t(n)] - pl[std::size_t(j)]);
      if (agree > best) {
        best = agree;
        bi = i;
        bj = j;
      }
    }
  int changed = 0;
  for (int k = 0; k < n; ++k) {
    const SpineClass want = k < bi ? SpineClass::cervical
                            : k < bj ? SpineClass::thoracic
                                     : SpineClass::lumbar;
    if (instances[std::size_t(k)].coarse_class != want) {
      instances[std::size_t(k)].coarse_class = want;
      ++changed;
    }
  }
  if (changed > 0)
    warnings.push_back("reassigned " + std::to_string(changed) +
                       " instance class(es) to make the class sequence monotone");

  const bool has_c = bi > 0, has_t = bj > bi, has_l = bj < n;
  int anchor_idx = 0, anchor_ord = 0;
  bool anchored = false;
  if (has_c && has_t) {
    anchor_idx = bi;
    anchor_ord = AnatomicalLabel::kFirstThoracic;
    anchored = true;
    if (has_l && bj - bi != 12)
      warnings.push_back("thoracic count " + std::to_string(bj - bi) +
                         " != 12 between anchors; preferring the C->T anchor");
  } else if (has_t && has_l) {
    anchor_idx = bj;
    anchor_ord = AnatomicalLabel::kFirstLumbar;
    anchored = true;
  } else if (has_c && has_l) {
    anchor_idx = 0;
    anchor_ord = 1;  // C1
    anchored = false;
    warnings.push_back("cervical followed directly by lumbar; labels are unanchored");
  } else {
    anchor_idx = 0;
    anchor_ord = AnatomicalLabel::first_of(instances[0].coarse_class).ordinal();
    anchored = false;
  }

  for (int k = 0; k < n; ++k) {
    const int ord = anchor_ord + (k - anchor_idx);
    VertebraInstance& inst = instances[std::size_t(k)];
    inst.anatomical.reset();
    inst.anchored = false;
    if (ord < 1 || ord > AnatomicalLabel::kCount) {
      warnings.push_back("instance " + std::to_string(inst.id) +
                         " counts past the valid label range; left unlabeled");
      continue;
    }
    const AnatomicalLabel label(ord);
    if (label.cls() != inst.coarse_class) {
      warnings.push_back("instance " + std::to_string(inst.id) + " counts to " + label.name() +
                         " which disagrees with its class; left unlabeled");
      continue;
    }
    inst.anatomical = label;
    inst.anchored = anchored;
  }
}

CascadeResult finalize(const LabelVolume& stage1_working, Stage2Output&& stage2,
                       std::vector<std::string>&& warnings, Int3 dims, Double3 spacing,
                       Double3 origin) {
  CascadeResult result;
  result.warnings = std::move(warnings);
  result.stage1_labels = resample_labels_to(stage1_working, dims, spacing, origin);
  result.instance_labels = resample_labels_to(stage2.instance_labels, dims, spacing, origin);

  const int n_in = int(stage2.instances.size());
  std::vector<double> sx(std::size_t(n_in), 0), sy(std::size_t(n_in), 0), sz(std::size_t(n_in), 0);
  std::vector<std::int64_t> cnt(std::size_t(n_in), 0);
  std::vector<VoxelBox> boxes(std::size_t(n_in), VoxelBox{{1 << 30, 1 << 30, 1 << 30}, {0, 0, 0}});
  for (int z = 0; z < dims.z; ++z)
    for (int y = 0; y < dims.y; ++y)
      for (int x = 0; x < dims.x; ++x) {
        const std::uint16_t id = result.instance_labels.at(x, y, z);
        if (!id || id > n_in) continue;
        const std::size_t i = id - 1;
        const Double3 p = result.instance_labels.voxel_center_mm(x, y, z);
        sx[i] += p.x;
        sy[i] += p.y;
        sz[i] += p.z;
        cnt[i] += 1;
        boxes[i].lo = {std::min(boxes[i].lo.x, x), std::min(boxes[i].lo.y, y),
                       std::min(boxes[i].lo.z, z)};
        boxes[i].hi = {std::max(boxes[i].hi.x, x + 1), std::max(boxes[i].hi.y, y + 1),
                       std::max(boxes[i].hi.z, z + 1)};
      }

  std::vector<VertebraInstance> kept;
  for (int i = 0; i < n_in; ++i) {
    if (cnt[std::size_t(i)] == 0) {
      result.warnings.push_back("instance " + std::to_string(i + 1) +
                                " vanished when mapped to the input resolution; dropped");
      continue;
    }
    VertebraInstance inst = stage2.instances[std::size_t(i)];
    inst.voxels = cnt[std::size_t(i)];
    inst.centroid_mm = {sx[std::size_t(i)] / double(cnt[std::size_t(i)]),
                        sy[std::size_t(i)] / double(cnt[std::size_t(i)]),
                        sz[std::size_t(i)] / double(cnt[std::size_t(i)])};
    inst.bbox = boxes[std::size_t(i)];
    inst.truncated = inst.bbox.lo.x == 0 || inst.bbox.lo.y == 0 || inst.bbox.lo.z == 0 ||
                     inst.bbox.hi.x == dims.x || inst.bbox.hi.y == dims.y ||
                     inst.bbox.hi.z == dims.z;
    kept.push_back(inst);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const VertebraInstance& a, const VertebraInstance& b) {
                     return a.centroid_mm.z < b.centroid_mm.z;
                   });
  // renumber ids cranial to caudal
  std::vector<std::uint16_t> remap(std::size_t(n_in) + 1, 0);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    remap[std::size_t(kept[i].id)] = std::uint16_t(i + 1);
    kept[i].id = int(i + 1);
  }
  for (auto& id : result.instance_labels.data) id = id <= n_in ? remap[id] : 0;
  result.instances = std::move(kept);
  return result;
}

CascadeResult run_cascade(const SemanticLogitsFn& semantic, const InstanceProbFn& instance,
                          const Volume& input_hu, const CascadeParams& params) {
  validate(input_hu);
  const Volume working =
      resample_isotropic(clip_normalize(input_hu), params.working_spacing_mm, Interp::linear);
  const LabelVolume stage1 = stage1_infer(semantic, working, params.window,
                                          params.overlap_fraction);
  const SpineRoi roi = spine_roi(stage1, params.roi_margin_vox);
  Stage2Output stage2 = stage2_iterate(instance, working, roi.union_box, params.stage2);

  std::vector<std::string> warnings;
  std::stable_sort(stage2.instances.begin(), stage2.instances.end(),
                   [](const VertebraInstance& a, const VertebraInstance& b) {
                     return a.centroid_mm.z < b.centroid_mm.z;
                   });
  if (!stage2.instances.empty()) {
    assign_classes(stage2.instances, stage2.instance_labels, stage1, warnings);
    assign_anatomical_labels(stage2.instances, warnings);
  } else {
    warnings.push_back("stage 2 segmented no instances");
  }
  return finalize(stage1, std::move(stage2), std::move(warnings), input_hu.dims,
                  input_hu.spacing, input_hu.origin);
}

void write_result_bundle(const CascadeResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_label_volume(result.stage1_labels, dir / "stage1_labels.json");
  write_label_volume(result.instance_labels, dir / "instance_labels.json");

  nlohmann::json j;
  auto arr = nlohmann::json::array();
  for (const VertebraInstance& inst : result.instances) {
    nlohmann::json e;
    e["id"] = inst.id;
    e["class"] = to_string(inst.coarse_class);
    e["anatomical"] =
        inst.anatomical ? nlohmann::json(inst.anatomical->name()) : nlohmann::json(nullptr);
    e["anchored"] = inst.anchored;
    e["truncated"] = inst.truncated;
    e["centroid_mm"] = {inst.centroid_mm.x, inst.centroid_mm.y, inst.centroid_mm.z};
    e["voxels"] = inst.voxels;
    arr.push_back(std::move(e));
  }
  j["instances"] = std::move(arr);
  j["warnings"] = result.warnings;
  {
    std::ofstream out(dir / "report.json.tmp", std::ios::trunc);
    out << j.dump(2) << "\n";
    if (!out) throw IoError(IoError::Kind::write_failure, "cannot write report.json");
  }
  std::filesystem::rename(dir / "report.json.tmp", dir / "report.json");

  std::vector<LabeledCentroid> centroids;
  for (const VertebraInstance& inst : result.instances)
    if (inst.anatomical) centroids.push_back({*inst.anatomical, inst.centroid_mm});
  write_labeled_centroids(centroids, dir / "centroids.json");
}

CascadeResult read_result_bundle(const std::filesystem::path& dir) {
  CascadeResult result;
  result.stage1_labels = read_label_volume(dir / "stage1_labels.json");
  result.instance_labels = read_label_volume(dir / "instance_labels.json");
  std::ifstream in(dir / "report.json");
  if (!in) throw IoError(IoError::Kind::missing_file, "no report.json in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
    for (const auto& e : j.at("instances")) {
      VertebraInstance inst;
      inst.id = e.at("id").get<int>();
      const auto cls = spine_class_from_string(e.at("class").get<std::string>());
      if (!cls) throw DataError("bad class in report.json");
      inst.coarse_class = *cls;
      if (!e.at("anatomical").is_null())
        inst.anatomical = AnatomicalLabel::parse(e.at("anatomical").get<std::string>());
      inst.anchored = e.at("anchored").get<bool>();
      inst.truncated = e.at("truncated").get<bool>();
      const auto& c = e.at("centroid_mm");
      inst.centroid_mm = {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()};
      inst.voxels = e.at("voxels").get<std::int64_t>();
      result.instances.push_back(inst);
    }
    for (const auto& w : j.at("warnings")) result.warnings.push_back(w.get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoError::Kind::bad_header,
                  "malformed report.json in " + dir.string() + ": " + e.what());
  }
  return result;
}

}  // namespace spine
