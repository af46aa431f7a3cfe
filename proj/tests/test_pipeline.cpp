#include <doctest.h>

#include <filesystem>

#include "cascade_oracles.hpp"
#include "spine/errors.hpp"
#include "spine/metrics.hpp"
#include "spine/pipeline.hpp"

using namespace spine;

namespace {

VertebraInstance inst_with_class(int id, SpineClass c) {
  VertebraInstance v;
  v.id = id;
  v.coarse_class = c;
  v.voxels = 100;
  return v;
}

std::vector<VertebraInstance> instances_of(const std::string& seq) {
  std::vector<VertebraInstance> out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const SpineClass c = seq[i] == 'C'   ? SpineClass::cervical
                         : seq[i] == 'T' ? SpineClass::thoracic
                                         : SpineClass::lumbar;
    out.push_back(inst_with_class(int(i) + 1, c));
  }
  return out;
}

std::vector<std::string> label_names(const std::vector<VertebraInstance>& v) {
  std::vector<std::string> names;
  for (const auto& i : v) names.push_back(i.anatomical ? i.anatomical->name() : "-");
  return names;
}

LabelVolume binary_of(const LabelVolume& ids, std::uint16_t id) {
  LabelVolume m = make_label_volume(ids.dims, ids.spacing, ids.origin);
  for (std::size_t i = 0; i < ids.data.size(); ++i) m.data[i] = ids.data[i] == id;
  return m;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("stage1_infer: constant-logit stub is invariant to windowing") {
  Volume v = make_volume({20, 12, 12});
  SemanticLogitsFn stub = [](const Tensor&, const VoxelBox& box) {
    const Int3 e = box.extent();
    Tensor t = Tensor::zeros({1, 4, e.z, e.y, e.x});
    const std::int64_t s = std::int64_t(e.x) * e.y * e.z;
    for (std::int64_t i = 0; i < s; ++i) {
      t.data()[std::size_t(0 * s + i)] = 0.1f;
      t.data()[std::size_t(1 * s + i)] = 0.2f;
      t.data()[std::size_t(2 * s + i)] = 0.7f;
      t.data()[std::size_t(3 * s + i)] = 0.3f;
    }
    return t;
  };
  for (double overlap : {0.0, 0.25, 0.5}) {
    LabelVolume l = stage1_infer(stub, v, {8, 8, 8}, overlap);
    for (auto d : l.data) CHECK(d == 2);
  }
  // volume smaller than the window: pad + crop back
  Volume small = make_volume({5, 5, 5});
  LabelVolume ls = stage1_infer(stub, small, {8, 8, 8}, 0.5);
  CHECK(ls.dims == Int3{5, 5, 5});
  for (auto d : ls.data) CHECK(d == 2);
}

TEST_CASE("stage1_infer: overlapping windows average logits (hand aggregation)") {
  // volume 48 wide, window 32, overlap 0.5 -> x starts {0, 16}; y,z single
  Rng rng(41);
  Volume v = make_volume({48, 32, 32});
  for (auto& f : v.data) f = float(rng.uniform(0.0, 1.0));

  // logits depend on the patch mean, so the two windows genuinely differ
  auto patch_mean = [](const Tensor& t) {
    double s = 0;
    for (float f : t.data()) s += f;
    return float(s / double(t.data().size()));
  };
  SemanticLogitsFn fn = [&](const Tensor& ct, const VoxelBox& box) {
    const Int3 e = box.extent();
    Tensor t = Tensor::zeros({1, 4, e.z, e.y, e.x});
    const std::int64_t s = std::int64_t(e.x) * e.y * e.z;
    const float m = patch_mean(ct);
    for (std::int64_t i = 0; i < s; ++i) {
      t.data()[std::size_t(i)] = 0.45f;
      t.data()[std::size_t(s + i)] = ct.data()[std::size_t(i)];
      t.data()[std::size_t(2 * s + i)] = m;
      t.data()[std::size_t(3 * s + i)] = -1.0f;
    }
    return t;
  };
  LabelVolume got = stage1_infer(fn, v, {32, 32, 32}, 0.5);

  // hand aggregation over the two known windows
  const VoxelBox wa{{0, 0, 0}, {32, 32, 32}}, wb{{16, 0, 0}, {48, 32, 32}};
  const float ma = patch_mean(volume_patch_to_tensor(v, wa));
  const float mb = patch_mean(volume_patch_to_tensor(v, wb));
  for (int z = 0; z < 32; ++z)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 48; ++x) {
        const bool in_a = x < 32, in_b = x >= 16;
        const float m = (in_a && in_b) ? 0.5f * (ma + mb) : (in_a ? ma : mb);
        const float c1 = v.at(x, y, z);
        int best = 0;
        float bv = 0.45f;
        if (c1 > bv) {
          bv = c1;
          best = 1;
        }
        if (m > bv) {
          bv = m;
          best = 2;
        }
        CHECK(got.at(x, y, z) == best);
      }
}

TEST_CASE("spine_roi: phantom truth box contains every instance voxel") {
  PhantomSpec s;
  s.seed = 51;
  s.first_ordinal = 5;
  s.last_ordinal = 11;  // C5..T4
  PhantomTruth t = generate_phantom(s);
  SpineRoi roi = spine_roi(t.class_labels, 8);
  CHECK(roi.class_boxes.size() == 2);
  for (int z = 0; z < t.instance_labels.dims.z; ++z)
    for (int y = 0; y < t.instance_labels.dims.y; ++y)
      for (int x = 0; x < t.instance_labels.dims.x; ++x)
        if (t.instance_labels.at(x, y, z)) CHECK(roi.union_box.contains(Int3{x, y, z}));
}

TEST_CASE("spine_roi: single class and empty input") {
  LabelVolume l = make_label_volume({10, 10, 10});
  CHECK_THROWS_AS(spine_roi(l, 2), NoSpineFound);
  l.at(4, 4, 4) = 3;
  l.at(4, 5, 4) = 3;
  SpineRoi roi = spine_roi(l, 2);
  CHECK(roi.class_boxes.size() == 1);
  CHECK(roi.class_boxes.count(3) == 1);
  CHECK(roi.union_box == VoxelBox{{2, 2, 2}, {7, 8, 7}});
}

TEST_CASE("stage2_iterate with the truth oracle reproduces all instances exactly") {
  PhantomSpec s;
  s.seed = 52;
  s.first_ordinal = 16;  // T9..L2: crosses T/L
  s.last_ordinal = 21;
  PhantomTruth t = generate_phantom(s);
  const Volume working = resample_isotropic(clip_normalize(t.image), 1.0, Interp::linear);
  const SpineRoi roi = spine_roi(t.class_labels, 8);
  const auto fn = oracle::instance_from_truth(t.instance_labels, t.instance_count());
  Stage2Params params;
  Stage2Output out = stage2_iterate(fn, working, roi.union_box, params);
  REQUIRE(int(out.instances.size()) == t.instance_count());
  for (int id = 1; id <= t.instance_count(); ++id) {
    CHECK(dice(binary_of(out.instance_labels, std::uint16_t(id)),
               binary_of(t.instance_labels, std::uint16_t(id))) == 1.0);
  }
}

TEST_CASE("stage2_iterate: pre-seeded memory of all truth masks yields nothing") {
  PhantomSpec s;
  s.seed = 53;
  PhantomTruth t = generate_phantom(s);
  const Volume working = resample_isotropic(clip_normalize(t.image), 1.0, Interp::linear);
  const SpineRoi roi = spine_roi(t.class_labels, 8);
  const auto fn = oracle::instance_from_truth(t.instance_labels, t.instance_count());
  Stage2Output out = stage2_iterate(fn, working, roi.union_box, Stage2Params{}, &t.instance_labels);
  CHECK(out.instances.empty());
}

TEST_CASE("stage2_iterate: max_instances caps the loop") {
  PhantomSpec s;
  s.seed = 54;
  PhantomTruth t = generate_phantom(s);
  const Volume working = resample_isotropic(clip_normalize(t.image), 1.0, Interp::linear);
  const SpineRoi roi = spine_roi(t.class_labels, 8);
  const auto fn = oracle::instance_from_truth(t.instance_labels, t.instance_count());
  Stage2Params params;
  params.max_instances = 2;
  Stage2Output out = stage2_iterate(fn, working, roi.union_box, params);
  CHECK(out.instances.size() == 2);
}

TEST_CASE("assign_classes: majority, tie rule, and zero-overlap fallback") {
  const Int3 dims{12, 4, 12};
  LabelVolume ids = make_label_volume(dims);
  LabelVolume stage1 = make_label_volume(dims);
  std::vector<VertebraInstance> instances;

  // instance 1: fully thoracic stage-1 region
  for (int x = 0; x < 4; ++x) {
    ids.at(x, 1, 1) = 1;
    stage1.at(x, 1, 1) = 2;
  }
  VertebraInstance i1;
  i1.id = 1;
  i1.bbox = {{0, 1, 1}, {4, 2, 2}};
  instances.push_back(i1);

  // instance 2: 60/40 thoracic/lumbar
  for (int x = 0; x < 5; ++x) {
    ids.at(x, 1, 4) = 2;
    stage1.at(x, 1, 4) = x < 3 ? 2 : 3;
  }
  VertebraInstance i2;
  i2.id = 2;
  i2.bbox = {{0, 1, 4}, {5, 2, 5}};
  instances.push_back(i2);

  // instance 3: zero overlap with stage-1 foreground
  for (int x = 0; x < 3; ++x) ids.at(x, 1, 7) = 3;
  VertebraInstance i3;
  i3.id = 3;
  i3.bbox = {{0, 1, 7}, {3, 2, 8}};
  instances.push_back(i3);

  std::vector<std::string> warnings;
  assign_classes(instances, ids, stage1, warnings);
  CHECK(instances[0].coarse_class == SpineClass::thoracic);
  CHECK(instances[1].coarse_class == SpineClass::thoracic);  // 3 vs 2 majority
  CHECK(instances[2].coarse_class == SpineClass::thoracic);  // inherited
  CHECK(warnings.size() == 1);

  // exact 50/50 tie with a cervical previous neighbor
  LabelVolume ids2 = make_label_volume(dims);
  LabelVolume stage2v = make_label_volume(dims);
  std::vector<VertebraInstance> instances2;
  for (int x = 0; x < 4; ++x) {
    ids2.at(x, 1, 1) = 1;
    stage2v.at(x, 1, 1) = 1;  // cervical
  }
  VertebraInstance j1;
  j1.id = 1;
  j1.bbox = {{0, 1, 1}, {4, 2, 2}};
  instances2.push_back(j1);
  for (int x = 0; x < 4; ++x) {
    ids2.at(x, 1, 4) = 2;
    stage2v.at(x, 1, 4) = x < 2 ? 1 : 2;  // 2 cervical, 2 thoracic
  }
  VertebraInstance j2;
  j2.id = 2;
  j2.bbox = {{0, 1, 4}, {4, 2, 5}};
  instances2.push_back(j2);
  std::vector<std::string> warnings2;
  assign_classes(instances2, ids2, stage2v, warnings2);
  CHECK(instances2[1].coarse_class == SpineClass::cervical);
}

TEST_CASE("assign_anatomical_labels: C->T anchor") {
  auto v = instances_of("CCTTT");
  std::vector<std::string> w;
  assign_anatomical_labels(v, w);
  CHECK(label_names(v) == std::vector<std::string>{"C6", "C7", "T1", "T2", "T3"});
  for (const auto& i : v) CHECK(i.anchored);
  CHECK(w.empty());
}

TEST_CASE("assign_anatomical_labels: T->L anchor") {
  auto v = instances_of("TTLL");
  std::vector<std::string> w;
  assign_anatomical_labels(v, w);
  CHECK(label_names(v) == std::vector<std::string>{"T11", "T12", "L1", "L2"});
  for (const auto& i : v) CHECK(i.anchored);
}

TEST_CASE("assign_anatomical_labels: unanchored single-class fallback") {
  auto v = instances_of("TTT");
  std::vector<std::string> w;
  assign_anatomical_labels(v, w);
  CHECK(label_names(v) == std::vector<std::string>{"T1", "T2", "T3"});
  for (const auto& i : v) CHECK(!i.anchored);
}

TEST_CASE("assign_anatomical_labels: counting past the range leaves a warning") {
  auto v = instances_of("CCCCCCCC");  // 8 cervicals, only 7 exist
  std::vector<std::string> w;
  assign_anatomical_labels(v, w);
  auto names = label_names(v);
  CHECK(names[0] == "C1");
  CHECK(names[6] == "C7");
  CHECK(names[7] == "-");
  CHECK(!w.empty());

  // anchored backward past C1: 8 cervicals before T1
  auto v2 = instances_of("CCCCCCCCT");
  std::vector<std::string> w2;
  assign_anatomical_labels(v2, w2);
  auto names2 = label_names(v2);
  CHECK(names2[0] == "-");  // would be "C0"
  CHECK(names2[1] == "C1");
  CHECK(names2[8] == "T1");
  CHECK(!w2.empty());
}

TEST_CASE("assign_anatomical_labels: both anchors with inconsistent thoracic count") {
  auto v = instances_of("CCTTTTTTTTTTTLL");  // 11 thoracic
  std::vector<std::string> w;
  assign_anatomical_labels(v, w);
  auto names = label_names(v);
  CHECK(names[0] == "C6");
  CHECK(names[2] == "T1");
  CHECK(names[12] == "T11");
  CHECK(names[13] == "-");  // counts to T12 but is lumbar
  bool saw = false;
  for (const auto& msg : w) saw |= msg.find("!= 12") != std::string::npos;
  CHECK(saw);
}

TEST_CASE("assign_anatomical_labels: non-monotone input is repaired with a warning") {
  auto v = instances_of("CTCTT");
  std::vector<std::string> w;
  assign_anatomical_labels(v, w);
  bool saw = false;
  for (const auto& msg : w) saw |= msg.find("monotone") != std::string::npos;
  CHECK(saw);
  CHECK(label_names(v) == std::vector<std::string>{"C7", "T1", "T2", "T3", "T4"});

  std::vector<VertebraInstance> empty;
  std::vector<std::string> we;
  CHECK_THROWS_AS(assign_anatomical_labels(empty, we), DataError);
}

TEST_CASE("finalize: centroid arithmetic at anisotropic input resolution") {
  // working 1mm labels: single voxel at (2,3,4) maps back to input geometry
  LabelVolume stage1 = make_label_volume({8, 8, 10});
  Stage2Output s2;
  s2.instance_labels = make_label_volume({8, 8, 10});
  s2.instance_labels.at(2, 3, 4) = 1;
  VertebraInstance inst;
  inst.id = 1;
  inst.voxels = 1;
  inst.bbox = {{2, 3, 4}, {3, 4, 5}};
  s2.instances.push_back(inst);

  // input geometry covers the same physical extent at 0.5 mm: the mask maps
  // to a block of finer voxels and the centroid must equal their center mean
  CascadeResult r = finalize(stage1, std::move(s2), {}, {16, 16, 20}, {0.5, 0.5, 0.5}, {0, 0, 0});
  REQUIRE(r.instances.size() == 1);
  std::int64_t cnt = 0;
  double sx = 0, sy = 0, sz = 0;
  for (int z = 0; z < 20; ++z)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        if (r.instance_labels.at(x, y, z) == 1) {
          ++cnt;
          const Double3 p = r.instance_labels.voxel_center_mm(x, y, z);
          sx += p.x;
          sy += p.y;
          sz += p.z;
        }
  REQUIRE(cnt == r.instances[0].voxels);
  CHECK(r.instances[0].centroid_mm.x == doctest::Approx(sx / double(cnt)).epsilon(1e-12));
  CHECK(r.instances[0].centroid_mm.z == doctest::Approx(sz / double(cnt)).epsilon(1e-12));
}

TEST_CASE("finalize: single voxel at the stated convention") {
  LabelVolume stage1 = make_label_volume({8, 8, 10}, {0.5, 0.5, 2.0});
  Stage2Output s2;
  s2.instance_labels = make_label_volume({8, 8, 10}, {0.5, 0.5, 2.0});
  s2.instance_labels.at(2, 3, 4) = 1;
  VertebraInstance inst;
  inst.id = 1;
  inst.voxels = 1;
  inst.bbox = {{2, 3, 4}, {3, 4, 5}};
  s2.instances.push_back(inst);
  // identical geometry: nearest-neighbor mapping is the identity
  CascadeResult r = finalize(stage1, std::move(s2), {}, {8, 8, 10}, {0.5, 0.5, 2.0}, {0, 0, 0});
  REQUIRE(r.instances.size() == 1);
  CHECK(r.instances[0].centroid_mm.x == doctest::Approx(1.25));
  CHECK(r.instances[0].centroid_mm.y == doctest::Approx(1.75));
  CHECK(r.instances[0].centroid_mm.z == doctest::Approx(9.0));
}

TEST_CASE("oracle cascade reproduces phantom ground truth end to end") {
  PhantomSpec s;
  s.seed = 55;
  s.first_ordinal = 4;  // C4..T2 crosses C/T
  s.last_ordinal = 9;
  PhantomTruth t = generate_phantom(s);
  CascadeParams params;
  CascadeResult r = run_cascade(oracle::semantic_from_truth(t.class_labels),
                                oracle::instance_from_truth(t.instance_labels, t.instance_count()),
                                t.image, params);
  REQUIRE(int(r.instances.size()) == t.instance_count());
  for (int i = 0; i < t.instance_count(); ++i) {
    const VertebraInstance& inst = r.instances[std::size_t(i)];
    REQUIRE(inst.anatomical.has_value());
    CHECK(inst.anatomical->name() == t.anatomical[std::size_t(i)].name());
    CHECK(inst.anchored);
    CHECK(dice(binary_of(r.instance_labels, std::uint16_t(inst.id)),
               binary_of(t.instance_labels, std::uint16_t(i + 1))) == 1.0);
    CHECK(distance(inst.centroid_mm, t.centroids_mm[std::size_t(i)]) <= 0.5);
  }
  // disjointness is structural (one id volume); assert the count matches
  std::int64_t truth_fg = 0, got_fg = 0;
  for (auto v : t.instance_labels.data) truth_fg += v != 0;
  for (auto v : r.instance_labels.data) got_fg += v != 0;
  CHECK(truth_fg == got_fg);
}

TEST_CASE("result bundle round-trips") {
  namespace fs = std::filesystem;
  PhantomSpec s;
  s.seed = 56;
  PhantomTruth t = generate_phantom(s);
  CascadeResult r = run_cascade(oracle::semantic_from_truth(t.class_labels),
                                oracle::instance_from_truth(t.instance_labels, t.instance_count()),
                                t.image, CascadeParams{});
  const fs::path dir = fs::temp_directory_path() / "spine_test_bundle";
  write_result_bundle(r, dir);
  CascadeResult rr = read_result_bundle(dir);
  REQUIRE(rr.instances.size() == r.instances.size());
  for (std::size_t i = 0; i < r.instances.size(); ++i) {
    CHECK(rr.instances[i].id == r.instances[i].id);
    CHECK(rr.instances[i].coarse_class == r.instances[i].coarse_class);
    CHECK(rr.instances[i].anatomical.has_value() == r.instances[i].anatomical.has_value());
    if (rr.instances[i].anatomical)
      CHECK(rr.instances[i].anatomical->name() == r.instances[i].anatomical->name());
    CHECK(rr.instances[i].voxels == r.instances[i].voxels);
    CHECK(rr.instances[i].centroid_mm.z ==
          doctest::Approx(r.instances[i].centroid_mm.z).epsilon(1e-9));
  }
  CHECK(rr.instance_labels.data == r.instance_labels.data);
  CHECK(rr.warnings == r.warnings);
}

}  // TEST_SUITE
