#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "spine/checkpoint.hpp"
#include "spine/cli.hpp"
#include "spine/errors.hpp"
#include "spine/train.hpp"

using namespace spine;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* tag) {
  const fs::path p = fs::temp_directory_path() / (std::string("spine_test_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// 3 small phantoms + manifest
fs::path tiny_dataset(const char* tag, int count = 3) {
  const fs::path dir = fresh_dir(tag);
  cli::PhantomGenArgs args;
  args.out_dir = dir;
  args.count = count;
  args.seed = 7;
  cli::cmd_phantom_gen(args);
  return dir;
}

TrainConfig tiny_stage1_config(const fs::path& dataset, const fs::path& out_dir) {
  TrainConfig cfg;
  cfg.net = {.in_channels = 1, .out_channels = 4, .depth = 1, .base_width = 2, .width_growth = 2};
  cfg.augment.crop_dims = {16, 16, 16};
  cfg.iterations = 3;
  cfg.seed = 5;
  cfg.dataset_dir = dataset;
  cfg.checkpoint_path = out_dir / "s1.json";
  cfg.loss_csv_path = out_dir / "s1_loss.csv";
  return cfg;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("config loading: defaults, relative paths, unknown keys") {
  const fs::path dir = fresh_dir("cfg");
  {
    std::ofstream out(dir / "train.json");
    out << R"({"iterations": 7, "dataset": "data", "checkpoint": "out/ck.json",
               "net": {"depth": 2}, "augment": {"crop_dims": [16,16,16]}})";
  }
  TrainConfig cfg = load_train_config(dir / "train.json");
  CHECK(cfg.iterations == 7);
  CHECK(cfg.lr == 0.001);
  CHECK(cfg.net.depth == 2);
  CHECK(cfg.net.base_width == 8);
  CHECK(cfg.augment.crop_dims == Int3{16, 16, 16});
  CHECK(cfg.augment.scale_min == 0.8);
  CHECK(cfg.dataset_dir == dir / "data");
  CHECK(cfg.checkpoint_path == dir / "out/ck.json");

  {
    std::ofstream out(dir / "bad.json");
    out << R"({"iterations": 7, "learning_rate": 0.01})";
  }
  CHECK_THROWS_AS(load_train_config(dir / "bad.json"), ConfigError);
}

TEST_CASE("dataset loading prepares working-space cases") {
  const fs::path data = tiny_dataset("ds_load");
  Dataset ds = load_dataset(data);
  REQUIRE(ds.cases.size() == 3);
  for (const auto& c : ds.cases) {
    CHECK(c.normalized.spacing == Double3{1, 1, 1});
    CHECK(c.instance_count() >= 6);
    CHECK(c.centroids_idx.size() == std::size_t(c.instance_count()));
    for (float f : c.normalized.data) {
      CHECK(f >= -1.0f);
      CHECK(f <= 1.0f);
    }
  }
}

TEST_CASE("stage-2 sampler: memory holds exactly the instances before k") {
  const fs::path data = tiny_dataset("ds_sampler");
  Dataset ds = load_dataset(data);
  const DatasetCase& c = ds.cases[0];
  const Int3 patch{40, 40, 32};
  for (int k = 1; k <= c.instance_count() + 1; ++k) {
    Rng rng(99);
    const Stage2Sample s = make_stage2_sample(c, k, patch, 0, AugmentSpec{}, rng, false);
    // reconstruct the expected patch box exactly as the sampler does
    Double3 center = k <= c.instance_count() ? c.centroids_idx[std::size_t(k - 1)]
                                             : c.centroids_idx.back();
    if (k > c.instance_count()) center.z += c.z_extent.back();
    const Int3 d = c.normalized.dims;
    const Int3 lo{
        std::clamp(int(std::llround(center.x)) - patch.x / 2, 0, d.x - patch.x),
        std::clamp(int(std::llround(center.y)) - patch.y / 2, 0, d.y - patch.y),
        std::clamp(int(std::llround(center.z)) - patch.z / 2, 0, d.z - patch.z)};
    std::size_t i = 0;
    for (int z = 0; z < patch.z; ++z)
      for (int y = 0; y < patch.y; ++y)
        for (int x = 0; x < patch.x; ++x, ++i) {
          const std::uint16_t id = c.instance_labels.at(x + lo.x, y + lo.y, z + lo.z);
          CHECK(s.memory.data()[i] == ((id != 0 && int(id) < k) ? 1.0f : 0.0f));
          CHECK(s.target.data()[i] == (int(id) == k ? 1.0f : 0.0f));
        }
    if (k == c.instance_count() + 1) {
      float sum = 0;
      for (float f : s.target.data()) sum += f;
      CHECK(sum == 0.0f);  // termination sample has an empty target
    }
  }
}

TEST_CASE("stage-1 training smoke run: checkpoint + loss csv") {
  const fs::path data = tiny_dataset("ds_train1");
  const fs::path out = fresh_dir("train1_out");
  TrainConfig cfg = tiny_stage1_config(data, out);
  train_stage1(cfg);
  UNet3D net = load_checkpoint(cfg.checkpoint_path);
  CHECK(net.config().depth == 1);
  std::ifstream csv(cfg.loss_csv_path);
  REQUIRE(csv.good());
  std::string line;
  int rows = -1;  // header
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == cfg.iterations);
}

TEST_CASE("stage-1 training is bitwise deterministic in the seed") {
  const fs::path data = tiny_dataset("ds_det1");
  const fs::path out = fresh_dir("det1_out");
  TrainConfig cfg = tiny_stage1_config(data, out);
  cfg.checkpoint_path = out / "a.json";
  train_stage1(cfg);
  cfg.checkpoint_path = out / "b.json";
  train_stage1(cfg);
  CHECK(file_bytes(out / "a.bin") == file_bytes(out / "b.bin"));
  cfg.checkpoint_path = out / "c.json";
  cfg.seed = 123456;
  train_stage1(cfg);
  CHECK(file_bytes(out / "a.bin") != file_bytes(out / "c.bin"));
}

TEST_CASE("stage-2 training smoke run and determinism") {
  const fs::path data = tiny_dataset("ds_train2");
  const fs::path out = fresh_dir("train2_out");
  TrainConfig cfg;
  cfg.net = {.in_channels = 2, .out_channels = 1, .depth = 1, .base_width = 2, .width_growth = 2};
  cfg.iterations = 3;
  cfg.seed = 9;
  cfg.patch_dims = {16, 16, 16};
  cfg.dataset_dir = data;
  cfg.checkpoint_path = out / "a.json";
  cfg.loss_csv_path = out / "loss.csv";
  train_stage2(cfg);
  cfg.checkpoint_path = out / "b.json";
  train_stage2(cfg);
  CHECK(file_bytes(out / "a.bin") == file_bytes(out / "b.bin"));
  UNet3D net = load_checkpoint(out / "a.json");
  CHECK(net.config().in_channels == 2);
}

TEST_CASE("training configs are validated before any work") {
  TrainConfig cfg;
  cfg.dataset_dir = "x";
  cfg.checkpoint_path = "y";
  cfg.lr = 0.0;
  CHECK_THROWS_AS(train_stage1(cfg), ConfigError);
  TrainConfig cfg2 = cfg;
  cfg2.lr = 0.001;  // stage-1 trainer rejects a 2-channel net
  cfg2.net.in_channels = 2;
  CHECK_THROWS_AS(train_stage1(cfg2), ConfigError);
}

}  // TEST_SUITE
