#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "spine/checkpoint.hpp"
#include "spine/nets.hpp"

using namespace spine;

namespace {

// Independent closed-form count of trainable parameters:
//   conv block(cin,cout) = 27*cin*cout + cout + 2*cout
//   per encoder level i:  block(cin_i, w_i) + block(w_i, w_i)
//   bottleneck:           block(w_{d-1}, w_d) + block(w_d, w_d)
//   per decoder level i:  64*cup_i*w_i + w_i + block(2*w_i, w_i) + block(w_i, w_i)
//   head:                 27*w_0*out + out
std::int64_t expected_param_count(const NetConfig& cfg) {
  auto width = [&](int i) {
    std::int64_t w = cfg.base_width;
    for (int k = 0; k < i; ++k) w *= cfg.width_growth;
    return w;
  };
  auto block = [](std::int64_t cin, std::int64_t cout) { return 27 * cin * cout + 3 * cout; };
  std::int64_t total = 0;
  std::int64_t cin = cfg.in_channels;
  for (int i = 0; i < cfg.depth; ++i) {
    total += block(cin, width(i)) + block(width(i), width(i));
    cin = width(i);
  }
  total += block(width(cfg.depth - 1), width(cfg.depth)) + block(width(cfg.depth), width(cfg.depth));
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const std::int64_t cup = (i == cfg.depth - 1) ? width(cfg.depth) : width(i + 1);
    total += 64 * cup * width(i) + width(i);
    total += block(2 * width(i), width(i)) + block(width(i), width(i));
  }
  total += 27 * width(0) * cfg.out_channels + cfg.out_channels;
  return total;
}

}  // namespace

TEST_SUITE("nets") {

TEST_CASE("semantic net: shape contract and posterior normalization") {
  Rng rng(100);
  UNet3D net = build_net({.in_channels = 1, .out_channels = 4, .depth = 2, .base_width = 4}, rng);
  Tensor x = Tensor::randn({1, 1, 16, 16, 16}, 1.0, rng);
  Tensor post = forward_semantic(net, x);
  REQUIRE(post.shape() == std::vector<std::int64_t>{1, 4, 16, 16, 16});
  Rng pick(7);
  for (int i = 0; i < 100; ++i) {
    const std::int64_t s = pick.uniform_int(16 * 16 * 16);
    double sum = 0;
    for (int c = 0; c < 4; ++c) {
      const float v = post.data()[std::size_t(c * 16 * 16 * 16 + s)];
      CHECK(v >= 0.0f);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
  for (float v : post.data()) CHECK(std::isfinite(v));
}

TEST_CASE("instance net: sigmoid head stays in [0,1]") {
  Rng rng(101);
  UNet3D net = build_net({.in_channels = 2, .out_channels = 1, .depth = 2, .base_width = 4}, rng);
  Tensor ct = Tensor::randn({1, 1, 16, 16, 16}, 1.0, rng);
  Tensor mem = Tensor::zeros({1, 1, 16, 16, 16});
  Tensor prob = forward_instance(net, ct, mem);
  REQUIRE(prob.shape() == std::vector<std::int64_t>{1, 1, 16, 16, 16});
  for (float v : prob.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("indivisible input extents are rejected") {
  Rng rng(102);
  UNet3D net = build_net({.in_channels = 1, .out_channels = 4, .depth = 2, .base_width = 2}, rng);
  CHECK_THROWS_AS(net.forward_logits(Tensor::zeros({1, 1, 15, 16, 16}), false), ShapeError);
  CHECK_THROWS_AS(net.forward_logits(Tensor::zeros({1, 2, 16, 16, 16}), false), ShapeError);
}

TEST_CASE("invalid configs are rejected") {
  Rng rng(103);
  CHECK_THROWS_AS(build_net({.in_channels = 0}, rng), ConfigError);
  CHECK_THROWS_AS(build_net({.depth = 0}, rng), ConfigError);
  CHECK_THROWS_AS(build_net({.base_width = 0}, rng), ConfigError);
}

TEST_CASE("shape preservation across random valid configs") {
  Rng rng(104);
  for (int trial = 0; trial < 6; ++trial) {
    NetConfig cfg;
    cfg.in_channels = 1 + int(rng.uniform_int(2));
    cfg.out_channels = 1 + int(rng.uniform_int(4));
    cfg.depth = 1 + int(rng.uniform_int(3));
    cfg.base_width = 2 + int(rng.uniform_int(3));
    cfg.width_growth = 1 + int(rng.uniform_int(2));
    UNet3D net = build_net(cfg, rng);
    const std::int64_t div = std::int64_t(1) << cfg.depth;
    const std::int64_t D = div * (1 + rng.uniform_int(2));
    const std::int64_t H = div * (1 + rng.uniform_int(2));
    const std::int64_t W = div * (1 + rng.uniform_int(2));
    Tensor x = Tensor::randn({1, cfg.in_channels, D, H, W}, 1.0, rng);
    Tensor y = net.forward_logits(x, false);
    CHECK(y.shape() == std::vector<std::int64_t>{1, cfg.out_channels, D, H, W});
  }
}

TEST_CASE("parameter count matches the documented formula") {
  Rng rng(105);
  for (const NetConfig cfg :
       {NetConfig{.in_channels = 1, .out_channels = 4, .depth = 3, .base_width = 8, .width_growth = 2},
        NetConfig{.in_channels = 2, .out_channels = 1, .depth = 2, .base_width = 6, .width_growth = 2},
        NetConfig{.in_channels = 1, .out_channels = 2, .depth = 1, .base_width = 3, .width_growth = 3}}) {
    UNet3D net = build_net(cfg, rng);
    CHECK(net.parameter_count() == expected_param_count(cfg));
  }
}

TEST_CASE("checkpoint round-trip is bit-exact and preserves behavior") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "spine_test_ckpt";
  fs::create_directories(dir);

  Rng rng(106);
  NetConfig cfg{.in_channels = 1, .out_channels = 4, .depth = 2, .base_width = 4};
  UNet3D net = build_net(cfg, rng);
  // dirty the optimizer + BN state so the round-trip covers them
  for (Parameter* p : net.parameters()) {
    p->step_count = 17;
    for (auto& m : p->adam_m) m = 0.125f;
    for (auto& v : p->adam_v) v = 0.5f;
  }
  for (auto& ns : net.named_state())
    for (auto& v : *ns.values) v += 0.25f;

  Tensor x = Tensor::randn({1, 1, 8, 8, 8}, 1.0, rng);
  Tensor before = net.forward_logits(x, false);

  save_checkpoint(net, dir / "net.json");
  UNet3D loaded = load_checkpoint(dir / "net.json");
  CHECK(loaded.config() == cfg);

  auto a = net.named_parameters();
  auto b = loaded.named_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].param->value.data() == b[i].param->value.data());
    CHECK(a[i].param->adam_m == b[i].param->adam_m);
    CHECK(a[i].param->adam_v == b[i].param->adam_v);
    CHECK(a[i].param->step_count == b[i].param->step_count);
  }
  auto sa = net.named_state();
  auto sb = loaded.named_state();
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(*sa[i].values == *sb[i].values);

  Tensor after = loaded.forward_logits(x, false);
  CHECK(before.data() == after.data());

  // saving the loaded net reproduces the payload byte for byte
  save_checkpoint(loaded, dir / "net2.json");
  std::ifstream f1(dir / "net.bin", std::ios::binary), f2(dir / "net2.bin", std::ios::binary);
  const std::vector<char> c1((std::istreambuf_iterator<char>(f1)), {});
  const std::vector<char> c2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(c1 == c2);
}

TEST_CASE("checkpoint loading rejects shape disagreement") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "spine_test_ckpt_bad";
  fs::create_directories(dir);
  Rng rng(107);
  UNet3D net = build_net({.in_channels = 1, .out_channels = 4, .depth = 1, .base_width = 2}, rng);
  save_checkpoint(net, dir / "net.json");
  // corrupt the manifest: claim a different head shape
  std::ifstream in(dir / "net.json");
  std::string text((std::istreambuf_iterator<char>(in)), {});
  in.close();
  const auto pos = text.find("\"head.w\"");
  REQUIRE(pos != std::string::npos);
  auto shape_pos = text.find("\"shape\"", pos);
  REQUIRE(shape_pos != std::string::npos);
  text.replace(text.find('4', shape_pos), 1, "5");
  std::ofstream out(dir / "net.json", std::ios::trunc);
  out << text;
  out.close();
  CHECK_THROWS_AS(load_checkpoint(dir / "net.json"), ShapeError);
}

}  // TEST_SUITE
