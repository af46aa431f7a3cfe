#include "spine/phantom.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "spine/errors.hpp"
#include "spine/volume_io.hpp"

namespace spine {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct BodyGeom {
  double xc, yc, zc;  // index-space center
  double ax, ay, az;  // semi-axes
  SpineClass cls;
};

// per-axis size factors; lumbar bodies are also flat-sided (power-4
// superellipsoids) so the class cue survives scale augmentation
Double3 class_scale(SpineClass c) {
  switch (c) {
    case SpineClass::cervical: return {0.75, 0.75, 0.85};
    case SpineClass::thoracic: return {1.00, 1.00, 1.00};
    case SpineClass::lumbar: return {1.15, 1.15, 1.00};
  }
  return {1.0, 1.0, 1.0};
}

double class_power(SpineClass c) { return c == SpineClass::lumbar ? 4.0 : 2.0; }

// cervical bodies carry a carved central canal (ring cross-section) through
// their mid-section; caps stay solid so masks remain 6-connected
bool in_cervical_canal(const BodyGeom& g, int x, int y, int z) {
  if (g.cls != SpineClass::cervical) return false;
  if (std::abs(z - g.zc) > 0.6 * g.az) return false;
  const double dx = x - g.xc, dy = y - g.yc;
  const double r = 0.4 * std::min(g.ax, g.ay);
  return dx * dx + dy * dy <= r * r;
}

constexpr double kSizeJitter = 0.06;
constexpr double kRibRadius = 1.8;

}  // namespace

void validate(const PhantomSpec& spec) {
  if (spec.dims.x < 8 || spec.dims.y < 8 || spec.dims.z < 8)
    throw DataError("phantom dims too small");
  if (!(spec.spacing.x > 0 && spec.spacing.y > 0 && spec.spacing.z > 0))
    throw DataError("phantom spacing must be positive");
  if (spec.first_ordinal < 1 || spec.last_ordinal > AnatomicalLabel::kCount ||
      spec.first_ordinal > spec.last_ordinal)
    throw DataError("phantom label range invalid");
  if (!(spec.intensity_bone > spec.intensity_soft && spec.intensity_soft > spec.intensity_air))
    throw DataError("phantom intensities must satisfy bone > soft > air");
  if (spec.vertebra_size_vox.x < 4 || spec.vertebra_size_vox.y < 4 || spec.vertebra_size_vox.z < 4)
    throw DataError("phantom vertebra size too small");
  if (spec.gap_vox < 1) throw DataError("phantom gap must be >= 1 voxel");

  const int n = spec.last_ordinal - spec.first_ordinal + 1;
  const int pitch = spec.vertebra_size_vox.z + spec.gap_vox;
  const int stack = n * pitch - spec.gap_vox;
  if (stack + 4 > spec.dims.z) throw DataError("phantom stack exceeds dims (z)");

  const double half_x = 0.5 * spec.vertebra_size_vox.x * 1.12 * (1 + kSizeJitter);
  const double reach = spec.curvature_amp_vox +
                       std::max(half_x, 0.5 * spec.vertebra_size_vox.x * (1 + kSizeJitter) +
                                            spec.rib_length_vox);
  if (reach + 2 > 0.5 * (spec.dims.x - 1) || reach + 2 > 0.5 * (spec.dims.y - 1))
    throw DataError("phantom stack exceeds dims (lateral reach)");
}

PhantomTruth generate_phantom(const PhantomSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);

  const int n = spec.last_ordinal - spec.first_ordinal + 1;
  const int pitch = spec.vertebra_size_vox.z + spec.gap_vox;
  const int stack = n * pitch - spec.gap_vox;
  const int z_margin = 2;
  const int z0 = z_margin + int(rng.uniform_int(spec.dims.z - stack - 2 * z_margin + 1));
  const double phase = rng.uniform(0.0, 2.0 * kPi);
  const double ccx = 0.5 * (spec.dims.x - 1), ccy = 0.5 * (spec.dims.y - 1);

  auto curve_x = [&](double z) {
    return ccx + spec.curvature_amp_vox * std::sin(2.0 * kPi * (z - z0) / double(stack) + phase);
  };

  std::vector<BodyGeom> bodies;
  std::vector<AnatomicalLabel> anatomical;
  for (int i = 0; i < n; ++i) {
    const AnatomicalLabel label(spec.first_ordinal + i);
    const double jitter = 1.0 + kSizeJitter * rng.uniform(-1.0, 1.0);
    const Double3 s = class_scale(label.cls());
    BodyGeom g;
    g.zc = z0 + i * pitch + 0.5 * spec.vertebra_size_vox.z;
    g.xc = curve_x(g.zc);
    g.yc = ccy;
    g.ax = 0.5 * spec.vertebra_size_vox.x * s.x * jitter;
    g.ay = 0.5 * spec.vertebra_size_vox.y * s.y * jitter;
    g.az = 0.5 * spec.vertebra_size_vox.z * s.z * jitter;
    g.cls = label.cls();
    bodies.push_back(g);
    anatomical.push_back(label);
  }

  PhantomTruth t{make_volume(spec.dims, spec.spacing),
                 make_label_volume(spec.dims, spec.spacing),
                 make_label_volume(spec.dims, spec.spacing),
                 std::move(anatomical),
                 {},
                 std::vector<std::uint8_t>(std::size_t(n), 0)};

  // vertebra bodies
  for (int i = 0; i < n; ++i) {
    const BodyGeom& g = bodies[std::size_t(i)];
    const int xlo = std::max(0, int(std::floor(g.xc - g.ax))),
              xhi = std::min(spec.dims.x - 1, int(std::ceil(g.xc + g.ax)));
    const int ylo = std::max(0, int(std::floor(g.yc - g.ay))),
              yhi = std::min(spec.dims.y - 1, int(std::ceil(g.yc + g.ay)));
    const int zlo = std::max(0, int(std::floor(g.zc - g.az))),
              zhi = std::min(spec.dims.z - 1, int(std::ceil(g.zc + g.az)));
    for (int z = zlo; z <= zhi; ++z)
      for (int y = ylo; y <= yhi; ++y)
        for (int x = xlo; x <= xhi; ++x) {
          const double ex = std::abs((x - g.xc) / g.ax), ey = std::abs((y - g.yc) / g.ay),
                       ez = std::abs((z - g.zc) / g.az);
          const double p = class_power(g.cls);
          if (std::pow(ex, p) + std::pow(ey, p) + std::pow(ez, p) <= 1.0 &&
              !in_cervical_canal(g, x, y, z)) {
            t.instance_labels.at(x, y, z) = std::uint16_t(i + 1);
            t.class_labels.at(x, y, z) = std::uint16_t(g.cls);
          }
        }
    // bilateral ribs on thoracic bodies
    if (g.cls == SpineClass::thoracic) {
      for (int side = -1; side <= 1; side += 2) {
        const double x_in = g.xc + side * 0.4 * g.ax;
        const double x_out = g.xc + side * (g.ax + spec.rib_length_vox);
        const int rxlo = std::max(0, int(std::floor(std::min(x_in, x_out))));
        const int rxhi = std::min(spec.dims.x - 1, int(std::ceil(std::max(x_in, x_out))));
        for (int x = rxlo; x <= rxhi; ++x)
          for (int y = std::max(0, int(g.yc - kRibRadius) - 1);
               y <= std::min(spec.dims.y - 1, int(g.yc + kRibRadius) + 1); ++y)
            for (int z = std::max(0, int(g.zc - kRibRadius) - 1);
                 z <= std::min(spec.dims.z - 1, int(g.zc + kRibRadius) + 1); ++z) {
              const double dy = y - g.yc, dz = z - g.zc;
              if (dy * dy + dz * dz <= kRibRadius * kRibRadius) {
                t.instance_labels.at(x, y, z) = std::uint16_t(i + 1);
                t.class_labels.at(x, y, z) = std::uint16_t(g.cls);
              }
            }
      }
    }
  }

  // class bridges between same-class neighbors (class label only, no instance)
  for (int i = 0; i + 1 < n; ++i) {
    const BodyGeom& a = bodies[std::size_t(i)];
    const BodyGeom& b = bodies[std::size_t(i + 1)];
    if (a.cls != b.cls) continue;
    const int zlo = int(std::floor(a.zc + 0.55 * a.az));
    const int zhi = int(std::ceil(b.zc - 0.55 * b.az));
    for (int z = std::max(0, zlo); z <= std::min(spec.dims.z - 1, zhi); ++z) {
      const int bx = int(std::floor(curve_x(z)));
      const int by = int(std::floor(a.yc));
      for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx) {
          const int x = bx + dx, y = by + dy;
          if (x < 0 || y < 0 || x >= spec.dims.x || y >= spec.dims.y) continue;
          if (t.class_labels.at(x, y, z) == 0)
            t.class_labels.at(x, y, z) = std::uint16_t(a.cls);
        }
    }
  }

  // intensities: air outside the soft-tissue cylinder, soft inside, bone at
  // class voxels, plus voxel noise
  const double half_x = 0.5 * spec.vertebra_size_vox.x * 1.12 * (1 + kSizeJitter);
  const double reach = spec.curvature_amp_vox +
                       std::max(half_x, 0.5 * spec.vertebra_size_vox.x * (1 + kSizeJitter) +
                                            spec.rib_length_vox);
  const double soft_r2 = (reach + 2) * (reach + 2);
  std::int64_t idx = 0;
  for (int z = 0; z < spec.dims.z; ++z)
    for (int y = 0; y < spec.dims.y; ++y)
      for (int x = 0; x < spec.dims.x; ++x, ++idx) {
        double v;
        if (t.class_labels.data[std::size_t(idx)] != 0) {
          v = spec.intensity_bone;
        } else {
          const double dx = x - ccx, dy = y - ccy;
          v = (dx * dx + dy * dy <= soft_r2) ? spec.intensity_soft : spec.intensity_air;
        }
        if (spec.noise_sigma_hu > 0) v += rng.normal() * spec.noise_sigma_hu;
        t.image.data[std::size_t(idx)] = float(v);
      }

  // exact voxel-mean centroids in mm
  std::vector<double> sx(std::size_t(n), 0), sy(std::size_t(n), 0), sz(std::size_t(n), 0);
  std::vector<std::int64_t> cnt(std::size_t(n), 0);
  for (int z = 0; z < spec.dims.z; ++z)
    for (int y = 0; y < spec.dims.y; ++y)
      for (int x = 0; x < spec.dims.x; ++x) {
        const std::uint16_t id = t.instance_labels.at(x, y, z);
        if (!id) continue;
        const Double3 p = t.instance_labels.voxel_center_mm(x, y, z);
        sx[id - 1] += p.x;
        sy[id - 1] += p.y;
        sz[id - 1] += p.z;
        cnt[id - 1] += 1;
      }
  for (int i = 0; i < n; ++i) {
    if (cnt[std::size_t(i)] == 0) throw DataError("phantom instance rasterized to zero voxels");
    t.centroids_mm.push_back({sx[std::size_t(i)] / double(cnt[std::size_t(i)]),
                              sy[std::size_t(i)] / double(cnt[std::size_t(i)]),
                              sz[std::size_t(i)] / double(cnt[std::size_t(i)])});
  }
  return t;
}

PhantomTruth crop_phantom_fov(const PhantomTruth& t, const VoxelBox& box) {
  if (!box.valid() || !VoxelBox{{0, 0, 0}, t.image.dims}.contains(box))
    throw DataError("crop box not inside phantom");

  const int n = t.instance_count();
  std::vector<std::int64_t> before(std::size_t(n), 0), after(std::size_t(n), 0);
  for (auto id : t.instance_labels.data)
    if (id) ++before[id - 1];

  PhantomTruth out;
  out.image = crop(t.image, box);
  out.class_labels = crop(t.class_labels, box);
  out.instance_labels = crop(t.instance_labels, box);
  for (auto id : out.instance_labels.data)
    if (id) ++after[id - 1];

  std::vector<std::uint16_t> remap(std::size_t(n) + 1, 0);
  std::uint16_t next = 1;
  for (int i = 0; i < n; ++i) {
    if (after[std::size_t(i)] == 0) continue;
    remap[std::size_t(i) + 1] = next++;
    out.anatomical.push_back(t.anatomical[std::size_t(i)]);
    out.truncated.push_back(
        std::uint8_t(t.truncated[std::size_t(i)] || after[std::size_t(i)] < before[std::size_t(i)]));
  }
  if (next == 1) throw DataError("crop box contains no vertebra voxels");
  for (auto& id : out.instance_labels.data) id = remap[id];

  const int m = int(out.anatomical.size());
  std::vector<double> sx(std::size_t(m), 0), sy(std::size_t(m), 0), sz(std::size_t(m), 0);
  std::vector<std::int64_t> cnt(std::size_t(m), 0);
  for (int z = 0; z < out.instance_labels.dims.z; ++z)
    for (int y = 0; y < out.instance_labels.dims.y; ++y)
      for (int x = 0; x < out.instance_labels.dims.x; ++x) {
        const std::uint16_t id = out.instance_labels.at(x, y, z);
        if (!id) continue;
        const Double3 p = out.instance_labels.voxel_center_mm(x, y, z);
        sx[id - 1] += p.x;
        sy[id - 1] += p.y;
        sz[id - 1] += p.z;
        cnt[id - 1] += 1;
      }
  for (int i = 0; i < m; ++i)
    out.centroids_mm.push_back({sx[std::size_t(i)] / double(cnt[std::size_t(i)]),
                                sy[std::size_t(i)] / double(cnt[std::size_t(i)]),
                                sz[std::size_t(i)] / double(cnt[std::size_t(i)])});
  return out;
}

void save_phantom_case(const PhantomTruth& t, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_volume(t.image, dir / "image.json");
  write_label_volume(t.class_labels, dir / "class_labels.json");
  write_label_volume(t.instance_labels, dir / "instance_labels.json");

  nlohmann::json j;
  j["files"] = {{"image", "image.json"},
                {"class_labels", "class_labels.json"},
                {"instance_labels", "instance_labels.json"}};
  auto labels = nlohmann::json::array();
  auto classes = nlohmann::json::array();
  auto centroids = nlohmann::json::array();
  auto truncated = nlohmann::json::array();
  for (int i = 0; i < t.instance_count(); ++i) {
    labels.push_back(t.anatomical[std::size_t(i)].name());
    classes.push_back(to_string(t.anatomical[std::size_t(i)].cls()));
    centroids.push_back({t.centroids_mm[std::size_t(i)].x, t.centroids_mm[std::size_t(i)].y,
                         t.centroids_mm[std::size_t(i)].z});
    truncated.push_back(bool(t.truncated[std::size_t(i)]));
  }
  j["labels"] = labels;
  j["classes"] = classes;
  j["centroids_mm"] = centroids;
  j["truncated"] = truncated;
  {
    std::ofstream out(dir / "truth.json.tmp", std::ios::trunc);
    out << j.dump(2) << "\n";
    if (!out) throw IoError(IoError::Kind::write_failure, "cannot write truth.json");
  }
  std::filesystem::rename(dir / "truth.json.tmp", dir / "truth.json");

  // flat centroid/label interface file
  auto flat = nlohmann::json::array();
  for (int i = 0; i < t.instance_count(); ++i)
    flat.push_back({{"label", t.anatomical[std::size_t(i)].name()},
                    {"centroid_mm",
                     {t.centroids_mm[std::size_t(i)].x, t.centroids_mm[std::size_t(i)].y,
                      t.centroids_mm[std::size_t(i)].z}}});
  {
    std::ofstream out(dir / "centroids.json.tmp", std::ios::trunc);
    out << flat.dump(2) << "\n";
    if (!out) throw IoError(IoError::Kind::write_failure, "cannot write centroids.json");
  }
  std::filesystem::rename(dir / "centroids.json.tmp", dir / "centroids.json");
}

PhantomTruth load_phantom_case(const std::filesystem::path& dir) {
  std::ifstream in(dir / "truth.json");
  if (!in) throw IoError(IoError::Kind::missing_file, "no truth.json in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoError::Kind::bad_header, "malformed truth.json: " + std::string(e.what()));
  }
  PhantomTruth t;
  try {
    t.image = read_volume(dir / j.at("files").at("image").get<std::string>());
    t.class_labels = read_label_volume(dir / j.at("files").at("class_labels").get<std::string>());
    t.instance_labels =
        read_label_volume(dir / j.at("files").at("instance_labels").get<std::string>());
    for (const auto& name : j.at("labels"))
      t.anatomical.push_back(AnatomicalLabel::parse(name.get<std::string>()));
    for (const auto& c : j.at("centroids_mm"))
      t.centroids_mm.push_back({c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()});
    for (const auto& f : j.at("truncated")) t.truncated.push_back(f.get<bool>() ? 1 : 0);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoError::Kind::bad_header, "malformed truth.json: " + std::string(e.what()));
  }
  if (t.centroids_mm.size() != t.anatomical.size() || t.truncated.size() != t.anatomical.size())
    throw DataError("truth.json instance lists disagree in length");
  return t;
}

}  // namespace spine
