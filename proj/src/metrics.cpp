#include "spine/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "spine/errors.hpp"

namespace spine {

namespace {

constexpr double kInf = 1e20;

void check_same_geometry(const LabelVolume& a, const LabelVolume& b, const char* what) {
  if (a.dims != b.dims || a.spacing != b.spacing || a.origin != b.origin)
    throw ShapeError(std::string(what) + ": geometry mismatch");
}

// 1D lower-envelope squared distance transform with squared spacing w:
// out[q] = min_j ((q-j)^2 w + f[j])
void dt_1d(const std::vector<double>& f, std::vector<double>& out, int n, double w,
           std::vector<int>& v, std::vector<double>& z) {
  // envelope sentinels are true infinities; f uses the large-finite kInf so
  // that parabola intersections never produce inf - inf
  const double inf = std::numeric_limits<double>::infinity();
  int k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  for (int q = 1; q < n; ++q) {
    double s = 0;
    while (true) {
      const int p = v[std::size_t(k)];
      s = ((f[std::size_t(q)] + q * double(q) * w) - (f[std::size_t(p)] + p * double(p) * w)) /
          (2.0 * w * (q - p));
      if (s <= z[std::size_t(k)]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[std::size_t(k)] = q;
    z[std::size_t(k)] = s;
    z[std::size_t(k) + 1] = inf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[std::size_t(k) + 1] < q) ++k;
    const int p = v[std::size_t(k)];
    out[std::size_t(q)] = (q - p) * double(q - p) * w + f[std::size_t(p)];
  }
}

// Exact squared Euclidean distance (mm^2) from every voxel center to the
// nearest voxel in `sources`.
std::vector<double> edt_sq(const Int3& dims, const Double3& spacing,
                           const std::vector<Int3>& sources) {
  const std::int64_t nx = dims.x, ny = dims.y, nz = dims.z;
  std::vector<double> d(std::size_t(nx * ny * nz), kInf);
  for (const Int3& p : sources) d[std::size_t(p.x + nx * (p.y + ny * p.z))] = 0.0;

  const auto nmax = std::size_t(std::max({nx, ny, nz}));
  std::vector<double> f(nmax), g(nmax);
  std::vector<int> v(nmax);
  std::vector<double> z(nmax + 1);

  // x pass
  for (std::int64_t zi = 0; zi < nz; ++zi)
    for (std::int64_t yi = 0; yi < ny; ++yi) {
      double* row = d.data() + nx * (yi + ny * zi);
      for (std::int64_t x = 0; x < nx; ++x) f[std::size_t(x)] = row[x];
      dt_1d(f, g, int(nx), spacing.x * spacing.x, v, z);
      for (std::int64_t x = 0; x < nx; ++x) row[x] = g[std::size_t(x)];
    }
  // y pass
  for (std::int64_t zi = 0; zi < nz; ++zi)
    for (std::int64_t xi = 0; xi < nx; ++xi) {
      double* base = d.data() + xi + nx * ny * zi;
      for (std::int64_t y = 0; y < ny; ++y) f[std::size_t(y)] = base[y * nx];
      dt_1d(f, g, int(ny), spacing.y * spacing.y, v, z);
      for (std::int64_t y = 0; y < ny; ++y) base[y * nx] = g[std::size_t(y)];
    }
  // z pass
  for (std::int64_t yi = 0; yi < ny; ++yi)
    for (std::int64_t xi = 0; xi < nx; ++xi) {
      double* base = d.data() + xi + nx * yi;
      for (std::int64_t zi = 0; zi < nz; ++zi) f[std::size_t(zi)] = base[zi * nx * ny];
      dt_1d(f, g, int(nz), spacing.z * spacing.z, v, z);
      for (std::int64_t zi = 0; zi < nz; ++zi) base[zi * nx * ny] = g[std::size_t(zi)];
    }
  return d;
}

struct DirectedDistances {
  std::vector<double> a_to_b, b_to_a;  // mm, one entry per surface voxel
};

DirectedDistances surface_distances(const LabelVolume& a, const LabelVolume& b,
                                    const char* what) {
  check_same_geometry(a, b, what);
  const std::vector<Int3> sa = surface_voxels(a);
  const std::vector<Int3> sb = surface_voxels(b);
  if (sa.empty() || sb.empty())
    throw DataError(std::string(what) + ": surface distance undefined for an empty mask");
  const std::vector<double> db = edt_sq(a.dims, a.spacing, sb);
  const std::vector<double> da = edt_sq(a.dims, a.spacing, sa);
  DirectedDistances out;
  out.a_to_b.reserve(sa.size());
  out.b_to_a.reserve(sb.size());
  const std::int64_t nx = a.dims.x, ny = a.dims.y;
  for (const Int3& p : sa)
    out.a_to_b.push_back(std::sqrt(db[std::size_t(p.x + nx * (p.y + ny * p.z))]));
  for (const Int3& p : sb)
    out.b_to_a.push_back(std::sqrt(da[std::size_t(p.x + nx * (p.y + ny * p.z))]));
  return out;
}

}  // namespace

double dice(const LabelVolume& a, const LabelVolume& b) {
  check_same_geometry(a, b, "dice");
  std::int64_t na = 0, nb = 0, ni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool fa = a.data[i] != 0, fb = b.data[i] != 0;
    na += fa;
    nb += fb;
    ni += fa && fb;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(ni) / double(na + nb);
}

std::vector<Int3> surface_voxels(const LabelVolume& m) {
  std::vector<Int3> out;
  const int nx = m.dims.x, ny = m.dims.y, nz = m.dims.z;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (m.at(x, y, z) == 0) continue;
        const bool edge = x == 0 || x == nx - 1 || y == 0 || y == ny - 1 || z == 0 ||
                          z == nz - 1 || m.at(x - 1, y, z) == 0 || m.at(x + 1, y, z) == 0 ||
                          m.at(x, y - 1, z) == 0 || m.at(x, y + 1, z) == 0 ||
                          m.at(x, y, z - 1) == 0 || m.at(x, y, z + 1) == 0;
        if (edge) out.push_back({x, y, z});
      }
  return out;
}

double assd(const LabelVolume& a, const LabelVolume& b) {
  const DirectedDistances d = surface_distances(a, b, "assd");
  double sum = 0;
  for (double v : d.a_to_b) sum += v;
  for (double v : d.b_to_a) sum += v;
  return sum / double(d.a_to_b.size() + d.b_to_a.size());
}

double hausdorff(const LabelVolume& a, const LabelVolume& b) {
  const DirectedDistances d = surface_distances(a, b, "hausdorff");
  double mx = 0;
  for (double v : d.a_to_b) mx = std::max(mx, v);
  for (double v : d.b_to_a) mx = std::max(mx, v);
  return mx;
}

// --- localization / identification ------------------------------------------

namespace {

void check_unique_labels(const std::vector<LabeledCentroid>& list, const char* what) {
  for (std::size_t i = 0; i < list.size(); ++i)
    for (std::size_t j = i + 1; j < list.size(); ++j)
      if (list[i].label == list[j].label)
        throw DataError(std::string(what) + ": duplicate label " + list[i].label.name());
}

struct Accum {
  std::vector<double> dists;
  int n_truth = 0, n_identified = 0;
};

void finish(const Accum& a, RegionLocId& r) {
  r.n_truth = a.n_truth;
  r.n_matched = int(a.dists.size());
  r.n_identified = a.n_identified;
  if (!a.dists.empty()) {
    double sum = 0;
    for (double d : a.dists) sum += d;
    r.mean_mm = sum / double(a.dists.size());
    double sq = 0;
    for (double d : a.dists) sq += (d - r.mean_mm) * (d - r.mean_mm);
    r.std_mm = std::sqrt(sq / double(a.dists.size()));  // population
  }
  r.id_rate = a.n_truth > 0 ? double(a.n_identified) / double(a.n_truth) : 0.0;
}

LocIdMetrics evaluate(std::span<const LocIdCase> cases, double radius_mm) {
  Accum all, by_class[3];
  for (const LocIdCase& c : cases) {
    check_unique_labels(c.pred, "pred");
    check_unique_labels(c.truth, "truth");
    for (const LabeledCentroid& t : c.truth) {
      const int ci = int(t.label.cls()) - 1;
      all.n_truth += 1;
      by_class[ci].n_truth += 1;
      const LabeledCentroid* match = nullptr;
      for (const LabeledCentroid& p : c.pred)
        if (p.label == t.label) match = &p;
      if (!match) continue;
      const double d = distance(match->centroid_mm, t.centroid_mm);
      all.dists.push_back(d);
      by_class[ci].dists.push_back(d);
      // identification: the prediction's nearest truth centroid must be t
      double best = kInf;
      for (const LabeledCentroid& u : c.truth)
        best = std::min(best, distance(match->centroid_mm, u.centroid_mm));
      if (d <= best && d < radius_mm) {
        all.n_identified += 1;
        by_class[ci].n_identified += 1;
      }
    }
  }
  LocIdMetrics m;
  finish(all, m.all);
  finish(by_class[0], m.cervical);
  finish(by_class[1], m.thoracic);
  finish(by_class[2], m.lumbar);
  return m;
}

}  // namespace

LocIdMetrics localization_stats(const std::vector<LabeledCentroid>& pred,
                                const std::vector<LabeledCentroid>& truth) {
  const LocIdCase c{pred, truth};
  return evaluate(std::span<const LocIdCase>(&c, 1), 20.0);
}

double id_rate(const std::vector<LabeledCentroid>& pred,
               const std::vector<LabeledCentroid>& truth, double radius_mm) {
  const LocIdCase c{pred, truth};
  return evaluate(std::span<const LocIdCase>(&c, 1), radius_mm).all.id_rate;
}

LocIdMetrics aggregate_loc_id(std::span<const LocIdCase> cases, double radius_mm) {
  return evaluate(cases, radius_mm);
}

namespace {

std::string fmt(double v, bool defined) {
  if (!defined) return "";
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

void csv_row(std::ostringstream& os, const char* name, const RegionLocId& r) {
  os << name << "," << fmt(r.mean_mm, r.n_matched > 0) << "," << fmt(r.std_mm, r.n_matched > 0)
     << "," << fmt(r.id_rate, r.n_truth > 0) << "," << r.n_truth << "\n";
}

}  // namespace

std::string loc_id_csv(const LocIdMetrics& m) {
  std::ostringstream os;
  os << "region,mean_mm,std_mm,id_rate,n\n";
  csv_row(os, "all", m.all);
  csv_row(os, "cervical", m.cervical);
  csv_row(os, "thoracic", m.thoracic);
  csv_row(os, "lumbar", m.lumbar);
  return os.str();
}

std::string loc_id_text(const LocIdMetrics& m) {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-10s %10s %10s %10s %6s\n", "region", "mean_mm", "std_mm",
                "id_rate", "n");
  os << buf;
  auto row = [&](const char* name, const RegionLocId& r) {
    if (r.n_matched > 0)
      std::snprintf(buf, sizeof buf, "%-10s %10.2f %10.2f %9.0f%% %6d\n", name, r.mean_mm,
                    r.std_mm, 100.0 * r.id_rate, r.n_truth);
    else
      std::snprintf(buf, sizeof buf, "%-10s %10s %10s %10s %6d\n", name, "-", "-", "-", r.n_truth);
    os << buf;
  };
  row("all", m.all);
  row("cervical", m.cervical);
  row("thoracic", m.thoracic);
  row("lumbar", m.lumbar);
  return os.str();
}

std::vector<LabeledCentroid> read_labeled_centroids(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoError::Kind::missing_file, "no such centroid file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    std::vector<LabeledCentroid> out;
    for (const auto& e : j) {
      const auto& c = e.at("centroid_mm");
      out.push_back({AnatomicalLabel::parse(e.at("label").get<std::string>()),
                     {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()}});
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoError::Kind::bad_header,
                  "malformed centroid file " + path.string() + ": " + e.what());
  }
}

void write_labeled_centroids(const std::vector<LabeledCentroid>& list,
                             const std::filesystem::path& path) {
  auto j = nlohmann::json::array();
  for (const auto& lc : list)
    j.push_back({{"label", lc.label.name()},
                 {"centroid_mm", {lc.centroid_mm.x, lc.centroid_mm.y, lc.centroid_mm.z}}});
  std::ofstream out(path.string() + ".tmp", std::ios::trunc);
  out << j.dump(2) << "\n";
  if (!out) throw IoError(IoError::Kind::write_failure, "cannot write " + path.string());
  out.close();
  std::filesystem::rename(path.string() + ".tmp", path);
}

}  // namespace spine
