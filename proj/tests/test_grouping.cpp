#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "gstrs/grouping.hpp"

using namespace gstrs;

namespace {

std::vector<Vector> two_blobs(std::uint64_t seed, std::size_t per_blob) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.1);  // variance 0.01
  std::vector<Vector> rows;
  for (std::size_t i = 0; i < per_blob; ++i) rows.push_back({noise(rng), noise(rng)});
  for (std::size_t i = 0; i < per_blob; ++i) rows.push_back({10 + noise(rng), 10 + noise(rng)});
  return rows;
}

double sse(const std::vector<Vector>& pts, const std::vector<int>& side) {
  double total = 0.0;
  for (int s : {0, 1}) {
    Vector mean(pts[0].size(), 0.0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (side[i] != s) continue;
      ++n;
      for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += pts[i][d];
    }
    if (n == 0) return std::numeric_limits<double>::infinity();
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (side[i] != s) continue;
      for (std::size_t d = 0; d < mean.size(); ++d) total += (pts[i][d] - mean[d]) * (pts[i][d] - mean[d]);
    }
  }
  return total;
}

// Brute force over every 2-partition.
double best_two_partition_bruteforce(const std::vector<Vector>& pts) {
  const std::size_t n = pts.size();
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> side(n);
  for (std::uint64_t mask = 1; mask + 1 < (std::uint64_t{1} << n); mask += 2) {  // point 0 fixed on side 1
    for (std::size_t i = 0; i < n; ++i) side[i] = (mask >> i) & 1;
    best = std::min(best, sse(pts, side));
  }
  return best;
}

// An optimal 2-means partition in the plane is separated by a line, and every
// line-separable dichotomy is realised by a line through two input points with
// those two points assigned freely. Enumerating those is exhaustive at n=40.
std::pair<double, std::vector<int>> best_two_partition_planar(const std::vector<Vector>& pts) {
  const std::size_t n = pts.size();
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> best_side;
  std::vector<int> side(n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const double dx = pts[b][0] - pts[a][0], dy = pts[b][1] - pts[a][1];
      for (int sa : {0, 1}) {
        for (int sb : {0, 1}) {
          for (std::size_t i = 0; i < n; ++i) {
            const double cross = dx * (pts[i][1] - pts[a][1]) - dy * (pts[i][0] - pts[a][0]);
            side[i] = cross > 0 ? 1 : 0;
          }
          side[a] = sa;
          side[b] = sb;
          const double v = sse(pts, side);
          if (v < best) best = v, best_side = side;
        }
      }
    }
  }
  return {best, best_side};
}

std::set<std::set<std::size_t>> partition_of(const GroupModel& model, std::size_t label,
                                             const std::vector<std::size_t>& identity_of_row) {
  std::set<std::set<std::size_t>> parts;
  for (auto g : model.nonempty_groups(label)) {
    std::set<std::size_t> part;
    for (auto r : model.members(label, g)) part.insert(identity_of_row[r]);
    parts.insert(part);
  }
  return parts;
}

GroupModel cluster_all(const FeatureMatrix& f, const std::vector<std::size_t>& labels,
                       std::size_t groups, std::uint64_t seed, std::size_t restarts = 5) {
  std::vector<std::size_t> rows(f.rows());
  std::iota(rows.begin(), rows.end(), 0);
  return kmeans_per_class(f, labels, rows, groups, 100, restarts, {seed});
}

}  // namespace

TEST_CASE("two blobs are recovered and the partition is globally optimal") {
  const auto pts = two_blobs(3, 20);
  const auto f = FeatureMatrix::from_rows(pts);
  const std::vector<std::size_t> labels(40, 0);
  const auto model = cluster_all(f, labels, 2, 17);
  const auto& cg = model.of_class(0);

  for (std::size_t i = 1; i < 20; ++i) CHECK(cg.member_group[i] == cg.member_group[0]);
  for (std::size_t i = 21; i < 40; ++i) CHECK(cg.member_group[i] == cg.member_group[20]);
  CHECK(cg.member_group[0] != cg.member_group[20]);
  const auto c0 = cg.centroids.row(cg.member_group[0]);
  const auto c1 = cg.centroids.row(cg.member_group[20]);
  CHECK(std::sqrt(squared_distance(c0, Vector{0, 0})) < 0.2);
  CHECK(std::sqrt(squared_distance(c1, Vector{10, 10})) < 0.2);

  const auto [oracle, oracle_side] = best_two_partition_planar(pts);
  CHECK(cg.objective == doctest::Approx(oracle).epsilon(1e-12));
  for (std::size_t i = 0; i < 40; ++i) {
    CHECK((oracle_side[i] == oracle_side[0]) == (cg.member_group[i] == cg.member_group[0]));
  }
}

TEST_CASE("k-means matches brute-force 2-partition on small random sets") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    std::vector<Vector> pts;
    for (int i = 0; i < 12; ++i) pts.push_back({n01(rng) + (i % 2) * 3.0, n01(rng)});
    const auto f = FeatureMatrix::from_rows(pts);
    const auto km = kmeans(f, 2, 100, 10, seed);
    CHECK(km.objective == doctest::Approx(best_two_partition_bruteforce(pts)).epsilon(1e-10));
  }
}

TEST_CASE("G = 1 gives the class mean and G = class size gives zero objective") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  std::vector<Vector> pts;
  for (int i = 0; i < 7; ++i) pts.push_back({n01(rng), n01(rng), n01(rng)});
  const auto f = FeatureMatrix::from_rows(pts);
  const std::vector<std::size_t> labels(7, 0);

  const auto one = cluster_all(f, labels, 1, 1);
  Vector mean(3, 0.0);
  for (const auto& p : pts)
    for (std::size_t d = 0; d < 3; ++d) mean[d] += p[d];
  for (auto& m : mean) m /= 7.0;
  for (std::size_t d = 0; d < 3; ++d) CHECK(one.of_class(0).centroids(0, d) == doctest::Approx(mean[d]).epsilon(1e-14));

  const auto all = cluster_all(f, labels, 7, 1);
  CHECK(all.of_class(0).objective == 0.0);
  for (std::size_t i = 0; i < 7; ++i) {
    const auto g = all.of_class(0).member_group[i];
    CHECK(squared_distance(all.of_class(0).centroids.row(g), pts[i]) == 0.0);
  }
}

TEST_CASE("small classes get one group per sample and empty flags") {
  const auto f = FeatureMatrix::from_rows({{0, 0}, {1, 1}, {5, 5}, {6, 6}, {7, 7}, {8, 8}, {9, 9}});
  const std::vector<std::size_t> labels{0, 0, 1, 1, 1, 1, 1};
  const auto model = cluster_all(f, labels, 3, 2);
  const auto& small = model.of_class(0);
  CHECK(small.member_group == std::vector<std::size_t>{0, 1});
  CHECK(small.empty == std::vector<bool>{false, false, true});
  CHECK(model.nonempty_groups(0).size() == 2);
  CHECK(model.nonempty_groups(1).size() == 3);
  // groups never span classes and every sample has one assignment
  for (std::size_t r = 0; r < 7; ++r) {
    REQUIRE(model.assignment(r).has_value());
    CHECK(model.assignment(r)->first == labels[r]);
  }
}

TEST_CASE("centroids are member means and the objective never increases") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  std::vector<Vector> pts;
  for (int i = 0; i < 200; ++i) pts.push_back({n01(rng) * 3, n01(rng), n01(rng) * 2, n01(rng)});
  const auto f = FeatureMatrix::from_rows(pts);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto r = make_rng(seed);
    const auto km = lloyd_kmeans(f, 6, 100, r);
    for (std::size_t k = 1; k < km.objective_history.size(); ++k) {
      CHECK(km.objective_history[k] <= km.objective_history[k - 1] * (1 + 1e-12));
    }
    for (std::size_t g = 0; g < 6; ++g) {
      Vector mean(4, 0.0);
      std::size_t n = 0;
      for (std::size_t i = 0; i < 200; ++i) {
        if (km.assignment[i] != g) continue;
        ++n;
        for (std::size_t d = 0; d < 4; ++d) mean[d] += pts[i][d];
      }
      REQUIRE(n > 0);
      for (std::size_t d = 0; d < 4; ++d) CHECK(std::abs(mean[d] / double(n) - km.centroids(g, d)) < 1e-9);
    }
  }
}

TEST_CASE("empty cluster repair keeps all clusters populated") {
  // Duplicate points force coincident seeds; every cluster must still end nonempty.
  const auto f = FeatureMatrix::from_rows({{0, 0}, {0, 0}, {0, 0}, {0, 0}, {1, 0}});
  auto rng = make_rng(3);
  const auto km = lloyd_kmeans(f, 3, 50, rng);
  std::set<std::size_t> used(km.assignment.begin(), km.assignment.end());
  CHECK(used.size() == 3);
}

TEST_CASE("clustering is reproducible and invariant to sample order") {
  SynthSpec spec;
  spec.n_classes = 3;
  spec.seed = 5;
  const auto data = generate_synthetic(spec);
  const auto& labels = data.manifest.labels();
  const auto a = cluster_all(data.features, labels, 3, 9);
  const auto b = cluster_all(data.features, labels, 3, 9);
  for (std::size_t r = 0; r < data.features.rows(); ++r) CHECK(a.assignment(r) == b.assignment(r));

  std::vector<std::size_t> perm(data.features.rows());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(1);
  std::ranges::shuffle(perm, rng);
  const auto pf = data.features.select(perm);
  std::vector<std::size_t> plabels;
  for (auto p : perm) plabels.push_back(labels[p]);
  const auto c = cluster_all(pf, plabels, 3, 9);

  std::vector<std::size_t> id(perm.size());
  std::iota(id.begin(), id.end(), 0);
  for (std::size_t label = 0; label < 3; ++label) {
    CHECK(partition_of(a, label, id) == partition_of(c, label, perm));
  }
}

TEST_CASE("group_centers uses the features it is given") {
  const auto f = FeatureMatrix::from_rows({{1, 0}, {3, 0}, {10, 10}});
  const std::vector<std::size_t> labels{0, 0, 0};
  const std::vector<std::size_t> rows{0, 1, 2};
  const std::vector<std::size_t> gids{0, 0, 1};
  const auto model = groups_from_assignments(f, labels, rows, gids);
  auto centers = group_centers(f, model, 0);
  REQUIRE(centers.size() == 2);
  CHECK(centers[0] == Vector{2, 0});
  CHECK(centers[1] == Vector{10, 10});
  // Different (e.g. current embedded) features give different centers.
  const auto g = FeatureMatrix::from_rows({{0, 1}, {0, 5}, {2, 2}});
  centers = group_centers(g, model, 0);
  CHECK(centers[0] == Vector{0, 3});
  CHECK_THROWS_AS(group_centers(f, model, 4), Error);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> n01;
  std::vector<Vector> pts;
  for (int i = 0; i < 12; ++i) pts.push_back({n01(rng), n01(rng), n01(rng)});
  std::vector<std::size_t> r12(12), l12(12, 0), g12(12);
  std::iota(r12.begin(), r12.end(), 0);
  for (int i = 0; i < 12; ++i) g12[i] = i / 4;
  const auto pf = FeatureMatrix::from_rows(pts);
  const auto m = groups_from_assignments(pf, l12, r12, g12);
  const auto cs = group_centers(pf, m, 0);
  for (std::size_t grp = 0; grp < 3; ++grp) {
    for (std::size_t d = 0; d < 3; ++d) {
      double s = 0.0;
      for (std::size_t i = grp * 4; i < grp * 4 + 4; ++i) s += pts[i][d];
      CHECK(std::abs(cs[grp][d] - s / 4.0) < 1e-12);
    }
  }
}

TEST_CASE("kmeans_per_class errors") {
  const auto f = FeatureMatrix::from_rows({{0, 0}, {1, 1}});
  const std::vector<std::size_t> labels{0, 0};
  const std::vector<std::size_t> rows{0, 1};
  CHECK_THROWS_WITH_AS(kmeans_per_class(f, labels, rows, 0, 10, 1, {0}),
                       "number of groups must be at least 1", Error);
  CHECK_THROWS_WITH_AS(kmeans_per_class(f, labels, std::span<const std::size_t>{}, 2, 10, 1, {0}),
                       "empty manifest", Error);
  CHECK_THROWS_WITH_AS(kmeans_per_class(f, DatasetManifest{}, 2, 10, 1, {0}), "empty manifest", Error);
}

TEST_CASE("group CSV round trip") {
  SynthSpec spec;
  spec.n_classes = 4;
  spec.samples_per_group = 5;
  const auto data = generate_synthetic(spec);
  const auto model = kmeans_per_class(data.features, data.manifest, 3, 50, 2, {1});
  const auto path = std::filesystem::temp_directory_path() / "gstrs_groups_roundtrip.csv";
  save_group_csv(path, model, data.manifest);
  const auto loaded = load_group_csv(path, data.manifest, data.features);
  for (std::size_t r = 0; r < data.features.rows(); ++r) CHECK(loaded.assignment(r) == model.assignment(r));

  const auto& c0 = data.manifest[0].class_name;
  std::ofstream(path) << "sample_id,class,group\n0," << c0 << ",0\n0," << c0 << ",1\n";
  CHECK_THROWS_WITH_AS(load_group_csv(path, data.manifest, data.features),
                       doctest::Contains("line 3"), Error);
  std::ofstream(path) << "sample_id,class,group\n0,elsewhere,0\n";
  CHECK_THROWS_WITH_AS(load_group_csv(path, data.manifest, data.features),
                       doctest::Contains("disagrees"), Error);
  std::filesystem::remove(path);
}

TEST_CASE("synthetic groups are recovered by k-means (adjusted Rand >= 0.9)") {
  // Adjusted Rand index from the contingency table.
  const auto ari = [](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::map<std::pair<std::size_t, std::size_t>, double> nij;
    std::map<std::size_t, double> ai, bj;
    for (std::size_t i = 0; i < a.size(); ++i) nij[{a[i], b[i]}] += 1, ai[a[i]] += 1, bj[b[i]] += 1;
    const auto c2 = [](double x) { return x * (x - 1) / 2; };
    double index = 0, sa = 0, sb = 0;
    for (auto& [_, v] : nij) index += c2(v);
    for (auto& [_, v] : ai) sa += c2(v);
    for (auto& [_, v] : bj) sb += c2(v);
    const double expected = sa * sb / c2(static_cast<double>(a.size()));
    const double max_index = (sa + sb) / 2;
    return (index - expected) / (max_index - expected);
  };
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthSpec spec;
    spec.seed = seed;
    spec.group_separation = 5.0;
    spec.noise_sigma = 1.0;
    const auto data = generate_synthetic(spec);
    const auto model = kmeans_per_class(data.features, data.manifest, 3, 100, 5, {seed});
    for (std::size_t label = 0; label < 10; ++label) {
      const auto& cg = model.of_class(label);
      std::vector<std::size_t> truth;
      for (auto r : cg.members) truth.push_back(static_cast<std::size_t>(*data.manifest[r].group));
      total += ari(truth, cg.member_group);
    }
  }
  CHECK(total / 200.0 >= 0.9);
}
