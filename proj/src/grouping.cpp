#include "gstrs/grouping.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

namespace gstrs {

namespace {

double assign_points(const FeatureMatrix& points, const Matrix& centroids,
                     std::vector<std::size_t>& assignment) {
  double total = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < centroids.rows(); ++g) {
      const double d = squared_distance(points.row(i), centroids.row(g));
      if (d < best_d) {
        best_d = d;
        best = g;
      }
    }
    assignment[i] = best;
    total += best_d;
  }
  return total;
}

// Moves the point farthest from its centroid into each empty cluster.
void repair_empty(const FeatureMatrix& points, Matrix& centroids,
                  std::vector<std::size_t>& assignment) {
  const std::size_t k = centroids.rows();
  std::vector<std::size_t> counts(k, 0);
  for (auto a : assignment) ++counts[a];
  for (std::size_t g = 0; g < k; ++g) {
    if (counts[g] != 0) continue;
    std::size_t far = points.rows();
    double far_d = -1.0;
    for (std::size_t i = 0; i < points.rows(); ++i) {
      if (counts[assignment[i]] < 2) continue;
      const double d = squared_distance(points.row(i), centroids.row(assignment[i]));
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    if (far == points.rows()) break;  // fewer points than clusters
    --counts[assignment[far]];
    assignment[far] = g;
    counts[g] = 1;
    std::ranges::copy(points.row(far), centroids.row(g).begin());
  }
}

double update_centroids(const FeatureMatrix& points, const std::vector<std::size_t>& assignment,
                        Matrix& centroids) {
  const std::size_t k = centroids.rows();
  Matrix sums(k, points.dim());
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    auto s = sums.row(assignment[i]);
    const auto p = points.row(i);
    for (std::size_t d = 0; d < points.dim(); ++d) s[d] += p[d];
    ++counts[assignment[i]];
  }
  for (std::size_t g = 0; g < k; ++g) {
    if (counts[g] == 0) continue;
    for (std::size_t d = 0; d < points.dim(); ++d) {
      centroids(g, d) = sums(g, d) / static_cast<double>(counts[g]);
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    total += squared_distance(points.row(i), centroids.row(assignment[i]));
  }
  return total;
}

Matrix seed_centroids(const FeatureMatrix& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows();
  Matrix centroids(k, points.dim());
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(n, false);

  std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (std::size_t g = 0; g < k; ++g) {
    if (g > 0) {
      double total = 0.0;
      for (double d : nearest) total += d;
      if (total > 0.0) {
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(rng);
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
          if (nearest[i] <= 0.0) continue;
          pick = i;
          target -= nearest[i];
          if (target < 0.0) break;
        }
      } else {
        // All remaining points coincide with a center; any unchosen one will do.
        std::vector<std::size_t> free;
        for (std::size_t i = 0; i < n; ++i) {
          if (!chosen[i]) free.push_back(i);
        }
        pick = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
      }
    }
    chosen[pick] = true;
    std::ranges::copy(points.row(pick), centroids.row(g).begin());
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(points.row(i), centroids.row(g)));
    }
  }
  return centroids;
}

ClassGroups singleton_groups(const FeatureMatrix& features, std::vector<std::size_t> members,
                             std::size_t groups) {
  ClassGroups cg;
  cg.centroids = Matrix(groups, features.dim());
  cg.empty.assign(groups, true);
  for (std::size_t k = 0; k < members.size(); ++k) {
    cg.member_group.push_back(k);
    cg.empty[k] = false;
    std::ranges::copy(features.row(members[k]), cg.centroids.row(k).begin());
  }
  cg.members = std::move(members);
  return cg;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

std::map<std::size_t, std::vector<std::size_t>> rows_per_class(
    std::span<const std::size_t> labels, std::span<const std::size_t> rows) {
  std::map<std::size_t, std::vector<std::size_t>> out;
  for (auto r : rows) {
    if (r >= labels.size()) throw Error("row " + std::to_string(r) + " has no label");
    out[labels[r]].push_back(r);
  }
  for (auto& [_, members] : out) std::ranges::sort(members);
  return out;
}

}  // namespace

KMeansResult lloyd_kmeans(const FeatureMatrix& points, std::size_t k, std::size_t max_iters,
                          Rng& rng) {
  if (k == 0) throw Error("number of groups must be at least 1");
  if (max_iters == 0) throw Error("max_iters must be at least 1");
  if (points.rows() < k) throw Error("fewer points than clusters");

  KMeansResult result;
  result.centroids = seed_centroids(points, k, rng);
  result.assignment.assign(points.rows(), 0);
  std::vector<std::size_t> previous;

  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    assign_points(points, result.centroids, result.assignment);
    repair_empty(points, result.centroids, result.assignment);
    result.objective = update_centroids(points, result.assignment, result.centroids);
    result.objective_history.push_back(result.objective);
    if (result.assignment == previous) break;
    previous = result.assignment;
  }
  return result;
}

KMeansResult kmeans(const FeatureMatrix& points, std::size_t k, std::size_t max_iters,
                    std::size_t restarts, std::uint64_t seed) {
  if (restarts == 0) throw Error("restarts must be at least 1");
  KMeansResult best;
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng = make_rng(seed, 0x6b6d, r);
    auto run = lloyd_kmeans(points, k, max_iters, rng);
    if (r == 0 || run.objective < best.objective) best = std::move(run);
  }
  return best;
}

GroupModel::GroupModel(std::size_t groups_per_class, std::size_t n_samples,
                       std::map<std::size_t, ClassGroups> classes)
    : groups_per_class_(groups_per_class), classes_(std::move(classes)), assignment_(n_samples) {
  if (groups_per_class_ == 0) throw Error("number of groups must be at least 1");
  for (const auto& [label, cg] : classes_) {
    if (cg.members.size() != cg.member_group.size()) throw Error("group model size mismatch");
    for (std::size_t k = 0; k < cg.members.size(); ++k) {
      const auto row = cg.members[k];
      if (row >= n_samples) throw Error("group member out of range");
      if (cg.member_group[k] >= groups_per_class_) throw Error("group id out of range");
      if (assignment_[row]) throw Error("sample assigned twice");
      assignment_[row] = std::pair{label, cg.member_group[k]};
    }
  }
}

std::vector<std::size_t> GroupModel::classes() const {
  std::vector<std::size_t> out;
  for (const auto& [label, _] : classes_) out.push_back(label);
  return out;
}

const ClassGroups& GroupModel::of_class(std::size_t label) const {
  const auto it = classes_.find(label);
  if (it == classes_.end()) throw Error("unknown class " + std::to_string(label));
  return it->second;
}

std::vector<std::size_t> GroupModel::members(std::size_t label, std::size_t group) const {
  const auto& cg = of_class(label);
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < cg.members.size(); ++k) {
    if (cg.member_group[k] == group) out.push_back(cg.members[k]);
  }
  return out;
}

std::vector<std::size_t> GroupModel::nonempty_groups(std::size_t label) const {
  const auto& cg = of_class(label);
  std::vector<std::size_t> out;
  for (std::size_t g = 0; g < cg.empty.size(); ++g) {
    if (!cg.empty[g]) out.push_back(g);
  }
  return out;
}

GroupModel kmeans_per_class(const FeatureMatrix& features, std::span<const std::size_t> labels,
                            std::span<const std::size_t> rows, std::size_t groups,
                            std::size_t max_iters, std::size_t restarts, RngSeed seed) {
  if (groups == 0) throw Error("number of groups must be at least 1");
  if (max_iters == 0) throw Error("max_iters must be at least 1");
  if (rows.empty()) throw Error("empty manifest");

  std::map<std::size_t, ClassGroups> classes;
  for (auto& [label, members] : rows_per_class(labels, rows)) {
    if (members.size() <= groups) {
      classes[label] = singleton_groups(features, std::move(members), groups);
      continue;
    }
    const FeatureMatrix points = features.select(members);
    auto km = kmeans(points, groups, max_iters, restarts, derive_seed(seed.value, label));
    ClassGroups cg;
    cg.members = std::move(members);
    cg.member_group = std::move(km.assignment);
    cg.centroids = std::move(km.centroids);
    cg.empty.assign(groups, true);
    for (auto g : cg.member_group) cg.empty[g] = false;
    cg.objective = km.objective;
    classes[label] = std::move(cg);
  }
  return GroupModel(groups, features.rows(), std::move(classes));
}

GroupModel kmeans_per_class(const FeatureMatrix& features, const DatasetManifest& manifest,
                            std::size_t groups, std::size_t max_iters, std::size_t restarts,
                            RngSeed seed) {
  if (manifest.empty()) throw Error("empty manifest");
  if (manifest.size() != features.rows()) throw Error("manifest and feature row counts differ");
  const auto rows = all_rows(manifest.size());
  return kmeans_per_class(features, manifest.labels(), rows, groups, max_iters, restarts, seed);
}

GroupModel group_features(const FeatureMatrix& features, std::span<const std::size_t> labels,
                          std::span<const std::size_t> rows, const GroupingOptions& options) {
  const std::size_t pca_dim = std::min(options.pca_dim, features.dim());
  if (pca_dim == 0 || pca_dim == features.dim() || rows.size() < 2) {
    return kmeans_per_class(features, labels, rows, options.groups, options.max_iters,
                            options.restarts, {options.seed});
  }
  const auto pca = pca_fit(features.select(rows), pca_dim);
  const auto reduced = pca_transform(pca, features);
  return kmeans_per_class(reduced, labels, rows, options.groups, options.max_iters,
                          options.restarts, {options.seed});
}

GroupModel groups_from_assignments(const FeatureMatrix& features,
                                   std::span<const std::size_t> labels,
                                   std::span<const std::size_t> rows,
                                   std::span<const std::size_t> group_ids) {
  if (rows.size() != group_ids.size()) throw Error("group id count mismatch");
  if (rows.empty()) throw Error("empty manifest");
  std::size_t groups = 0;
  for (auto g : group_ids) groups = std::max(groups, g + 1);

  std::vector<std::size_t> group_of(features.rows(), 0);
  for (std::size_t k = 0; k < rows.size(); ++k) group_of.at(rows[k]) = group_ids[k];

  std::map<std::size_t, ClassGroups> classes;
  for (auto& [label, members] : rows_per_class(labels, rows)) {
    ClassGroups cg;
    cg.centroids = Matrix(groups, features.dim());
    cg.empty.assign(groups, true);
    std::vector<std::size_t> counts(groups, 0);
    for (auto r : members) {
      const auto g = group_of[r];
      cg.member_group.push_back(g);
      cg.empty[g] = false;
      ++counts[g];
      auto c = cg.centroids.row(g);
      const auto f = features.row(r);
      for (std::size_t d = 0; d < features.dim(); ++d) c[d] += f[d];
    }
    for (std::size_t g = 0; g < groups; ++g) {
      if (counts[g] == 0) continue;
      for (auto& v : cg.centroids.row(g)) v /= static_cast<double>(counts[g]);
    }
    for (std::size_t k = 0; k < members.size(); ++k) {
      cg.objective += squared_distance(features.row(members[k]),
                                       cg.centroids.row(cg.member_group[k]));
    }
    cg.members = std::move(members);
    classes[label] = std::move(cg);
  }
  return GroupModel(groups, features.rows(), std::move(classes));
}

std::vector<Vector> group_centers(const FeatureMatrix& embedded, const GroupModel& model,
                                  std::size_t label) {
  std::vector<Vector> centers;
  for (auto g : model.nonempty_groups(label)) {
    const auto members = model.members(label, g);
    Vector c(embedded.dim(), 0.0);
    for (auto r : members) {
      const auto f = embedded.row(r);
      for (std::size_t d = 0; d < c.size(); ++d) c[d] += f[d];
    }
    for (auto& v : c) v /= static_cast<double>(members.size());
    centers.push_back(std::move(c));
  }
  return centers;
}

void save_group_csv(const std::filesystem::path& path, const GroupModel& model,
                    const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "sample_id,class,group\n";
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto a = model.assignment(i);
    if (!a) continue;
    out << manifest[i].sample_id << ',' << manifest[i].class_name << ',' << a->second << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

GroupModel load_group_csv(const std::filesystem::path& path, const DatasetManifest& manifest,
                          const FeatureMatrix& features) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("sample_id,class,group", 0) != 0) {
    throw Error("group file line 1: expected header 'sample_id,class,group'");
  }
  std::map<std::int64_t, std::size_t> row_of_id;
  for (std::size_t i = 0; i < manifest.size(); ++i) row_of_id[manifest[i].sample_id] = i;

  std::vector<std::size_t> rows;
  std::vector<std::size_t> group_ids;
  std::vector<bool> seen(manifest.size(), false);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto where = "group file line " + std::to_string(line_no) + ": ";
    std::istringstream ss(line);
    std::string id_s, class_s, group_s;
    if (!std::getline(ss, id_s, ',') || !std::getline(ss, class_s, ',') ||
        !std::getline(ss, group_s)) {
      throw Error(where + "expected 3 fields");
    }
    if (!group_s.empty() && group_s.back() == '\r') group_s.pop_back();
    std::int64_t id = 0;
    long long group = 0;
    try {
      std::size_t used = 0;
      id = std::stoll(id_s, &used);
      if (used != id_s.size()) throw Error("");
      group = std::stoll(group_s, &used);
      if (used != group_s.size()) throw Error("");
    } catch (...) {
      throw Error(where + "malformed numeric field");
    }
    if (group < 0) throw Error(where + "negative group");
    const auto it = row_of_id.find(id);
    if (it == row_of_id.end()) throw Error(where + "unknown sample_id " + id_s);
    if (manifest[it->second].class_name != class_s) {
      throw Error(where + "class '" + class_s + "' disagrees with manifest");
    }
    if (seen[it->second]) throw Error(where + "duplicate sample_id " + id_s);
    seen[it->second] = true;
    rows.push_back(it->second);
    group_ids.push_back(static_cast<std::size_t>(group));
  }
  return groups_from_assignments(features, manifest.labels(), rows, group_ids);
}

}  // namespace gstrs
