#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "gstrs/data_io.hpp"
#include "gstrs/numerics.hpp"

namespace gstrs {

struct KMeansResult {
  Matrix centroids;                     // k x dim
  std::vector<std::size_t> assignment;  // per point
  double objective = 0.0;               // sum of squared distances to centroids
  /// Objective after every Lloyd iteration; non-increasing.
  std::vector<double> objective_history;
};

/// One Lloyd run from D^2-weighted seeding. Needs points.rows() >= k.
KMeansResult lloyd_kmeans(const FeatureMatrix& points, std::size_t k, std::size_t max_iters,
                          Rng& rng);

/// Best of `restarts` seeded runs by objective (earliest wins ties).
KMeansResult kmeans(const FeatureMatrix& points, std::size_t k, std::size_t max_iters,
                    std::size_t restarts, std::uint64_t seed);

struct ClassGroups {
  std::vector<std::size_t> members;       // feature rows, ascending
  std::vector<std::size_t> member_group;  // parallel to members
  Matrix centroids;                       // G x dim, zero rows for empty groups
  std::vector<bool> empty;                // per group
  double objective = 0.0;
};

/// Frozen partition of every class into at most G groups.
class GroupModel {
 public:
  GroupModel() = default;
  GroupModel(std::size_t groups_per_class, std::size_t n_samples,
             std::map<std::size_t, ClassGroups> classes);

  std::size_t groups_per_class() const { return groups_per_class_; }
  std::size_t n_samples() const { return assignment_.size(); }
  std::vector<std::size_t> classes() const;
  bool has_class(std::size_t label) const { return classes_.contains(label); }
  /// Throws on unknown class.
  const ClassGroups& of_class(std::size_t label) const;
  /// (class, group) of a feature row, if that row was grouped.
  std::optional<std::pair<std::size_t, std::size_t>> assignment(std::size_t row) const {
    return row < assignment_.size() ? assignment_[row] : std::nullopt;
  }
  std::vector<std::size_t> members(std::size_t label, std::size_t group) const;
  std::vector<std::size_t> nonempty_groups(std::size_t label) const;

 private:
  std::size_t groups_per_class_ = 0;
  std::map<std::size_t, ClassGroups> classes_;
  std::vector<std::optional<std::pair<std::size_t, std::size_t>>> assignment_;
};

/// Clusters the given rows of each class independently. Classes with at most
/// G rows get one group per row; the remaining groups are flagged empty.
GroupModel kmeans_per_class(const FeatureMatrix& features, std::span<const std::size_t> labels,
                            std::span<const std::size_t> rows, std::size_t groups,
                            std::size_t max_iters, std::size_t restarts, RngSeed seed);

GroupModel kmeans_per_class(const FeatureMatrix& features, const DatasetManifest& manifest,
                            std::size_t groups, std::size_t max_iters, std::size_t restarts,
                            RngSeed seed);

struct GroupingOptions {
  std::size_t groups = 5;
  std::size_t max_iters = 100;
  std::size_t restarts = 5;
  /// Dimension after PCA; 0 disables PCA, values >= input dim are capped.
  std::size_t pca_dim = 64;
  std::uint64_t seed = 0;
};

/// PCA over the given rows followed by per-class k-means.
GroupModel group_features(const FeatureMatrix& features, std::span<const std::size_t> labels,
                          std::span<const std::size_t> rows, const GroupingOptions& options);

/// Builds a model from externally supplied group ids (centroids are member
/// means over `features`).
GroupModel groups_from_assignments(const FeatureMatrix& features,
                                   std::span<const std::size_t> labels,
                                   std::span<const std::size_t> rows,
                                   std::span<const std::size_t> group_ids);

/// Group centers of one class computed from the given (current) features,
/// one per nonempty group in ascending group order.
std::vector<Vector> group_centers(const FeatureMatrix& embedded, const GroupModel& model,
                                  std::size_t label);

/// `sample_id,class,group` CSV.
void save_group_csv(const std::filesystem::path& path, const GroupModel& model,
                    const DatasetManifest& manifest);
GroupModel load_group_csv(const std::filesystem::path& path, const DatasetManifest& manifest,
                          const FeatureMatrix& features);

}  // namespace gstrs
