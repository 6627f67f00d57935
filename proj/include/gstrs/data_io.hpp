#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gstrs/numerics.hpp"

namespace gstrs {

enum class Role { Train, Query, Gallery };

std::string_view role_name(Role role);

struct ManifestRow {
  std::int64_t sample_id = 0;
  std::string class_name;
  std::optional<std::int64_t> group;
  Role role = Role::Train;

  bool operator==(const ManifestRow&) const = default;
};

/// Per-sample identity table. Row i describes feature row i.
class DatasetManifest {
 public:
  DatasetManifest() = default;
  /// Validates unique ids, non-empty classes and non-negative groups.
  explicit DatasetManifest(std::vector<ManifestRow> rows);

  const std::vector<ManifestRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  const ManifestRow& operator[](std::size_t i) const { return rows_[i]; }

  /// Distinct class names in sorted order; label k refers to class_names()[k].
  const std::vector<std::string>& class_names() const { return class_names_; }
  std::size_t num_classes() const { return class_names_.size(); }
  /// Dense label for every row.
  const std::vector<std::size_t>& labels() const { return labels_; }

  bool has_all_groups() const;
  std::optional<std::size_t> row_of(std::int64_t sample_id) const;
  std::vector<std::size_t> rows_with_role(Role role) const;

  DatasetManifest with_roles(const std::vector<Role>& roles) const;
  /// Sub-manifest of the given rows, in the order given.
  DatasetManifest select(const std::vector<std::size_t>& rows) const;

  bool operator==(const DatasetManifest& other) const { return rows_ == other.rows_; }

 private:
  std::vector<ManifestRow> rows_;
  std::vector<std::string> class_names_;
  std::vector<std::size_t> labels_;
};

// Feature file layout (little-endian):
//   "GSTRSFTR" | version u32 (=1) | n u64 | dim u64 | n*dim f32, row-major
inline constexpr char kFeatureMagic[8] = {'G', 'S', 'T', 'R', 'S', 'F', 'T', 'R'};
inline constexpr std::uint32_t kFeatureVersion = 1;

void save_features(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix load_features(const std::filesystem::path& path);

/// CSV with header `sample_id,class,group,role`; group and role may be blank
/// (blank role means train).
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(std::istream& in);

struct SynthSpec {
  std::size_t n_classes = 10;
  std::size_t groups_per_class = 3;
  std::size_t samples_per_group = 20;
  std::size_t raw_dim = 32;
  double class_separation = 8.0;
  double group_separation = 4.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  FeatureMatrix features;
  DatasetManifest manifest;  // ground-truth groups recorded, all roles train
};

/// Class means on a sphere of radius class_separation; each group mean sits
/// group_separation away from its class mean in a random direction; samples
/// add isotropic Gaussian noise.
SyntheticData generate_synthetic(const SynthSpec& spec);

struct SplitResult {
  DatasetManifest manifest;
  std::vector<std::string> warnings;
};

/// Per class, marks floor(train_fraction * n) rows as train and the rest as
/// gallery. Classes of size 1 stay out of training.
SplitResult split_train(const DatasetManifest& manifest, double train_fraction, std::uint64_t seed);

/// Per class, among rows not marked train (all rows when the class has none
/// held out): floor(query_fraction * n) queries, at least 1 when n >= 2, the
/// rest gallery. Singleton classes stay gallery-only with a warning.
SplitResult split_roles(const DatasetManifest& manifest, double query_fraction, std::uint64_t seed);

}  // namespace gstrs
