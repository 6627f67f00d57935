#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gstrs/grouping.hpp"
#include "gstrs/losses.hpp"
#include "gstrs/model.hpp"
#include "gstrs/sampling.hpp"

namespace gstrs {

/// Training objectives. The two triplet baselines and the W/O-mean variant
/// use randomly drawn member anchors; only gstrs_wmean uses mean anchors.
enum class LossMode {
  Softmax,           // softmax
  Triplet,           // triplet
  TripletSoftmax,    // triplet+softmax
  GsTrsWithoutMean,  // gstrs_womean
  GsTrsWithMean,     // gstrs_wmean
};

std::optional<LossMode> parse_loss_mode(std::string_view name);
std::string_view loss_mode_name(LossMode mode);
bool uses_groups(LossMode mode);

struct TrainConfig {
  LossMode mode = LossMode::GsTrsWithMean;
  LossConfig loss;
  SgdConfig sgd{0.05, 0.9, 50, 0};
  BatchSpec batch;
  GroupingOptions grouping;
  std::size_t embedding_dim = 16;
  std::size_t hidden_dim = 0;
  bool normalize_before_loss = true;
  bool frozen_centers = false;
  std::size_t regroup_every_n_epochs = 0;  // 0 = never
  std::uint64_t seed = 0;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double softmax = 0.0;
  double inter = 0.0;
  double intra = 0.0;
  double total = 0.0;
};

struct TrainResult {
  Checkpoint initial;
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

/// Trains on the rows grouped by `groups` (its members are the training
/// set). For modes without groups the partition is collapsed to one group
/// per class and batches take groups_per_class * samples_per_group samples
/// from each class.
TrainResult train(const FeatureMatrix& features, std::span<const std::size_t> labels,
                  std::size_t n_classes, const GroupModel& groups, const TrainConfig& config);

/// Same partition with every class collapsed into group 0.
GroupModel collapse_groups(const FeatureMatrix& features, std::span<const std::size_t> labels,
                           const GroupModel& groups);

void write_training_log(std::ostream& out, const std::vector<EpochLog>& log);
void save_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

/// key=value run configuration. Unknown keys are rejected.
struct RunConfig {
  std::filesystem::path features;
  std::filesystem::path manifest;
  std::filesystem::path groups;  // optional group CSV
  std::filesystem::path checkpoint = "checkpoint.bin";
  std::filesystem::path log = "train_log.csv";
  TrainConfig train;
};

RunConfig parse_run_config(std::istream& in);
/// Relative paths in the file are resolved against its directory.
RunConfig load_run_config(const std::filesystem::path& path);
/// Every accepted key with its default value, one `key=value` per line.
std::string default_run_config_text();

}  // namespace gstrs
