#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "gstrs/grouping.hpp"
#include "gstrs/losses.hpp"

namespace gstrs {

/// P classes x Gs groups per class x K samples per group.
struct BatchSpec {
  std::size_t classes_per_batch = 4;
  std::size_t groups_per_class = 2;
  std::size_t samples_per_group = 4;
  /// Negatives offered to each class context; 0 means every other-class
  /// batch member.
  std::size_t negative_pool_per_class = 0;

  std::size_t batch_size() const {
    return classes_per_batch * groups_per_class * samples_per_group;
  }
  void validate() const;
};

struct BatchEntry {
  std::size_t sample = 0;  // feature row
  std::size_t label = 0;
  std::size_t group = 0;

  bool operator==(const BatchEntry&) const = default;
};

struct Batch {
  std::vector<BatchEntry> entries;  // ascending sample
  /// (class, group) pairs with fewer than K members, filled with replacement.
  std::vector<std::pair<std::size_t, std::size_t>> deficient_groups;
  /// Random anchors for the member-anchor baseline, as batch rows.
  std::map<std::size_t, std::size_t> class_anchor_row;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> group_anchor_row;
  /// Per class negative rows when a negative pool size is set.
  std::map<std::size_t, std::vector<std::size_t>> negative_rows;

  bool deficient() const { return !deficient_groups.empty(); }
  std::vector<std::size_t> samples() const;
  std::vector<std::size_t> labels() const;
  std::vector<std::size_t> classes() const;

  bool operator==(const Batch&) const = default;
};

/// Draws structured batches. Classes, groups and group members are each
/// cycled through reshuffled queues, so repeated draws spread evenly over
/// the data while every single draw is uniform without replacement.
class BatchSampler {
 public:
  BatchSampler(const GroupModel& groups, BatchSpec spec, std::uint64_t seed);

  /// Throws when fewer than P classes are available.
  Batch next();

 private:
  struct Cycle {
    std::vector<std::size_t> items;
    std::vector<std::size_t> queue;
    std::size_t pos = 0;

    std::vector<std::size_t> draw(std::size_t count, Rng& rng);
  };

  const GroupModel* groups_;
  BatchSpec spec_;
  Rng rng_;
  Cycle classes_;
  std::map<std::size_t, Cycle> group_cycles_;
  std::map<std::pair<std::size_t, std::size_t>, Cycle> member_cycles_;
};

/// One context per class present in the batch; context ids are batch rows
/// and `embedded` holds one row per batch entry.
std::vector<TripletContext> build_contexts(const Batch& batch, const FeatureMatrix& embedded);

std::size_t batches_per_epoch(std::size_t n_samples, const BatchSpec& spec);

/// ceil(n / batch_size) batches from a sampler seeded by (seed, epoch).
std::vector<Batch> epoch_batches(const GroupModel& groups, const BatchSpec& spec,
                                 std::uint64_t seed, std::size_t epoch);

}  // namespace gstrs
