#include "gstrs/sampling.hpp"

#include <algorithm>
#include <set>

namespace gstrs {

void BatchSpec::validate() const {
  if (classes_per_batch < 2) throw Error("classes_per_batch must be at least 2");
  if (groups_per_class < 1) throw Error("groups_per_class must be at least 1");
  if (samples_per_group < 1) throw Error("samples_per_group must be at least 1");
}

std::vector<std::size_t> Batch::samples() const {
  std::vector<std::size_t> out;
  for (const auto& e : entries) out.push_back(e.sample);
  return out;
}

std::vector<std::size_t> Batch::labels() const {
  std::vector<std::size_t> out;
  for (const auto& e : entries) out.push_back(e.label);
  return out;
}

std::vector<std::size_t> Batch::classes() const {
  std::set<std::size_t> s;
  for (const auto& e : entries) s.insert(e.label);
  return {s.begin(), s.end()};
}

std::vector<std::size_t> BatchSampler::Cycle::draw(std::size_t count, Rng& rng) {
  count = std::min(count, items.size());
  std::vector<std::size_t> out;
  while (out.size() < count) {
    if (pos == queue.size()) {
      queue = items;
      std::ranges::shuffle(queue, rng);
      pos = 0;
    }
    const auto x = queue[pos++];
    if (std::ranges::find(out, x) == out.end()) out.push_back(x);
  }
  return out;
}

BatchSampler::BatchSampler(const GroupModel& groups, BatchSpec spec, std::uint64_t seed)
    : groups_(&groups), spec_(spec), rng_(derive_seed(seed, 0xba7c4)) {
  spec_.validate();
  classes_.items = groups.classes();
  for (auto label : classes_.items) {
    group_cycles_[label].items = groups.nonempty_groups(label);
    for (auto g : group_cycles_[label].items) member_cycles_[{label, g}].items = groups.members(label, g);
  }
}

Batch BatchSampler::next() {
  if (classes_.items.size() < spec_.classes_per_batch) {
    throw Error("dataset has " + std::to_string(classes_.items.size()) +
                " classes, batch needs " + std::to_string(spec_.classes_per_batch));
  }
  Batch batch;
  const std::size_t k = spec_.samples_per_group;
  for (auto label : classes_.draw(spec_.classes_per_batch, rng_)) {
    for (auto g : group_cycles_[label].draw(spec_.groups_per_class, rng_)) {
      auto& members = member_cycles_[{label, g}];
      auto picked = members.draw(k, rng_);
      if (picked.size() < k) {
        batch.deficient_groups.emplace_back(label, g);
        std::uniform_int_distribution<std::size_t> any(0, members.items.size() - 1);
        while (picked.size() < k) picked.push_back(members.items[any(rng_)]);
      }
      for (auto s : picked) batch.entries.push_back({s, label, g});
    }
  }
  std::ranges::stable_sort(batch.entries, {}, &BatchEntry::sample);

  std::map<std::size_t, std::vector<std::size_t>> class_rows;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> group_rows;
  for (std::size_t r = 0; r < batch.entries.size(); ++r) {
    class_rows[batch.entries[r].label].push_back(r);
    group_rows[{batch.entries[r].label, batch.entries[r].group}].push_back(r);
  }
  const auto pick = [&](const std::vector<std::size_t>& rows) {
    return rows[std::uniform_int_distribution<std::size_t>(0, rows.size() - 1)(rng_)];
  };
  for (const auto& [label, rows] : class_rows) batch.class_anchor_row[label] = pick(rows);
  for (const auto& [key, rows] : group_rows) batch.group_anchor_row[key] = pick(rows);

  if (spec_.negative_pool_per_class > 0) {
    for (const auto& [label, _] : class_rows) {
      std::vector<std::size_t> others;
      for (std::size_t r = 0; r < batch.entries.size(); ++r) {
        if (batch.entries[r].label != label) others.push_back(r);
      }
      std::ranges::shuffle(others, rng_);
      if (others.size() > spec_.negative_pool_per_class) others.resize(spec_.negative_pool_per_class);
      std::ranges::sort(others);
      batch.negative_rows[label] = std::move(others);
    }
  }
  return batch;
}

std::vector<TripletContext> build_contexts(const Batch& batch, const FeatureMatrix& embedded) {
  if (embedded.rows() != batch.entries.size()) {
    throw Error("embedded rows do not match batch size");
  }
  std::vector<TripletContext> contexts;
  const auto classes = batch.classes();
  if (classes.size() < 2) throw Error("no negatives available");

  for (auto label : classes) {
    std::vector<std::size_t> pos_ids, groups, neg_ids;
    std::vector<Vector> pos, neg;
    const auto pool = batch.negative_rows.find(label);
    for (std::size_t r = 0; r < batch.entries.size(); ++r) {
      const auto& e = batch.entries[r];
      const auto row = embedded.row(r);
      if (e.label == label) {
        pos_ids.push_back(r);
        pos.emplace_back(row.begin(), row.end());
        groups.push_back(e.group);
      } else if (pool == batch.negative_rows.end() ||
                 std::ranges::binary_search(pool->second, r)) {
        neg_ids.push_back(r);
        neg.emplace_back(row.begin(), row.end());
      }
    }
    if (neg.empty()) throw Error("no negatives available");
    auto ctx = TripletContext::make(std::move(pos_ids), std::move(pos), std::move(groups),
                                    std::move(neg_ids), std::move(neg));

    std::optional<std::size_t> class_anchor;
    if (const auto it = batch.class_anchor_row.find(label); it != batch.class_anchor_row.end()) {
      class_anchor = it->second;
    }
    std::map<std::size_t, std::size_t> group_anchor;
    for (const auto& [key, row] : batch.group_anchor_row) {
      if (key.first == label) group_anchor[key.second] = row;
    }
    ctx.set_member_anchors(class_anchor, group_anchor);
    contexts.push_back(std::move(ctx));
  }
  return contexts;
}

std::size_t batches_per_epoch(std::size_t n_samples, const BatchSpec& spec) {
  spec.validate();
  return (n_samples + spec.batch_size() - 1) / spec.batch_size();
}

std::vector<Batch> epoch_batches(const GroupModel& groups, const BatchSpec& spec,
                                 std::uint64_t seed, std::size_t epoch) {
  std::size_t n = 0;
  for (auto label : groups.classes()) n += groups.of_class(label).members.size();
  BatchSampler sampler(groups, spec, derive_seed(seed, 0xe90c, epoch));
  std::vector<Batch> out;
  const auto count = batches_per_epoch(n, spec);
  out.reserve(count);
  for (std::size_t b = 0; b < count; ++b) out.push_back(sampler.next());
  return out;
}

}  // namespace gstrs
