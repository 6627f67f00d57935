#include "gstrs/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace gstrs {

namespace {

struct ModeName {
  LossMode mode;
  std::string_view name;
};

constexpr ModeName kModes[] = {
    {LossMode::Softmax, "softmax"},
    {LossMode::Triplet, "triplet"},
    {LossMode::TripletSoftmax, "triplet+softmax"},
    {LossMode::GsTrsWithoutMean, "gstrs_womean"},
    {LossMode::GsTrsWithMean, "gstrs_wmean"},
};

}  // namespace

std::optional<LossMode> parse_loss_mode(std::string_view name) {
  for (const auto& m : kModes) {
    if (m.name == name) return m.mode;
  }
  return std::nullopt;
}

std::string_view loss_mode_name(LossMode mode) {
  for (const auto& m : kModes) {
    if (m.mode == mode) return m.name;
  }
  return "?";
}

bool uses_groups(LossMode mode) {
  return mode == LossMode::GsTrsWithoutMean || mode == LossMode::GsTrsWithMean;
}

GroupModel collapse_groups(const FeatureMatrix& features, std::span<const std::size_t> labels,
                           const GroupModel& groups) {
  std::vector<std::size_t> rows;
  for (auto label : groups.classes()) {
    const auto& m = groups.of_class(label).members;
    rows.insert(rows.end(), m.begin(), m.end());
  }
  const std::vector<std::size_t> zeros(rows.size(), 0);
  return groups_from_assignments(features, labels, rows, zeros);
}

namespace {

struct Parameters {
  EmbeddingModel* model;
  ClassifierHead* head;
};

void apply_step(SgdOptimizer& sgd, Parameters p, const EmbeddingGrads& g, const GsTrsLoss& loss) {
  if (p.model->has_hidden()) {
    sgd.step("embedding.hidden_weight", p.model->hidden_weight.values(), g.hidden_weight.values());
    sgd.step("embedding.hidden_bias", p.model->hidden_bias, g.hidden_bias);
  }
  sgd.step("embedding.weight", p.model->weight.values(), g.weight.values());
  sgd.step("embedding.bias", p.model->bias, g.bias);
  sgd.step("head.weight", p.head->weight.values(), loss.grad_head_weight.values());
  sgd.step("head.bias", p.head->bias, loss.grad_head_bias);
}

}  // namespace

TrainResult train(const FeatureMatrix& features, std::span<const std::size_t> labels,
                  std::size_t n_classes, const GroupModel& groups, const TrainConfig& config) {
  config.loss.validate();
  config.batch.validate();
  if (labels.size() != features.rows()) throw Error("label count mismatch");

  const bool grouped = uses_groups(config.mode);
  GroupModel partition = grouped ? groups : collapse_groups(features, labels, groups);
  BatchSpec batch_spec = config.batch;
  if (!grouped) {
    batch_spec.samples_per_group *= batch_spec.groups_per_class;
    batch_spec.groups_per_class = 1;
  }

  LossConfig loss_config = config.loss;
  GsTrsOptions options;
  options.intra = grouped;
  switch (config.mode) {
    case LossMode::Softmax:
      loss_config.omega = 1.0;
      break;
    case LossMode::Triplet:
      loss_config.omega = 0.0;
      [[fallthrough]];
    case LossMode::TripletSoftmax:
      loss_config.alpha1 = config.loss.alpha;
      options.anchor_mode = AnchorMode::Member;
      break;
    case LossMode::GsTrsWithoutMean:
      options.anchor_mode = AnchorMode::Member;
      break;
    case LossMode::GsTrsWithMean:
      options.anchor_mode = config.frozen_centers ? AnchorMode::MeanFrozen : AnchorMode::Mean;
      break;
  }

  const std::uint64_t weight_seed = derive_seed(config.seed, config.sgd.weight_seed);
  TrainResult result;
  result.initial.model = EmbeddingModel::init(features.dim(), config.embedding_dim,
                                              config.hidden_dim, true, weight_seed);
  result.initial.head = ClassifierHead::init(config.embedding_dim, n_classes, weight_seed);
  result.checkpoint = result.initial;
  auto& model = result.checkpoint.model;
  auto& head = result.checkpoint.head;
  SgdOptimizer sgd(config.sgd.learning_rate, config.sgd.momentum);

  for (std::size_t epoch = 0; epoch < config.sgd.epochs; ++epoch) {
    if (grouped && config.regroup_every_n_epochs > 0 && epoch > 0 &&
        epoch % config.regroup_every_n_epochs == 0) {
      GroupingOptions opts = config.grouping;
      opts.seed = derive_seed(config.grouping.seed, epoch);
      std::vector<std::size_t> rows;
      for (auto label : partition.classes()) {
        const auto& m = partition.of_class(label).members;
        rows.insert(rows.end(), m.begin(), m.end());
      }
      partition = group_features(embed(model, features), labels, rows, opts);
    }

    const auto batches = epoch_batches(partition, batch_spec, config.seed, epoch);
    EpochLog entry;
    entry.epoch = epoch + 1;
    for (const auto& batch : batches) {
      const auto rows = batch.samples();
      const auto batch_labels = batch.labels();
      const FeatureMatrix inputs = features.select(rows);
      const auto forward = embed_forward(model, inputs, config.normalize_before_loss);
      const auto contexts = build_contexts(batch, forward.output);
      const auto loss = gs_trs_loss(contexts, head, forward.output, batch_labels, loss_config, options);

      Matrix grad_out(rows.size(), model.output_dim());
      for (const auto& [row, g] : loss.total.grads) std::ranges::copy(g, grad_out.row(row).begin());
      const auto grads = backprop_embedding(model, inputs, forward, grad_out);
      apply_step(sgd, {&model, &head}, grads, loss);

      entry.softmax += loss.softmax;
      entry.inter += loss.inter;
      entry.intra += loss.intra;
      entry.total += loss.total.value;
    }
    const double n = static_cast<double>(batches.size());
    entry.softmax /= n;
    entry.inter /= n;
    entry.intra /= n;
    entry.total /= n;
    result.log.push_back(entry);
  }
  return result;
}

void write_training_log(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,L_softmax,L_inter,L_intra,L_total\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.softmax, e.inter,
                  e.intra, e.total);
    out << buf;
  }
}

void save_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_training_log(out, log);
}

// ---------------------------------------------------------------------------
// Run configuration

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw Error("config key '" + key + "': bad value '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw Error("config key '" + key + "': expected true/false, got '" + value + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["features"] = [](RunConfig& c, auto&, const auto& v) { c.features = v; };
    t["manifest"] = [](RunConfig& c, auto&, const auto& v) { c.manifest = v; };
    t["groups"] = [](RunConfig& c, auto&, const auto& v) { c.groups = v; };
    t["checkpoint"] = [](RunConfig& c, auto&, const auto& v) { c.checkpoint = v; };
    t["log"] = [](RunConfig& c, auto&, const auto& v) { c.log = v; };
    t["loss"] = [](RunConfig& c, const auto& k, const auto& v) {
      const auto mode = parse_loss_mode(v);
      if (!mode) throw Error("config key '" + k + "': invalid loss mode '" + v + "'");
      c.train.mode = *mode;
    };
    t["alpha"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.loss.alpha = parse_number<double>(k, v); };
    t["alpha1"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.loss.alpha1 = parse_number<double>(k, v); };
    t["alpha2"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.loss.alpha2 = parse_number<double>(k, v); };
    t["omega"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.loss.omega = parse_number<double>(k, v); };
    t["learning_rate"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.sgd.learning_rate = parse_number<double>(k, v); };
    t["momentum"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.sgd.momentum = parse_number<double>(k, v); };
    t["epochs"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.sgd.epochs = parse_number<std::size_t>(k, v); };
    t["weight_seed"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.sgd.weight_seed = parse_number<std::uint64_t>(k, v); };
    t["classes_per_batch"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.batch.classes_per_batch = parse_number<std::size_t>(k, v); };
    t["groups_per_class"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.batch.groups_per_class = parse_number<std::size_t>(k, v); };
    t["samples_per_group"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.batch.samples_per_group = parse_number<std::size_t>(k, v); };
    t["negative_pool_per_class"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.batch.negative_pool_per_class = parse_number<std::size_t>(k, v); };
    t["num_groups"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.grouping.groups = parse_number<std::size_t>(k, v); };
    t["pca_dim"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.grouping.pca_dim = parse_number<std::size_t>(k, v); };
    t["kmeans_max_iters"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.grouping.max_iters = parse_number<std::size_t>(k, v); };
    t["kmeans_restarts"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.grouping.restarts = parse_number<std::size_t>(k, v); };
    t["embedding_dim"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.embedding_dim = parse_number<std::size_t>(k, v); };
    t["hidden_dim"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.hidden_dim = parse_number<std::size_t>(k, v); };
    t["normalize_before_loss"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.normalize_before_loss = parse_bool(k, v); };
    t["frozen_centers"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.frozen_centers = parse_bool(k, v); };
    t["regroup_every_n_epochs"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.regroup_every_n_epochs = parse_number<std::size_t>(k, v); };
    t["seed"] = [](RunConfig& c, const auto& k, const auto& v) {
      c.train.seed = parse_number<std::uint64_t>(k, v);
      c.train.grouping.seed = c.train.seed;
    };
    return t;
  }();
  return table;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

RunConfig parse_run_config(std::istream& in) {
  RunConfig config;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw Error("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    it->second(config, key, value);
  }
  config.train.loss.validate();
  config.train.batch.validate();
  if (config.train.embedding_dim < 2) throw Error("embedding_dim must be at least 2");
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  auto config = parse_run_config(in);
  // Relative paths are relative to the config file.
  const auto base = path.parent_path();
  for (auto* p : {&config.features, &config.manifest, &config.groups, &config.checkpoint, &config.log}) {
    if (!p->empty() && p->is_relative()) *p = base / *p;
  }
  return config;
}

std::string default_run_config_text() {
  const RunConfig c;
  const auto& t = c.train;
  std::ostringstream out;
  out << "features=\n"
      << "manifest=\n"
      << "groups=\n"
      << "checkpoint=" << c.checkpoint.string() << '\n'
      << "log=" << c.log.string() << '\n'
      << "loss=" << loss_mode_name(t.mode) << '\n'
      << "alpha=" << t.loss.alpha << '\n'
      << "alpha1=" << t.loss.alpha1 << '\n'
      << "alpha2=" << t.loss.alpha2 << '\n'
      << "omega=" << t.loss.omega << '\n'
      << "learning_rate=" << t.sgd.learning_rate << '\n'
      << "momentum=" << t.sgd.momentum << '\n'
      << "epochs=" << t.sgd.epochs << '\n'
      << "weight_seed=" << t.sgd.weight_seed << '\n'
      << "classes_per_batch=" << t.batch.classes_per_batch << '\n'
      << "groups_per_class=" << t.batch.groups_per_class << '\n'
      << "samples_per_group=" << t.batch.samples_per_group << '\n'
      << "negative_pool_per_class=" << t.batch.negative_pool_per_class << '\n'
      << "num_groups=" << t.grouping.groups << '\n'
      << "pca_dim=" << t.grouping.pca_dim << '\n'
      << "kmeans_max_iters=" << t.grouping.max_iters << '\n'
      << "kmeans_restarts=" << t.grouping.restarts << '\n'
      << "embedding_dim=" << t.embedding_dim << '\n'
      << "hidden_dim=" << t.hidden_dim << '\n'
      << "normalize_before_loss=" << (t.normalize_before_loss ? "true" : "false") << '\n'
      << "frozen_centers=" << (t.frozen_centers ? "true" : "false") << '\n'
      << "regroup_every_n_epochs=" << t.regroup_every_n_epochs << '\n'
      << "seed=" << t.seed << '\n';
  return out.str();
}

}  // namespace gstrs
