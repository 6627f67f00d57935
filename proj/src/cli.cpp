#include "gstrs/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "gstrs/data_io.hpp"
#include "gstrs/eval.hpp"
#include "gstrs/gradcheck.hpp"
#include "gstrs/grouping.hpp"
#include "gstrs/trainer.hpp"

namespace gstrs {

namespace {

namespace fs = std::filesystem;

// Raised for bad flags or configuration values detected after parsing.
struct UsageError : Error {
  using Error::Error;
};

struct SynthArgs {
  SynthSpec spec;
  double train_fraction = 0.5;
  double query_fraction = 0.2;
  fs::path out;
};

struct ClusterArgs {
  fs::path features;
  fs::path manifest;
  GroupingOptions grouping;
  fs::path out;
};

struct EvalArgs {
  fs::path checkpoint;
  fs::path features;
  fs::path manifest;
  std::vector<std::size_t> top_k = {1, 5, 10};
  std::size_t max_rank = 50;
  bool exclude_identical_id = false;
  fs::path out;
};

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::size_t trials = 100;
  bool inject_fault = false;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  auto data = generate_synthetic(a.spec);
  auto manifest = data.manifest;
  if (a.train_fraction > 0.0) manifest = split_train(manifest, a.train_fraction, a.spec.seed).manifest;
  auto split = split_roles(manifest, a.query_fraction, a.spec.seed);
  fs::create_directories(a.out);
  save_features(a.out / "features.bin", data.features);
  save_manifest(a.out / "manifest.csv", split.manifest);
  out << "wrote " << data.features.rows() << " samples x " << data.features.dim() << " dims, "
      << split.manifest.num_classes() << " classes to " << a.out.string() << '\n'
      << "  train " << split.manifest.rows_with_role(Role::Train).size() << ", query "
      << split.manifest.rows_with_role(Role::Query).size() << ", gallery "
      << split.manifest.rows_with_role(Role::Gallery).size() << '\n';
  return kExitOk;
}

// Rows used for grouping and training: the train role, or everything when
// the manifest assigns no train rows.
std::vector<std::size_t> training_rows(const DatasetManifest& manifest) {
  auto rows = manifest.rows_with_role(Role::Train);
  if (rows.empty()) {
    rows.resize(manifest.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  }
  return rows;
}

void require_aligned(const FeatureMatrix& features, const DatasetManifest& manifest) {
  if (features.rows() != manifest.size()) {
    throw Error("feature file has " + std::to_string(features.rows()) + " rows, manifest has " +
                std::to_string(manifest.size()));
  }
}

int cmd_cluster(const ClusterArgs& a, std::ostream& out) {
  const auto features = load_features(a.features);
  const auto manifest = load_manifest(a.manifest);
  require_aligned(features, manifest);
  const auto rows = training_rows(manifest);
  const auto model = group_features(features, manifest.labels(), rows, a.grouping);
  save_group_csv(a.out, model, manifest);
  out << "grouped " << rows.size() << " samples of " << model.classes().size() << " classes into "
      << a.grouping.groups << " groups per class -> " << a.out.string() << '\n';
  return kExitOk;
}

int cmd_train(const fs::path& config_path, std::ostream& out, std::ostream& err) {
  RunConfig config;
  try {
    config = load_run_config(config_path);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (config.features.empty() || config.manifest.empty()) {
    throw UsageError("config must set features and manifest");
  }
  for (const auto& w : config.train.loss.validate()) err << "warning: " << w << '\n';

  const auto features = load_features(config.features);
  const auto manifest = load_manifest(config.manifest);
  require_aligned(features, manifest);
  const auto rows = training_rows(manifest);

  GroupModel groups;
  if (!config.groups.empty()) {
    groups = load_group_csv(config.groups, manifest, features);
  } else if (std::ranges::all_of(rows, [&](auto r) { return manifest[r].group.has_value(); })) {
    std::vector<std::size_t> ids;
    for (auto r : rows) ids.push_back(static_cast<std::size_t>(*manifest[r].group));
    groups = groups_from_assignments(features, manifest.labels(), rows, ids);
  } else {
    groups = group_features(features, manifest.labels(), rows, config.train.grouping);
  }

  const auto result =
      train(features, manifest.labels(), manifest.num_classes(), groups, config.train);
  save_checkpoint(config.checkpoint, result.checkpoint);
  save_training_log(config.log, result.log);
  if (!result.log.empty()) {
    const auto& first = result.log.front();
    const auto& last = result.log.back();
    char buf[160];
    std::snprintf(buf, sizeof(buf), "loss %s: L_total %.6f (epoch 1) -> %.6f (epoch %zu)\n",
                  std::string(loss_mode_name(config.train.mode)).c_str(), first.total,
                  last.total, last.epoch);
    out << buf;
  }
  out << "checkpoint -> " << config.checkpoint.string() << ", log -> " << config.log.string()
      << '\n';
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const auto ckpt = load_checkpoint(a.checkpoint);
  const auto features = load_features(a.features);
  const auto manifest = load_manifest(a.manifest);
  require_aligned(features, manifest);

  const auto query_rows = manifest.rows_with_role(Role::Query);
  const auto gallery_rows = manifest.rows_with_role(Role::Gallery);
  if (query_rows.empty() || gallery_rows.empty()) {
    throw Error("manifest needs query and gallery rows");
  }
  const auto embedded = embed(ckpt.model, features);
  const auto pick = [&](const std::vector<std::size_t>& rows) {
    std::vector<std::size_t> labels;
    std::vector<std::int64_t> ids;
    for (auto r : rows) {
      labels.push_back(manifest.labels()[r]);
      ids.push_back(manifest[r].sample_id);
    }
    return std::pair{labels, ids};
  };
  const auto query_f = embedded.select(query_rows);
  const auto gallery_f = embedded.select(gallery_rows);
  const auto [q_labels, q_ids] = pick(query_rows);
  const auto [g_labels, g_ids] = pick(gallery_rows);

  RetrievalOptions options;
  options.top_k = a.top_k;
  options.max_rank = a.max_rank;
  options.exclude_identical_id = a.exclude_identical_id;
  auto report = evaluate_retrieval({&query_f, q_labels, q_ids}, {&gallery_f, g_labels, g_ids},
                                   options);

  if (ckpt.head.num_classes() == manifest.num_classes()) {
    auto rows = query_rows;
    rows.insert(rows.end(), gallery_rows.begin(), gallery_rows.end());
    std::vector<std::size_t> labels;
    for (auto r : rows) labels.push_back(manifest.labels()[r]);
    report.classification_accuracy =
        classification_accuracy(ckpt.head, ckpt.model, features.select(rows), labels);
  } else {
    report.warnings.emplace_back("classifier head size differs from manifest classes; "
                                 "accuracy skipped");
  }
  for (const auto& w : report.warnings) err << "warning: " << w << '\n';
  print_report(out, report);
  if (!a.out.empty()) save_report_csv(a.out, report);
  return kExitOk;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  const auto report = run_gradient_suite(a.seed, a.trials, a.inject_fault);
  char buf[200];
  for (const auto& e : report.entries) {
    std::snprintf(buf, sizeof(buf), "%-34s %s  max_rel_err=%.3e  instances=%zu checked=%zu unstable=%zu\n",
                  e.name.c_str(), e.passed ? "PASS" : "FAIL", e.max_rel_error, e.instances,
                  e.coordinates, e.unstable);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "%s in %.2fs\n", report.passed() ? "all passed" : "FAILED",
                report.seconds);
  out << buf;
  return report.passed() ? kExitOk : kExitCheckFailed;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Group-sensitive triplet metric learning toolkit", "gstrs"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic grouped dataset");
  synth_cmd->add_option("--classes", synth.spec.n_classes, "Number of classes")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--groups", synth.spec.groups_per_class, "Groups per class")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--per-group", synth.spec.samples_per_group, "Samples per group")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--dim", synth.spec.raw_dim, "Feature dimension")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--class-sep", synth.spec.class_separation, "Radius of class means")->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--group-sep", synth.spec.group_separation, "Group offset from class mean")->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--noise", synth.spec.noise_sigma, "Per-dimension noise sigma")->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--seed", synth.spec.seed, "Random seed");
  synth_cmd->add_option("--train-fraction", synth.train_fraction, "Per-class training fraction")->check(CLI::Range(0.0, 0.99));
  synth_cmd->add_option("--query-fraction", synth.query_fraction, "Query fraction of held-out rows")->check(CLI::Range(0.01, 0.99));
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();

  ClusterArgs cluster;
  auto* cluster_cmd = app.add_subcommand("cluster", "Group every class with k-means");
  cluster_cmd->add_option("--features", cluster.features)->required();
  cluster_cmd->add_option("--manifest", cluster.manifest)->required();
  cluster_cmd->add_option("--groups", cluster.grouping.groups, "Groups per class")->check(CLI::PositiveNumber);
  cluster_cmd->add_option("--pca-dim", cluster.grouping.pca_dim, "PCA dimension (0 = off)");
  cluster_cmd->add_option("--max-iters", cluster.grouping.max_iters)->check(CLI::PositiveNumber);
  cluster_cmd->add_option("--restarts", cluster.grouping.restarts)->check(CLI::PositiveNumber);
  cluster_cmd->add_option("--seed", cluster.grouping.seed);
  cluster_cmd->add_option("--out", cluster.out, "Group CSV to write")->required();

  fs::path train_config;
  auto* train_cmd = app.add_subcommand("train", "Train an embedding from a key=value config");
  train_cmd->add_option("--config", train_config)->required();

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Retrieval, ReID and classification metrics");
  eval_cmd->add_option("--checkpoint", eval.checkpoint)->required();
  eval_cmd->add_option("--features", eval.features)->required();
  eval_cmd->add_option("--manifest", eval.manifest)->required();
  eval_cmd->add_option("--topk", eval.top_k, "Comma-separated K list")->delimiter(',')->check(CLI::PositiveNumber);
  eval_cmd->add_option("--max-rank", eval.max_rank, "CMC length")->check(CLI::PositiveNumber);
  eval_cmd->add_flag("--exclude-identical-id", eval.exclude_identical_id);
  eval_cmd->add_option("--out", eval.out, "Report CSV to write");

  GradcheckArgs gradcheck;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  gradcheck_cmd->add_option("--seed", gradcheck.seed);
  gradcheck_cmd->add_option("--trials", gradcheck.trials)->check(CLI::PositiveNumber);
  gradcheck_cmd->add_flag("--inject-fault", gradcheck.inject_fault, "Scale analytic gradients by 1.01");

  auto* defaults_cmd = app.add_subcommand("defaults", "Print every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Help requests exit 0; anything else is a usage error.
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth, out);
    if (*cluster_cmd) return cmd_cluster(cluster, out);
    if (*train_cmd) return cmd_train(train_config, out, err);
    if (*eval_cmd) return cmd_eval(eval, out, err);
    if (*gradcheck_cmd) return cmd_gradcheck(gradcheck, out);
    if (*defaults_cmd) {
      out << default_run_config_text();
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitCheckFailed;
  }
  return kExitUsage;
}

}  // namespace gstrs
