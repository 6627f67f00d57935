#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gstrs/model.hpp"
#include "gstrs/numerics.hpp"

namespace gstrs {

struct RankedResult {
  std::size_t query = 0;
  std::vector<std::size_t> order;  // gallery rows, nearest first
  std::vector<double> distances;   // parallel to order
  std::vector<bool> relevant;      // parallel to order

  std::size_t num_relevant() const;
};

/// Full sort of the gallery by squared Euclidean distance to the query;
/// ties go to the smaller gallery id (row index when ids are omitted).
RankedResult rank_gallery(std::span<const double> query, const FeatureMatrix& gallery,
                          std::span<const std::int64_t> gallery_ids = {});

/// Mean of precision@k over the ranks k of relevant items; nullopt when the
/// result has no relevant item.
std::optional<double> average_precision(const RankedResult& result);

struct PrecisionAtK {
  double value = 0.0;
  bool clamped = false;  // K exceeded the gallery size
};

PrecisionAtK precision_at_k(const RankedResult& result, std::size_t k);

/// cmc[r - 1] = fraction of queries whose first relevant item has rank <= r.
/// Throws if a query has no relevant gallery item.
std::vector<double> cmc_curve(std::span<const RankedResult> results, std::size_t max_rank);

/// Fraction of rows whose argmax logit (lowest class on ties) equals the label.
double classification_accuracy(const ClassifierHead& head, const EmbeddingModel& model,
                               const FeatureMatrix& features, std::span<const std::size_t> labels);

struct EvalReport {
  double mean_average_precision = 0.0;
  std::map<std::size_t, double> precision_at;
  std::vector<double> cmc;
  std::optional<double> classification_accuracy;
  std::size_t queries = 0;
  std::size_t excluded_queries = 0;  // no relevant gallery item
  std::vector<std::string> warnings;
};

struct RetrievalSet {
  const FeatureMatrix* features = nullptr;
  std::span<const std::size_t> labels;
  std::span<const std::int64_t> ids;
};

struct RetrievalOptions {
  std::vector<std::size_t> top_k = {1, 5, 10};
  std::size_t max_rank = 50;
  /// Drop gallery items whose id equals the query id.
  bool exclude_identical_id = false;
};

/// Ranks every query against the gallery (relevance = same label). Queries
/// without a relevant gallery item are excluded from every metric with a
/// warning.
EvalReport evaluate_retrieval(const RetrievalSet& queries, const RetrievalSet& gallery,
                              const RetrievalOptions& options);

/// `metric,k,value` rows.
void write_report_csv(std::ostream& out, const EvalReport& report);
void save_report_csv(const std::filesystem::path& path, const EvalReport& report);
void print_report(std::ostream& out, const EvalReport& report);

}  // namespace gstrs
