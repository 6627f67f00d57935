#include "gstrs/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace gstrs {

std::size_t RankedResult::num_relevant() const {
  return static_cast<std::size_t>(std::ranges::count(relevant, true));
}

RankedResult rank_gallery(std::span<const double> query, const FeatureMatrix& gallery,
                          std::span<const std::int64_t> gallery_ids) {
  if (gallery.empty()) throw Error("empty gallery");
  if (!gallery_ids.empty() && gallery_ids.size() != gallery.rows()) {
    throw Error("gallery id count mismatch");
  }
  if (query.size() != gallery.dim()) throw Error("dimension mismatch between query and gallery");

  std::vector<double> dist(gallery.rows());
  for (std::size_t i = 0; i < gallery.rows(); ++i) dist[i] = squared_distance(query, gallery.row(i));
  const auto id_of = [&](std::size_t i) {
    return gallery_ids.empty() ? static_cast<std::int64_t>(i) : gallery_ids[i];
  };

  RankedResult result;
  result.order.resize(gallery.rows());
  std::iota(result.order.begin(), result.order.end(), 0);
  std::ranges::sort(result.order, [&](std::size_t a, std::size_t b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    return id_of(a) < id_of(b);
  });
  for (auto i : result.order) result.distances.push_back(dist[i]);
  result.relevant.assign(gallery.rows(), false);
  return result;
}

std::optional<double> average_precision(const RankedResult& result) {
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < result.relevant.size(); ++k) {
    if (!result.relevant[k]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

PrecisionAtK precision_at_k(const RankedResult& result, std::size_t k) {
  if (k == 0) throw Error("K must be at least 1");
  PrecisionAtK out;
  if (k > result.relevant.size()) {
    k = result.relevant.size();
    out.clamped = true;
  }
  if (k == 0) return out;
  const auto hits = std::count(result.relevant.begin(),
                               result.relevant.begin() + static_cast<std::ptrdiff_t>(k), true);
  out.value = static_cast<double>(hits) / static_cast<double>(k);
  return out;
}

std::vector<double> cmc_curve(std::span<const RankedResult> results, std::size_t max_rank) {
  std::vector<double> cmc(max_rank, 0.0);
  if (results.empty()) return cmc;
  for (const auto& r : results) {
    const auto first = std::ranges::find(r.relevant, true);
    if (first == r.relevant.end()) {
      throw Error("query " + std::to_string(r.query) + " has no relevant gallery item");
    }
    const auto rank = static_cast<std::size_t>(first - r.relevant.begin());
    for (std::size_t k = rank; k < max_rank; ++k) cmc[k] += 1.0;
  }
  for (auto& v : cmc) v /= static_cast<double>(results.size());
  return cmc;
}

double classification_accuracy(const ClassifierHead& head, const EmbeddingModel& model,
                               const FeatureMatrix& features, std::span<const std::size_t> labels) {
  if (labels.size() != features.rows()) throw Error("label count mismatch");
  const Matrix z = logits(head, embed(model, features));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto row = z.row(i);
    const auto best = static_cast<std::size_t>(std::ranges::max_element(row) - row.begin());
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(z.rows());
}

EvalReport evaluate_retrieval(const RetrievalSet& queries, const RetrievalSet& gallery,
                              const RetrievalOptions& options) {
  if (queries.features == nullptr || gallery.features == nullptr) throw Error("missing features");
  const auto& qf = *queries.features;
  const auto& gf = *gallery.features;
  if (queries.labels.size() != qf.rows() || gallery.labels.size() != gf.rows()) {
    throw Error("label count mismatch");
  }

  EvalReport report;
  std::vector<RankedResult> results;
  double ap_sum = 0.0;
  std::map<std::size_t, double> precision_sum;
  for (auto k : options.top_k) precision_sum[k] = 0.0;
  bool clamped = false;

  for (std::size_t q = 0; q < qf.rows(); ++q) {
    RankedResult r = rank_gallery(qf.row(q), gf, gallery.ids);
    r.query = q;
    if (options.exclude_identical_id && !queries.ids.empty() && !gallery.ids.empty()) {
      RankedResult kept;
      kept.query = q;
      for (std::size_t k = 0; k < r.order.size(); ++k) {
        if (gallery.ids[r.order[k]] == queries.ids[q]) continue;
        kept.order.push_back(r.order[k]);
        kept.distances.push_back(r.distances[k]);
      }
      kept.relevant.assign(kept.order.size(), false);
      r = std::move(kept);
    }
    for (std::size_t k = 0; k < r.order.size(); ++k) {
      r.relevant[k] = gallery.labels[r.order[k]] == queries.labels[q];
    }
    const auto ap = average_precision(r);
    if (!ap) {
      ++report.excluded_queries;
      continue;
    }
    ap_sum += *ap;
    for (auto k : options.top_k) {
      const auto p = precision_at_k(r, k);
      precision_sum[k] += p.value;
      clamped = clamped || p.clamped;
    }
    results.push_back(std::move(r));
  }

  report.queries = results.size();
  if (report.excluded_queries > 0) {
    report.warnings.push_back(std::to_string(report.excluded_queries) +
                              " queries have no relevant gallery item and were excluded");
  }
  if (clamped) report.warnings.emplace_back("some K exceed the gallery size and were clamped");
  if (results.empty()) throw Error("no query has a relevant gallery item");

  const double n = static_cast<double>(results.size());
  report.mean_average_precision = ap_sum / n;
  for (const auto& [k, s] : precision_sum) report.precision_at[k] = s / n;
  report.cmc = cmc_curve(results, options.max_rank);
  return report;
}

void write_report_csv(std::ostream& out, const EvalReport& report) {
  char buf[64];
  const auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return std::string(buf);
  };
  out << "metric,k,value\n";
  out << "mAP,," << fmt(report.mean_average_precision) << '\n';
  for (const auto& [k, v] : report.precision_at) out << "precision," << k << ',' << fmt(v) << '\n';
  for (std::size_t r = 0; r < report.cmc.size(); ++r) {
    out << "cmc," << r + 1 << ',' << fmt(report.cmc[r]) << '\n';
  }
  if (report.classification_accuracy) {
    out << "accuracy,," << fmt(*report.classification_accuracy) << '\n';
  }
}

void save_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_report_csv(out, report);
}

void print_report(std::ostream& out, const EvalReport& report) {
  char buf[128];
  const auto line = [&](const char* name, const std::string& k, double v) {
    std::snprintf(buf, sizeof(buf), "  %-14s %6s  %8.4f\n", name, k.c_str(), v);
    out << buf;
  };
  out << "queries: " << report.queries;
  if (report.excluded_queries > 0) out << " (" << report.excluded_queries << " excluded)";
  out << '\n';
  line("mAP", "", report.mean_average_precision);
  for (const auto& [k, v] : report.precision_at) line("precision@K", std::to_string(k), v);
  for (std::size_t r : {1, 5, 10, 20, 50}) {
    if (r <= report.cmc.size()) line("CMC top-k", std::to_string(r), report.cmc[r - 1]);
  }
  if (report.classification_accuracy) line("accuracy", "", *report.classification_accuracy);
}

}  // namespace gstrs
