#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "gstrs/eval.hpp"

using namespace gstrs;

namespace {

RankedResult with_relevance(std::vector<bool> relevant) {
  RankedResult r;
  r.relevant = std::move(relevant);
  r.order.resize(r.relevant.size());
  std::iota(r.order.begin(), r.order.end(), 0);
  r.distances.assign(r.relevant.size(), 0.0);
  return r;
}

// AP from the list of prefix precisions at every relevant position, computed
// by explicit counting over each prefix.
double brute_force_ap(const std::vector<bool>& rel) {
  double sum = 0.0;
  std::size_t r = 0;
  for (std::size_t k = 0; k < rel.size(); ++k) {
    if (!rel[k]) continue;
    std::size_t hits = 0;
    for (std::size_t j = 0; j <= k; ++j) hits += rel[j];
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    ++r;
  }
  return sum / static_cast<double>(r);
}

}  // namespace

TEST_CASE("rank_gallery") {
  const auto gallery = FeatureMatrix::from_rows({{1, 0}, {0.5, 0}});
  auto r = rank_gallery(Vector{0, 0}, gallery, {});
  CHECK(r.order == std::vector<std::size_t>{1, 0});

  const auto g3 = FeatureMatrix::from_rows({{3, 3}, {1, 2}, {0, 0}});
  CHECK(rank_gallery(Vector{1, 2}, g3, {}).order.front() == 1);

  // Tie broken by ascending gallery id, not by position.
  const auto tie = FeatureMatrix::from_rows({{1, 0}, {0, 1}});
  const std::vector<std::int64_t> ids{9, 4};
  CHECK(rank_gallery(Vector{0, 0}, tie, ids).order == std::vector<std::size_t>{1, 0});

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  std::vector<Vector> rows;
  for (int i = 0; i < 100; ++i) rows.push_back({n01(rng), n01(rng), n01(rng)});
  const Vector q{n01(rng), n01(rng), n01(rng)};
  std::vector<std::pair<double, std::size_t>> oracle;
  for (std::size_t i = 0; i < 100; ++i) {
    double d = 0.0;
    for (std::size_t k = 0; k < 3; ++k) d += (rows[i][k] - q[k]) * (rows[i][k] - q[k]);
    oracle.emplace_back(d, i);
  }
  std::sort(oracle.begin(), oracle.end());
  r = rank_gallery(q, FeatureMatrix::from_rows(rows), {});
  for (std::size_t i = 0; i < 100; ++i) CHECK(r.order[i] == oracle[i].second);

  CHECK_THROWS_AS(rank_gallery(Vector{0, 0}, FeatureMatrix{}, {}), Error);
  CHECK_THROWS_AS(rank_gallery(Vector{0, 0, 0}, gallery, {}), Error);
}

TEST_CASE("average_precision examples") {
  CHECK(average_precision(with_relevance({true, false, false})) == 1.0);
  CHECK(average_precision(with_relevance({false, true, false, true})) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(average_precision(with_relevance({true, true, true})) == 1.0);
  CHECK_FALSE(average_precision(with_relevance({false, false})).has_value());
}

TEST_CASE("AP equals brute force on every relevance pattern up to size 8") {
  for (std::size_t n = 1; n <= 8; ++n) {
    for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
      std::vector<bool> rel(n);
      for (std::size_t k = 0; k < n; ++k) rel[k] = (mask >> k) & 1;
      const auto ap = average_precision(with_relevance(rel));
      REQUIRE(ap.has_value());
      CHECK(std::abs(*ap - brute_force_ap(rel)) < 1e-15);
    }
  }
}

TEST_CASE("precision_at_k") {
  CHECK(precision_at_k(with_relevance({true, false}), 1).value == 1.0);
  CHECK(precision_at_k(with_relevance({false, true, false, true, true}), 4).value == 0.5);
  CHECK(precision_at_k(with_relevance({false, false, true}), 2).value == 0.0);
  const auto clamped = precision_at_k(with_relevance({true, false, true}), 10);
  CHECK(clamped.clamped);
  CHECK(clamped.value == doctest::Approx(2.0 / 3.0));
  // K = gallery size gives R / gallery size.
  CHECK(precision_at_k(with_relevance({true, false, true, false, false}), 5).value == 2.0 / 5.0);
  CHECK_THROWS_AS(precision_at_k(with_relevance({true}), 0), Error);
}

TEST_CASE("cmc_curve") {
  const std::vector<RankedResult> one{with_relevance({false, false, true, false, true})};
  CHECK(cmc_curve(one, 5) == std::vector<double>{0, 0, 1, 1, 1});
  const std::vector<RankedResult> firsts{with_relevance({true, false}), with_relevance({true, true})};
  CHECK(cmc_curve(firsts, 2) == std::vector<double>{1, 1});
  const std::vector<RankedResult> none{with_relevance({false, false})};
  CHECK_THROWS_AS(cmc_curve(none, 2), Error);

  std::mt19937_64 rng(2);
  std::vector<RankedResult> many;
  for (int q = 0; q < 30; ++q) {
    std::vector<bool> rel(12, false);
    rel[std::uniform_int_distribution<std::size_t>(0, 11)(rng)] = true;
    many.push_back(with_relevance(rel));
  }
  const auto cmc = cmc_curve(many, 12);
  for (std::size_t k = 1; k < cmc.size(); ++k) CHECK(cmc[k] >= cmc[k - 1]);
  CHECK(cmc.back() == 1.0);
}

TEST_CASE("classification_accuracy") {
  const auto features = FeatureMatrix::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 1, 0}});
  const std::vector<std::size_t> labels{0, 1, 2, 1};
  const auto model = EmbeddingModel::identity(3, false);
  ClassifierHead one_hot{Matrix::identity(3), Vector(3, 0.0)};
  CHECK(classification_accuracy(one_hot, model, features, labels) == 1.0);

  // Adversarial relabeling compared to a count oracle.
  const std::vector<std::size_t> shuffled{2, 1, 0, 0};
  CHECK(classification_accuracy(one_hot, model, features, shuffled) == 0.25);

  // Constant predictor on balanced two-class data; ties go to class 0.
  ClassifierHead constant{Matrix(2, 3, 0.0), Vector(2, 0.0)};
  const std::vector<std::size_t> two{0, 1, 0, 1};
  CHECK(classification_accuracy(constant, model, features, two) == 0.5);
}

TEST_CASE("evaluate_retrieval") {
  // Classes well apart: identity embedding gives perfect retrieval.
  const auto q = FeatureMatrix::from_rows({{0, 0.1}, {10, 0.2}});
  const auto g = FeatureMatrix::from_rows({{0, 0}, {0.2, 0}, {10, 0}, {10.1, 0}, {20, 0}});
  const std::vector<std::size_t> ql{0, 1}, gl{0, 0, 1, 1, 2};
  RetrievalOptions opts;
  opts.top_k = {1, 2, 50};
  opts.max_rank = 5;
  const auto report = evaluate_retrieval({&q, ql, {}}, {&g, gl, {}}, opts);
  CHECK(report.mean_average_precision == 1.0);
  CHECK(report.precision_at.at(1) == 1.0);
  CHECK(report.precision_at.at(2) == 1.0);
  CHECK(report.precision_at.at(50) == doctest::Approx(2.0 / 5.0));
  CHECK(report.cmc == std::vector<double>{1, 1, 1, 1, 1});
  CHECK(report.queries == 2);
  CHECK_FALSE(report.warnings.empty());  // K=50 clamped

  // A query whose class has no gallery item is excluded with a warning.
  const auto q2 = FeatureMatrix::from_rows({{0, 0.1}, {5, 5}});
  const std::vector<std::size_t> ql2{0, 7};
  const auto r2 = evaluate_retrieval({&q2, ql2, {}}, {&g, gl, {}}, {});
  CHECK(r2.queries == 1);
  CHECK(r2.excluded_queries == 1);
  CHECK(r2.warnings.front().find("excluded") != std::string::npos);

  // Identical-id exclusion removes the self match.
  const auto self = FeatureMatrix::from_rows({{0, 0}});
  const std::vector<std::size_t> sl{0};
  const std::vector<std::int64_t> qid{1}, gid{1, 2, 3, 4, 5};
  RetrievalOptions ex;
  ex.exclude_identical_id = true;
  ex.top_k = {1};
  ex.max_rank = 4;
  const auto r3 = evaluate_retrieval({&self, sl, qid}, {&g, gl, gid}, ex);
  CHECK(r3.cmc.size() == 4);
  CHECK(r3.precision_at.at(1) == 1.0);  // gallery id 2 is the next same-class item
}

TEST_CASE("metrics are invariant to scaling and id relabeling") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  std::vector<Vector> qrows, grows;
  std::vector<std::size_t> ql, gl;
  for (int i = 0; i < 10; ++i) qrows.push_back({n01(rng), n01(rng)}), ql.push_back(i % 3);
  for (int i = 0; i < 30; ++i) grows.push_back({n01(rng), n01(rng)}), gl.push_back(i % 3);
  const auto q = FeatureMatrix::from_rows(qrows);
  const auto g = FeatureMatrix::from_rows(grows);
  RetrievalOptions opts;
  opts.max_rank = 30;
  const auto base = evaluate_retrieval({&q, ql, {}}, {&g, gl, {}}, opts);

  for (double s : {0.001, 3.0, 1000.0}) {
    auto qs = qrows, gs = grows;
    for (auto& r : qs) for (auto& v : r) v *= s;
    for (auto& r : gs) for (auto& v : r) v *= s;
    const auto fq = FeatureMatrix::from_rows(qs), fg = FeatureMatrix::from_rows(gs);
    const auto scaled = evaluate_retrieval({&fq, ql, {}}, {&fg, gl, {}}, opts);
    CHECK(scaled.mean_average_precision == base.mean_average_precision);
    CHECK(scaled.cmc == base.cmc);
    CHECK(scaled.precision_at == base.precision_at);
  }

  // Relabel ids with an order-preserving map and shuffle gallery rows.
  std::vector<std::size_t> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::ranges::shuffle(perm, rng);
  std::vector<Vector> grows2;
  std::vector<std::size_t> gl2;
  std::vector<std::int64_t> ids2;
  for (auto p : perm) grows2.push_back(grows[p]), gl2.push_back(gl[p]), ids2.push_back(1000 + 7 * static_cast<std::int64_t>(p));
  const auto g2 = FeatureMatrix::from_rows(grows2);
  const auto moved = evaluate_retrieval({&q, ql, {}}, {&g2, gl2, ids2}, opts);
  CHECK(moved.mean_average_precision == doctest::Approx(base.mean_average_precision).epsilon(1e-15));
  CHECK(moved.cmc == base.cmc);
  for (std::size_t k = 1; k < base.cmc.size(); ++k) CHECK(base.cmc[k] >= base.cmc[k - 1]);
}

TEST_CASE("report CSV layout") {
  EvalReport r;
  r.mean_average_precision = 0.5;
  r.precision_at = {{1, 1.0}, {50, 0.25}};
  r.cmc = {0.5, 1.0};
  r.classification_accuracy = 0.75;
  std::ostringstream out;
  write_report_csv(out, r);
  CHECK(out.str() ==
        "metric,k,value\nmAP,,0.5\nprecision,1,1\nprecision,50,0.25\ncmc,1,0.5\ncmc,2,1\naccuracy,,0.75\n");
}
