#include "gstrs/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

#include "gstrs/losses.hpp"
#include "gstrs/model.hpp"

namespace gstrs {

GradCheckReport grad_check(const ScalarFn& f, std::span<const double> point,
                           std::span<const double> analytic, const GradCheckOptions& options,
                           const PatternFn& pattern) {
  if (!(options.step > 0.0)) throw Error("finite-difference step must be positive");
  if (analytic.size() != point.size()) throw Error("analytic gradient size mismatch");

  GradCheckReport report;
  std::vector<double> x(point.begin(), point.end());
  const std::vector<long> base = pattern ? pattern(x) : std::vector<long>{};
  const double h = options.step;

  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double f_plus = f(x);
    const bool plus_same = !pattern || pattern(x) == base;
    x[i] = orig - h;
    const double f_minus = f(x);
    const bool minus_same = !pattern || pattern(x) == base;
    x[i] = orig;

    if (!plus_same || !minus_same) {
      report.unstable.push_back(i);
      continue;
    }
    const double numeric = (f_plus - f_minus) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.floor});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    ++report.checked;
    report.max_rel_error = std::max(report.max_rel_error, rel);
    report.worst.push_back({i, analytic[i], numeric, rel});
  }
  std::ranges::sort(report.worst, std::greater<>{}, &CoordinateError::rel_error);
  if (report.worst.size() > options.keep_worst) report.worst.resize(options.keep_worst);
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

bool GradientSuiteReport::passed() const {
  return std::ranges::all_of(entries, &SuiteEntry::passed);
}

namespace {

struct RandomContextCase {
  std::size_t dim = 0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::vector<std::size_t> groups;
  double alpha1 = 1.0;
  double alpha2 = 0.3;
  std::vector<double> point;  // positives then negatives, row-major
};

std::size_t uniform_count(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

RandomContextCase random_context_case(Rng& rng) {
  RandomContextCase c;
  c.dim = uniform_count(rng, 4, 16);
  c.n_pos = uniform_count(rng, 3, 8);
  c.n_neg = uniform_count(rng, 2, 6);
  const std::size_t n_groups = std::min(uniform_count(rng, 2, 4), c.n_pos);
  // Every group gets at least one member.
  for (std::size_t k = 0; k < c.n_pos; ++k) {
    c.groups.push_back(k < n_groups ? k : uniform_count(rng, 0, n_groups - 1));
  }
  std::ranges::shuffle(c.groups, rng);
  c.alpha1 = std::uniform_real_distribution<double>(0.5, 3.0)(rng);
  c.alpha2 = std::uniform_real_distribution<double>(0.2, 2.0)(rng);
  std::uniform_real_distribution<double> coord(-1.0, 1.0);
  c.point.resize((c.n_pos + c.n_neg) * c.dim);
  for (auto& v : c.point) v = coord(rng);
  return c;
}

TripletContext context_from(const RandomContextCase& c, std::span<const double> point) {
  std::vector<std::size_t> pos_ids, neg_ids;
  std::vector<Vector> pos, neg;
  for (std::size_t k = 0; k < c.n_pos + c.n_neg; ++k) {
    Vector v(point.begin() + static_cast<std::ptrdiff_t>(k * c.dim),
             point.begin() + static_cast<std::ptrdiff_t>((k + 1) * c.dim));
    if (k < c.n_pos) {
      pos_ids.push_back(k);
      pos.push_back(std::move(v));
    } else {
      neg_ids.push_back(k);
      neg.push_back(std::move(v));
    }
  }
  return TripletContext::make(pos_ids, pos, c.groups, neg_ids, neg);
}

std::vector<double> flatten_grads(const LossOutput& out, std::size_t rows, std::size_t dim) {
  std::vector<double> g;
  g.reserve(rows * dim);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto v = out.grad(r, dim);
    g.insert(g.end(), v.begin(), v.end());
  }
  return g;
}

void randomize(Matrix& m, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : m.values()) v = normal(rng);
}

void randomize(Vector& v, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& x : v) x = normal(rng);
}

// Appends / reads head parameters at the tail of a flat point.
void append_head(std::vector<double>& point, const ClassifierHead& head) {
  point.insert(point.end(), head.weight.values().begin(), head.weight.values().end());
  point.insert(point.end(), head.bias.begin(), head.bias.end());
}

ClassifierHead head_from(std::span<const double> tail, std::size_t n_classes, std::size_t dim) {
  ClassifierHead h;
  h.weight = Matrix(n_classes, dim, std::vector<double>(tail.begin(), tail.begin() + static_cast<std::ptrdiff_t>(n_classes * dim)));
  h.bias.assign(tail.begin() + static_cast<std::ptrdiff_t>(n_classes * dim), tail.end());
  return h;
}

class SuiteRunner {
 public:
  SuiteRunner(bool inject_fault, const GradCheckOptions& options)
      : inject_fault_(inject_fault), options_(options) {}

  void check(SuiteEntry& entry, const ScalarFn& f, std::span<const double> point,
             std::vector<double> analytic, const PatternFn& pattern) {
    if (inject_fault_) {
      for (auto& g : analytic) g *= 1.01;
    }
    const auto report = grad_check(f, point, analytic, options_, pattern);
    ++entry.instances;
    entry.coordinates += report.checked;
    entry.unstable += report.unstable.size();
    entry.max_rel_error = std::max(entry.max_rel_error, report.max_rel_error);
    entry.passed = entry.passed && report.passed;
  }

 private:
  bool inject_fault_;
  GradCheckOptions options_;
};

}  // namespace

GradientSuiteReport run_gradient_suite(std::uint64_t seed, std::size_t trials, bool inject_fault,
                                       const GradCheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  SuiteRunner runner(inject_fault, options);
  GradientSuiteReport report;
  SuiteEntry triplet{"triplet_loss"}, mean_valued{"mean_valued_triplet_loss"},
      icv{"icv_triplet_loss"}, icv_member{"icv_triplet_loss[member anchors]"},
      softmax{"softmax_cross_entropy"}, gstrs{"gs_trs_loss"}, backprop{"backprop_embedding"};

  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng = make_rng(seed, 0x67c, t);
    const auto c = random_context_case(rng);
    const std::size_t rows = c.n_pos + c.n_neg;

    {
      std::vector<double> point(c.point.begin(), c.point.begin() + static_cast<std::ptrdiff_t>(3 * c.dim));
      const auto eval = [&](std::span<const double> x) {
        return triplet_loss(x.subspan(0, c.dim), x.subspan(c.dim, c.dim),
                            x.subspan(2 * c.dim, c.dim), c.alpha1);
      };
      runner.check(
          triplet, [&](auto x) { return eval(x).value; }, point,
          flatten_grads(eval(point), 3, c.dim), [&](auto x) { return eval(x).pattern; });
    }
    {
      const auto eval = [&](std::span<const double> x) {
        return mean_valued_triplet_loss(context_from(c, x), c.alpha1);
      };
      runner.check(
          mean_valued, [&](auto x) { return eval(x).value; }, c.point,
          flatten_grads(eval(c.point), rows, c.dim), [&](auto x) { return eval(x).pattern; });
    }
    {
      const auto eval = [&](std::span<const double> x) {
        return icv_triplet_loss(context_from(c, x), c.alpha1, c.alpha2);
      };
      runner.check(
          icv, [&](auto x) { return eval(x).value; }, c.point,
          flatten_grads(eval(c.point), rows, c.dim), [&](auto x) { return eval(x).pattern; });
    }
    {
      const std::size_t class_anchor = uniform_count(rng, 0, c.n_pos - 1);
      std::map<std::size_t, std::size_t> group_anchor;
      for (std::size_t k = 0; k < c.n_pos; ++k) group_anchor.try_emplace(c.groups[k], k);
      const auto eval = [&](std::span<const double> x) {
        auto ctx = context_from(c, x);
        ctx.set_member_anchors(class_anchor, group_anchor);
        return icv_triplet_loss(ctx, c.alpha1, c.alpha2, AnchorMode::Member);
      };
      runner.check(
          icv_member, [&](auto x) { return eval(x).value; }, c.point,
          flatten_grads(eval(c.point), rows, c.dim), [&](auto x) { return eval(x).pattern; });
    }

    const std::size_t n_classes = uniform_count(rng, 2, 5);
    ClassifierHead head;
    head.weight = Matrix(n_classes, c.dim);
    head.bias.assign(n_classes, 0.0);
    randomize(head.weight, rng);
    randomize(head.bias, rng);
    std::vector<std::size_t> labels(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      labels[r] = r < c.n_pos ? 0 : uniform_count(rng, 1, n_classes - 1);
    }
    std::vector<double> point = c.point;
    append_head(point, head);
    const std::size_t n_feat = rows * c.dim;
    const auto embedded_from = [&](std::span<const double> x) {
      return FeatureMatrix(rows, c.dim, std::vector<double>(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n_feat)));
    };
    const auto head_grads = [&](std::vector<double> g, const Matrix& gw, const Vector& gb) {
      g.insert(g.end(), gw.values().begin(), gw.values().end());
      g.insert(g.end(), gb.begin(), gb.end());
      return g;
    };
    {
      const auto eval = [&](std::span<const double> x) {
        return softmax_cross_entropy(head_from(x.subspan(n_feat), n_classes, c.dim), embedded_from(x),
                                     labels);
      };
      const auto out = eval(point);
      runner.check(
          softmax, [&](auto x) { return eval(x).loss.value; }, point,
          head_grads(flatten_grads(out.loss, rows, c.dim), out.grad_weight, out.grad_bias), {});
    }
    {
      LossConfig config;
      config.alpha1 = c.alpha1;
      config.alpha2 = c.alpha2;
      config.omega = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      const auto eval = [&](std::span<const double> x) {
        const auto ctx = context_from(c, x.subspan(0, n_feat));
        return gs_trs_loss(std::span(&ctx, 1), head_from(x.subspan(n_feat), n_classes, c.dim),
                           embedded_from(x), labels, config);
      };
      const auto out = eval(point);
      runner.check(
          gstrs, [&](auto x) { return eval(x).total.value; }, point,
          head_grads(flatten_grads(out.total, rows, c.dim), out.grad_head_weight,
                     out.grad_head_bias),
          [&](auto x) { return eval(x).total.pattern; });
    }
    {
      const std::size_t d_in = uniform_count(rng, 3, 8);
      const std::size_t d_hidden = t % 2 == 0 ? 0 : uniform_count(rng, 3, 6);
      const std::size_t n = uniform_count(rng, 3, 8);
      EmbeddingModel model = EmbeddingModel::init(d_in, c.dim, d_hidden, true, derive_seed(seed, t));
      randomize(model.weight, rng);
      randomize(model.bias, rng);
      randomize(model.hidden_weight, rng);
      randomize(model.hidden_bias, rng);
      Matrix inputs(n, d_in);
      randomize(inputs, rng);
      const FeatureMatrix x_in(inputs);
      Matrix weights(n, c.dim);
      randomize(weights, rng);

      const auto pack = [](const EmbeddingModel& m) {
        std::vector<double> p(m.hidden_weight.values().begin(), m.hidden_weight.values().end());
        p.insert(p.end(), m.hidden_bias.begin(), m.hidden_bias.end());
        p.insert(p.end(), m.weight.values().begin(), m.weight.values().end());
        p.insert(p.end(), m.bias.begin(), m.bias.end());
        return p;
      };
      const auto unpack = [&](std::span<const double> p) {
        EmbeddingModel m = model;
        std::size_t k = 0;
        for (auto& v : m.hidden_weight.values()) v = p[k++];
        for (auto& v : m.hidden_bias) v = p[k++];
        for (auto& v : m.weight.values()) v = p[k++];
        for (auto& v : m.bias) v = p[k++];
        return m;
      };
      const auto f = [&](std::span<const double> p) {
        const auto y = embed(unpack(p), x_in);
        double s = 0.0;
        for (std::size_t i = 0; i < y.matrix().size(); ++i) {
          s += y.matrix().values()[i] * weights.values()[i];
        }
        return s;
      };
      const auto g = backprop_embedding(model, x_in, weights);
      std::vector<double> analytic(g.hidden_weight.values().begin(), g.hidden_weight.values().end());
      analytic.insert(analytic.end(), g.hidden_bias.begin(), g.hidden_bias.end());
      analytic.insert(analytic.end(), g.weight.values().begin(), g.weight.values().end());
      analytic.insert(analytic.end(), g.bias.begin(), g.bias.end());
      runner.check(backprop, f, pack(model), std::move(analytic), {});
    }
  }

  report.entries = {triplet, mean_valued, icv, icv_member, softmax, gstrs, backprop};
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace gstrs
