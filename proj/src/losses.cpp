#include "gstrs/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gstrs {

std::vector<std::string> LossConfig::validate() const {
  for (double m : {alpha, alpha1, alpha2}) {
    if (!(m >= 0.0) || !std::isfinite(m)) throw Error("margins must be finite and non-negative");
  }
  if (!(omega >= 0.0 && omega <= 1.0)) throw Error("omega must be in [0, 1]");
  std::vector<std::string> warnings;
  if (alpha2 > alpha1) {
    warnings.emplace_back("alpha2 exceeds alpha1; groups are nested inside classes");
  }
  return warnings;
}

void LossOutput::add_grad(std::size_t id, std::span<const double> g, double scale) {
  auto [it, inserted] = grads.try_emplace(id, g.size(), 0.0);
  auto& dst = it->second;
  if (dst.size() != g.size()) throw Error("gradient dimension mismatch");
  for (std::size_t d = 0; d < g.size(); ++d) dst[d] += scale * g[d];
}

void LossOutput::merge(const LossOutput& other, double weight) {
  value += weight * other.value;
  active_terms += other.active_terms;
  for (const auto& [id, g] : other.grads) add_grad(id, g, weight);
  pattern.insert(pattern.end(), other.pattern.begin(), other.pattern.end());
}

Vector LossOutput::grad(std::size_t id, std::size_t dim) const {
  const auto it = grads.find(id);
  return it == grads.end() ? Vector(dim, 0.0) : it->second;
}

namespace {

long sign_of(double x) { return x > 0.0 ? 1 : (x < 0.0 ? -1 : 0); }

Vector diff(std::span<const double> x, std::span<const double> y) {
  Vector out(x.size());
  for (std::size_t d = 0; d < x.size(); ++d) out[d] = x[d] - y[d];
  return out;
}

// An anchor plus the samples its gradient is routed to.
struct Anchor {
  Vector value;
  std::vector<std::size_t> chain_ids;
  double chain_weight = 0.0;
};

struct Sample {
  std::size_t id;
  const Vector* value;
};

// Sum over terms of 1/2 max(|x_i - a|^2 + margin - |x_c - a|^2, 0), where x_c
// is the contrast candidate closest to a. Per active term:
//   d/dx_i = x_i - a,  d/da = x_c - x_i,  d/dx_c = a - x_c,
// and d/da is spread over the anchor's chain ids.
LossOutput anchored_hinge(const Anchor& anchor, const std::vector<Sample>& terms,
                          const std::vector<Sample>& candidates, double margin) {
  LossOutput out;
  if (terms.empty() || candidates.empty()) return out;

  std::size_t best = 0;
  double contrast_d = squared_distance(anchor.value, *candidates[0].value);
  for (std::size_t k = 1; k < candidates.size(); ++k) {
    const double d = squared_distance(anchor.value, *candidates[k].value);
    if (d < contrast_d || (d == contrast_d && candidates[k].id < candidates[best].id)) {
      contrast_d = d;
      best = k;
    }
  }
  const Sample& contrast = candidates[best];
  out.pattern.push_back(static_cast<long>(contrast.id));

  for (const auto& term : terms) {
    const double slack = squared_distance(*term.value, anchor.value) + margin - contrast_d;
    out.pattern.push_back(sign_of(slack));
    if (!(slack > 0.0)) continue;
    out.value += 0.5 * slack;
    ++out.active_terms;

    out.add_grad(term.id, diff(*term.value, anchor.value));
    out.add_grad(contrast.id, diff(anchor.value, *contrast.value));
    if (!anchor.chain_ids.empty()) {
      const Vector to_anchor = diff(*contrast.value, *term.value);
      for (auto id : anchor.chain_ids) out.add_grad(id, to_anchor, anchor.chain_weight);
    }
  }
  return out;
}

Anchor make_anchor(const TripletContext& ctx, const std::vector<std::size_t>& set,
                   const Vector& mean, std::optional<std::size_t> member, AnchorMode mode,
                   const char* what) {
  Anchor a;
  switch (mode) {
    case AnchorMode::Mean:
      a.value = mean;
      for (auto pos : set) a.chain_ids.push_back(ctx.positive_ids[pos]);
      a.chain_weight = 1.0 / static_cast<double>(set.size());
      break;
    case AnchorMode::MeanFrozen:
      a.value = mean;
      break;
    case AnchorMode::Member:
      if (!member) throw Error(std::string("member anchor mode needs a ") + what + " anchor");
      a.value = ctx.positives.at(*member);
      a.chain_ids.push_back(ctx.positive_ids[*member]);
      a.chain_weight = 1.0;
      break;
  }
  return a;
}

void require_valid(const TripletContext& ctx) {
  if (ctx.positives.empty()) throw Error("empty positive set");
  if (ctx.negatives.empty()) throw Error("no negatives available");
}

}  // namespace

LossOutput triplet_loss(std::span<const double> anchor, std::span<const double> positive,
                        std::span<const double> negative, double alpha) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
    throw Error("dimension mismatch in triplet");
  }
  LossOutput out;
  const double slack =
      squared_distance(anchor, positive) + alpha - squared_distance(anchor, negative);
  out.pattern.push_back(sign_of(slack));
  if (!(slack > 0.0)) return out;
  out.value = 0.5 * slack;
  out.active_terms = 1;
  out.add_grad(0, diff(negative, positive));
  out.add_grad(1, diff(positive, anchor));
  out.add_grad(2, diff(anchor, negative));
  return out;
}

Vector mean_anchor(std::span<const Vector> positives) {
  if (positives.empty()) throw Error("empty positive set");
  Vector mean(positives.front().size(), 0.0);
  for (const auto& p : positives) {
    if (p.size() != mean.size()) throw Error("dimension mismatch in positives");
    for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += p[d];
  }
  for (auto& m : mean) m /= static_cast<double>(positives.size());
  return mean;
}

NearestSample hardest_negative(std::span<const double> anchor, std::span<const Vector> negatives) {
  if (negatives.empty()) throw Error("no negatives available");
  NearestSample best{0, squared_distance(anchor, negatives[0])};
  for (std::size_t k = 1; k < negatives.size(); ++k) {
    const double d = squared_distance(anchor, negatives[k]);
    if (d < best.squared_distance) best = {k, d};
  }
  return best;
}

TripletContext TripletContext::make(std::vector<std::size_t> positive_ids,
                                    std::vector<Vector> positives,
                                    std::vector<std::size_t> groups,
                                    std::vector<std::size_t> negative_ids,
                                    std::vector<Vector> negatives) {
  if (positive_ids.size() != positives.size() || negative_ids.size() != negatives.size()) {
    throw Error("context id/vector count mismatch");
  }
  if (positives.empty()) throw Error("empty positive set");
  if (groups.empty()) groups.assign(positives.size(), 0);
  if (groups.size() != positives.size()) throw Error("group count mismatch");

  TripletContext ctx;
  std::vector<std::size_t> order(positives.size());
  std::iota(order.begin(), order.end(), 0);
  std::ranges::stable_sort(order, {}, [&](std::size_t k) { return positive_ids[k]; });
  for (auto k : order) {
    ctx.positive_ids.push_back(positive_ids[k]);
    ctx.positives.push_back(std::move(positives[k]));
    ctx.positive_groups.push_back(groups[k]);
  }
  order.resize(negatives.size());
  std::iota(order.begin(), order.end(), 0);
  std::ranges::stable_sort(order, {}, [&](std::size_t k) { return negative_ids[k]; });
  for (auto k : order) {
    ctx.negative_ids.push_back(negative_ids[k]);
    ctx.negatives.push_back(std::move(negatives[k]));
  }
  const std::size_t dim = ctx.positives.front().size();
  for (const auto& v : ctx.negatives) {
    if (v.size() != dim) throw Error("dimension mismatch in negatives");
  }

  ctx.mean_anchor = gstrs::mean_anchor(ctx.positives);

  std::map<std::size_t, std::vector<std::size_t>> by_group;
  for (std::size_t k = 0; k < ctx.positives.size(); ++k) by_group[ctx.positive_groups[k]].push_back(k);
  for (auto& [g, members] : by_group) {
    std::vector<Vector> vs;
    for (auto k : members) vs.push_back(ctx.positives[k]);
    ctx.groups.push_back({g, std::move(members), gstrs::mean_anchor(vs), std::nullopt});
  }
  return ctx;
}

void TripletContext::set_member_anchors(std::optional<std::size_t> class_anchor_id,
                                        const std::map<std::size_t, std::size_t>& group_anchor_ids) {
  const auto position_of = [&](std::size_t id) -> std::size_t {
    const auto it = std::ranges::find(positive_ids, id);
    if (it == positive_ids.end()) throw Error("anchor id " + std::to_string(id) + " not a positive");
    return static_cast<std::size_t>(it - positive_ids.begin());
  };
  anchor_member = class_anchor_id ? std::optional(position_of(*class_anchor_id)) : std::nullopt;
  for (auto& g : groups) {
    const auto it = group_anchor_ids.find(g.group);
    if (it == group_anchor_ids.end()) {
      g.anchor_member.reset();
      continue;
    }
    const auto pos = position_of(it->second);
    if (positive_groups[pos] != g.group) throw Error("group anchor outside its group");
    g.anchor_member = pos;
  }
}

LossOutput mean_valued_triplet_loss(const TripletContext& ctx, double alpha, AnchorMode mode) {
  require_valid(ctx);
  std::vector<std::size_t> all(ctx.positives.size());
  std::iota(all.begin(), all.end(), 0);
  const Anchor anchor = make_anchor(ctx, all, ctx.mean_anchor, ctx.anchor_member, mode, "class");

  std::vector<Sample> terms;
  for (std::size_t k = 0; k < ctx.positives.size(); ++k) {
    terms.push_back({ctx.positive_ids[k], &ctx.positives[k]});
  }
  std::vector<Sample> negatives;
  for (std::size_t k = 0; k < ctx.negatives.size(); ++k) {
    negatives.push_back({ctx.negative_ids[k], &ctx.negatives[k]});
  }
  return anchored_hinge(anchor, terms, negatives, alpha);
}

LossOutput intra_group_loss(const TripletContext& ctx, double alpha2, AnchorMode mode) {
  if (ctx.positives.empty()) throw Error("empty positive set");
  LossOutput out;
  if (ctx.groups.size() < 2) return out;

  for (const auto& group : ctx.groups) {
    const Anchor anchor =
        make_anchor(ctx, group.members, group.center, group.anchor_member, mode, "group");
    std::vector<Sample> terms;
    std::vector<Sample> others;
    for (std::size_t k = 0; k < ctx.positives.size(); ++k) {
      const Sample s{ctx.positive_ids[k], &ctx.positives[k]};
      (ctx.positive_groups[k] == group.group ? terms : others).push_back(s);
    }
    out.merge(anchored_hinge(anchor, terms, others, alpha2));
  }
  return out;
}

LossOutput icv_triplet_loss(const TripletContext& ctx, double alpha1, double alpha2,
                            AnchorMode mode) {
  LossOutput out = mean_valued_triplet_loss(ctx, alpha1, mode);
  out.merge(intra_group_loss(ctx, alpha2, mode));
  return out;
}

SoftmaxLoss softmax_cross_entropy(const ClassifierHead& head, const FeatureMatrix& embedded,
                                  std::span<const std::size_t> labels) {
  if (labels.size() != embedded.rows()) throw Error("label count mismatch");
  const std::size_t n_classes = head.num_classes();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes) {
      throw Error("label " + std::to_string(labels[i]) + " out of range at row " +
                  std::to_string(i));
    }
  }
  const Matrix z = logits(head, embedded);
  const std::size_t n = embedded.rows();
  const double inv_n = 1.0 / static_cast<double>(n);

  SoftmaxLoss out;
  out.grad_weight = Matrix(n_classes, embedded.dim());
  out.grad_bias.assign(n_classes, 0.0);
  Vector p(n_classes);
  for (std::size_t i = 0; i < n; ++i) {
    const auto zi = z.row(i);
    const double zmax = *std::ranges::max_element(zi);
    double sum = 0.0;
    for (std::size_t c = 0; c < n_classes; ++c) {
      p[c] = std::exp(zi[c] - zmax);
      sum += p[c];
    }
    out.loss.value += (std::log(sum) - (zi[labels[i]] - zmax)) * inv_n;
    for (auto& v : p) v /= sum;
    p[labels[i]] -= 1.0;

    Vector g(embedded.dim(), 0.0);
    const auto f = embedded.row(i);
    for (std::size_t c = 0; c < n_classes; ++c) {
      const double dz = p[c] * inv_n;
      out.grad_bias[c] += dz;
      auto gw = out.grad_weight.row(c);
      const auto w = head.weight.row(c);
      for (std::size_t d = 0; d < g.size(); ++d) {
        gw[d] += dz * f[d];
        g[d] += dz * w[d];
      }
    }
    out.loss.add_grad(i, g);
  }
  return out;
}

GsTrsLoss gs_trs_loss(std::span<const TripletContext> contexts, const ClassifierHead& head,
                      const FeatureMatrix& embedded, std::span<const std::size_t> labels,
                      const LossConfig& config, const GsTrsOptions& options) {
  config.validate();
  if (contexts.empty()) throw Error("no triplet contexts");
  const double omega = config.omega;

  GsTrsLoss out;
  auto soft = softmax_cross_entropy(head, embedded, labels);
  out.softmax = soft.loss.value;
  out.total.merge(soft.loss, omega);
  out.grad_head_weight = std::move(soft.grad_weight);
  out.grad_head_bias = std::move(soft.grad_bias);
  for (auto& v : out.grad_head_weight.values()) v *= omega;
  for (auto& v : out.grad_head_bias) v *= omega;

  const double per_ctx = (1.0 - omega) / static_cast<double>(contexts.size());
  for (const auto& ctx : contexts) {
    for (auto id : ctx.positive_ids) {
      if (id >= embedded.rows()) throw Error("context id outside the embedded batch");
    }
    const auto inter = mean_valued_triplet_loss(ctx, config.alpha1, options.anchor_mode);
    out.inter += inter.value / static_cast<double>(contexts.size());
    out.total.merge(inter, per_ctx);
    if (options.intra) {
      const auto intra = intra_group_loss(ctx, config.alpha2, options.anchor_mode);
      out.intra += intra.value / static_cast<double>(contexts.size());
      out.total.merge(intra, per_ctx);
    }
  }
  return out;
}

}  // namespace gstrs
