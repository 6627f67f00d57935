#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gstrs/model.hpp"
#include "gstrs/numerics.hpp"

namespace gstrs {

struct LossConfig {
  double alpha = 1.0;   // plain triplet margin
  double alpha1 = 1.0;  // inter-class margin
  double alpha2 = 0.3;  // inter-group margin
  double omega = 0.5;   // softmax weight

  /// Throws on negative margins or omega outside [0, 1]; returns warnings
  /// (alpha2 > alpha1).
  std::vector<std::string> validate() const;
};

/// How anchors are formed.
///   Mean:       anchor is the mean of the set; gradients flow through it.
///   MeanFrozen: anchor is the mean, treated as a constant.
///   Member:     anchor is one designated member of the set (random-anchor
///               baseline).
enum class AnchorMode { Mean, MeanFrozen, Member };

struct LossOutput {
  double value = 0.0;
  /// Gradient per sample id; samples in no active term are absent.
  std::map<std::size_t, Vector> grads;
  std::size_t active_terms = 0;
  /// Sign of every hinge slack followed by every mined sample id. Two points
  /// with equal patterns lie on the same smooth piece of the loss.
  std::vector<long> pattern;

  void add_grad(std::size_t id, std::span<const double> g, double scale = 1.0);
  /// this += weight * other (value, grads, pattern appended).
  void merge(const LossOutput& other, double weight = 1.0);
  /// Gradient of one sample, zero vector of `dim` when absent.
  Vector grad(std::size_t id, std::size_t dim) const;
};

/// 1/2 max(|a-p|^2 + alpha - |a-n|^2, 0). Gradient ids: 0 = anchor,
/// 1 = positive, 2 = negative.
LossOutput triplet_loss(std::span<const double> anchor, std::span<const double> positive,
                        std::span<const double> negative, double alpha);

/// Arithmetic mean, accumulated in the order given.
Vector mean_anchor(std::span<const Vector> positives);

struct NearestSample {
  std::size_t position = 0;  // index into the candidate list
  double squared_distance = 0.0;
};

/// Closest candidate to the anchor. Candidates are expected in ascending
/// sample-id order, so the earliest of tied candidates has the lowest id.
NearestSample hardest_negative(std::span<const double> anchor, std::span<const Vector> negatives);

/// Positives of one class plus the out-of-class negatives available to it,
/// with the anchors derived from them.
struct TripletContext {
  struct Group {
    std::size_t group = 0;
    std::vector<std::size_t> members;  // positions into positives
    Vector center;
    std::optional<std::size_t> anchor_member;  // position into positives
  };

  std::vector<std::size_t> positive_ids;  // ascending
  std::vector<Vector> positives;
  std::vector<std::size_t> positive_groups;
  std::vector<std::size_t> negative_ids;  // ascending
  std::vector<Vector> negatives;
  Vector mean_anchor;
  std::vector<Group> groups;                 // ascending group id
  std::optional<std::size_t> anchor_member;  // position into positives

  std::size_t dim() const { return mean_anchor.size(); }

  /// Sorts both sets by sample id and derives the mean and group anchors.
  /// `groups` is parallel to the positives; pass an empty span for a single
  /// group.
  static TripletContext make(std::vector<std::size_t> positive_ids,
                             std::vector<Vector> positives, std::vector<std::size_t> groups,
                             std::vector<std::size_t> negative_ids, std::vector<Vector> negatives);

  /// Chooses member anchors (class-level and per group) by sample id.
  void set_member_anchors(std::optional<std::size_t> class_anchor_id,
                          const std::map<std::size_t, std::size_t>& group_anchor_ids);
};

/// Sum over positives of 1/2 max(|x_i - c|^2 + alpha - |x* - c|^2, 0) where c
/// is the class anchor and x* the negative closest to it.
LossOutput mean_valued_triplet_loss(const TripletContext& ctx, double alpha,
                                    AnchorMode mode = AnchorMode::Mean);

/// Sum over groups g and members i of g of
/// 1/2 max(|c_g - x_i|^2 + alpha2 - |c_g - x_j|^2, 0), with x_j the same-class
/// sample outside g closest to the group anchor c_g. Zero for one group.
LossOutput intra_group_loss(const TripletContext& ctx, double alpha2,
                            AnchorMode mode = AnchorMode::Mean);

LossOutput icv_triplet_loss(const TripletContext& ctx, double alpha1, double alpha2,
                            AnchorMode mode = AnchorMode::Mean);

struct SoftmaxLoss {
  LossOutput loss;  // grads keyed by embedded row
  Matrix grad_weight;
  Vector grad_bias;
};

/// Mean over rows of -log softmax(V f + c0)[label].
SoftmaxLoss softmax_cross_entropy(const ClassifierHead& head, const FeatureMatrix& embedded,
                                  std::span<const std::size_t> labels);

struct GsTrsOptions {
  AnchorMode anchor_mode = AnchorMode::Mean;
  bool intra = true;  // include the inter-group terms
};

struct GsTrsLoss {
  LossOutput total;  // value and grads keyed by embedded row
  double softmax = 0.0;
  double inter = 0.0;  // mean over contexts
  double intra = 0.0;  // mean over contexts
  Matrix grad_head_weight;
  Vector grad_head_bias;
};

/// omega * softmax + (1 - omega) * triplet, where the triplet part is the
/// mean over contexts of inter + intra. Context ids are rows of `embedded`.
GsTrsLoss gs_trs_loss(std::span<const TripletContext> contexts, const ClassifierHead& head,
                      const FeatureMatrix& embedded, std::span<const std::size_t> labels,
                      const LossConfig& config, const GsTrsOptions& options = {});

}  // namespace gstrs
