#pragma once

#include <optional>
#include <string>
#include <vector>

#include "adva/graph.hpp"
#include "adva/model.hpp"

namespace adva {

/// Scalar objective broken into its named parts. The total always equals the
/// documented combination of the components.
struct LossValue {
  double total = 0.0;
  std::vector<std::pair<std::string, double>> components;

  double component(const std::string& name) const;
  bool has_component(const std::string& name) const;
};

/// A loss assembled as a graph: handle to the total plus handles to each
/// component so callers can read them out of the evaluation context.
struct LossParts {
  NodeId total = -1;
  std::vector<std::pair<std::string, NodeId>> components;
};

// ---- graph builders ----

/// Mean over samples of -log p[label], probabilities floored at 1e-12 before
/// the log.
NodeId cross_entropy_node(Graph& g, NodeId probs, const std::vector<int>& labels,
                          std::size_t num_classes);

/// Multi-kernel MMD, biased V-statistic, Gaussian kernels at the given
/// bandwidths (squared-distance denominators). Batch sizes and feature dim
/// are fixed at build time.
NodeId mmd_node(Graph& g, NodeId xs, NodeId xt, std::size_t m_s, std::size_t m_t, std::size_t f,
                const std::vector<double>& bandwidths);

/// Domain-discriminator cross-entropy over stacked source/target rows routed
/// through gradient reversal. Uses the model's discriminator parameters.
NodeId domain_adversarial_node(Graph& g, const UdaModel& model, NodeId h_s, NodeId h_t,
                               std::size_t n_s, std::size_t n_t, double lambda);

// ---- median heuristic ----

/// Median of the squared pairwise distances over all unordered row pairs.
/// Fails when the batch has fewer than two distinct rows overall.
double median_pairwise_sq_distance(const Tensor& joint);

/// Median heuristic times each multiplier. Fails for m < 2 or an
/// all-identical joint batch.
std::vector<double> mmd_bandwidths(const Tensor& xs, const Tensor& xt,
                                   const std::vector<double>& multipliers);

// ---- value-level operations (thin forwards over the builders) ----

double cross_entropy(const Tensor& prob_matrix, const std::vector<int>& labels);

double mmd(const Tensor& features_s, const Tensor& features_t,
           const std::vector<double>& bandwidth_multipliers);

double domain_adversarial_loss(const UdaModel& model, const Tensor& features_s,
                               const Tensor& features_t, double lambda);

/// Per-row flattened outer product feature_i (x) prob_i; row dimension f*k.
Tensor conditional_features(const Tensor& features, const Tensor& prob_matrix);

// ---- composite objectives ----

/// Full composite loss graph over the model's layers. Inputs are "x_s" and/or
/// "x_t" plus the model parameters; all batch-dependent values (labels, ones
/// columns, MMD bandwidths from the current clean features) are embedded as
/// constants, so attack loops can rebind x without rebuilding.
/// Components emitted: "classifier" (when source given), "transfer" (when
/// both domains given and the method has one), "pl_cross_entropy" (when
/// include_pl_term and target labels given).
struct BuiltLoss {
  Graph graph;
  LossParts parts;
};

BuiltLoss build_pl_loss(const UdaModel& model, const std::optional<Batch>& source,
                        const std::optional<Batch>& target, const TrainConfig& cfg,
                        bool include_pl_term);

/// Defense objective over a clean supervised pool, an adversarial supervised
/// pool and the two alignment pools. With `alpha` set this is the weighted
/// form alpha*CE(adv) + CE(clean) + w*transfer; without it the plain mixture
/// form CE(clean u adv) + w*transfer.
BuiltLoss build_defense_loss(const UdaModel& model, const Batch& clean_supervised,
                             const Batch& adv_supervised, const Tensor& source_align,
                             const Tensor& target_align, std::optional<double> alpha,
                             const TrainConfig& cfg);

/// Evaluates a BuiltLoss on bindings and collects total + components.
LossValue eval_loss(const BuiltLoss& built, const Bindings& bindings);

LossValue uda_loss(const UdaModel& model, const Batch& source, const Batch& target,
                   const TrainConfig& cfg);

/// L_PL = L_DA + mean target cross-entropy against the supplied pseudo
/// labels. Pseudo labels must be supplied; they never come from the gate.
LossValue pl_loss(const UdaModel& model, const Batch& source, const Batch& target_with_pseudo,
                  const TrainConfig& cfg);

LossValue weighted_defense_loss(const UdaModel& model, const Batch& clean, const Batch& adv,
                                double alpha, const TrainConfig& cfg);

}  // namespace adva
