#pragma once

#include <optional>
#include <vector>

#include "adva/dataset.hpp"
#include "adva/losses.hpp"
#include "adva/model.hpp"

namespace adva {

enum class AttackMode { NonTargeted, Targeted };

/// PL keeps the pseudo-label cross-entropy term in the objective; DAOnly
/// attacks with the plain adaptation loss (no pseudo term).
enum class AttackLossMode { PL, DAOnly };

/// Which domain a single-dataset attack belongs to. Source batches carry true
/// labels into the classifier term; target batches carry pseudo labels into
/// the pseudo-label term.
enum class AttackDomain { Source, Target };

struct AttackConfig {
  double epsilon = 0.05;      // L-inf radius; 0 is allowed for degenerate runs
  double step_alpha = 0.0025;
  std::size_t iters = 40;
  AttackMode mode = AttackMode::NonTargeted;
  std::optional<double> clip_min;
  std::optional<double> clip_max;
  std::uint64_t seed = 0;  // reserved for stochastic restarts; the core method is deterministic

  void validate() const;

  /// Step size 2*epsilon/iters so the ball stays reachable with slack.
  static AttackConfig for_epsilon(double epsilon, std::size_t iters = 40,
                                  AttackMode mode = AttackMode::NonTargeted);
};

struct AdversarialBatch {
  Tensor originals;
  Tensor adversarials;
  std::vector<int> labels_used;          // true y for source rows, pseudo/target y for target rows
  std::vector<double> per_sample_linf;
  std::size_t source_rows = 0;           // rows [0, source_rows) are source-domain samples

  Tensor adv_source_part() const;
  Tensor adv_target_part() const;
};

/// Argmax prediction per sample on clean inputs, ties to the lowest index.
/// This is the only sanctioned way attacks obtain target-domain labels.
std::vector<int> assign_pseudo_labels(const UdaModel& model, const Tensor& target_features);

/// Argmin prediction per sample on clean inputs, ties to the lowest index.
std::vector<int> least_likely_class(const UdaModel& model, const Tensor& features);

/// Projects onto the epsilon ball around the originals, then onto the
/// configured clip range. Idempotent.
Tensor clip_to_ball(const Tensor& x_adv, const Tensor& x_orig, double epsilon,
                    std::optional<double> clip_min, std::optional<double> clip_max);

/// Iterated sign-gradient ascent on the pseudo-label objective over the joint
/// source+target batch (the transfer term participates when both domains are
/// present). Pseudo labels are assigned once on clean inputs and the MMD
/// bandwidths are frozen at their clean-input values for the whole loop.
/// Never mutates the model.
AdversarialBatch pl_fgsm(const UdaModel& model, const DomainPair& pair, const AttackConfig& cfg,
                         AttackLossMode loss_mode = AttackLossMode::PL);

/// Single-dataset variant. Labels are caller-supplied: true labels for source
/// batches, pseudo labels for target batches.
AdversarialBatch pl_fgsm(const UdaModel& model, const Tensor& features,
                         const std::vector<int>& labels, AttackDomain domain,
                         const AttackConfig& cfg, AttackLossMode loss_mode = AttackLossMode::PL);

/// Targeted variant: descends toward the least-likely class of each clean
/// sample, fixed across iterations.
AdversarialBatch pl_fgsm_targeted(const UdaModel& model, const DomainPair& pair,
                                  const AttackConfig& cfg);
AdversarialBatch pl_fgsm_targeted(const UdaModel& model, const Tensor& features,
                                  const AttackDomain domain, const AttackConfig& cfg);

/// Headline protocol of the matrix and the defenses: source and target are
/// attacked as separate single-domain batches (the transfer term drops out of
/// single-domain objectives) and reassembled with source rows first. Honors
/// cfg.mode for targeted runs.
AdversarialBatch pl_fgsm_per_domain(const UdaModel& model, const DomainPair& pair,
                                    const AttackConfig& cfg);

struct TransferAttackResult {
  AdversarialBatch batch;          // generated against the avatar
  double victim_target_accuracy = 0.0;
  double victim_source_accuracy = 0.0;
};

/// Avatar-network black-box attack: adversarials are generated against the
/// avatar and evaluated on the victim. With avatar == victim this reproduces
/// the white-box result exactly.
TransferAttackResult transfer_attack(const UdaModel& avatar, const UdaModel& victim,
                                     const DomainPair& pair, const AttackConfig& cfg);

/// Smallest epsilon in the ascending grid whose non-targeted attack makes a
/// sample's prediction differ from its label; 0 for samples that are already
/// misclassified, nullopt when no grid value flips it.
std::vector<std::optional<double>> robustness_radius(const UdaModel& model,
                                                     const Tensor& features,
                                                     const std::vector<int>& labels,
                                                     const std::vector<double>& eps_grid,
                                                     const AttackConfig& cfg_template);

/// Pooled per-coordinate standard deviation of all feature entries, used to
/// scale the attack grid to the data (pixels live in [0,1]; clusters do not).
double feature_std(const Tensor& features);
double feature_std(const DomainPair& pair);

}  // namespace adva
