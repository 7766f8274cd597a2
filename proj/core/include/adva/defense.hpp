#pragma once

#include <optional>
#include <vector>

#include "adva/attack.hpp"
#include "adva/dataset.hpp"
#include "adva/model.hpp"

namespace adva {

enum class DefenseMode { WhiteboxIterative, BlackboxMix, Weighted };

struct DefenseConfig {
  DefenseMode mode = DefenseMode::WhiteboxIterative;
  std::size_t rounds = 3;
  double mix_ratio = 1.0;             // fraction of the adversarial pool mixed in
  std::optional<double> alpha;        // adversarial-loss weight, required for Weighted
  TrainConfig retrain;
  AttackConfig attack;
  double convergence_points = 0.01;   // stop early when adv accuracy moves less than this

  void validate() const;
};

struct DefenseRound {
  double clean_acc = 0.0;
  double adv_acc = 0.0;
};

struct DefenseReport {
  double clean_acc_before = 0.0;
  double adv_acc_before = 0.0;
  double clean_acc_after = 0.0;
  double adv_acc_after = 0.0;
  std::vector<DefenseRound> history;  // one entry per executed round
  bool clean_below_adv = false;       // flags the clean < adversarial inversion
  std::size_t mixture_size = 0;       // clean + mixed-in adversarial samples, last round
};

struct DefenseResult {
  UdaModel model;
  DefenseReport report;
};

/// Iterative adversarial retraining: each round regenerates adversarials
/// against the current defended model (round 1: against the target model),
/// then trains a whole new model from fresh random init on the clean plus
/// adversarial mixture. Stops after cfg.rounds or when the adversarial
/// accuracy converges. Target-domain adversarials are supervised with their
/// clean-time pseudo labels, source adversarials with true labels.
DefenseResult whitebox_defense(const UdaModel& target_model, const DomainPair& pair,
                               const DefenseConfig& cfg);

/// Mix defense for avatar-based attacks: adversarials come from the fixed
/// avatar once (regeneration is pointless, the avatar never moves), then a
/// fresh victim-method model trains on the mixture.
DefenseResult blackbox_defense(const UdaModel& victim, const UdaModel& avatar,
                               const DomainPair& pair, const DefenseConfig& cfg);

/// Whitebox loop with the weighted objective alpha*CE(adv) + CE(clean) +
/// transfer instead of the plain mixture cross-entropy.
DefenseResult weighted_defense(const UdaModel& target_model, const DomainPair& pair,
                               const DefenseConfig& cfg);

}  // namespace adva
