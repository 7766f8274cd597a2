#pragma once

#include <string>
#include <vector>

#include "adva/attack.hpp"
#include "adva/dataset.hpp"
#include "adva/defense.hpp"
#include "adva/model.hpp"
#include "adva/report.hpp"

namespace adva {

/// One transfer task: either a synthetic shift recipe or a pair of dataset
/// files.
struct TaskSpec {
  ShiftSpec shift;
  std::string source_file;  // both set -> load from files instead of generating
  std::string target_file;

  bool from_files() const { return !source_file.empty() || !target_file.empty(); }
  void validate() const;
};

/// Whole-experiment recipe: the transfer tasks, the model zoo, the attack
/// protocol (epsilon grid scaled by the per-task feature deviation) and the
/// defense settings.
struct ExperimentConfig {
  std::vector<TaskSpec> tasks;          // one entry per base domain pair
  bool both_directions = true;          // run each pair forward and reversed
  std::vector<Method> methods = {Method::Dan, Method::Dann, Method::Cdan};
  std::size_t hidden = 16;
  std::size_t feature = 8;
  TrainConfig train;
  std::vector<double> eps_multipliers = {0.01, 0.05, 0.1, 0.5};
  std::size_t attack_iters = 40;
  bool run_targeted = false;
  std::size_t transfer_eps_index = 1;   // grid slot used for transfer rows
  std::optional<double> clip_min;
  std::optional<double> clip_max;
  bool defense_enabled = false;
  DefenseMode defense_mode = DefenseMode::WhiteboxIterative;  // used on the diagonal
  std::size_t defense_rounds = 3;
  double defense_alpha = 0.5;
  double defense_mix_ratio = 1.0;
  double defense_eps_multiplier = 0.1;
  TrainConfig defense_retrain;
  std::uint64_t seed = 7;
  std::string out_dir = "out";

  void validate() const;
};

ExperimentConfig default_experiment_config();

/// Flat key=value text config ('#' comments). Unknown keys are rejected.
ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

/// The config documentation printed by `adva matrix --help-config`.
std::string config_key_reference();

std::vector<std::pair<std::string, std::string>> config_echo(const ExperimentConfig& cfg);

/// Trains every model on every task, evaluates clean accuracy, runs the
/// white-box grid and the ordered avatar->victim transfer attacks, and
/// assembles the attack accuracy table. Sub-experiment failures are recorded
/// and leave the report marked incomplete rather than aborting the run.
ExperimentReport run_attack_matrix(const ExperimentConfig& cfg);

/// Defense counterpart of the attack matrix: the diagonal runs the configured
/// white-box (or weighted) defense, off-diagonal cells run the black-boxmix
/// defense against the avatar's adversarials.
ExperimentReport run_defense_matrix(const ExperimentConfig& cfg);

}  // namespace adva
