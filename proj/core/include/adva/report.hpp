#pragma once

#include <optional>
#include <string>
#include <vector>

namespace adva {

struct ReportCell {
  std::string task;
  double accuracy = 0.0;                   // target-domain accuracy, fraction in [0,1]
  std::optional<double> epsilon;           // physical L-inf radius for attacked cells
  std::optional<double> source_accuracy;   // source-domain accuracy under the same attack
};

/// One table row: a victim under one attack source and mode, with one
/// accuracy cell per transfer task.
struct ReportRow {
  std::string victim;
  std::string attack_source;               // "clean", "white-box" or "<avatar>2<victim>"
  std::string mode;                        // "-", "non_targeted", "targeted", "defense"
  std::optional<double> eps_multiplier;    // grid multiplier before sigma scaling
  std::vector<ReportCell> cells;
  double average = 0.0;
  std::optional<double> decrease_rate;
  std::optional<std::string> samples;      // defense rows: "clean" or "adv"
  std::optional<double> pre_defense_average;  // the parenthesized pre-attack value
};

struct ExperimentReport {
  std::uint64_t seed = 0;
  bool complete = true;
  std::vector<std::string> errors;
  std::uint64_t gate_eval_reads = 0;
  std::uint64_t gate_other_reads = 0;
  bool linf_ok = true;             // every adversarial sample within epsilon + 1e-9
  bool clip_ok = true;             // every adversarial sample within the clip range
  bool params_unchanged = true;    // model hashes identical before/after attacks
  bool clean_below_adv_flag = false;  // defense produced clean accuracy below adversarial
  std::vector<std::pair<std::string, std::string>> config_echo;
  std::vector<ReportRow> rows;
  std::vector<ReportRow> defense_rows;

  /// Row averages must equal the mean of their cells within 1e-9 and every
  /// accuracy must be a valid fraction.
  void validate() const;
};

/// Relative accuracy drop (clean - adv) / clean. Fails on clean == 0.
double decrease_rate(double clean_acc, double adv_acc);

/// Machine-readable form. Carries a flat `records` array (one record per
/// cell: victim, attack_source, mode, epsilon, task, accuracy, average,
/// decrease_rate, seed) plus the full row structures for exact round-trips.
std::string report_json(const ExperimentReport& report);
ExperimentReport parse_report_json(const std::string& text);

/// Human-readable aligned table, accuracies as percentages with 2 decimals.
std::string report_table(const ExperimentReport& report);

/// Writes report.json and report.txt under out_dir.
void emit_report(const ExperimentReport& report, const std::string& out_dir);

}  // namespace adva
