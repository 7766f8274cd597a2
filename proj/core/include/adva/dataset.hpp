#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "adva/tensor.hpp"

namespace adva {

/// Synthetic domain-shift recipe: Gaussian class clusters on the unit circle,
/// with the target domain produced by rotating, scaling and translating the
/// cluster centers in the first two feature coordinates. Remaining
/// coordinates are pure noise in both domains.
struct ShiftSpec {
  std::size_t num_classes = 3;
  std::size_t samples_per_class_source = 40;
  std::size_t samples_per_class_target = 40;
  std::size_t feature_dim = 4;
  double rotation_angle = 0.0;           // radians
  std::vector<double> translation = {};  // 2-vector; empty means none
  double scale = 1.0;
  double noise_sigma = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LabeledDataset {
  Tensor features;  // n x d
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string domain_name;
  std::optional<ShiftSpec> provenance;  // set by the generator, persisted as a sidecar

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }

  /// Enforces the construction invariants: label range, n >= k, every class
  /// populated, consistent feature dimension, finite values.
  void validate() const;
};

/// Who is reading gated target labels. Evaluation is the only sanctioned
/// scope; everything else counts as a violation the experiment must report.
enum class GateScope { Evaluation, Other };

struct GateCounts {
  std::uint64_t eval_reads = 0;
  std::uint64_t other_reads = 0;
};

/// Source dataset plus a target dataset whose labels exist only for held-out
/// evaluation. Every read of the target labels is recorded; training and
/// attack code paths have no ungated accessor to reach them.
class DomainPair {
 public:
  DomainPair(LabeledDataset source, LabeledDataset target, bool eval_only_target_labels = true);

  const LabeledDataset& source() const { return source_; }

  const Tensor& target_features() const { return target_.features; }
  std::size_t target_size() const { return target_.size(); }
  const std::string& target_domain_name() const { return target_.domain_name; }
  std::size_t num_classes() const { return source_.num_classes; }
  std::size_t feature_dim() const { return source_.dim(); }
  bool gated() const { return eval_only_; }

  /// The one road to target labels. Every call is tallied under its scope.
  const std::vector<int>& target_labels(GateScope scope) const;

  GateCounts gate_counts() const;
  void reset_gate() const;

 private:
  LabeledDataset source_;
  LabeledDataset target_;
  bool eval_only_ = true;
  struct Gate {
    std::atomic<std::uint64_t> eval_reads{0};
    std::atomic<std::uint64_t> other_reads{0};
  };
  std::shared_ptr<Gate> gate_;
};

/// Draws the source and target domains of `spec`. Deterministic in the seed;
/// target labels are present but gated.
DomainPair make_shifted_domains(const ShiftSpec& spec);

/// The same draw as raw datasets (plain cluster domain first, shifted domain
/// second), for callers that assemble pairs in either direction.
std::pair<LabeledDataset, LabeledDataset> make_shifted_datasets(const ShiftSpec& spec);

/// Text format, round-trip exact:
///   ADVA-DS v1 n=<n> d=<d> k=<num_classes> domain=<name>
///   <label>,<f1>,...,<fd>        (one line per sample)
/// A `<path>.meta.json` sidecar records the generator spec when known.
void save_dataset(const LabeledDataset& ds, const std::string& path);
LabeledDataset load_dataset(const std::string& path);

/// Stratified split: per class, round(fraction * count) samples go left.
/// Fails if any class would end up empty on either side.
std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, double fraction,
                                                std::uint64_t seed);

}  // namespace adva
