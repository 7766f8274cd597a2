#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "adva/dataset.hpp"
#include "adva/graph.hpp"

namespace adva {

enum class Method { SourceOnly, Dan, Dann, Cdan };

std::string method_name(Method m);
Method parse_method(const std::string& tag);

struct Dims {
  std::size_t input = 6;
  std::size_t hidden = 16;
  std::size_t feature = 8;
  std::size_t classes = 3;
};

/// Minibatch view: features plus labels. Labels may be empty when the batch
/// is unlabeled (target domain during training).
struct Batch {
  Tensor features;
  std::vector<int> labels;
};

struct TrainConfig {
  std::size_t epochs = 150;
  std::size_t batch_size = 20;
  double learning_rate = 0.06;
  double transfer_weight = 1.0;
  double grl_lambda = 1.0;
  std::vector<double> kernel_bandwidth_multipliers = {0.25, 0.5, 1.0, 2.0, 4.0};
  std::uint64_t seed = 0;

  void validate() const;
};

/// Feature extractor F, class predictor G, and (for the adversarial families)
/// a domain discriminator, all over one shared parameter store. The stored
/// graphs are batch-size generic: they take a "ones" column input used to
/// tile bias rows.
struct UdaModel {
  Method method = Method::SourceOnly;
  Dims dims;
  std::uint64_t seed = 0;
  Graph extractor;                      // inputs: x (n,d), ones (n,1) -> features (n,f)
  Graph classifier;                     // inputs: phi (n,f), ones -> probabilities (n,k)
  std::optional<Graph> discriminator;   // inputs: h, ones -> domain probabilities (n,2)
  std::map<std::string, Tensor> params;
  /// Loss hyperparameters the model was trained with. White-box attackers
  /// reproduce the training objective from these; a freshly loaded model
  /// carries the defaults.
  TrainConfig train_cfg;

  bool has_discriminator() const { return discriminator.has_value(); }
  /// Discriminator input width: conditioned features for CDAN, plain features
  /// for DANN.
  std::size_t discriminator_input_dim() const {
    return method == Method::Cdan ? dims.feature * dims.classes : dims.feature;
  }
};

struct TrainResult {
  UdaModel model;
  std::vector<double> epoch_losses;
  double source_train_accuracy = 0.0;
};

/// Fresh model with the documented topology; weights drawn uniformly in
/// +-1/sqrt(fan_in) from the seed.
UdaModel init_model(Method method, const Dims& dims, std::uint64_t seed);

// Layer builders, shared by the stored graphs and by every composite loss
// graph so there is exactly one definition of the network topology. Parameter
// inputs are declared under the fixed prefixes f./c./d. and are shared on
// repeated calls within one graph.
NodeId append_extractor(Graph& g, NodeId x, NodeId ones, const Dims& dims);
NodeId append_classifier(Graph& g, NodeId phi, NodeId ones, const Dims& dims);
NodeId append_discriminator(Graph& g, NodeId h, NodeId ones, std::size_t input_dim,
                            std::size_t hidden);

/// Identity on the forward pass; scales the incoming gradient by -lambda on
/// the backward pass.
NodeId gradient_reversal(Graph& g, NodeId x, double lambda);

/// Parameter bindings for forward/backward through any graph built from the
/// model's layers.
Bindings param_bindings(const UdaModel& model, bool requires_grad);

/// Class probabilities, one row per sample.
Tensor predict(const UdaModel& model, const Tensor& features);

/// Row argmax / argmin with ties broken toward the lowest class index.
std::vector<int> argmax_rows(const Tensor& probs);
std::vector<int> argmin_rows(const Tensor& probs);

double accuracy(const UdaModel& model, const LabeledDataset& ds);
double accuracy_on(const UdaModel& model, const Tensor& features, const std::vector<int>& labels);
/// Target-domain accuracy through the label gate (Evaluation scope).
double target_accuracy(const UdaModel& model, const DomainPair& pair);

/// Minibatch gradient descent on the method's UDA objective. Deterministic in
/// cfg.seed; aborts with the epoch/batch index if the loss goes non-finite.
TrainResult train_uda(const UdaModel& model, const DomainPair& pair, const TrainConfig& cfg);

/// In-place SGD update; stores each parameter's gradient in its grad field.
void sgd_step(UdaModel& model, const std::map<std::string, Tensor>& grads, double learning_rate);

/// Text format, round-trip exact:
///   ADVA-MODEL v1 method=<tag> dims=<d,h,f,k> seed=<s>
///   param <name> <len>
///   <len whitespace-separated values>
void save_model(const UdaModel& model, const std::string& path);
UdaModel load_model(const std::string& path);

/// Order-independent digest of all parameter values; attacks must leave it
/// unchanged.
std::uint64_t params_hash(const UdaModel& model);

}  // namespace adva
