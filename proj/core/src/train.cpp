#include <cmath>
#include <numeric>

#include "adva/losses.hpp"
#include "adva/model.hpp"
#include "adva/rng.hpp"

namespace adva {

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  return idx;
}

Batch slice_batch(const Tensor& features, const std::vector<int>& labels,
                  const std::vector<std::size_t>& order, std::size_t start, std::size_t count) {
  std::vector<std::size_t> rows(count);
  for (std::size_t i = 0; i < count; ++i) rows[i] = order[(start + i) % order.size()];
  Batch b;
  b.features = gather_rows(features, rows);
  if (!labels.empty()) {
    b.labels.reserve(count);
    for (std::size_t r : rows) b.labels.push_back(labels[r]);
  }
  return b;
}

}  // namespace

void sgd_step(UdaModel& model, const std::map<std::string, Tensor>& grads, double lr) {
  for (auto& [name, p] : model.params) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    for (std::size_t i = 0; i < p.values.size(); ++i) p.values[i] -= lr * g.values[i];
    p.grad = g.values;
  }
}

TrainResult train_uda(const UdaModel& model, const DomainPair& pair, const TrainConfig& cfg) {
  cfg.validate();
  require(pair.feature_dim() == model.dims.input,
          "train_uda: pair feature dim " + std::to_string(pair.feature_dim()) +
              " does not match model input " + std::to_string(model.dims.input));
  require(pair.num_classes() == model.dims.classes,
          "train_uda: pair class count does not match model");

  const LabeledDataset& src = pair.source();
  const Tensor& tgt_features = pair.target_features();
  const std::size_t n_s = src.size(), n_t = pair.target_size();
  // Equal-sized source/target batches per step; shared by the MMD estimator
  // and the discriminator balance.
  const std::size_t bs = std::min({cfg.batch_size, n_s, n_t});
  require(bs >= 2, "train_uda: effective batch size must be >= 2");
  const std::size_t steps = n_s / bs;

  TrainResult result;
  result.model = model;
  UdaModel& m = result.model;
  m.train_cfg = cfg;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng(seed_combine(cfg.seed, 2 * epoch + 1));
    std::vector<std::size_t> src_order = shuffled_indices(n_s, erng);
    std::vector<std::size_t> tgt_order = shuffled_indices(n_t, erng);

    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      Batch bsrc = slice_batch(src.features, src.labels, src_order, step * bs, bs);
      Batch btgt = slice_batch(tgt_features, {}, tgt_order, step * bs, bs);

      BuiltLoss built = build_pl_loss(m, bsrc, btgt, cfg, false);
      Bindings bind = param_bindings(m, true);
      bind.emplace("x_s", bsrc.features);
      bind.emplace("x_t", btgt.features);

      EvalContext ctx;
      double loss = forward(built.graph, bind, ctx).values[0];
      require(std::isfinite(loss), "train_uda: non-finite loss at epoch " +
                                       std::to_string(epoch) + " batch " + std::to_string(step));
      sgd_step(m, backward(built.graph, ctx), cfg.learning_rate);
      epoch_loss += loss;
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(steps));
  }

  result.source_train_accuracy = accuracy(m, src);
  return result;
}

}  // namespace adva
