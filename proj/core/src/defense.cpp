#include "adva/defense.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adva/losses.hpp"
#include "adva/rng.hpp"

namespace adva {

void DefenseConfig::validate() const {
  require(rounds >= 1, "defense config: rounds must be >= 1");
  require(mix_ratio > 0.0 && mix_ratio <= 1.0, "defense config: mix_ratio must be in (0,1]");
  if (mode == DefenseMode::Weighted)
    require(alpha.has_value(), "defense config: weighted mode requires alpha");
  if (alpha) require(*alpha >= 0.0, "defense config: alpha must be >= 0");
  retrain.validate();
  attack.validate();
}

namespace {

// Clean + adversarial material for one defense round, already subsampled by
// mix_ratio.
struct MixturePools {
  Batch clean_supervised;   // clean source, true labels
  Batch adv_supervised;     // adv source (true labels) + adv target (pseudo labels)
  Tensor source_align;      // clean source u adv source
  Tensor target_align;      // clean target u adv target
  std::size_t mixture_size = 0;  // clean samples of both domains + adversarials kept
};

std::vector<std::size_t> subsample(std::size_t n, double ratio, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (ratio >= 1.0) return idx;
  rng.shuffle(idx);
  auto keep = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  keep = std::max<std::size_t>(keep, 1);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

MixturePools make_pools(const DomainPair& pair, const AdversarialBatch& advb, double mix_ratio,
                        std::uint64_t seed) {
  const LabeledDataset& src = pair.source();
  std::size_t n_s = advb.source_rows;
  std::size_t n_t = advb.adversarials.rows() - n_s;

  Rng rng(seed_combine(seed, 0x3144));
  std::vector<std::size_t> keep_s = subsample(n_s, mix_ratio, rng);
  std::vector<std::size_t> keep_t = subsample(n_t, mix_ratio, rng);

  Tensor adv_s = advb.adv_source_part();
  Tensor adv_t = advb.adv_target_part();
  Tensor adv_s_kept = gather_rows(adv_s, keep_s);
  Tensor adv_t_kept = gather_rows(adv_t, keep_t);

  MixturePools pools;
  pools.clean_supervised = Batch{src.features, src.labels};
  pools.adv_supervised.features = vstack(adv_s_kept, adv_t_kept);
  for (std::size_t i : keep_s) pools.adv_supervised.labels.push_back(advb.labels_used[i]);
  for (std::size_t i : keep_t)
    pools.adv_supervised.labels.push_back(advb.labels_used[n_s + i]);

  pools.source_align = vstack(src.features, adv_s_kept);
  pools.target_align = vstack(pair.target_features(), adv_t_kept);
  pools.mixture_size = src.size() + pair.target_size() + keep_s.size() + keep_t.size();
  return pools;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  return idx;
}

Batch slice_rows(const Tensor& features, const std::vector<int>& labels,
                 const std::vector<std::size_t>& order, std::size_t start, std::size_t count) {
  std::vector<std::size_t> rows(count);
  for (std::size_t i = 0; i < count; ++i) rows[i] = order[(start + i) % order.size()];
  Batch b;
  b.features = gather_rows(features, rows);
  if (!labels.empty())
    for (std::size_t r : rows) b.labels.push_back(labels[r]);
  return b;
}

// Minibatch training of a fresh model on the mixture, with either the plain
// mixture cross-entropy or the alpha-weighted objective.
UdaModel train_on_mixture(UdaModel model, const MixturePools& pools,
                          const std::optional<double>& alpha, const TrainConfig& cfg) {
  const std::size_t n_clean = pools.clean_supervised.features.rows();
  const std::size_t n_adv = pools.adv_supervised.features.rows();
  const std::size_t n_sal = pools.source_align.rows();
  const std::size_t n_tal = pools.target_align.rows();
  const std::size_t bs = std::min({cfg.batch_size, n_clean, n_adv, n_sal, n_tal});
  require(bs >= 2, "defense training: effective batch size must be >= 2");
  const std::size_t steps = std::max<std::size_t>(1, n_clean / bs);
  model.train_cfg = cfg;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng(seed_combine(cfg.seed, 4 * epoch + 2));
    auto clean_order = shuffled_indices(n_clean, erng);
    auto adv_order = shuffled_indices(n_adv, erng);
    auto sal_order = shuffled_indices(n_sal, erng);
    auto tal_order = shuffled_indices(n_tal, erng);

    for (std::size_t step = 0; step < steps; ++step) {
      Batch bclean = slice_rows(pools.clean_supervised.features, pools.clean_supervised.labels,
                                clean_order, step * bs, bs);
      Batch badv = slice_rows(pools.adv_supervised.features, pools.adv_supervised.labels,
                              adv_order, step * bs, bs);
      Batch bsal = slice_rows(pools.source_align, {}, sal_order, step * bs, bs);
      Batch btal = slice_rows(pools.target_align, {}, tal_order, step * bs, bs);

      BuiltLoss built =
          build_defense_loss(model, bclean, badv, bsal.features, btal.features, alpha, cfg);
      Bindings bind = param_bindings(model, true);
      bind.emplace("x_clean", bclean.features);
      bind.emplace("x_adv", badv.features);
      bind.emplace("x_s", bsal.features);
      bind.emplace("x_t", btal.features);

      EvalContext ctx;
      double loss = forward(built.graph, bind, ctx).values[0];
      require(std::isfinite(loss), "defense training: non-finite loss at epoch " +
                                       std::to_string(epoch) + " batch " + std::to_string(step));
      sgd_step(model, backward(built.graph, ctx), cfg.learning_rate);
    }
  }
  return model;
}

double adv_target_accuracy(const UdaModel& model, const AdversarialBatch& advb,
                           const DomainPair& pair) {
  return accuracy_on(model, advb.adv_target_part(), pair.target_labels(GateScope::Evaluation));
}

DefenseResult iterative_defense(const UdaModel& target_model, const DomainPair& pair,
                                const DefenseConfig& cfg, std::optional<double> alpha) {
  cfg.validate();
  DefenseResult res;
  DefenseReport& rep = res.report;
  rep.clean_acc_before = target_accuracy(target_model, pair);

  const UdaModel* current = &target_model;
  UdaModel defended;
  for (std::size_t round = 1; round <= cfg.rounds; ++round) {
    AdversarialBatch advb = pl_fgsm_per_domain(*current, pair, cfg.attack);
    if (round == 1) rep.adv_acc_before = adv_target_accuracy(target_model, advb, pair);

    MixturePools pools = make_pools(pair, advb, cfg.mix_ratio,
                                    seed_combine(cfg.retrain.seed, round));
    UdaModel fresh = init_model(target_model.method, target_model.dims,
                                seed_combine(cfg.retrain.seed, 1000 + round));
    TrainConfig round_cfg = cfg.retrain;
    round_cfg.seed = seed_combine(cfg.retrain.seed, 2000 + round);
    try {
      defended = train_on_mixture(std::move(fresh), pools, alpha, round_cfg);
    } catch (const Error& e) {
      fail("defense round " + std::to_string(round) + ": " + e.what());
    }

    DefenseRound stats;
    stats.clean_acc = target_accuracy(defended, pair);
    stats.adv_acc = adv_target_accuracy(defended, advb, pair);
    rep.history.push_back(stats);
    rep.mixture_size = pools.mixture_size;
    current = &defended;

    if (rep.history.size() >= 2) {
      double delta = std::fabs(stats.adv_acc - rep.history[rep.history.size() - 2].adv_acc);
      if (delta < cfg.convergence_points) break;
    }
  }

  rep.clean_acc_after = rep.history.back().clean_acc;
  rep.adv_acc_after = rep.history.back().adv_acc;
  rep.clean_below_adv = rep.clean_acc_after < rep.adv_acc_after;
  res.model = std::move(defended);
  return res;
}

}  // namespace

DefenseResult whitebox_defense(const UdaModel& target_model, const DomainPair& pair,
                               const DefenseConfig& cfg) {
  return iterative_defense(target_model, pair, cfg, std::nullopt);
}

DefenseResult weighted_defense(const UdaModel& target_model, const DomainPair& pair,
                               const DefenseConfig& cfg) {
  require(cfg.alpha.has_value(), "weighted_defense: alpha must be set");
  return iterative_defense(target_model, pair, cfg, cfg.alpha);
}

DefenseResult blackbox_defense(const UdaModel& victim, const UdaModel& avatar,
                               const DomainPair& pair, const DefenseConfig& cfg) {
  cfg.validate();
  require(avatar.dims.input == victim.dims.input,
          "blackbox_defense: avatar and victim input dims must match");

  DefenseResult res;
  DefenseReport& rep = res.report;
  rep.clean_acc_before = target_accuracy(victim, pair);

  // Adversarials come from the fixed avatar exactly once.
  AdversarialBatch advb = pl_fgsm_per_domain(avatar, pair, cfg.attack);
  rep.adv_acc_before = adv_target_accuracy(victim, advb, pair);

  MixturePools pools = make_pools(pair, advb, cfg.mix_ratio, seed_combine(cfg.retrain.seed, 1));
  rep.mixture_size = pools.mixture_size;
  UdaModel fresh =
      init_model(victim.method, victim.dims, seed_combine(cfg.retrain.seed, 1001));
  res.model = train_on_mixture(std::move(fresh), pools, std::nullopt, cfg.retrain);

  DefenseRound stats;
  stats.clean_acc = target_accuracy(res.model, pair);
  stats.adv_acc = adv_target_accuracy(res.model, advb, pair);
  rep.history.push_back(stats);
  rep.clean_acc_after = stats.clean_acc;
  rep.adv_acc_after = stats.adv_acc;
  rep.clean_below_adv = rep.clean_acc_after < rep.adv_acc_after;
  return res;
}

}  // namespace adva
