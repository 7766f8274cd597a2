#include "adva/attack.hpp"

#include <algorithm>
#include <cmath>

namespace adva {

void AttackConfig::validate() const {
  require(epsilon >= 0.0, "attack config: epsilon must be >= 0");
  require(step_alpha > 0.0, "attack config: step_alpha must be positive");
  require(iters >= 1, "attack config: iters must be >= 1");
  require(step_alpha * static_cast<double>(iters) >= epsilon,
          "attack config: step_alpha * iters must reach epsilon");
  if (clip_min && clip_max)
    require(*clip_min < *clip_max, "attack config: clip_min must be below clip_max");
}

AttackConfig AttackConfig::for_epsilon(double epsilon, std::size_t iters, AttackMode mode) {
  require(epsilon >= 0.0, "attack config: epsilon must be >= 0");
  require(iters >= 1, "attack config: iters must be >= 1");
  AttackConfig cfg;
  cfg.epsilon = epsilon;
  cfg.iters = iters;
  cfg.mode = mode;
  // 2x slack over the minimum so the ball boundary stays reachable.
  cfg.step_alpha = epsilon > 0.0 ? 2.0 * epsilon / static_cast<double>(iters) : 1e-12;
  return cfg;
}

Tensor AdversarialBatch::adv_source_part() const {
  require(source_rows > 0, "adversarial batch: no source rows");
  return take_rows(adversarials, 0, source_rows);
}

Tensor AdversarialBatch::adv_target_part() const {
  require(source_rows < adversarials.rows(), "adversarial batch: no target rows");
  return take_rows(adversarials, source_rows, adversarials.rows());
}

std::vector<int> assign_pseudo_labels(const UdaModel& model, const Tensor& target_features) {
  return argmax_rows(predict(model, target_features));
}

std::vector<int> least_likely_class(const UdaModel& model, const Tensor& features) {
  return argmin_rows(predict(model, features));
}

Tensor clip_to_ball(const Tensor& x_adv, const Tensor& x_orig, double epsilon,
                    std::optional<double> clip_min, std::optional<double> clip_max) {
  require(x_adv.shape == x_orig.shape, "clip_to_ball: shape mismatch " + shape_str(x_adv.shape) +
                                           " vs " + shape_str(x_orig.shape));
  Tensor out = x_adv;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    double lo = x_orig.values[i] - epsilon;
    double hi = x_orig.values[i] + epsilon;
    double v = std::min(std::max(out.values[i], lo), hi);
    if (clip_min) v = std::max(v, *clip_min);
    if (clip_max) v = std::min(v, *clip_max);
    out.values[i] = v;
  }
  return out;
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Shared iteration core. The loss graph is built once on the clean batches
// (labels, ones columns and MMD bandwidths frozen there) and only the x
// bindings change per step. `direction` is +1 for ascent, -1 for descent.
AdversarialBatch iterate_attack(const UdaModel& model, const std::optional<Batch>& source,
                                const std::optional<Batch>& target, const AttackConfig& cfg,
                                AttackLossMode loss_mode, double direction) {
  cfg.validate();
  bool include_pl = target.has_value() && loss_mode == AttackLossMode::PL;
  require(source.has_value() || include_pl,
          "attack: objective would be empty (target-only batch with DA-only loss)");
  BuiltLoss built = build_pl_loss(model, source, target, model.train_cfg, include_pl);

  Tensor orig = source && target ? vstack(source->features, target->features)
                                 : (source ? source->features : target->features);
  std::size_t n_s = source ? source->features.rows() : 0;
  Tensor adv = orig;

  Bindings base = param_bindings(model, false);
  for (std::size_t iter = 0; iter < cfg.iters; ++iter) {
    Bindings b = base;
    if (source) b.emplace("x_s", take_rows(adv, 0, n_s).with_grad(true));
    if (target) b.emplace("x_t", take_rows(adv, n_s, adv.rows()).with_grad(true));

    EvalContext ctx;
    forward(built.graph, b, ctx);
    auto grads = backward(built.graph, ctx);

    auto step_part = [&](const char* name, std::size_t row_off) {
      auto it = grads.find(name);
      if (it == grads.end()) return;
      const Tensor& gr = it->second;
      require(gr.all_finite(), "attack: non-finite gradient at iteration " +
                                   std::to_string(iter) + " for " + name);
      std::size_t cols = adv.cols();
      for (std::size_t i = 0; i < gr.numel(); ++i)
        adv.values[row_off * cols + i] += direction * cfg.step_alpha * sign(gr.values[i]);
    };
    step_part("x_s", 0);
    step_part("x_t", n_s);
    adv = clip_to_ball(adv, orig, cfg.epsilon, cfg.clip_min, cfg.clip_max);
  }

  AdversarialBatch out;
  out.originals = orig;
  out.adversarials = std::move(adv);
  out.source_rows = n_s;
  if (source) out.labels_used = source->labels;
  if (target)
    out.labels_used.insert(out.labels_used.end(), target->labels.begin(), target->labels.end());
  out.per_sample_linf.resize(out.originals.rows(), 0.0);
  for (std::size_t i = 0; i < out.originals.rows(); ++i) {
    double worst = 0.0;
    for (std::size_t j = 0; j < out.originals.cols(); ++j)
      worst = std::max(worst, std::fabs(out.adversarials.at(i, j) - out.originals.at(i, j)));
    out.per_sample_linf[i] = worst;
  }
  return out;
}

}  // namespace

AdversarialBatch pl_fgsm(const UdaModel& model, const DomainPair& pair, const AttackConfig& cfg,
                         AttackLossMode loss_mode) {
  require(cfg.mode == AttackMode::NonTargeted, "pl_fgsm: config mode must be non_targeted");
  require(pair.feature_dim() == model.dims.input, "pl_fgsm: pair dims do not match model");
  Batch src{pair.source().features, pair.source().labels};
  Batch tgt{pair.target_features(), assign_pseudo_labels(model, pair.target_features())};
  return iterate_attack(model, src, tgt, cfg, loss_mode, +1.0);
}

AdversarialBatch pl_fgsm(const UdaModel& model, const Tensor& features,
                         const std::vector<int>& labels, AttackDomain domain,
                         const AttackConfig& cfg, AttackLossMode loss_mode) {
  require(cfg.mode == AttackMode::NonTargeted, "pl_fgsm: config mode must be non_targeted");
  require(features.is_matrix() && features.cols() == model.dims.input,
          "pl_fgsm: feature dims do not match model");
  require(labels.size() == features.rows(), "pl_fgsm: label count mismatch");
  Batch batch{features, labels};
  if (domain == AttackDomain::Source)
    return iterate_attack(model, batch, std::nullopt, cfg, loss_mode, +1.0);
  return iterate_attack(model, std::nullopt, batch, cfg, loss_mode, +1.0);
}

AdversarialBatch pl_fgsm_targeted(const UdaModel& model, const DomainPair& pair,
                                  const AttackConfig& cfg) {
  require(cfg.mode == AttackMode::Targeted, "pl_fgsm_targeted: config mode must be targeted");
  require(pair.feature_dim() == model.dims.input, "pl_fgsm_targeted: pair dims mismatch");
  Batch src{pair.source().features, least_likely_class(model, pair.source().features)};
  Batch tgt{pair.target_features(), least_likely_class(model, pair.target_features())};
  return iterate_attack(model, src, tgt, cfg, AttackLossMode::PL, -1.0);
}

AdversarialBatch pl_fgsm_targeted(const UdaModel& model, const Tensor& features,
                                  const AttackDomain domain, const AttackConfig& cfg) {
  require(cfg.mode == AttackMode::Targeted, "pl_fgsm_targeted: config mode must be targeted");
  Batch batch{features, least_likely_class(model, features)};
  if (domain == AttackDomain::Source)
    return iterate_attack(model, batch, std::nullopt, cfg, AttackLossMode::PL, -1.0);
  return iterate_attack(model, std::nullopt, batch, cfg, AttackLossMode::PL, -1.0);
}

AdversarialBatch pl_fgsm_per_domain(const UdaModel& model, const DomainPair& pair,
                                    const AttackConfig& cfg) {
  require(pair.feature_dim() == model.dims.input, "pl_fgsm: pair dims do not match model");
  const Tensor& sf = pair.source().features;
  const Tensor& tf = pair.target_features();
  AdversarialBatch src, tgt;
  if (cfg.mode == AttackMode::Targeted) {
    src = pl_fgsm_targeted(model, sf, AttackDomain::Source, cfg);
    tgt = pl_fgsm_targeted(model, tf, AttackDomain::Target, cfg);
  } else {
    src = pl_fgsm(model, sf, pair.source().labels, AttackDomain::Source, cfg);
    tgt = pl_fgsm(model, tf, assign_pseudo_labels(model, tf), AttackDomain::Target, cfg);
  }
  AdversarialBatch out;
  out.originals = vstack(src.originals, tgt.originals);
  out.adversarials = vstack(src.adversarials, tgt.adversarials);
  out.labels_used = src.labels_used;
  out.labels_used.insert(out.labels_used.end(), tgt.labels_used.begin(), tgt.labels_used.end());
  out.per_sample_linf = src.per_sample_linf;
  out.per_sample_linf.insert(out.per_sample_linf.end(), tgt.per_sample_linf.begin(),
                             tgt.per_sample_linf.end());
  out.source_rows = sf.rows();
  return out;
}

TransferAttackResult transfer_attack(const UdaModel& avatar, const UdaModel& victim,
                                     const DomainPair& pair, const AttackConfig& cfg) {
  require(avatar.dims.input == victim.dims.input && avatar.dims.classes == victim.dims.classes,
          "transfer_attack: avatar and victim input dims must match");
  TransferAttackResult res;
  res.batch = pl_fgsm_per_domain(avatar, pair, cfg);
  res.victim_source_accuracy =
      accuracy_on(victim, res.batch.adv_source_part(), pair.source().labels);
  res.victim_target_accuracy = accuracy_on(victim, res.batch.adv_target_part(),
                                           pair.target_labels(GateScope::Evaluation));
  return res;
}

std::vector<std::optional<double>> robustness_radius(const UdaModel& model,
                                                     const Tensor& features,
                                                     const std::vector<int>& labels,
                                                     const std::vector<double>& eps_grid,
                                                     const AttackConfig& cfg_template) {
  require(!eps_grid.empty(), "robustness_radius: empty epsilon grid");
  for (std::size_t i = 1; i < eps_grid.size(); ++i)
    require(eps_grid[i] > eps_grid[i - 1], "robustness_radius: grid must be ascending");
  require(labels.size() == features.rows(), "robustness_radius: label count mismatch");

  std::vector<std::optional<double>> radius(labels.size());
  std::vector<int> clean_pred = argmax_rows(predict(model, features));
  std::size_t unresolved = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (clean_pred[i] != labels[i])
      radius[i] = 0.0;  // already misclassified: flipped at epsilon 0
    else
      ++unresolved;
  }

  for (double eps : eps_grid) {
    if (unresolved == 0) break;
    AttackConfig cfg = cfg_template;
    cfg.epsilon = eps;
    cfg.step_alpha = 2.0 * eps / static_cast<double>(cfg.iters);
    cfg.mode = AttackMode::NonTargeted;
    AdversarialBatch batch = pl_fgsm(model, features, labels, AttackDomain::Source, cfg);
    std::vector<int> pred = argmax_rows(predict(model, batch.adversarials));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (radius[i].has_value()) continue;
      if (pred[i] != labels[i]) {
        radius[i] = eps;
        --unresolved;
      }
    }
  }
  return radius;
}

double feature_std(const Tensor& features) {
  require(features.is_matrix() && features.numel() > 0, "feature_std: non-empty matrix required");
  // The widest per-coordinate deviation. The attack budget is an L-inf box,
  // so the dominant coordinate scale is the right analogue of the pixel unit.
  const std::size_t n = features.rows(), d = features.cols();
  double worst = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += features.at(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double dv = features.at(i, j) - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(n);
    worst = std::max(worst, var);
  }
  return std::sqrt(worst);
}

double feature_std(const DomainPair& pair) {
  return feature_std(vstack(pair.source().features, pair.target_features()));
}

}  // namespace adva
