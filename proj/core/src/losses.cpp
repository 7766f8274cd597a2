#include "adva/losses.hpp"

#include <algorithm>
#include <cmath>

namespace adva {

double LossValue::component(const std::string& name) const {
  for (const auto& [n, v] : components)
    if (n == name) return v;
  fail("loss value: no component named '" + name + "'");
}

bool LossValue::has_component(const std::string& name) const {
  for (const auto& [n, v] : components)
    if (n == name) return true;
  return false;
}

NodeId cross_entropy_node(Graph& g, NodeId probs, const std::vector<int>& labels,
                          std::size_t num_classes) {
  require(!labels.empty(), "cross_entropy: empty label set");
  const std::size_t n = labels.size(), k = num_classes;
  const double eps = 1e-12;
  NodeId y = g.constant(one_hot(labels, k), "labels");
  // Floor the probabilities at eps before the log: max(p, eps) = relu(p-eps)+eps.
  NodeId shifted = g.add(probs, g.constant(Tensor::full({n, k}, -eps)));
  NodeId floored = g.add(g.relu(shifted), g.constant(Tensor::full({n, k}, eps)));
  NodeId picked = g.mul(g.log(floored), y);
  // mean over all n*k cells is (1/(n*k)) * sum, so scale back by k for the
  // per-sample mean of -log p[label].
  return g.neg(g.scale_scalar(g.mean(picked), static_cast<double>(k)));
}

namespace {

// Squared L2 norm of each row, as a column vector.
NodeId row_sqnorm(Graph& g, NodeId x, std::size_t f) {
  Tensor sel = Tensor::zeros({f * f, 1});
  for (std::size_t u = 0; u < f; ++u) sel.values[u * f + u] = 1.0;
  return g.matmul(g.row_outer(x, x), g.constant(std::move(sel), "diag_select"));
}

// Pairwise squared distances ||a_i - b_j||^2 as an (ma, mb) matrix.
NodeId pairwise_sq_dist(Graph& g, NodeId xa, NodeId xb, NodeId ra, NodeId rb, std::size_t ma,
                        std::size_t mb) {
  NodeId t1 = g.matmul(ra, g.constant(Tensor::full({1, mb}, 1.0)));
  NodeId t2 = g.matmul(g.constant(Tensor::full({ma, 1}, 1.0)), rb, false, true);
  NodeId t3 = g.mul(g.matmul(xa, xb, false, true), g.constant(Tensor::full({ma, mb}, -2.0)));
  return g.add(g.add(t1, t2), t3);
}

}  // namespace

NodeId mmd_node(Graph& g, NodeId xs, NodeId xt, std::size_t m_s, std::size_t m_t, std::size_t f,
                const std::vector<double>& bandwidths) {
  require(m_s == m_t, "mmd: batch sizes must match, got " + std::to_string(m_s) + " and " +
                          std::to_string(m_t));
  require(m_s >= 2, "mmd: batch size must be >= 2");
  require(!bandwidths.empty(), "mmd: no kernel bandwidths");
  for (double b : bandwidths) require(b > 0.0, "mmd: bandwidths must be positive");

  NodeId rs = row_sqnorm(g, xs, f);
  NodeId rt = row_sqnorm(g, xt, f);
  NodeId d_ss = pairwise_sq_dist(g, xs, xs, rs, rs, m_s, m_s);
  NodeId d_tt = pairwise_sq_dist(g, xt, xt, rt, rt, m_t, m_t);
  NodeId d_st = pairwise_sq_dist(g, xs, xt, rs, rt, m_s, m_t);

  NodeId acc = -1;
  for (double bw : bandwidths) {
    NodeId k_ss = g.exp(g.mul(d_ss, g.constant(Tensor::full({m_s, m_s}, -1.0 / bw))));
    NodeId k_tt = g.exp(g.mul(d_tt, g.constant(Tensor::full({m_t, m_t}, -1.0 / bw))));
    NodeId k_st = g.exp(g.mul(d_st, g.constant(Tensor::full({m_s, m_t}, -1.0 / bw))));
    NodeId term =
        g.add(g.add(g.mean(k_ss), g.mean(k_tt)), g.scale_scalar(g.mean(k_st), -2.0));
    acc = acc < 0 ? term : g.add(acc, term);
  }
  return g.scale_scalar(acc, 1.0 / static_cast<double>(bandwidths.size()));
}

NodeId domain_adversarial_node(Graph& g, const UdaModel& model, NodeId h_s, NodeId h_t,
                               std::size_t n_s, std::size_t n_t, double lambda) {
  require(model.has_discriminator(),
          "domain_adversarial_loss: model '" + method_name(model.method) +
              "' has no discriminator");
  NodeId cat = g.concat_rows(h_s, h_t);
  NodeId rev = g.grad_reverse(cat, lambda);
  NodeId ones = g.constant(Tensor::full({n_s + n_t, 1}, 1.0));
  NodeId dprob = append_discriminator(g, rev, ones, model.discriminator_input_dim(),
                                      model.dims.feature);
  std::vector<int> domain_labels(n_s + n_t, 0);
  for (std::size_t i = n_s; i < n_s + n_t; ++i) domain_labels[i] = 1;
  return cross_entropy_node(g, dprob, domain_labels, 2);
}

double median_pairwise_sq_distance(const Tensor& joint) {
  require(joint.is_matrix(), "median heuristic: matrix required");
  const std::size_t m = joint.rows(), d = joint.cols();
  require(m >= 2, "median heuristic: need at least two rows");
  std::vector<double> dists;
  dists.reserve(m * (m - 1) / 2);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        double diff = joint.at(i, c) - joint.at(j, c);
        s += diff * diff;
      }
      dists.push_back(s);
    }
  std::sort(dists.begin(), dists.end());
  double med = (dists[(dists.size() - 1) / 2] + dists[dists.size() / 2]) / 2.0;
  require(med > 0.0, "median heuristic: joint batch has zero median pairwise distance "
                     "(all rows identical?)");
  return med;
}

std::vector<double> mmd_bandwidths(const Tensor& xs, const Tensor& xt,
                                   const std::vector<double>& multipliers) {
  require(!multipliers.empty(), "mmd: no bandwidth multipliers");
  double med = median_pairwise_sq_distance(vstack(xs, xt));
  std::vector<double> bw;
  bw.reserve(multipliers.size());
  for (double m : multipliers) {
    require(m > 0.0, "mmd: bandwidth multipliers must be positive");
    bw.push_back(med * m);
  }
  return bw;
}

double cross_entropy(const Tensor& prob_matrix, const std::vector<int>& labels) {
  require(prob_matrix.is_matrix(), "cross_entropy: probability matrix required");
  require(prob_matrix.rows() == labels.size(),
          "cross_entropy: " + std::to_string(prob_matrix.rows()) + " rows vs " +
              std::to_string(labels.size()) + " labels");
  for (std::size_t i = 0; i < prob_matrix.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < prob_matrix.cols(); ++j) {
      double p = prob_matrix.at(i, j);
      require(p >= 0.0 && p <= 1.0, "cross_entropy: entry " + std::to_string(p) +
                                        " at row " + std::to_string(i) +
                                        " is not a probability");
      sum += p;
    }
    require(std::fabs(sum - 1.0) < 1e-6,
            "cross_entropy: row " + std::to_string(i) + " sums to " + std::to_string(sum));
  }
  Graph g;
  NodeId p = g.input("p");
  g.set_output(cross_entropy_node(g, p, labels, prob_matrix.cols()));
  return forward(g, {{"p", prob_matrix}}).values[0];
}

double mmd(const Tensor& features_s, const Tensor& features_t,
           const std::vector<double>& bandwidth_multipliers) {
  require(features_s.is_matrix() && features_t.is_matrix(), "mmd: matrices required");
  require(features_s.cols() == features_t.cols(), "mmd: feature dimensions differ");
  require(features_s.rows() == features_t.rows(), "mmd: batch sizes must match");
  require(features_s.rows() >= 2, "mmd: batch size must be >= 2");

  // The estimator is symmetric; fixing the evaluation order by a value
  // tie-break makes it bit-symmetric as well.
  const Tensor* a = &features_s;
  const Tensor* b = &features_t;
  if (std::lexicographical_compare(b->values.begin(), b->values.end(), a->values.begin(),
                                   a->values.end()))
    std::swap(a, b);

  std::vector<double> bw = mmd_bandwidths(*a, *b, bandwidth_multipliers);
  Graph g;
  NodeId xs = g.input("xs");
  NodeId xt = g.input("xt");
  g.set_output(mmd_node(g, xs, xt, a->rows(), b->rows(), a->cols(), bw));
  return forward(g, {{"xs", *a}, {"xt", *b}}).values[0];
}

double domain_adversarial_loss(const UdaModel& model, const Tensor& features_s,
                               const Tensor& features_t, double lambda) {
  require(model.has_discriminator(),
          "domain_adversarial_loss: model '" + method_name(model.method) +
              "' has no discriminator");
  require(features_s.is_matrix() && features_t.is_matrix(),
          "domain_adversarial_loss: matrices required");
  std::size_t din = model.discriminator_input_dim();
  require(features_s.cols() == din && features_t.cols() == din,
          "domain_adversarial_loss: discriminator expects width " + std::to_string(din));
  Graph g;
  NodeId hs = g.input("h_s");
  NodeId ht = g.input("h_t");
  g.set_output(
      domain_adversarial_node(g, model, hs, ht, features_s.rows(), features_t.rows(), lambda));
  Bindings b = param_bindings(model, false);
  b.emplace("h_s", features_s);
  b.emplace("h_t", features_t);
  return forward(g, b).values[0];
}

Tensor conditional_features(const Tensor& features, const Tensor& prob_matrix) {
  require(features.is_matrix() && prob_matrix.is_matrix(),
          "conditional_features: matrices required");
  require(features.rows() == prob_matrix.rows(),
          "conditional_features: row counts differ, " + std::to_string(features.rows()) +
              " vs " + std::to_string(prob_matrix.rows()));
  const std::size_t n = features.rows(), f = features.cols(), k = prob_matrix.cols();
  Tensor out = Tensor::zeros({n, f * k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t u = 0; u < f; ++u)
      for (std::size_t v = 0; v < k; ++v)
        out.values[i * f * k + u * k + v] = features.at(i, u) * prob_matrix.at(i, v);
  return out;
}

namespace {

struct DomainNodes {
  NodeId x = -1;
  NodeId ones = -1;
  NodeId phi = -1;
  NodeId probs = -1;
};

DomainNodes append_domain(Graph& g, const UdaModel& model, const std::string& input_name,
                          std::size_t n) {
  DomainNodes d;
  d.x = g.input(input_name);
  d.ones = g.constant(Tensor::full({n, 1}, 1.0));
  d.phi = append_extractor(g, d.x, d.ones, model.dims);
  d.probs = append_classifier(g, d.phi, d.ones, model.dims);
  return d;
}

Tensor clean_features(const UdaModel& model, const Tensor& x) {
  Bindings b = param_bindings(model, false);
  b.emplace("x", x);
  b.emplace("ones", Tensor::full({x.rows(), 1}, 1.0));
  return forward(model.extractor, b);
}

// Appends the method's transfer term between two already-built domain stacks.
// For DAN the bandwidths come from the clean features under the current
// parameters, embedded as constants.
NodeId append_transfer(Graph& g, const UdaModel& model, const DomainNodes& s,
                       const DomainNodes& t, std::size_t n_s, std::size_t n_t,
                       const Tensor& x_s_clean, const Tensor& x_t_clean,
                       const TrainConfig& cfg) {
  switch (model.method) {
    case Method::SourceOnly:
      return g.constant(Tensor::scalar(0.0), "no_transfer");
    case Method::Dan: {
      // A collapsed representation (zero median distance) would poison the
      // median heuristic mid-training; fall back to unit-scale bandwidths so
      // the step proceeds. MMD over identical rows is exactly zero with a
      // zero gradient, so the classifier term can pull the features apart
      // again. The mmd() operation itself keeps the hard error.
      std::vector<double> bw;
      try {
        bw = mmd_bandwidths(clean_features(model, x_s_clean), clean_features(model, x_t_clean),
                            cfg.kernel_bandwidth_multipliers);
      } catch (const Error&) {
        bw = cfg.kernel_bandwidth_multipliers;
      }
      return mmd_node(g, s.phi, t.phi, n_s, n_t, model.dims.feature, bw);
    }
    case Method::Dann:
      return domain_adversarial_node(g, model, s.phi, t.phi, n_s, n_t, cfg.grl_lambda);
    case Method::Cdan: {
      NodeId h_s = g.row_outer(s.phi, s.probs);
      NodeId h_t = g.row_outer(t.phi, t.probs);
      return domain_adversarial_node(g, model, h_s, h_t, n_s, n_t, cfg.grl_lambda);
    }
  }
  fail("append_transfer: unreachable");
}

void check_batch(const Batch& b, const UdaModel& model, const char* which) {
  require(b.features.is_matrix(), std::string(which) + " batch: features must be a matrix");
  require(b.features.cols() == model.dims.input,
          std::string(which) + " batch: feature dim " + std::to_string(b.features.cols()) +
              " does not match model input " + std::to_string(model.dims.input));
  if (!b.labels.empty())
    require(b.labels.size() == b.features.rows(),
            std::string(which) + " batch: label count does not match rows");
}

}  // namespace

BuiltLoss build_pl_loss(const UdaModel& model, const std::optional<Batch>& source,
                        const std::optional<Batch>& target, const TrainConfig& cfg,
                        bool include_pl_term) {
  require(source.has_value() || target.has_value(), "loss: need at least one batch");
  BuiltLoss built;
  Graph& g = built.graph;
  const std::size_t k = model.dims.classes;

  std::optional<DomainNodes> sn, tn;
  std::size_t n_s = 0, n_t = 0;
  if (source) {
    check_batch(*source, model, "source");
    n_s = source->features.rows();
    sn = append_domain(g, model, "x_s", n_s);
  }
  if (target) {
    check_batch(*target, model, "target");
    n_t = target->features.rows();
    tn = append_domain(g, model, "x_t", n_t);
  }

  NodeId total = -1;
  auto add_term = [&](NodeId term) { total = total < 0 ? term : g.add(total, term); };

  if (sn) {
    require(!source->labels.empty(), "loss: source batch has no labels");
    NodeId ce = cross_entropy_node(g, sn->probs, source->labels, k);
    built.parts.components.emplace_back("classifier", ce);
    add_term(ce);
  }
  if (sn && tn && model.method != Method::SourceOnly) {
    NodeId transfer = append_transfer(g, model, *sn, *tn, n_s, n_t, source->features,
                                      target->features, cfg);
    built.parts.components.emplace_back("transfer", transfer);
    add_term(g.mul(transfer, g.constant(Tensor::scalar(cfg.transfer_weight), "transfer_weight")));
  }
  if (include_pl_term) {
    require(tn.has_value(), "pl_loss: target batch required");
    require(!target->labels.empty(), "pl_loss: pseudo labels missing for target batch");
    NodeId plce = cross_entropy_node(g, tn->probs, target->labels, k);
    built.parts.components.emplace_back("pl_cross_entropy", plce);
    add_term(plce);
  }

  require(total >= 0, "loss: objective has no terms");
  built.parts.total = total;
  g.set_output(total);
  return built;
}

BuiltLoss build_defense_loss(const UdaModel& model, const Batch& clean_supervised,
                             const Batch& adv_supervised, const Tensor& source_align,
                             const Tensor& target_align, std::optional<double> alpha,
                             const TrainConfig& cfg) {
  check_batch(clean_supervised, model, "clean");
  check_batch(adv_supervised, model, "adversarial");
  require(!clean_supervised.labels.empty() && !adv_supervised.labels.empty(),
          "defense loss: both supervised pools need labels");
  if (alpha) require(*alpha >= 0.0, "defense loss: alpha must be >= 0");

  BuiltLoss built;
  Graph& g = built.graph;
  const std::size_t k = model.dims.classes;

  DomainNodes cn = append_domain(g, model, "x_clean", clean_supervised.features.rows());
  DomainNodes an = append_domain(g, model, "x_adv", adv_supervised.features.rows());

  NodeId total = -1;
  auto add_term = [&](NodeId term) { total = total < 0 ? term : g.add(total, term); };

  if (alpha) {
    NodeId ce_clean = cross_entropy_node(g, cn.probs, clean_supervised.labels, k);
    NodeId ce_adv = cross_entropy_node(g, an.probs, adv_supervised.labels, k);
    built.parts.components.emplace_back("clean_cross_entropy", ce_clean);
    built.parts.components.emplace_back("adv_cross_entropy", ce_adv);
    add_term(g.mul(ce_adv, g.constant(Tensor::scalar(*alpha), "alpha")));
    add_term(ce_clean);
  } else {
    // Plain mixture: one cross-entropy over the pooled rows.
    NodeId cat = g.concat_rows(cn.probs, an.probs);
    std::vector<int> pooled = clean_supervised.labels;
    pooled.insert(pooled.end(), adv_supervised.labels.begin(), adv_supervised.labels.end());
    NodeId ce_mix = cross_entropy_node(g, cat, pooled, k);
    built.parts.components.emplace_back("mixture_cross_entropy", ce_mix);
    add_term(ce_mix);
  }

  if (model.method != Method::SourceOnly) {
    DomainNodes salign = append_domain(g, model, "x_s", source_align.rows());
    DomainNodes talign = append_domain(g, model, "x_t", target_align.rows());
    NodeId transfer = append_transfer(g, model, salign, talign, source_align.rows(),
                                      target_align.rows(), source_align, target_align, cfg);
    built.parts.components.emplace_back("transfer", transfer);
    add_term(g.mul(transfer, g.constant(Tensor::scalar(cfg.transfer_weight), "transfer_weight")));
  }

  built.parts.total = total;
  g.set_output(total);
  return built;
}

LossValue eval_loss(const BuiltLoss& built, const Bindings& bindings) {
  EvalContext ctx;
  Tensor out = forward(built.graph, bindings, ctx);
  require(out.is_scalar(), "loss: total is not scalar");
  LossValue lv;
  lv.total = out.values[0];
  for (const auto& [name, id] : built.parts.components)
    lv.components.emplace_back(name, ctx.value(id).values[0]);
  return lv;
}

namespace {

Bindings loss_bindings(const UdaModel& model, const std::optional<Batch>& source,
                       const std::optional<Batch>& target) {
  Bindings b = param_bindings(model, false);
  if (source) b.emplace("x_s", source->features);
  if (target) b.emplace("x_t", target->features);
  return b;
}

}  // namespace

LossValue uda_loss(const UdaModel& model, const Batch& source, const Batch& target,
                   const TrainConfig& cfg) {
  BuiltLoss built = build_pl_loss(model, source, target, cfg, false);
  return eval_loss(built, loss_bindings(model, source, target));
}

LossValue pl_loss(const UdaModel& model, const Batch& source, const Batch& target_with_pseudo,
                  const TrainConfig& cfg) {
  BuiltLoss built = build_pl_loss(model, source, target_with_pseudo, cfg, true);
  return eval_loss(built, loss_bindings(model, source, target_with_pseudo));
}

LossValue weighted_defense_loss(const UdaModel& model, const Batch& clean, const Batch& adv,
                                double alpha, const TrainConfig& cfg) {
  BuiltLoss built =
      build_defense_loss(model, clean, adv, clean.features, adv.features, alpha, cfg);
  Bindings b = param_bindings(model, false);
  b.emplace("x_clean", clean.features);
  b.emplace("x_adv", adv.features);
  b.emplace("x_s", clean.features);
  b.emplace("x_t", adv.features);
  return eval_loss(built, b);
}

}  // namespace adva
