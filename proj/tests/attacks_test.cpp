#include "doctest.h"
#include "test_support.hpp"

using namespace adva;
using namespace testsup;

namespace {

struct Fixture {
  DomainPair pair;
  UdaModel model;  // trained DANN
  double sigma_hat;
};

const Fixture& fixture() {
  static Fixture f = [] {
    DomainPair pair = make_shifted_domains(default_shift(13, 0.8));
    UdaModel init = init_model(Method::Dann, Dims{4, 16, 8, 3}, 13);
    UdaModel trained = train_uda(init, pair, quick_train(150, 0.06, 13)).model;
    double sig = feature_std(pair);
    return Fixture{std::move(pair), std::move(trained), sig};
  }();
  return f;
}

// Linear-in-x0 two-class model built by hand: phi = (relu(x0), relu(-x0)),
// logits = phi, so the decision boundary is exactly x0 = 0 and the L-inf
// margin of a sample is |x0|.
UdaModel linear_margin_model() {
  UdaModel m = init_model(Method::SourceOnly, Dims{2, 2, 2, 2}, 1);
  auto set = [&](const std::string& name, std::vector<double> v) {
    m.params.at(name).values = std::move(v);
  };
  set("f.W1", {1, -1, 0, 0});
  set("f.b1", {0, 0});
  set("f.W2", {1, 0, 0, 1});
  set("f.b2", {0, 0});
  set("c.W", {1, 0, 0, 1});
  set("c.b", {0, 0});
  return m;
}

}  // namespace

TEST_CASE("attack config: invariants and the epsilon helper") {
  AttackConfig cfg = AttackConfig::for_epsilon(0.2, 40);
  CHECK(cfg.step_alpha == doctest::Approx(0.01));
  cfg.validate();

  AttackConfig bad;
  bad.epsilon = 1.0;
  bad.step_alpha = 0.001;
  bad.iters = 10;  // 0.01 < 1.0: ball unreachable
  CHECK_THROWS_AS(bad.validate(), Error);

  AttackConfig clip = AttackConfig::for_epsilon(0.1);
  clip.clip_min = 1.0;
  clip.clip_max = -1.0;
  CHECK_THROWS_AS(clip.validate(), Error);
}

TEST_CASE("assign_pseudo_labels: argmax with lowest-index ties") {
  UdaModel m = init_model(Method::SourceOnly, Dims{2, 4, 4, 3}, 2);
  for (double& v : m.params.at("c.W").values) v = 0.0;
  for (double& v : m.params.at("c.b").values) v = 0.0;
  Tensor x = Tensor::matrix(2, 2, {0.4, -0.1, 0.9, 0.3});
  // exactly uniform rows -> label 0
  CHECK(assign_pseudo_labels(m, x) == std::vector<int>{0, 0});
  CHECK(least_likely_class(m, x) == std::vector<int>{0, 0});
}

TEST_CASE("assign_pseudo_labels: a well-trained model matches held-out labels") {
  const Fixture& f = fixture();
  std::vector<int> pseudo = assign_pseudo_labels(f.model, f.pair.target_features());
  const std::vector<int>& truth = f.pair.target_labels(GateScope::Evaluation);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < pseudo.size(); ++i)
    if (pseudo[i] == truth[i]) ++agree;
  // the model is 90%+ accurate here, so pseudo labels track ground truth
  CHECK(static_cast<double>(agree) / static_cast<double>(pseudo.size()) >= 0.90);
}

TEST_CASE("least_likely_class: differs from the prediction on confident rows") {
  const Fixture& f = fixture();
  std::vector<int> top = assign_pseudo_labels(f.model, f.pair.target_features());
  std::vector<int> bottom = least_likely_class(f.model, f.pair.target_features());
  for (std::size_t i = 0; i < top.size(); ++i) CHECK(top[i] != bottom[i]);
}

TEST_CASE("clip_to_ball: projection, clip range, idempotence") {
  Tensor orig = Tensor::scalar(0.0);
  CHECK(clip_to_ball(Tensor::scalar(0.2), orig, 0.05, {}, {}).values[0] == 0.05);
  CHECK(clip_to_ball(Tensor::scalar(0.03), orig, 0.05, {}, {}).values[0] == 0.03);
  CHECK(clip_to_ball(Tensor::scalar(-0.9), orig, 0.05, {}, {}).values[0] == -0.05);
  // clip range wins after the ball projection
  CHECK(clip_to_ball(Tensor::scalar(0.2), orig, 0.5, -0.1, 0.1).values[0] == 0.1);

  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor o = Tensor::zeros({4});
    Tensor x = Tensor::zeros({4});
    for (std::size_t i = 0; i < 4; ++i) {
      o.values[i] = rng.uniform(-2, 2);
      x.values[i] = rng.uniform(-4, 4);
    }
    double eps = rng.uniform(0.01, 1.0);
    Tensor once = clip_to_ball(x, o, eps, -1.5, 1.5);
    Tensor twice = clip_to_ball(once, o, eps, -1.5, 1.5);
    CHECK(once.values == twice.values);
  }
}

TEST_CASE("pl_fgsm: epsilon zero leaves the batch untouched") {
  const Fixture& f = fixture();
  AttackConfig cfg = AttackConfig::for_epsilon(0.0, 5);
  AdversarialBatch batch = pl_fgsm(f.model, f.pair, cfg);
  CHECK(batch.adversarials.values == batch.originals.values);
  for (double v : batch.per_sample_linf) CHECK(v == 0.0);
}

TEST_CASE("pl_fgsm: single-step moves each coordinate by exactly +-epsilon or not at all") {
  const Fixture& f = fixture();
  AttackConfig cfg;
  cfg.epsilon = 0.07;
  cfg.step_alpha = 0.07;
  cfg.iters = 1;
  AdversarialBatch batch = pl_fgsm(f.model, f.pair, cfg);
  for (std::size_t i = 0; i < batch.originals.numel(); ++i) {
    double d = std::fabs(batch.adversarials.values[i] - batch.originals.values[i]);
    CHECK((d == 0.0 || d == doctest::Approx(0.07).epsilon(1e-12)));
  }
}

TEST_CASE("pl_fgsm: L-inf bound, purity, determinism, gate compliance") {
  const Fixture& f = fixture();
  f.pair.reset_gate();
  std::uint64_t hash_before = params_hash(f.model);
  AttackConfig cfg = AttackConfig::for_epsilon(0.5 * f.sigma_hat, 40);

  AdversarialBatch a = pl_fgsm_per_domain(f.model, f.pair, cfg);
  AdversarialBatch b = pl_fgsm_per_domain(f.model, f.pair, cfg);

  for (double v : a.per_sample_linf) CHECK(v <= cfg.epsilon + 1e-9);
  CHECK(params_hash(f.model) == hash_before);
  CHECK(a.adversarials.values == b.adversarials.values);
  // attacks consume pseudo labels only; no gate reads at all
  CHECK(f.pair.gate_counts().other_reads == 0);
  CHECK(f.pair.gate_counts().eval_reads == 0);

  // clip range honored when configured
  AttackConfig clipped = cfg;
  clipped.clip_min = -1.0;
  clipped.clip_max = 1.0;
  AdversarialBatch c = pl_fgsm_per_domain(f.model, f.pair, clipped);
  for (double v : c.adversarials.values) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("pl_fgsm: mean damage is monotone over the epsilon grid") {
  const Fixture& f = fixture();
  const std::vector<int>& truth = f.pair.target_labels(GateScope::Evaluation);
  std::vector<int> pseudo = assign_pseudo_labels(f.model, f.pair.target_features());
  double prev = 2.0;
  for (double mult : {0.01, 0.05, 0.1, 0.5}) {
    AttackConfig cfg = AttackConfig::for_epsilon(mult * f.sigma_hat, 40);
    AdversarialBatch batch =
        pl_fgsm(f.model, f.pair.target_features(), pseudo, AttackDomain::Target, cfg);
    double acc = accuracy_on(f.model, batch.adversarials, truth);
    CHECK(acc <= prev + 0.02);
    prev = acc;
  }
}

TEST_CASE("pl_fgsm: DA-only loss on a target-only batch has nothing to climb") {
  const Fixture& f = fixture();
  std::vector<int> pseudo = assign_pseudo_labels(f.model, f.pair.target_features());
  AttackConfig cfg = AttackConfig::for_epsilon(0.1, 10);
  CHECK_THROWS_AS(pl_fgsm(f.model, f.pair.target_features(), pseudo, AttackDomain::Target, cfg,
                          AttackLossMode::DAOnly),
                  Error);
}

TEST_CASE("pl_fgsm_targeted: pushes predictions toward the least-likely class") {
  const Fixture& f = fixture();
  const Tensor& tf = f.pair.target_features();
  std::vector<int> y_t = least_likely_class(f.model, tf);
  std::vector<int> clean_pred = argmax_rows(predict(f.model, tf));

  AttackConfig cfg = AttackConfig::for_epsilon(1.0 * f.sigma_hat, 40, AttackMode::Targeted);
  AdversarialBatch batch = pl_fgsm_targeted(f.model, tf, AttackDomain::Target, cfg);
  std::vector<int> adv_pred = argmax_rows(predict(f.model, batch.adversarials));

  std::size_t clean_hits = 0, adv_hits = 0;
  for (std::size_t i = 0; i < y_t.size(); ++i) {
    if (clean_pred[i] == y_t[i]) ++clean_hits;
    if (adv_pred[i] == y_t[i]) ++adv_hits;
  }
  CHECK(adv_hits > clean_hits);
  CHECK(batch.labels_used == y_t);

  AttackConfig zero = AttackConfig::for_epsilon(0.0, 5, AttackMode::Targeted);
  AdversarialBatch none = pl_fgsm_targeted(f.model, tf, AttackDomain::Target, zero);
  CHECK(argmax_rows(predict(f.model, none.adversarials)) == clean_pred);
}

TEST_CASE("pl_fgsm: joint pair attack carries the transfer term for DAN") {
  // both domains in one batch -> the objective includes the MMD term, so the
  // input gradient flows through the kernel matrices as well
  DomainPair pair = make_shifted_domains(default_shift(13, 0.8));
  UdaModel dan = train_uda(init_model(Method::Dan, Dims{4, 16, 8, 3}, 13), pair,
                           quick_train(40, 0.06, 13))
                     .model;
  AttackConfig cfg = AttackConfig::for_epsilon(0.2, 10);
  AdversarialBatch batch = pl_fgsm(dan, pair, cfg);
  CHECK(batch.source_rows == pair.source().size());
  CHECK(batch.adversarials.values != batch.originals.values);
  for (double v : batch.per_sample_linf) CHECK(v <= cfg.epsilon + 1e-9);
  // labels_used: true labels for source rows, pseudo labels for target rows
  std::vector<int> expect = pair.source().labels;
  std::vector<int> pseudo = assign_pseudo_labels(dan, pair.target_features());
  expect.insert(expect.end(), pseudo.begin(), pseudo.end());
  CHECK(batch.labels_used == expect);
}

TEST_CASE("transfer_attack: the degenerate avatar reproduces white-box exactly") {
  const Fixture& f = fixture();
  AttackConfig cfg = AttackConfig::for_epsilon(0.5 * f.sigma_hat, 40);

  TransferAttackResult self = transfer_attack(f.model, f.model, f.pair, cfg);
  AdversarialBatch white = pl_fgsm_per_domain(f.model, f.pair, cfg);
  CHECK(self.batch.adversarials.values == white.adversarials.values);
  double white_acc = accuracy_on(f.model, white.adv_target_part(),
                                 f.pair.target_labels(GateScope::Evaluation));
  CHECK(self.victim_target_accuracy == white_acc);

  UdaModel other_dims = init_model(Method::Dan, Dims{6, 16, 8, 3}, 4);
  CHECK_THROWS_AS(transfer_attack(other_dims, f.model, f.pair, cfg), Error);
}

TEST_CASE("robustness_radius: misclassified now, margin bracket, grid validation") {
  UdaModel lin = linear_margin_model();
  // x0 margin 0.3, correctly classified as class 0; second sample already wrong
  Tensor x = Tensor::matrix(2, 2, {0.3, 0.0, -0.2, 0.0});
  std::vector<int> labels{0, 0};
  AttackConfig tmpl = AttackConfig::for_epsilon(0.1, 40);

  std::vector<double> grid{0.1, 0.25, 0.35, 0.6};
  auto radii = robustness_radius(lin, x, labels, grid, tmpl);
  REQUIRE(radii[0].has_value());
  // the analytic L-inf margin 0.3 lies in the bracket (0.25, 0.35]
  CHECK(*radii[0] == 0.35);
  REQUIRE(radii[1].has_value());
  CHECK(*radii[1] == 0.0);

  CHECK_THROWS_AS(robustness_radius(lin, x, labels, {}, tmpl), Error);
  CHECK_THROWS_AS(robustness_radius(lin, x, labels, {0.2, 0.1}, tmpl), Error);
}

TEST_CASE("robustness_radius: a settled model resists further than an undertrained one") {
  DomainPair pair = make_shifted_domains(default_shift(13, 0.8));
  UdaModel init = init_model(Method::Dann, Dims{4, 16, 8, 3}, 13);
  UdaModel young = train_uda(init, pair, quick_train(6, 0.06, 13)).model;
  UdaModel old_model = train_uda(init, pair, quick_train(150, 0.06, 13)).model;

  // the attack-protocol grid, scaled to the data like the matrix does
  double sigma = feature_std(pair);
  std::vector<double> grid;
  for (double mult : {0.01, 0.05, 0.1, 0.5}) grid.push_back(mult * sigma);
  AttackConfig tmpl = AttackConfig::for_epsilon(0.1, 40);
  const Tensor& sf = pair.source().features;
  const std::vector<int>& sl = pair.source().labels;

  auto mean_radius = [&](const UdaModel& m) {
    auto radii = robustness_radius(m, sf, sl, grid, tmpl);
    double sum = 0.0;
    for (const auto& r : radii) sum += r.value_or(2.0 * grid.back());
    return sum / static_cast<double>(radii.size());
  };
  CHECK(mean_radius(old_model) > mean_radius(young));
}

TEST_CASE("adversarial batches export through the dataset format") {
  const Fixture& f = fixture();
  AttackConfig cfg = AttackConfig::for_epsilon(0.3, 20);
  AdversarialBatch batch = pl_fgsm_per_domain(f.model, f.pair, cfg);
  LabeledDataset adv{batch.adv_target_part(),
                     {batch.labels_used.begin() + static_cast<long>(batch.source_rows),
                      batch.labels_used.end()},
                     f.pair.num_classes(),
                     f.pair.target_domain_name() + "-adv",
                     std::nullopt};
  std::string path = temp_path("adv.ds");
  save_dataset(adv, path);
  LabeledDataset back = load_dataset(path);
  CHECK(back.features.values == adv.features.values);
  CHECK(back.domain_name == "target-adv");
}
