#include "adva/defense.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace adva;
using namespace testsup;

namespace {

struct DefenseFixture {
  DomainPair pair;
  UdaModel dann;
  UdaModel cdan;
  double sigma_hat;
};

const DefenseFixture& dfx() {
  static DefenseFixture f = [] {
    DomainPair pair = make_shifted_domains(default_shift(13, 0.8));
    UdaModel dann =
        train_uda(init_model(Method::Dann, Dims{4, 16, 8, 3}, 13), pair, quick_train(150, 0.06, 13))
            .model;
    UdaModel cdan =
        train_uda(init_model(Method::Cdan, Dims{4, 16, 8, 3}, 14), pair, quick_train(150, 0.06, 14))
            .model;
    double sig = feature_std(pair);
    return DefenseFixture{std::move(pair), std::move(dann), std::move(cdan), sig};
  }();
  return f;
}

DefenseConfig base_config(const DefenseFixture& f, DefenseMode mode) {
  DefenseConfig cfg;
  cfg.mode = mode;
  cfg.rounds = 2;
  cfg.retrain = quick_train(120, 0.05, 51);
  cfg.attack = AttackConfig::for_epsilon(0.5 * f.sigma_hat, 40);
  return cfg;
}

}  // namespace

TEST_CASE("defense config validation") {
  DefenseConfig cfg;
  cfg.mode = DefenseMode::Weighted;  // alpha missing
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.alpha = -0.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.alpha = 0.5;
  cfg.mix_ratio = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.mix_ratio = 1.0;
  cfg.rounds = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("whitebox defense: epsilon zero means training on doubled clean data") {
  const DefenseFixture& f = dfx();
  DefenseConfig cfg = base_config(f, DefenseMode::WhiteboxIterative);
  cfg.rounds = 1;
  cfg.attack = AttackConfig::for_epsilon(0.0, 5);
  DefenseResult res = whitebox_defense(f.dann, f.pair, cfg);
  // adversarials equal the clean samples, so both final accuracies coincide
  CHECK(res.report.adv_acc_after == res.report.clean_acc_after);
  CHECK(res.report.history.size() == 1);
  CHECK(res.report.mixture_size == 2 * (f.pair.source().size() + f.pair.target_size()));
}

TEST_CASE("whitebox defense: fresh init, bounded history, report consistency") {
  const DefenseFixture& f = dfx();
  DefenseConfig cfg = base_config(f, DefenseMode::WhiteboxIterative);
  cfg.rounds = 3;
  DefenseResult res = whitebox_defense(f.dann, f.pair, cfg);
  const DefenseReport& r = res.report;

  CHECK(params_hash(res.model) != params_hash(f.dann));
  CHECK(r.history.size() >= 1);
  CHECK(r.history.size() <= 3);
  CHECK(r.clean_acc_after == r.history.back().clean_acc);
  CHECK(r.adv_acc_after == r.history.back().adv_acc);
  for (const DefenseRound& round : r.history) {
    CHECK(round.clean_acc >= 0.0);
    CHECK(round.clean_acc <= 1.0);
    CHECK(round.adv_acc >= 0.0);
    CHECK(round.adv_acc <= 1.0);
  }
  CHECK(r.clean_below_adv == (r.clean_acc_after < r.adv_acc_after));
  // the desk-scale trend: retraining pushes adversarial accuracy up
  CHECK(r.adv_acc_after > r.adv_acc_before);
}

TEST_CASE("whitebox defense: bit-reproducible under fixed seeds") {
  const DefenseFixture& f = dfx();
  DefenseConfig cfg = base_config(f, DefenseMode::WhiteboxIterative);
  cfg.rounds = 1;
  cfg.retrain.epochs = 40;
  DefenseResult a = whitebox_defense(f.dann, f.pair, cfg);
  DefenseResult b = whitebox_defense(f.dann, f.pair, cfg);
  CHECK(params_hash(a.model) == params_hash(b.model));
  CHECK(a.report.adv_acc_after == b.report.adv_acc_after);
}

TEST_CASE("blackbox defense: fixed avatar adversarials, mixture bookkeeping") {
  const DefenseFixture& f = dfx();
  DefenseConfig cfg = base_config(f, DefenseMode::BlackboxMix);
  DefenseResult res = blackbox_defense(f.cdan, f.dann, f.pair, cfg);
  const DefenseReport& r = res.report;

  CHECK(r.history.size() == 1);  // no adversarial regeneration in blackbox mode
  CHECK(r.mixture_size == 2 * (f.pair.source().size() + f.pair.target_size()));
  CHECK(r.adv_acc_after > r.adv_acc_before);
  CHECK(params_hash(res.model) != params_hash(f.cdan));

  DefenseConfig half = cfg;
  half.mix_ratio = 0.5;
  DefenseResult res_half = blackbox_defense(f.cdan, f.dann, f.pair, half);
  std::size_t clean_total = f.pair.source().size() + f.pair.target_size();
  CHECK(res_half.report.mixture_size == clean_total + clean_total / 2);
}

TEST_CASE("weighted defense: requires alpha and reports the inversion flag") {
  const DefenseFixture& f = dfx();
  DefenseConfig cfg = base_config(f, DefenseMode::Weighted);
  CHECK_THROWS_AS(weighted_defense(f.dann, f.pair, cfg), Error);  // alpha unset

  cfg.alpha = 0.5;
  DefenseResult res = weighted_defense(f.dann, f.pair, cfg);
  const DefenseReport& r = res.report;
  CHECK(r.clean_acc_before > 0.0);
  CHECK(r.adv_acc_before >= 0.0);
  CHECK(r.clean_acc_after > 0.0);
  CHECK(r.adv_acc_after > 0.0);
  CHECK(r.clean_below_adv == (r.clean_acc_after < r.adv_acc_after));
}

TEST_CASE("weighted defense: alpha zero behaves like clean retraining") {
  const DefenseFixture& f = dfx();
  DefenseConfig cfg = base_config(f, DefenseMode::Weighted);
  cfg.alpha = 0.0;
  cfg.rounds = 1;
  DefenseResult res = weighted_defense(f.dann, f.pair, cfg);
  // without the adversarial loss term the defended model keeps clean accuracy
  CHECK(res.report.clean_acc_after >= res.report.clean_acc_before - 0.15);
}
