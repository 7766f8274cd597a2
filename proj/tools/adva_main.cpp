// adva: attack/defense benchmark harness for toy unsupervised domain
// adaptation models. Subcommands: gen-data, train, attack, defend, matrix,
// report. Exit codes: 0 success, 1 experiment failure, 2 usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "adva/attack.hpp"
#include "adva/dataset.hpp"
#include "adva/defense.hpp"
#include "adva/experiment.hpp"
#include "adva/losses.hpp"
#include "adva/model.hpp"

namespace {

using namespace adva;

struct GlobalOpts {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out_dir = "out";
};

double pct(double v) { return v * 100.0; }

DomainPair load_pair(const std::string& source_path, const std::string& target_path) {
  LabeledDataset src = load_dataset(source_path);
  LabeledDataset tgt = load_dataset(target_path);
  return DomainPair(std::move(src), std::move(tgt), true);
}

int cmd_gen_data(const GlobalOpts& g, const ShiftSpec& spec_in) {
  ShiftSpec spec = spec_in;
  if (g.seed) spec.seed = *g.seed;
  auto [plain, shifted] = make_shifted_datasets(spec);
  std::filesystem::create_directories(g.out_dir);
  save_dataset(plain, g.out_dir + "/source.ds");
  save_dataset(shifted, g.out_dir + "/target.ds");
  std::cout << "wrote " << g.out_dir << "/source.ds (" << plain.size() << " samples) and "
            << g.out_dir << "/target.ds (" << shifted.size() << " samples)\n";
  return 0;
}

int cmd_train(const GlobalOpts& g, const std::string& source_path, const std::string& target_path,
              const std::string& method_tag, TrainConfig tc, const std::string& model_out,
              std::size_t hidden, std::size_t feature) {
  if (g.seed) tc.seed = *g.seed;
  DomainPair pair = load_pair(source_path, target_path);
  Dims dims{pair.feature_dim(), hidden, feature, pair.num_classes()};
  UdaModel init = init_model(parse_method(method_tag), dims, tc.seed);
  TrainResult result = train_uda(init, pair, tc);
  std::cout << "trained " << method_tag << ": source acc " << pct(result.source_train_accuracy)
            << "%, target acc " << pct(target_accuracy(result.model, pair)) << "%, final loss "
            << result.epoch_losses.back() << "\n";
  if (!model_out.empty()) {
    save_model(result.model, model_out);
    std::cout << "saved model to " << model_out << "\n";
  }
  return 0;
}

int cmd_attack(const GlobalOpts&, const std::string& model_path, const std::string& source_path,
               const std::string& target_path, double epsilon, double eps_multiplier,
               std::size_t iters, bool targeted, const std::string& domain,
               std::optional<double> clip_min, std::optional<double> clip_max,
               const std::string& save_adv) {
  UdaModel model = load_model(model_path);
  DomainPair pair = load_pair(source_path, target_path);
  double eps = epsilon > 0.0 ? epsilon : eps_multiplier * feature_std(pair);
  AttackConfig cfg = AttackConfig::for_epsilon(
      eps, iters, targeted ? AttackMode::Targeted : AttackMode::NonTargeted);
  cfg.clip_min = clip_min;
  cfg.clip_max = clip_max;
  cfg.validate();

  double clean_t = target_accuracy(model, pair);
  double clean_s = accuracy(model, pair.source());
  std::cout << (targeted ? "targeted" : "non-targeted") << " PL-FGSM (" << domain
            << "), epsilon " << eps << ", iters " << iters << "\n";

  AdversarialBatch batch;
  if (domain == "pair") {
    batch = targeted ? pl_fgsm_targeted(model, pair, cfg) : pl_fgsm(model, pair, cfg);
  } else if (domain == "target") {
    const Tensor& tf = pair.target_features();
    batch = targeted ? pl_fgsm_targeted(model, tf, AttackDomain::Target, cfg)
                     : pl_fgsm(model, tf, assign_pseudo_labels(model, tf), AttackDomain::Target,
                               cfg);
    double adv_t =
        accuracy_on(model, batch.adversarials, pair.target_labels(GateScope::Evaluation));
    std::cout << "target domain: clean " << pct(clean_t) << "% -> adversarial " << pct(adv_t)
              << "% (decrease rate " << decrease_rate(clean_t, adv_t) << ")\n";
    return 0;
  } else if (domain == "source") {
    batch = targeted
                ? pl_fgsm_targeted(model, pair.source().features, AttackDomain::Source, cfg)
                : pl_fgsm(model, pair.source().features, pair.source().labels,
                          AttackDomain::Source, cfg);
    double adv_s = accuracy_on(model, batch.adversarials, pair.source().labels);
    std::cout << "source domain: clean " << pct(clean_s) << "% -> adversarial " << pct(adv_s)
              << "%\n";
    return 0;
  } else {
    throw CLI::ValidationError("--domain", "must be pair, target or source");
  }

  double adv_t = accuracy_on(model, batch.adv_target_part(),
                             pair.target_labels(GateScope::Evaluation));
  double adv_s = accuracy_on(model, batch.adv_source_part(), pair.source().labels);
  std::cout << "target domain: clean " << pct(clean_t) << "% -> adversarial " << pct(adv_t)
            << "% (decrease rate " << decrease_rate(clean_t, adv_t) << ")\n";
  std::cout << "source domain: clean " << pct(clean_s) << "% -> adversarial " << pct(adv_s)
            << "%\n";

  if (!save_adv.empty()) {
    LabeledDataset adv_src{batch.adv_source_part(),
                           {batch.labels_used.begin(),
                            batch.labels_used.begin() + static_cast<long>(batch.source_rows)},
                           pair.num_classes(),
                           pair.source().domain_name + "-adv",
                           std::nullopt};
    LabeledDataset adv_tgt{batch.adv_target_part(),
                           {batch.labels_used.begin() + static_cast<long>(batch.source_rows),
                            batch.labels_used.end()},
                           pair.num_classes(),
                           pair.target_domain_name() + "-adv",
                           std::nullopt};
    save_dataset(adv_src, save_adv + ".source-adv.ds");
    save_dataset(adv_tgt, save_adv + ".target-adv.ds");
    std::cout << "wrote adversarial datasets to " << save_adv << ".{source,target}-adv.ds\n";
  }
  return 0;
}

int cmd_defend(const GlobalOpts& g, const std::string& model_path, const std::string& avatar_path,
               const std::string& source_path, const std::string& target_path,
               const std::string& mode, std::size_t rounds, double alpha, double mix_ratio,
               double eps_multiplier, std::size_t iters, TrainConfig retrain,
               const std::string& model_out) {
  if (g.seed) retrain.seed = *g.seed;
  UdaModel model = load_model(model_path);
  DomainPair pair = load_pair(source_path, target_path);

  DefenseConfig cfg;
  cfg.rounds = rounds;
  cfg.mix_ratio = mix_ratio;
  cfg.retrain = retrain;
  cfg.attack = AttackConfig::for_epsilon(eps_multiplier * feature_std(pair), iters);

  DefenseResult result;
  if (mode == "whitebox") {
    cfg.mode = DefenseMode::WhiteboxIterative;
    result = whitebox_defense(model, pair, cfg);
  } else if (mode == "weighted") {
    cfg.mode = DefenseMode::Weighted;
    cfg.alpha = alpha;
    result = weighted_defense(model, pair, cfg);
  } else if (mode == "blackbox") {
    if (avatar_path.empty())
      throw CLI::ValidationError("--avatar", "blackbox mode requires an avatar model");
    cfg.mode = DefenseMode::BlackboxMix;
    UdaModel avatar = load_model(avatar_path);
    result = blackbox_defense(model, avatar, pair, cfg);
  } else {
    throw CLI::ValidationError("--mode", "must be whitebox, weighted or blackbox");
  }

  const DefenseReport& r = result.report;
  std::cout << "defense (" << mode << ", " << r.history.size() << " round(s)):\n";
  std::cout << "  clean accuracy: " << pct(r.clean_acc_before) << "% -> "
            << pct(r.clean_acc_after) << "%\n";
  std::cout << "  adversarial accuracy: " << pct(r.adv_acc_before) << "% -> "
            << pct(r.adv_acc_after) << "%\n";
  for (std::size_t i = 0; i < r.history.size(); ++i)
    std::cout << "  round " << i + 1 << ": clean " << pct(r.history[i].clean_acc) << "%, adv "
              << pct(r.history[i].adv_acc) << "%\n";
  if (r.clean_below_adv)
    std::cout << "  note: clean accuracy ended below adversarial accuracy\n";
  if (!model_out.empty()) {
    save_model(result.model, model_out);
    std::cout << "saved defended model to " << model_out << "\n";
  }
  return r.adv_acc_after > r.adv_acc_before ? 0 : 1;
}

int cmd_matrix(const GlobalOpts& g) {
  ExperimentConfig cfg;
  try {
    cfg = g.config_path.empty() ? default_experiment_config() : parse_config_file(g.config_path);
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    std::exit(2);
  }
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;

  ExperimentReport attack_report = run_attack_matrix(cfg);
  bool ok = attack_report.complete;
  std::filesystem::create_directories(cfg.out_dir);
  emit_report(attack_report, cfg.out_dir);
  std::cout << report_table(attack_report);

  if (cfg.defense_enabled) {
    ExperimentReport defense_report = run_defense_matrix(cfg);
    ok = ok && defense_report.complete;
    std::filesystem::create_directories(cfg.out_dir + "/defense");
    emit_report(defense_report, cfg.out_dir + "/defense");
    std::cout << report_table(defense_report);
  }
  return ok ? 0 : 1;
}

int cmd_report(const std::string& in_path, const std::string& out_dir) {
  std::ifstream in(in_path);
  if (!in.good()) throw Error("report: cannot open '" + in_path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  ExperimentReport rep = parse_report_json(buf.str());
  std::cout << report_table(rep);
  if (!out_dir.empty()) emit_report(rep, out_dir);
  return rep.complete ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adva: adversarial attack/defense benchmark for toy UDA models"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--seed", g.seed, "Master seed override");
  app.add_option("--config", g.config_path, "Experiment config file (flat key=value)");
  app.add_option("--out", g.out_dir, "Output directory");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic domain-shift dataset pair");
  ShiftSpec spec;
  gen->add_option("--classes", spec.num_classes, "Number of classes");
  gen->add_option("--samples-source", spec.samples_per_class_source, "Samples per class (source)");
  gen->add_option("--samples-target", spec.samples_per_class_target, "Samples per class (target)");
  gen->add_option("--dim", spec.feature_dim, "Feature dimension");
  gen->add_option("--rotation", spec.rotation_angle, "Target rotation (radians)");
  gen->add_option("--translation", spec.translation, "Target translation (two values)")
      ->expected(2);
  gen->add_option("--scale", spec.scale, "Target scale");
  gen->add_option("--sigma", spec.noise_sigma, "Cluster noise sigma");

  // train
  auto* train = app.add_subcommand("train", "Train a UDA model on a dataset pair");
  std::string source_path, target_path, method_tag = "DANN", model_out;
  std::size_t hidden = 16, feature = 8;
  TrainConfig tc;
  train->add_option("--source", source_path, "Source dataset file")->required();
  train->add_option("--target", target_path, "Target dataset file")->required();
  train->add_option("--method", method_tag, "SOURCE_ONLY, DAN, DANN or CDAN");
  train->add_option("--epochs", tc.epochs, "Training epochs");
  train->add_option("--batch", tc.batch_size, "Batch size");
  train->add_option("--lr", tc.learning_rate, "Learning rate");
  train->add_option("--transfer-weight", tc.transfer_weight, "Transfer loss weight");
  train->add_option("--grl-lambda", tc.grl_lambda, "Gradient reversal lambda");
  train->add_option("--hidden", hidden, "Hidden width");
  train->add_option("--feature", feature, "Feature width");
  train->add_option("--model-out", model_out, "Path to save the trained model");

  // attack
  auto* attack = app.add_subcommand("attack", "Run PL-FGSM against a trained model");
  std::string model_path, save_adv;
  double epsilon = 0.0, eps_multiplier = 0.05;
  std::size_t iters = 40;
  bool targeted = false;
  attack->add_option("--model", model_path, "Model file")->required();
  attack->add_option("--source", source_path, "Source dataset file")->required();
  attack->add_option("--target", target_path, "Target dataset file")->required();
  attack->add_option("--epsilon", epsilon, "Absolute L-inf radius (overrides multiplier)");
  attack->add_option("--eps-multiplier", eps_multiplier,
                     "Radius as a multiple of the pooled feature std");
  attack->add_option("--iters", iters, "Attack iterations");
  attack->add_flag("--targeted", targeted, "Targeted (least-likely class) attack");
  std::string attack_domain = "pair";
  attack->add_option("--domain", attack_domain, "Attack scope: pair, target or source");
  std::optional<double> clip_min, clip_max;
  attack->add_option("--clip-min", clip_min, "Lower clip bound (use 0 1 for pixel-style data)");
  attack->add_option("--clip-max", clip_max, "Upper clip bound");
  attack->add_option("--save-adv", save_adv, "Prefix for exported adversarial datasets");

  // defend
  auto* defend = app.add_subcommand("defend", "Run a defense loop for a trained model");
  std::string avatar_path, defense_mode = "whitebox", defended_out;
  std::size_t rounds = 3;
  double alpha = 0.5, mix_ratio = 1.0, def_eps_multiplier = 0.1;
  TrainConfig retrain;
  defend->add_option("--model", model_path, "Victim model file")->required();
  defend->add_option("--avatar", avatar_path, "Avatar model file (blackbox mode)");
  defend->add_option("--source", source_path, "Source dataset file")->required();
  defend->add_option("--target", target_path, "Target dataset file")->required();
  defend->add_option("--mode", defense_mode, "whitebox, weighted or blackbox");
  defend->add_option("--rounds", rounds, "Defense rounds (whitebox/weighted)");
  defend->add_option("--alpha", alpha, "Adversarial loss weight (weighted mode)");
  defend->add_option("--mix-ratio", mix_ratio, "Fraction of adversarials mixed in");
  defend->add_option("--eps-multiplier", def_eps_multiplier, "Attack radius multiplier");
  defend->add_option("--iters", iters, "Attack iterations");
  defend->add_option("--epochs", retrain.epochs, "Retraining epochs");
  defend->add_option("--batch", retrain.batch_size, "Retraining batch size");
  defend->add_option("--lr", retrain.learning_rate, "Retraining learning rate");
  defend->add_option("--model-out", defended_out, "Path to save the defended model");

  // matrix
  auto* matrix = app.add_subcommand(
      "matrix", "Run the full attack (and optional defense) matrices from --config");
  matrix->footer(config_key_reference());

  // report
  auto* report = app.add_subcommand("report", "Re-render a structured report file");
  std::string report_in;
  report->add_option("--in", report_in, "report.json produced by matrix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(g, spec);
    if (train->parsed())
      return cmd_train(g, source_path, target_path, method_tag, tc, model_out, hidden, feature);
    if (attack->parsed())
      return cmd_attack(g, model_path, source_path, target_path, epsilon, eps_multiplier, iters,
                        targeted, attack_domain, clip_min, clip_max, save_adv);
    if (defend->parsed())
      return cmd_defend(g, model_path, avatar_path, source_path, target_path, defense_mode,
                        rounds, alpha, mix_ratio, def_eps_multiplier, iters, retrain,
                        defended_out);
    if (app.got_subcommand("matrix")) return cmd_matrix(g);
    if (report->parsed()) return cmd_report(report_in, g.out_dir);
  } catch (const CLI::Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
