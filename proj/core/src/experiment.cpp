#include "adva/experiment.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <tuple>

#include "adva/rng.hpp"

namespace adva {

void TaskSpec::validate() const {
  if (from_files()) {
    require(!source_file.empty() && !target_file.empty(),
            "task: both source_file and target_file must be set");
  } else {
    shift.validate();
  }
}

void ExperimentConfig::validate() const {
  require(!tasks.empty(), "experiment config: at least one task spec required");
  for (const TaskSpec& t : tasks) t.validate();
  require(!methods.empty(), "experiment config: at least one model method required");
  require(!eps_multipliers.empty(), "experiment config: epsilon grid must be non-empty");
  for (std::size_t i = 0; i < eps_multipliers.size(); ++i) {
    require(eps_multipliers[i] > 0.0, "experiment config: epsilon multipliers must be positive");
    if (i) require(eps_multipliers[i] > eps_multipliers[i - 1],
                   "experiment config: epsilon grid must be ascending");
  }
  require(transfer_eps_index < eps_multipliers.size(),
          "experiment config: transfer_eps_index out of range");
  require(attack_iters >= 1, "experiment config: attack iterations must be >= 1");
  require(defense_eps_multiplier > 0.0, "experiment config: defense epsilon must be positive");
  train.validate();
  defense_retrain.validate();
  // generated tasks must agree on dims up front; file-backed tasks are
  // checked when they are loaded
  std::optional<std::pair<std::size_t, std::size_t>> dims;
  for (const TaskSpec& t : tasks) {
    if (t.from_files()) continue;
    auto dk = std::make_pair(t.shift.feature_dim, t.shift.num_classes);
    if (!dims) dims = dk;
    require(*dims == dk, "experiment config: all tasks must share feature_dim and num_classes");
  }
}

ExperimentConfig default_experiment_config() {
  // Three unambiguous shifts (rotations stay inside the half-sector of the
  // 3-class ring so marginal alignment has a unique optimum), run in both
  // directions: the six-task analogue of a standard transfer benchmark.
  ExperimentConfig cfg;
  TaskSpec a;
  a.shift.rotation_angle = 0.8;
  TaskSpec b;
  b.shift.rotation_angle = 0.5;
  b.shift.translation = {0.4, -0.3};
  TaskSpec c;
  c.shift.rotation_angle = 0.9;
  c.shift.scale = 1.25;
  cfg.tasks = {a, b, c};
  cfg.train.epochs = 300;
  cfg.train.learning_rate = 0.05;
  // the MMD family collapses its features under a full-strength transfer
  // term at this scale; half weight keeps all three methods adapting
  cfg.train.transfer_weight = 0.5;
  cfg.defense_retrain = cfg.train;
  return cfg;
}

namespace {

struct TaskInstance {
  std::string name;
  DomainPair pair;
  double sigma_hat = 0.0;
};

// Materializes the task list: every base spec in the forward direction and,
// when configured, reversed (shifted domain becomes the labeled source).
std::vector<TaskInstance> build_tasks(const ExperimentConfig& cfg) {
  std::vector<TaskInstance> tasks;
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    LabeledDataset plain, shifted;
    std::string p, q;
    if (cfg.tasks[i].from_files()) {
      plain = load_dataset(cfg.tasks[i].source_file);
      shifted = load_dataset(cfg.tasks[i].target_file);
      p = plain.domain_name;
      q = shifted.domain_name;
    } else {
      ShiftSpec spec = cfg.tasks[i].shift;
      spec.seed = seed_combine(cfg.seed, 100 + i);
      std::tie(plain, shifted) = make_shifted_datasets(spec);
      p = "P" + std::to_string(i + 1);
      q = "Q" + std::to_string(i + 1);
      plain.domain_name = p;
      shifted.domain_name = q;
    }
    tasks.push_back({p + ">" + q, DomainPair(plain, shifted, true), 0.0});
    if (cfg.both_directions)
      tasks.push_back({q + ">" + p, DomainPair(shifted, plain, true), 0.0});
  }
  const std::size_t d = tasks.front().pair.feature_dim();
  const std::size_t k = tasks.front().pair.num_classes();
  for (TaskInstance& t : tasks) {
    require(t.pair.feature_dim() == d && t.pair.num_classes() == k,
            "experiment: task '" + t.name + "' does not share feature_dim/num_classes");
    t.sigma_hat = feature_std(t.pair);
  }
  return tasks;
}

Dims dims_for(const ExperimentConfig& cfg, const std::vector<TaskInstance>& tasks) {
  Dims d;
  d.input = tasks.front().pair.feature_dim();
  d.hidden = cfg.hidden;
  d.feature = cfg.feature;
  d.classes = tasks.front().pair.num_classes();
  return d;
}

UdaModel train_task_model(const ExperimentConfig& cfg, const std::vector<TaskInstance>& tasks,
                          const TaskInstance& task, Method method, std::size_t task_idx,
                          std::size_t method_idx) {
  TrainConfig tc = cfg.train;
  tc.seed = seed_combine(cfg.seed, 0x7000 + task_idx * 31 + method_idx);
  UdaModel init = init_model(method, dims_for(cfg, tasks), tc.seed);
  return train_uda(init, task.pair, tc).model;
}

void finish_row(ReportRow& row, std::optional<double> clean_avg) {
  double sum = 0.0;
  for (const ReportCell& c : row.cells) sum += c.accuracy;
  row.average = sum / static_cast<double>(row.cells.size());
  if (clean_avg) row.decrease_rate = decrease_rate(*clean_avg, row.average);
}

void collect_gate(const std::vector<TaskInstance>& tasks, ExperimentReport& rep) {
  for (const TaskInstance& t : tasks) {
    GateCounts g = t.pair.gate_counts();
    rep.gate_eval_reads += g.eval_reads;
    rep.gate_other_reads += g.other_reads;
  }
}

struct AttackOutcome {
  AdversarialBatch batch;
  double linf_bound = 0.0;
};

void check_attack_invariants(const AttackOutcome& out, const AttackConfig& cfg,
                             ExperimentReport& rep) {
  for (double v : out.batch.per_sample_linf)
    if (v > out.linf_bound + 1e-9) rep.linf_ok = false;
  if (cfg.clip_min || cfg.clip_max) {
    for (double v : out.batch.adversarials.values) {
      if (cfg.clip_min && v < *cfg.clip_min) rep.clip_ok = false;
      if (cfg.clip_max && v > *cfg.clip_max) rep.clip_ok = false;
    }
  }
}

}  // namespace

ExperimentReport run_attack_matrix(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentReport rep;
  rep.seed = cfg.seed;
  rep.config_echo = config_echo(cfg);

  std::vector<TaskInstance> tasks = build_tasks(cfg);

  // victim models per (task, method), plus their pre-attack parameter hashes
  std::map<std::pair<std::size_t, Method>, UdaModel> models;
  std::map<std::pair<std::size_t, Method>, std::uint64_t> hashes;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti)
    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
      Method m = cfg.methods[mi];
      try {
        models.emplace(std::make_pair(ti, m),
                       train_task_model(cfg, tasks, tasks[ti], m, ti, mi));
        hashes[{ti, m}] = params_hash(models.at({ti, m}));
      } catch (const std::exception& e) {
        rep.complete = false;
        rep.errors.push_back("train " + method_name(m) + " on " + tasks[ti].name + ": " +
                             e.what());
      }
    }

  std::vector<std::string> modes;
  modes.push_back("non_targeted");
  if (cfg.run_targeted) modes.push_back("targeted");

  // white-box adversarial batches, cached per (task, method, grid slot, mode)
  // and reused for the transfer rows
  std::map<std::tuple<std::size_t, Method, std::size_t, std::string>, AdversarialBatch> cache;
  auto attack_of = [&](std::size_t ti, Method m, std::size_t ei,
                       const std::string& mode) -> const AdversarialBatch& {
    auto key = std::make_tuple(ti, m, ei, mode);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    const TaskInstance& task = tasks[ti];
    double eps = cfg.eps_multipliers[ei] * task.sigma_hat;
    AttackConfig ac = AttackConfig::for_epsilon(
        eps, cfg.attack_iters,
        mode == "targeted" ? AttackMode::Targeted : AttackMode::NonTargeted);
    ac.clip_min = cfg.clip_min;
    ac.clip_max = cfg.clip_max;
    const UdaModel& model = models.at({ti, m});
    AttackOutcome out;
    out.batch = pl_fgsm_per_domain(model, task.pair, ac);
    out.linf_bound = eps;
    check_attack_invariants(out, ac, rep);
    return cache.emplace(key, std::move(out.batch)).first->second;
  };

  std::map<Method, double> clean_avg;

  for (Method victim : cfg.methods) {
    // clean row
    ReportRow clean_row;
    clean_row.victim = method_name(victim);
    clean_row.attack_source = "clean";
    clean_row.mode = "-";
    for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
      if (!models.count({ti, victim})) continue;
      const UdaModel& model = models.at({ti, victim});
      try {
        ReportCell cell;
        cell.task = tasks[ti].name;
        cell.accuracy = target_accuracy(model, tasks[ti].pair);
        cell.source_accuracy = accuracy(model, tasks[ti].pair.source());
        clean_row.cells.push_back(std::move(cell));
      } catch (const std::exception& e) {
        rep.complete = false;
        rep.errors.push_back("clean eval " + clean_row.victim + " on " + tasks[ti].name + ": " +
                             e.what());
      }
    }
    if (clean_row.cells.empty()) continue;
    finish_row(clean_row, std::nullopt);
    clean_avg[victim] = clean_row.average;
    rep.rows.push_back(std::move(clean_row));

    // white-box rows over the scaled grid
    for (const std::string& mode : modes) {
      for (std::size_t ei = 0; ei < cfg.eps_multipliers.size(); ++ei) {
        ReportRow row;
        row.victim = method_name(victim);
        row.attack_source = "white-box";
        row.mode = mode;
        row.eps_multiplier = cfg.eps_multipliers[ei];
        for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
          if (!models.count({ti, victim})) continue;
          try {
            const AdversarialBatch& batch = attack_of(ti, victim, ei, mode);
            const UdaModel& model = models.at({ti, victim});
            ReportCell cell;
            cell.task = tasks[ti].name;
            cell.epsilon = cfg.eps_multipliers[ei] * tasks[ti].sigma_hat;
            cell.accuracy = accuracy_on(model, batch.adv_target_part(),
                                        tasks[ti].pair.target_labels(GateScope::Evaluation));
            cell.source_accuracy =
                accuracy_on(model, batch.adv_source_part(), tasks[ti].pair.source().labels);
            row.cells.push_back(std::move(cell));
          } catch (const std::exception& e) {
            rep.complete = false;
            rep.errors.push_back("white-box " + row.victim + " on " + tasks[ti].name + ": " +
                                 e.what());
          }
        }
        if (row.cells.empty()) continue;
        finish_row(row, clean_avg.at(victim));
        rep.rows.push_back(std::move(row));
      }
    }

    // transfer rows at the headline grid slot
    for (const std::string& mode : modes) {
      for (Method avatar : cfg.methods) {
        if (avatar == victim) continue;
        ReportRow row;
        row.victim = method_name(victim);
        row.attack_source = method_name(avatar) + "2" + method_name(victim);
        row.mode = mode;
        row.eps_multiplier = cfg.eps_multipliers[cfg.transfer_eps_index];
        for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
          if (!models.count({ti, victim}) || !models.count({ti, avatar})) continue;
          try {
            const AdversarialBatch& batch = attack_of(ti, avatar, cfg.transfer_eps_index, mode);
            const UdaModel& model = models.at({ti, victim});
            ReportCell cell;
            cell.task = tasks[ti].name;
            cell.epsilon = cfg.eps_multipliers[cfg.transfer_eps_index] * tasks[ti].sigma_hat;
            cell.accuracy = accuracy_on(model, batch.adv_target_part(),
                                        tasks[ti].pair.target_labels(GateScope::Evaluation));
            cell.source_accuracy =
                accuracy_on(model, batch.adv_source_part(), tasks[ti].pair.source().labels);
            row.cells.push_back(std::move(cell));
          } catch (const std::exception& e) {
            rep.complete = false;
            rep.errors.push_back("transfer " + row.attack_source + " on " + tasks[ti].name +
                                 ": " + e.what());
          }
        }
        if (row.cells.empty()) continue;
        finish_row(row, clean_avg.at(victim));
        rep.rows.push_back(std::move(row));
      }
    }
  }

  // attacks must not have moved any parameter
  for (const auto& [key, h] : hashes)
    if (params_hash(models.at(key)) != h) rep.params_unchanged = false;

  collect_gate(tasks, rep);
  rep.validate();
  return rep;
}

ExperimentReport run_defense_matrix(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentReport rep;
  rep.seed = cfg.seed;
  rep.config_echo = config_echo(cfg);

  std::vector<TaskInstance> tasks = build_tasks(cfg);
  std::map<std::pair<std::size_t, Method>, UdaModel> models;
  for (std::size_t ti = 0; ti < tasks.size(); ++ti)
    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
      Method m = cfg.methods[mi];
      try {
        models.emplace(std::make_pair(ti, m),
                       train_task_model(cfg, tasks, tasks[ti], m, ti, mi));
      } catch (const std::exception& e) {
        rep.complete = false;
        rep.errors.push_back("train " + method_name(m) + " on " + tasks[ti].name + ": " +
                             e.what());
      }
    }

  for (Method victim : cfg.methods) {
    for (Method avatar : cfg.methods) {
      ReportRow clean_row, adv_row;
      std::string source_tag = avatar == victim
                                   ? "white-box"
                                   : method_name(avatar) + "2" + method_name(victim);
      for (ReportRow* r : {&clean_row, &adv_row}) {
        r->victim = method_name(victim);
        r->attack_source = source_tag;
        r->mode = "defense";
        r->eps_multiplier = cfg.defense_eps_multiplier;
      }
      clean_row.samples = "clean";
      adv_row.samples = "adv";

      double pre_clean_sum = 0.0, pre_adv_sum = 0.0;
      std::size_t done = 0;
      for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
        if (!models.count({ti, victim}) || !models.count({ti, avatar})) continue;
        const TaskInstance& task = tasks[ti];
        try {
          DefenseConfig dc;
          dc.mode = avatar == victim ? cfg.defense_mode : DefenseMode::BlackboxMix;
          dc.rounds = cfg.defense_rounds;
          dc.mix_ratio = cfg.defense_mix_ratio;
          if (dc.mode == DefenseMode::Weighted) dc.alpha = cfg.defense_alpha;
          dc.retrain = cfg.defense_retrain;
          dc.retrain.seed = seed_combine(cfg.seed, 0xD000 + ti * 97 +
                                                       static_cast<std::size_t>(victim) * 13 +
                                                       static_cast<std::size_t>(avatar));
          dc.attack = AttackConfig::for_epsilon(cfg.defense_eps_multiplier * task.sigma_hat,
                                                cfg.attack_iters);
          dc.attack.clip_min = cfg.clip_min;
          dc.attack.clip_max = cfg.clip_max;

          DefenseResult result;
          if (avatar == victim) {
            result = dc.mode == DefenseMode::Weighted
                         ? weighted_defense(models.at({ti, victim}), task.pair, dc)
                         : whitebox_defense(models.at({ti, victim}), task.pair, dc);
          } else {
            result = blackbox_defense(models.at({ti, victim}), models.at({ti, avatar}),
                                      task.pair, dc);
          }
          const DefenseReport& dr = result.report;
          clean_row.cells.push_back({task.name, dr.clean_acc_after, std::nullopt, std::nullopt});
          adv_row.cells.push_back({task.name, dr.adv_acc_after, std::nullopt, std::nullopt});
          pre_clean_sum += dr.clean_acc_before;
          pre_adv_sum += dr.adv_acc_before;
          if (dr.clean_below_adv) rep.clean_below_adv_flag = true;
          ++done;
        } catch (const std::exception& e) {
          rep.complete = false;
          rep.errors.push_back("defense " + source_tag + " victim " + method_name(victim) +
                               " on " + task.name + ": " + e.what());
        }
      }
      if (done == 0) continue;
      finish_row(clean_row, std::nullopt);
      finish_row(adv_row, std::nullopt);
      clean_row.pre_defense_average = pre_clean_sum / static_cast<double>(done);
      adv_row.pre_defense_average = pre_adv_sum / static_cast<double>(done);
      rep.defense_rows.push_back(std::move(clean_row));
      rep.defense_rows.push_back(std::move(adv_row));
    }
  }

  collect_gate(tasks, rep);
  rep.validate();
  return rep;
}

}  // namespace adva
