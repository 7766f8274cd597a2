#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "adva/experiment.hpp"

namespace adva {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double to_double(const std::string& v, const std::string& key) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc{} && p == v.data() + v.size() && std::isfinite(out),
          "config: key '" + key + "': bad real value '" + v + "'");
  return out;
}

std::size_t to_size(const std::string& v, const std::string& key) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc{} && p == v.data() + v.size(),
          "config: key '" + key + "': bad integer value '" + v + "'");
  return out;
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("config: key '" + key + "': bad boolean value '" + v + "'");
}

std::vector<double> to_doubles(const std::string& v, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string piece;
  while (std::getline(ss, piece, ',')) out.push_back(to_double(trim(piece), key));
  require(!out.empty(), "config: key '" + key + "': empty list");
  return out;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    require(eq != std::string::npos,
            "config: line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    require(!key.empty(), "config: line " + std::to_string(lineno) + ": empty key");
    require(!kv.count(key), "config: line " + std::to_string(lineno) + ": duplicate key '" +
                                key + "'");
    kv[key] = val;
  }

  ExperimentConfig cfg;
  std::size_t n_tasks = kv.count("tasks") ? to_size(kv.at("tasks"), "tasks") : 1;
  require(n_tasks >= 1, "config: tasks must be >= 1");
  cfg.tasks.assign(n_tasks, TaskSpec{});

  auto task_index = [&](const std::string& key, std::size_t& idx) {
    // task<i>.<field>
    auto dot = key.find('.');
    if (key.rfind("task", 0) != 0 || dot == std::string::npos) return std::string{};
    std::string num = key.substr(4, dot - 4);
    idx = to_size(num, key);
    require(idx >= 1 && idx <= n_tasks,
            "config: key '" + key + "': task index out of range 1.." + std::to_string(n_tasks));
    --idx;
    return key.substr(dot + 1);
  };

  for (const auto& [key, val] : kv) {
    if (key == "tasks") continue;
    std::size_t ti = 0;
    std::string tf = task_index(key, ti);
    if (!tf.empty()) {
      ShiftSpec& s = cfg.tasks[ti].shift;
      if (tf == "source_file") { cfg.tasks[ti].source_file = val; continue; }
      if (tf == "target_file") { cfg.tasks[ti].target_file = val; continue; }
      if (tf == "rotation") s.rotation_angle = to_double(val, key);
      else if (tf == "translation") s.translation = to_doubles(val, key);
      else if (tf == "scale") s.scale = to_double(val, key);
      else if (tf == "noise_sigma") s.noise_sigma = to_double(val, key);
      else if (tf == "classes") s.num_classes = to_size(val, key);
      else if (tf == "feature_dim") s.feature_dim = to_size(val, key);
      else if (tf == "samples_per_class_source") s.samples_per_class_source = to_size(val, key);
      else if (tf == "samples_per_class_target") s.samples_per_class_target = to_size(val, key);
      else fail("config: unknown task field '" + key + "'");
      continue;
    }
    if (key == "seed") cfg.seed = to_size(val, key);
    else if (key == "out_dir") cfg.out_dir = val;
    else if (key == "directions") {
      if (val == "both") cfg.both_directions = true;
      else if (val == "forward") cfg.both_directions = false;
      else fail("config: directions must be 'both' or 'forward'");
    } else if (key == "methods") {
      cfg.methods.clear();
      std::stringstream ss(val);
      std::string tag;
      while (std::getline(ss, tag, ',')) cfg.methods.push_back(parse_method(trim(tag)));
    } else if (key == "hidden") cfg.hidden = to_size(val, key);
    else if (key == "feature") cfg.feature = to_size(val, key);
    else if (key == "train.epochs") cfg.train.epochs = to_size(val, key);
    else if (key == "train.batch_size") cfg.train.batch_size = to_size(val, key);
    else if (key == "train.learning_rate") cfg.train.learning_rate = to_double(val, key);
    else if (key == "train.transfer_weight") cfg.train.transfer_weight = to_double(val, key);
    else if (key == "train.grl_lambda") cfg.train.grl_lambda = to_double(val, key);
    else if (key == "train.bandwidth_multipliers")
      cfg.train.kernel_bandwidth_multipliers = to_doubles(val, key);
    else if (key == "attack.eps_multipliers") cfg.eps_multipliers = to_doubles(val, key);
    else if (key == "attack.iters") cfg.attack_iters = to_size(val, key);
    else if (key == "attack.targeted") cfg.run_targeted = to_bool(val, key);
    else if (key == "attack.transfer_eps_index") cfg.transfer_eps_index = to_size(val, key);
    else if (key == "attack.clip_min") cfg.clip_min = to_double(val, key);
    else if (key == "attack.clip_max") cfg.clip_max = to_double(val, key);
    else if (key == "defense.enabled") cfg.defense_enabled = to_bool(val, key);
    else if (key == "defense.mode") {
      if (val == "whitebox") cfg.defense_mode = DefenseMode::WhiteboxIterative;
      else if (val == "blackbox") cfg.defense_mode = DefenseMode::BlackboxMix;
      else if (val == "weighted") cfg.defense_mode = DefenseMode::Weighted;
      else fail("config: defense.mode must be whitebox, blackbox or weighted");
    } else if (key == "defense.rounds") cfg.defense_rounds = to_size(val, key);
    else if (key == "defense.alpha") cfg.defense_alpha = to_double(val, key);
    else if (key == "defense.mix_ratio") cfg.defense_mix_ratio = to_double(val, key);
    else if (key == "defense.eps_multiplier") cfg.defense_eps_multiplier = to_double(val, key);
    else if (key == "defense.epochs") cfg.defense_retrain.epochs = to_size(val, key);
    else if (key == "defense.batch_size") cfg.defense_retrain.batch_size = to_size(val, key);
    else if (key == "defense.learning_rate")
      cfg.defense_retrain.learning_rate = to_double(val, key);
    else fail("config: unknown key '" + key + "'");
  }

  // Retrain settings inherit the training defaults that were not overridden.
  if (!kv.count("defense.batch_size")) cfg.defense_retrain.batch_size = cfg.train.batch_size;
  if (!kv.count("defense.learning_rate"))
    cfg.defense_retrain.learning_rate = cfg.train.learning_rate;
  cfg.defense_retrain.transfer_weight = cfg.train.transfer_weight;
  cfg.defense_retrain.grl_lambda = cfg.train.grl_lambda;
  cfg.defense_retrain.kernel_bandwidth_multipliers = cfg.train.kernel_bandwidth_multipliers;
  if (!kv.count("defense.epochs")) cfg.defense_retrain.epochs = cfg.train.epochs;

  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string config_key_reference() {
  return R"(Config file: one key=value per line, '#' starts a comment.

  seed=7                       master seed (overridden by --seed)
  out_dir=out                  output directory (overridden by --out)
  tasks=1                      number of domain-pair specs (task1.., task2..)
  taskN.rotation=0.8           rotation of the shifted domain (radians)
  taskN.translation=0.4,-0.3   translation of the shifted domain
  taskN.scale=1.0              scale of the shifted domain
  taskN.noise_sigma=0.3        cluster noise
  taskN.classes=3              classes per domain
  taskN.feature_dim=4          feature dimension (same for all tasks)
  taskN.samples_per_class_source=40
  taskN.samples_per_class_target=40
  taskN.source_file= taskN.target_file=   load this task from dataset files
  directions=both              'both' runs each pair reversed too, or 'forward'
  methods=DAN,DANN,CDAN        model zoo (also SOURCE_ONLY)
  hidden=16  feature=8         network widths
  train.epochs=150  train.batch_size=20  train.learning_rate=0.06
  train.transfer_weight=1.0  train.grl_lambda=1.0
  train.bandwidth_multipliers=0.25,0.5,1,2,4
  attack.eps_multipliers=0.01,0.05,0.1,0.5   grid, scaled by feature std
  attack.iters=40
  attack.targeted=false        also run targeted rows
  attack.transfer_eps_index=1  grid slot used for transfer rows
  attack.clip_min= attack.clip_max=          optional clip range
  defense.enabled=false        also run the defense matrix
  defense.mode=whitebox        diagonal defense: whitebox or weighted
  defense.rounds=3  defense.alpha=0.5  defense.mix_ratio=1.0
  defense.eps_multiplier=0.1
  defense.epochs= defense.batch_size= defense.learning_rate=   retrain overrides
)";
}

namespace {

std::string join_doubles(const std::vector<double>& v) {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out << ',';
    out << v[i];
  }
  return out.str();
}

}  // namespace

std::vector<std::pair<std::string, std::string>> config_echo(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> echo;
  echo.emplace_back("seed", std::to_string(cfg.seed));
  echo.emplace_back("tasks", std::to_string(cfg.tasks.size()));
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    const ShiftSpec& s = cfg.tasks[i].shift;
    std::string p = "task" + std::to_string(i + 1) + ".";
    if (cfg.tasks[i].from_files()) {
      echo.emplace_back(p + "source_file", cfg.tasks[i].source_file);
      echo.emplace_back(p + "target_file", cfg.tasks[i].target_file);
      continue;
    }
    echo.emplace_back(p + "rotation", std::to_string(s.rotation_angle));
    echo.emplace_back(p + "translation", s.translation.empty() ? "0,0" : join_doubles(s.translation));
    echo.emplace_back(p + "scale", std::to_string(s.scale));
    echo.emplace_back(p + "noise_sigma", std::to_string(s.noise_sigma));
    echo.emplace_back(p + "classes", std::to_string(s.num_classes));
    echo.emplace_back(p + "feature_dim", std::to_string(s.feature_dim));
    echo.emplace_back(p + "samples_per_class_source",
                      std::to_string(s.samples_per_class_source));
    echo.emplace_back(p + "samples_per_class_target",
                      std::to_string(s.samples_per_class_target));
  }
  echo.emplace_back("directions", cfg.both_directions ? "both" : "forward");
  std::string methods;
  for (std::size_t i = 0; i < cfg.methods.size(); ++i)
    methods += (i ? "," : "") + method_name(cfg.methods[i]);
  echo.emplace_back("methods", methods);
  echo.emplace_back("hidden", std::to_string(cfg.hidden));
  echo.emplace_back("feature", std::to_string(cfg.feature));
  echo.emplace_back("train.epochs", std::to_string(cfg.train.epochs));
  echo.emplace_back("train.batch_size", std::to_string(cfg.train.batch_size));
  echo.emplace_back("train.learning_rate", std::to_string(cfg.train.learning_rate));
  echo.emplace_back("train.transfer_weight", std::to_string(cfg.train.transfer_weight));
  echo.emplace_back("train.grl_lambda", std::to_string(cfg.train.grl_lambda));
  echo.emplace_back("train.bandwidth_multipliers",
                    join_doubles(cfg.train.kernel_bandwidth_multipliers));
  echo.emplace_back("attack.eps_multipliers", join_doubles(cfg.eps_multipliers));
  echo.emplace_back("attack.iters", std::to_string(cfg.attack_iters));
  echo.emplace_back("attack.targeted", cfg.run_targeted ? "true" : "false");
  echo.emplace_back("attack.transfer_eps_index", std::to_string(cfg.transfer_eps_index));
  if (cfg.clip_min) echo.emplace_back("attack.clip_min", std::to_string(*cfg.clip_min));
  if (cfg.clip_max) echo.emplace_back("attack.clip_max", std::to_string(*cfg.clip_max));
  echo.emplace_back("defense.enabled", cfg.defense_enabled ? "true" : "false");
  echo.emplace_back("defense.mode", cfg.defense_mode == DefenseMode::Weighted
                                        ? "weighted"
                                        : (cfg.defense_mode == DefenseMode::BlackboxMix
                                               ? "blackbox"
                                               : "whitebox"));
  echo.emplace_back("defense.rounds", std::to_string(cfg.defense_rounds));
  echo.emplace_back("defense.alpha", std::to_string(cfg.defense_alpha));
  echo.emplace_back("defense.mix_ratio", std::to_string(cfg.defense_mix_ratio));
  echo.emplace_back("defense.eps_multiplier", std::to_string(cfg.defense_eps_multiplier));
  echo.emplace_back("defense.epochs", std::to_string(cfg.defense_retrain.epochs));
  return echo;
}

}  // namespace adva
