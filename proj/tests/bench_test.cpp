#include <fstream>

#include "adva/experiment.hpp"
#include "adva/report.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace adva;
using namespace testsup;

namespace {

ExperimentReport sample_report() {
  ExperimentReport rep;
  rep.seed = 7;
  rep.gate_eval_reads = 4;
  rep.config_echo = {{"seed", "7"}, {"methods", "DAN"}};
  ReportRow clean;
  clean.victim = "DAN";
  clean.attack_source = "clean";
  clean.mode = "-";
  clean.cells = {{"P1>Q1", 0.90, {}, 1.0}, {"Q1>P1", 0.80, {}, 0.95}};
  clean.average = 0.85;
  ReportRow wb;
  wb.victim = "DAN";
  wb.attack_source = "white-box";
  wb.mode = "non_targeted";
  wb.eps_multiplier = 0.5;
  wb.cells = {{"P1>Q1", 0.40, 0.38, 0.5}, {"Q1>P1", 0.50, 0.38, 0.6}};
  wb.average = 0.45;
  wb.decrease_rate = decrease_rate(0.85, 0.45);
  rep.rows = {clean, wb};
  ReportRow def;
  def.victim = "DAN";
  def.attack_source = "DANN2DAN";
  def.mode = "defense";
  def.samples = "adv";
  def.cells = {{"P1>Q1", 0.66, {}, {}}, {"Q1>P1", 0.70, {}, {}}};
  def.average = 0.68;
  def.pre_defense_average = 0.47;
  rep.defense_rows = {def};
  return rep;
}

ExperimentConfig tiny_matrix_config() {
  ExperimentConfig cfg;
  ShiftSpec spec = default_shift(13, 0.8);
  spec.samples_per_class_source = 15;
  spec.samples_per_class_target = 15;
  cfg.tasks = {TaskSpec{spec, "", ""}};
  cfg.both_directions = false;
  cfg.methods = {Method::Dan, Method::Dann, Method::Cdan};
  cfg.train = quick_train(12, 0.06, 13);
  cfg.eps_multipliers = {0.1};
  cfg.transfer_eps_index = 0;
  cfg.seed = 13;
  return cfg;
}

}  // namespace

TEST_CASE("decrease_rate: reference values and the edge cases") {
  // clean 81.88, attacked 41.17 -> (81.88-41.17)/81.88
  CHECK(decrease_rate(0.8188, 0.4117) == doctest::Approx(0.49719).epsilon(1e-4));
  CHECK(decrease_rate(0.75, 0.75) == 0.0);
  CHECK(decrease_rate(0.75, 0.0) == 1.0);
  CHECK_THROWS_AS(decrease_rate(0.0, 0.1), Error);
}

TEST_CASE("report validation: averages must match their cells") {
  ExperimentReport rep = sample_report();
  rep.validate();
  rep.rows[1].average = 0.5;  // off by 5 points
  CHECK_THROWS_AS(rep.validate(), Error);
  rep = sample_report();
  rep.rows[0].cells[0].accuracy = 1.2;
  CHECK_THROWS_AS(rep.validate(), Error);
}

TEST_CASE("report: json round-trip reconstructs the report byte-for-byte") {
  ExperimentReport rep = sample_report();
  std::string text = report_json(rep);
  ExperimentReport back = parse_report_json(text);
  CHECK(report_json(back) == text);
  CHECK(back.rows.size() == rep.rows.size());
  CHECK(back.defense_rows.size() == rep.defense_rows.size());
  CHECK(back.rows[1].cells[0].epsilon.has_value());
  CHECK(*back.defense_rows[0].pre_defense_average == 0.47);
}

TEST_CASE("report: flat records carry the stable field tuple") {
  std::string text = report_json(sample_report());
  auto pos = text.find("\"records\"");
  REQUIRE(pos != std::string::npos);
  // first record: field order is part of the format
  std::string expect =
      "{\n"
      "      \"victim\": \"DAN\",\n"
      "      \"attack_source\": \"clean\",\n"
      "      \"mode\": \"-\",\n"
      "      \"epsilon\": null,\n"
      "      \"task\": \"P1>Q1\",\n"
      "      \"accuracy\": 0.9,\n"
      "      \"average\": 0.85,\n"
      "      \"decrease_rate\": null,\n"
      "      \"seed\": 7\n"
      "    }";
  CHECK(text.find(expect, pos) != std::string::npos);
}

TEST_CASE("report: incomplete runs carry an explicit marker") {
  ExperimentReport rep = sample_report();
  rep.complete = false;
  rep.errors.push_back("train DAN on P1>Q1: boom");
  std::string table = report_table(rep);
  CHECK(table.find("INCOMPLETE") != std::string::npos);
  CHECK(table.find("boom") != std::string::npos);
  ExperimentReport back = parse_report_json(report_json(rep));
  CHECK_FALSE(back.complete);
  REQUIRE(back.errors.size() == 1);
}

TEST_CASE("report: table renders percentages and the (attack) average") {
  std::string table = report_table(sample_report());
  CHECK(table.find("85.00") != std::string::npos);   // clean average as percent
  CHECK(table.find("(47.00) 68.00") != std::string::npos);  // defense pre/post
}

TEST_CASE("emit_report writes both files") {
  std::string dir = temp_path("report_out");
  emit_report(sample_report(), dir);
  std::ifstream j(dir + "/report.json");
  std::ifstream t(dir + "/report.txt");
  CHECK(j.good());
  CHECK(t.good());
}

TEST_CASE("config: parsing, defaults, and rejection of unknown keys") {
  std::string text = R"(
# comment
tasks=2
task1.rotation=0.8
task1.noise_sigma=0.3
task2.rotation=1.2
task2.translation=0.4,-0.3
directions=forward
methods=DAN,CDAN
train.epochs=25
attack.eps_multipliers=0.05,0.5
attack.transfer_eps_index=1
defense.enabled=true
defense.alpha=0.25
seed=99
)";
  ExperimentConfig cfg = parse_config_text(text);
  CHECK(cfg.tasks.size() == 2);
  CHECK(cfg.tasks[0].shift.rotation_angle == 0.8);
  CHECK(cfg.tasks[1].shift.translation == std::vector<double>{0.4, -0.3});
  CHECK_FALSE(cfg.both_directions);
  CHECK(cfg.methods == std::vector<Method>{Method::Dan, Method::Cdan});
  CHECK(cfg.train.epochs == 25);
  CHECK(cfg.defense_retrain.epochs == 25);  // inherits train unless overridden
  CHECK(cfg.defense_enabled);
  CHECK(cfg.defense_alpha == 0.25);
  CHECK(cfg.seed == 99);

  CHECK_THROWS_WITH_AS(parse_config_text("nonsense=1\n"),
                       doctest::Contains("unknown key"), Error);
  CHECK_THROWS_WITH_AS(parse_config_text("seed=1\nseed=2\n"),
                       doctest::Contains("duplicate"), Error);
  CHECK_THROWS_WITH_AS(parse_config_text("task9.rotation=1\n"),
                       doctest::Contains("out of range"), Error);
  CHECK_THROWS_AS(parse_config_text("attack.eps_multipliers=0.5,0.1\n"), Error);  // not ascending
}

TEST_CASE("attack matrix: row structure for 3 models and one grid point") {
  ExperimentReport rep = run_attack_matrix(tiny_matrix_config());
  CHECK(rep.complete);
  rep.validate();

  std::size_t clean_rows = 0, wb_rows = 0, transfer_rows = 0;
  for (const ReportRow& r : rep.rows) {
    if (r.attack_source == "clean") ++clean_rows;
    else if (r.attack_source == "white-box") ++wb_rows;
    else ++transfer_rows;
  }
  CHECK(clean_rows == 3);
  CHECK(wb_rows == 3);
  CHECK(transfer_rows == 6);  // ordered avatar->victim pairs

  CHECK(rep.linf_ok);
  CHECK(rep.params_unchanged);
  CHECK(rep.gate_other_reads == 0);
  CHECK(rep.gate_eval_reads > 0);

  // every attacked row carries a decrease rate against its clean row
  for (const ReportRow& r : rep.rows)
    if (r.attack_source != "clean") CHECK(r.decrease_rate.has_value());
}

TEST_CASE("attack matrix: tasks can come from dataset files") {
  auto [src, tgt] = make_shifted_datasets(default_shift(13, 0.8));
  src.domain_name = "A";
  tgt.domain_name = "B";
  std::string spath = temp_path("task_src.ds"), tpath = temp_path("task_tgt.ds");
  save_dataset(src, spath);
  save_dataset(tgt, tpath);

  ExperimentConfig cfg = tiny_matrix_config();
  cfg.tasks = {TaskSpec{{}, spath, tpath}};
  cfg.methods = {Method::Dan};
  cfg.both_directions = true;
  ExperimentReport rep = run_attack_matrix(cfg);
  CHECK(rep.complete);
  REQUIRE(rep.rows.size() >= 1);
  REQUIRE(rep.rows.front().cells.size() == 2);
  CHECK(rep.rows.front().cells[0].task == "A>B");
  CHECK(rep.rows.front().cells[1].task == "B>A");

  TaskSpec half_set{{}, spath, ""};
  CHECK_THROWS_AS(half_set.validate(), Error);
}

TEST_CASE("attack matrix: deterministic in the seed") {
  ExperimentConfig cfg = tiny_matrix_config();
  ExperimentReport a = run_attack_matrix(cfg);
  ExperimentReport b = run_attack_matrix(cfg);
  CHECK(report_json(a) == report_json(b));
}

TEST_CASE("defense matrix: row count is victims x avatars x {clean, adv}") {
  ExperimentConfig cfg = tiny_matrix_config();
  cfg.methods = {Method::Dann, Method::Cdan};
  cfg.defense_enabled = true;
  cfg.defense_rounds = 1;
  cfg.defense_retrain = quick_train(10, 0.06, 13);
  cfg.defense_eps_multiplier = 0.5;
  ExperimentReport rep = run_defense_matrix(cfg);
  rep.validate();
  CHECK(rep.defense_rows.size() == 2 * 2 * 2);
  for (const ReportRow& r : rep.defense_rows) {
    REQUIRE(r.samples.has_value());
    CHECK((*r.samples == "clean" || *r.samples == "adv"));
    CHECK(r.pre_defense_average.has_value());
  }
}
