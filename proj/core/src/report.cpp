#include "adva/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "adva/error.hpp"
#include "json.hpp"

namespace adva {

using nlohmann::ordered_json;

double decrease_rate(double clean_acc, double adv_acc) {
  require(clean_acc > 0.0, "decrease_rate: clean accuracy must be positive");
  return (clean_acc - adv_acc) / clean_acc;
}

namespace {

void validate_row(const ReportRow& row) {
  require(!row.cells.empty(), "report: row " + row.victim + "/" + row.attack_source +
                                  " has no cells");
  double sum = 0.0;
  for (const ReportCell& c : row.cells) {
    require(c.accuracy >= 0.0 && c.accuracy <= 1.0,
            "report: accuracy " + std::to_string(c.accuracy) + " out of [0,1] in task " + c.task);
    if (c.source_accuracy)
      require(*c.source_accuracy >= 0.0 && *c.source_accuracy <= 1.0,
              "report: source accuracy out of [0,1] in task " + c.task);
    sum += c.accuracy;
  }
  double mean = sum / static_cast<double>(row.cells.size());
  require(std::fabs(mean - row.average) < 1e-9,
          "report: row " + row.victim + "/" + row.attack_source + " average " +
              std::to_string(row.average) + " != cell mean " + std::to_string(mean));
  if (row.pre_defense_average)
    require(*row.pre_defense_average >= 0.0 && *row.pre_defense_average <= 1.0,
            "report: pre-defense average out of [0,1]");
}

}  // namespace

void ExperimentReport::validate() const {
  for (const ReportRow& r : rows) validate_row(r);
  for (const ReportRow& r : defense_rows) validate_row(r);
}

namespace {

ordered_json row_to_json(const ReportRow& row) {
  ordered_json j;
  j["victim"] = row.victim;
  j["attack_source"] = row.attack_source;
  j["mode"] = row.mode;
  if (row.eps_multiplier) j["eps_multiplier"] = *row.eps_multiplier;
  ordered_json cells = ordered_json::array();
  for (const ReportCell& c : row.cells) {
    ordered_json cj;
    cj["task"] = c.task;
    cj["accuracy"] = c.accuracy;
    if (c.epsilon) cj["epsilon"] = *c.epsilon;
    if (c.source_accuracy) cj["source_accuracy"] = *c.source_accuracy;
    cells.push_back(std::move(cj));
  }
  j["cells"] = std::move(cells);
  j["average"] = row.average;
  if (row.decrease_rate) j["decrease_rate"] = *row.decrease_rate;
  if (row.samples) j["samples"] = *row.samples;
  if (row.pre_defense_average) j["pre_defense_average"] = *row.pre_defense_average;
  return j;
}

ReportRow row_from_json(const ordered_json& j) {
  ReportRow row;
  row.victim = j.at("victim").get<std::string>();
  row.attack_source = j.at("attack_source").get<std::string>();
  row.mode = j.at("mode").get<std::string>();
  if (j.contains("eps_multiplier")) row.eps_multiplier = j.at("eps_multiplier").get<double>();
  for (const auto& cj : j.at("cells")) {
    ReportCell c;
    c.task = cj.at("task").get<std::string>();
    c.accuracy = cj.at("accuracy").get<double>();
    if (cj.contains("epsilon")) c.epsilon = cj.at("epsilon").get<double>();
    if (cj.contains("source_accuracy")) c.source_accuracy = cj.at("source_accuracy").get<double>();
    row.cells.push_back(std::move(c));
  }
  row.average = j.at("average").get<double>();
  if (j.contains("decrease_rate")) row.decrease_rate = j.at("decrease_rate").get<double>();
  if (j.contains("samples")) row.samples = j.at("samples").get<std::string>();
  if (j.contains("pre_defense_average"))
    row.pre_defense_average = j.at("pre_defense_average").get<double>();
  return row;
}

// Flat record stream: one record per cell, fixed field order.
ordered_json flat_records(const ExperimentReport& rep) {
  ordered_json records = ordered_json::array();
  auto emit_rows = [&](const std::vector<ReportRow>& rows) {
    for (const ReportRow& row : rows) {
      for (const ReportCell& c : row.cells) {
        ordered_json r;
        r["victim"] = row.victim;
        r["attack_source"] = row.attack_source;
        r["mode"] = row.samples ? row.mode + "-" + *row.samples : row.mode;
        if (c.epsilon)
          r["epsilon"] = *c.epsilon;
        else
          r["epsilon"] = nullptr;
        r["task"] = c.task;
        r["accuracy"] = c.accuracy;
        r["average"] = row.average;
        if (row.decrease_rate)
          r["decrease_rate"] = *row.decrease_rate;
        else
          r["decrease_rate"] = nullptr;
        r["seed"] = rep.seed;
        records.push_back(std::move(r));
      }
    }
  };
  emit_rows(rep.rows);
  emit_rows(rep.defense_rows);
  return records;
}

}  // namespace

std::string report_json(const ExperimentReport& report) {
  report.validate();
  ordered_json j;
  j["schema"] = "adva-report-v1";
  j["seed"] = report.seed;
  j["complete"] = report.complete;
  j["errors"] = report.errors;
  j["gate"] = ordered_json{{"eval_reads", report.gate_eval_reads},
                           {"other_reads", report.gate_other_reads}};
  j["invariants"] = ordered_json{{"linf_ok", report.linf_ok},
                                 {"clip_ok", report.clip_ok},
                                 {"params_unchanged", report.params_unchanged}};
  j["clean_below_adv_flag"] = report.clean_below_adv_flag;
  ordered_json cfg = ordered_json::object();
  for (const auto& [k, v] : report.config_echo) cfg[k] = v;
  j["config"] = std::move(cfg);
  j["records"] = flat_records(report);
  ordered_json rows = ordered_json::array();
  for (const ReportRow& r : report.rows) rows.push_back(row_to_json(r));
  j["rows"] = std::move(rows);
  ordered_json drows = ordered_json::array();
  for (const ReportRow& r : report.defense_rows) drows.push_back(row_to_json(r));
  j["defense_rows"] = std::move(drows);
  return j.dump(2) + "\n";
}

ExperimentReport parse_report_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    fail(std::string("parse_report: invalid JSON: ") + e.what());
  }
  require(j.value("schema", "") == "adva-report-v1", "parse_report: unknown schema");
  ExperimentReport rep;
  rep.seed = j.at("seed").get<std::uint64_t>();
  rep.complete = j.at("complete").get<bool>();
  rep.errors = j.at("errors").get<std::vector<std::string>>();
  rep.gate_eval_reads = j.at("gate").at("eval_reads").get<std::uint64_t>();
  rep.gate_other_reads = j.at("gate").at("other_reads").get<std::uint64_t>();
  rep.linf_ok = j.at("invariants").at("linf_ok").get<bool>();
  rep.clip_ok = j.at("invariants").at("clip_ok").get<bool>();
  rep.params_unchanged = j.at("invariants").at("params_unchanged").get<bool>();
  rep.clean_below_adv_flag = j.at("clean_below_adv_flag").get<bool>();
  for (const auto& [k, v] : j.at("config").items())
    rep.config_echo.emplace_back(k, v.get<std::string>());
  for (const auto& rj : j.at("rows")) rep.rows.push_back(row_from_json(rj));
  for (const auto& rj : j.at("defense_rows")) rep.defense_rows.push_back(row_from_json(rj));
  rep.validate();
  return rep;
}

namespace {

std::string pct(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  return buf;
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void render_table(std::ostringstream& out, const std::vector<ReportRow>& rows, bool defense) {
  if (rows.empty()) return;
  std::vector<std::string> header{"victim", "attack_source", "mode", "eps"};
  for (const ReportCell& c : rows.front().cells) header.push_back(c.task);
  header.push_back(defense ? "(attack) average" : "average");
  if (!defense) header.push_back("decrease");

  std::vector<std::vector<std::string>> grid;
  grid.push_back(header);
  for (const ReportRow& row : rows) {
    std::vector<std::string> line{row.victim, row.attack_source,
                                  row.samples ? row.mode + "-" + *row.samples : row.mode,
                                  row.eps_multiplier ? fixed4(*row.eps_multiplier) : "-"};
    for (const ReportCell& c : row.cells) line.push_back(pct(c.accuracy));
    if (defense && row.pre_defense_average)
      line.push_back("(" + pct(*row.pre_defense_average) + ") " + pct(row.average));
    else
      line.push_back(pct(row.average));
    if (!defense) line.push_back(row.decrease_rate ? fixed4(*row.decrease_rate) : "-");
    grid.push_back(std::move(line));
  }

  std::vector<std::size_t> width(grid.front().size(), 0);
  for (const auto& line : grid)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      out << line[i];
      if (i + 1 < line.size()) out << std::string(width[i] - line[i].size() + 2, ' ');
    }
    out << '\n';
  }
}

}  // namespace

std::string report_table(const ExperimentReport& report) {
  report.validate();
  std::ostringstream out;
  out << "adva experiment report (seed " << report.seed << ")\n";
  if (!report.complete) {
    out << "INCOMPLETE: " << report.errors.size() << " sub-experiment failure(s)\n";
    for (const std::string& e : report.errors) out << "  error: " << e << '\n';
  }
  out << "gate reads: eval=" << report.gate_eval_reads << " other=" << report.gate_other_reads
      << "\n";
  if (report.clean_below_adv_flag)
    out << "note: defense left clean accuracy below adversarial accuracy in at least one run\n";
  if (!report.rows.empty()) {
    out << "\n-- attack matrix --\n";
    render_table(out, report.rows, false);
  }
  if (!report.defense_rows.empty()) {
    out << "\n-- defense matrix --\n";
    render_table(out, report.defense_rows, true);
  }
  return out.str();
}

void emit_report(const ExperimentReport& report, const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(!ec, "emit_report: cannot create directory '" + out_dir + "'");
  {
    std::ofstream f(out_dir + "/report.json");
    require(f.good(), "emit_report: cannot write '" + out_dir + "/report.json'");
    f << report_json(report);
    require(f.good(), "emit_report: write failed for report.json");
  }
  {
    std::ofstream f(out_dir + "/report.txt");
    require(f.good(), "emit_report: cannot write '" + out_dir + "/report.txt'");
    f << report_table(report);
    require(f.good(), "emit_report: write failed for report.txt");
  }
}

}  // namespace adva
