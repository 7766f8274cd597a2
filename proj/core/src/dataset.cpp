#include "adva/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "adva/rng.hpp"
#include "json.hpp"

namespace adva {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  require(ec == std::errc{}, "fmt_double: conversion failed");
  return std::string(buf, ptr);
}

double parse_double(std::string_view text, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  require(ec == std::errc{} && ptr == text.data() + text.size(),
          where + ": cannot parse real number '" + std::string(text) + "'");
  require(std::isfinite(v), where + ": non-finite value '" + std::string(text) + "'");
  return v;
}

long parse_long(std::string_view text, const std::string& where) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  require(ec == std::errc{} && ptr == text.data() + text.size(),
          where + ": cannot parse integer '" + std::string(text) + "'");
  return v;
}

}  // namespace

void ShiftSpec::validate() const {
  require(num_classes >= 2, "shift spec: num_classes must be >= 2");
  require(samples_per_class_source >= 1 && samples_per_class_target >= 1,
          "shift spec: samples per class must be >= 1");
  require(feature_dim >= 2, "shift spec: feature_dim must be >= 2");
  require(noise_sigma > 0.0, "shift spec: noise_sigma must be positive");
  require(scale > 0.0, "shift spec: scale must be positive");
  require(translation.empty() || translation.size() == 2,
          "shift spec: translation must have 2 entries (or be empty)");
}

void LabeledDataset::validate() const {
  require(num_classes >= 1, "dataset: num_classes must be positive");
  require(features.is_matrix(), "dataset: features must be a matrix");
  require(features.rows() == labels.size(), "dataset: feature rows (" +
                                                std::to_string(features.rows()) +
                                                ") != labels (" + std::to_string(labels.size()) + ")");
  require(labels.size() >= num_classes,
          "dataset: need at least one sample per class, have " + std::to_string(labels.size()) +
              " samples for " + std::to_string(num_classes) + " classes");
  require(features.all_finite(), "dataset: non-finite feature value");
  std::vector<std::size_t> per_class(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < num_classes,
            "dataset: label " + std::to_string(labels[i]) + " out of range [0," +
                std::to_string(num_classes) + ") at sample " + std::to_string(i));
    per_class[static_cast<std::size_t>(labels[i])]++;
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    require(per_class[c] >= 1, "dataset: class " + std::to_string(c) + " has no samples");
}

DomainPair::DomainPair(LabeledDataset source, LabeledDataset target, bool eval_only_target_labels)
    : source_(std::move(source)),
      target_(std::move(target)),
      eval_only_(eval_only_target_labels),
      gate_(std::make_shared<Gate>()) {
  source_.validate();
  target_.validate();
  require(source_.num_classes == target_.num_classes,
          "domain pair: class count mismatch between domains");
  require(source_.dim() == target_.dim(), "domain pair: feature dimension mismatch");
}

const std::vector<int>& DomainPair::target_labels(GateScope scope) const {
  if (eval_only_) {
    if (scope == GateScope::Evaluation)
      gate_->eval_reads.fetch_add(1, std::memory_order_relaxed);
    else
      gate_->other_reads.fetch_add(1, std::memory_order_relaxed);
  }
  return target_.labels;
}

GateCounts DomainPair::gate_counts() const {
  return {gate_->eval_reads.load(std::memory_order_relaxed),
          gate_->other_reads.load(std::memory_order_relaxed)};
}

void DomainPair::reset_gate() const {
  gate_->eval_reads.store(0, std::memory_order_relaxed);
  gate_->other_reads.store(0, std::memory_order_relaxed);
}

DomainPair make_shifted_domains(const ShiftSpec& spec) {
  auto [source, target] = make_shifted_datasets(spec);
  return DomainPair(std::move(source), std::move(target), true);
}

std::pair<LabeledDataset, LabeledDataset> make_shifted_datasets(const ShiftSpec& spec) {
  spec.validate();
  const std::size_t k = spec.num_classes;
  const std::size_t d = spec.feature_dim;
  Rng rng(spec.seed);

  // Class centers on the unit circle in the first two coordinates.
  std::vector<std::array<double, 2>> centers(k);
  for (std::size_t c = 0; c < k; ++c) {
    double a = 2.0 * kPi * static_cast<double>(c) / static_cast<double>(k);
    centers[c] = {std::cos(a), std::sin(a)};
  }

  auto draw = [&](std::size_t per_class, bool shifted, const std::string& name) {
    std::size_t n = per_class * k;
    Tensor feats = Tensor::zeros({n, d});
    std::vector<int> labels(n);
    double cosr = std::cos(spec.rotation_angle), sinr = std::sin(spec.rotation_angle);
    double tx = spec.translation.empty() ? 0.0 : spec.translation[0];
    double ty = spec.translation.empty() ? 0.0 : spec.translation[1];
    std::size_t row = 0;
    for (std::size_t c = 0; c < k; ++c) {
      double cx = centers[c][0], cy = centers[c][1];
      if (shifted) {
        double sx = spec.scale * cx, sy = spec.scale * cy;
        cx = cosr * sx - sinr * sy + tx;
        cy = sinr * sx + cosr * sy + ty;
      }
      for (std::size_t s = 0; s < per_class; ++s, ++row) {
        feats.at(row, 0) = cx + spec.noise_sigma * rng.normal();
        feats.at(row, 1) = cy + spec.noise_sigma * rng.normal();
        for (std::size_t j = 2; j < d; ++j) feats.at(row, j) = spec.noise_sigma * rng.normal();
        labels[row] = static_cast<int>(c);
      }
    }
    LabeledDataset ds{std::move(feats), std::move(labels), k, name, spec};
    ds.validate();
    return ds;
  };

  LabeledDataset source = draw(spec.samples_per_class_source, false, "source");
  LabeledDataset target = draw(spec.samples_per_class_target, true, "target");
  return {std::move(source), std::move(target)};
}

void save_dataset(const LabeledDataset& ds, const std::string& path) {
  ds.validate();
  require(ds.domain_name.find_first_of(" \t") == std::string::npos,
          "save_dataset: domain name must not contain whitespace");
  std::ofstream out(path);
  require(out.good(), "save_dataset: cannot open '" + path + "' for writing");
  out << "ADVA-DS v1 n=" << ds.size() << " d=" << ds.dim() << " k=" << ds.num_classes
      << " domain=" << ds.domain_name << "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (std::size_t j = 0; j < ds.dim(); ++j) out << ',' << fmt_double(ds.features.at(i, j));
    out << '\n';
  }
  require(out.good(), "save_dataset: write to '" + path + "' failed");
  out.close();

  if (ds.provenance) {
    const ShiftSpec& s = *ds.provenance;
    nlohmann::ordered_json meta{
        {"num_classes", s.num_classes},
        {"samples_per_class_source", s.samples_per_class_source},
        {"samples_per_class_target", s.samples_per_class_target},
        {"feature_dim", s.feature_dim},
        {"rotation_angle", s.rotation_angle},
        {"translation", s.translation},
        {"scale", s.scale},
        {"noise_sigma", s.noise_sigma},
        {"seed", s.seed},
    };
    std::ofstream side(path + ".meta.json");
    require(side.good(), "save_dataset: cannot write sidecar for '" + path + "'");
    side << meta.dump(2) << "\n";
  }
}

LabeledDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "load_dataset: cannot open '" + path + "'");
  std::string header;
  require(static_cast<bool>(std::getline(in, header)), "load_dataset: '" + path + "' is empty");

  std::istringstream hs(header);
  std::string magic, version, tok;
  hs >> magic >> version;
  require(magic == "ADVA-DS" && version == "v1",
          "load_dataset: '" + path + "' line 1: bad header '" + header + "'");
  std::size_t n = 0, d = 0, k = 0;
  std::string domain;
  bool have_n = false, have_d = false, have_k = false, have_domain = false;
  while (hs >> tok) {
    auto eq = tok.find('=');
    require(eq != std::string::npos, "load_dataset: line 1: bad header field '" + tok + "'");
    std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "n") { n = static_cast<std::size_t>(parse_long(val, "load_dataset: line 1 field n")); have_n = true; }
    else if (key == "d") { d = static_cast<std::size_t>(parse_long(val, "load_dataset: line 1 field d")); have_d = true; }
    else if (key == "k") { k = static_cast<std::size_t>(parse_long(val, "load_dataset: line 1 field k")); have_k = true; }
    else if (key == "domain") { domain = val; have_domain = true; }
    else fail("load_dataset: line 1: unknown header field '" + key + "'");
  }
  require(have_n && have_d && have_k && have_domain,
          "load_dataset: line 1: header must carry n, d, k and domain");
  require(n >= 1 && d >= 1 && k >= 1, "load_dataset: line 1: n, d, k must be positive");

  Tensor feats = Tensor::zeros({n, d});
  std::vector<int> labels(n);
  std::string line;
  for (std::size_t i = 0; i < n; ++i) {
    std::string where = "load_dataset: '" + path + "' line " + std::to_string(i + 2);
    require(static_cast<bool>(std::getline(in, line)),
            where + ": expected " + std::to_string(n) + " sample lines, file ended");
    std::size_t pos = 0, field = 0;
    while (field <= d) {
      std::size_t comma = line.find(',', pos);
      std::string_view piece(line.data() + pos,
                             (comma == std::string::npos ? line.size() : comma) - pos);
      std::string at = where + " offset " + std::to_string(pos);
      if (field == 0) {
        long lbl = parse_long(piece, at + " (label)");
        require(lbl >= 0 && static_cast<std::size_t>(lbl) < k,
                at + ": label " + std::to_string(lbl) + " out of range [0," + std::to_string(k) + ")");
        labels[i] = static_cast<int>(lbl);
      } else {
        feats.at(i, field - 1) = parse_double(piece, at);
      }
      if (comma == std::string::npos) {
        require(field == d, where + ": expected " + std::to_string(d) + " features, got " +
                                std::to_string(field));
        break;
      }
      require(field < d, where + ": more than " + std::to_string(d) + " features");
      pos = comma + 1;
      ++field;
    }
  }
  if (std::getline(in, line))
    require(line.empty(), "load_dataset: trailing content after line " + std::to_string(n + 1));

  LabeledDataset ds{std::move(feats), std::move(labels), k, domain, std::nullopt};
  ds.validate();
  return ds;
}

std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, double fraction,
                                                std::uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0, "split: fraction must be in (0,1)");
  ds.validate();
  Rng rng(seed);
  std::vector<std::size_t> left_idx, right_idx;
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (static_cast<std::size_t>(ds.labels[i]) == c) members.push_back(i);
    rng.shuffle(members);
    auto take = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(members.size())));
    require(take >= 1 && take < members.size(),
            "split: fraction " + std::to_string(fraction) + " leaves class " + std::to_string(c) +
                " empty on one side (" + std::to_string(members.size()) + " samples)");
    left_idx.insert(left_idx.end(), members.begin(), members.begin() + static_cast<long>(take));
    right_idx.insert(right_idx.end(), members.begin() + static_cast<long>(take), members.end());
  }
  std::sort(left_idx.begin(), left_idx.end());
  std::sort(right_idx.begin(), right_idx.end());

  auto build = [&](const std::vector<std::size_t>& idx, const char* suffix) {
    LabeledDataset part;
    part.features = gather_rows(ds.features, idx);
    part.labels.reserve(idx.size());
    for (std::size_t i : idx) part.labels.push_back(ds.labels[i]);
    part.num_classes = ds.num_classes;
    part.domain_name = ds.domain_name + suffix;
    part.validate();
    return part;
  };
  return {build(left_idx, "-a"), build(right_idx, "-b")};
}

}  // namespace adva
