#include "adva/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "adva/rng.hpp"

namespace adva {

std::string method_name(Method m) {
  switch (m) {
    case Method::SourceOnly: return "SOURCE_ONLY";
    case Method::Dan: return "DAN";
    case Method::Dann: return "DANN";
    case Method::Cdan: return "CDAN";
  }
  return "?";
}

Method parse_method(const std::string& tag) {
  if (tag == "SOURCE_ONLY") return Method::SourceOnly;
  if (tag == "DAN") return Method::Dan;
  if (tag == "DANN") return Method::Dann;
  if (tag == "CDAN") return Method::Cdan;
  fail("unknown method tag '" + tag + "' (expected SOURCE_ONLY, DAN, DANN or CDAN)");
}

void TrainConfig::validate() const {
  require(epochs >= 1, "train config: epochs must be >= 1");
  require(batch_size >= 2, "train config: batch_size must be >= 2");
  require(learning_rate > 0.0, "train config: learning_rate must be positive");
  require(transfer_weight >= 0.0, "train config: transfer_weight must be >= 0");
  require(!kernel_bandwidth_multipliers.empty(),
          "train config: kernel_bandwidth_multipliers must be non-empty");
  for (double m : kernel_bandwidth_multipliers)
    require(m > 0.0, "train config: bandwidth multipliers must be positive");
}

namespace {

// One dense layer: x * W + bias tiled over rows via the ones column.
NodeId dense(Graph& g, NodeId x, NodeId ones, const std::string& w_name,
             const std::string& b_name) {
  NodeId w = g.input(w_name);
  NodeId b = g.input(b_name);
  return g.add(g.matmul(x, w), g.matmul(ones, b));
}

}  // namespace

NodeId append_extractor(Graph& g, NodeId x, NodeId ones, const Dims&) {
  NodeId h1 = g.relu(dense(g, x, ones, "f.W1", "f.b1"));
  return g.relu(dense(g, h1, ones, "f.W2", "f.b2"));
}

NodeId append_classifier(Graph& g, NodeId phi, NodeId ones, const Dims&) {
  return g.softmax(dense(g, phi, ones, "c.W", "c.b"));
}

NodeId append_discriminator(Graph& g, NodeId h, NodeId ones, std::size_t, std::size_t) {
  NodeId h1 = g.relu(dense(g, h, ones, "d.W1", "d.b1"));
  return g.softmax(dense(g, h1, ones, "d.W2", "d.b2"));
}

NodeId gradient_reversal(Graph& g, NodeId x, double lambda) {
  return g.grad_reverse(x, lambda);
}

UdaModel init_model(Method method, const Dims& dims, std::uint64_t seed) {
  require(dims.input >= 1 && dims.hidden >= 1 && dims.feature >= 1 && dims.classes >= 1,
          "init_model: all dimensions must be positive");
  UdaModel model;
  model.method = method;
  model.dims = dims;
  model.seed = seed;

  Rng rng(seed_combine(seed, 0xadd1));
  auto draw = [&](std::size_t rows, std::size_t cols, std::size_t fan_in) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t = Tensor::zeros({rows, cols});
    for (double& v : t.values) v = rng.uniform(-bound, bound);
    return t;
  };

  const std::size_t d = dims.input, h = dims.hidden, f = dims.feature, k = dims.classes;
  model.params["f.W1"] = draw(d, h, d);
  model.params["f.b1"] = draw(1, h, d);
  model.params["f.W2"] = draw(h, f, h);
  model.params["f.b2"] = draw(1, f, h);
  model.params["c.W"] = draw(f, k, f);
  model.params["c.b"] = draw(1, k, f);

  bool needs_disc = method == Method::Dann || method == Method::Cdan;
  if (needs_disc) {
    std::size_t din = model.discriminator_input_dim();
    std::size_t dh = f;  // discriminator hidden width tracks the feature width
    model.params["d.W1"] = draw(din, dh, din);
    model.params["d.b1"] = draw(1, dh, din);
    model.params["d.W2"] = draw(dh, 2, dh);
    model.params["d.b2"] = draw(1, 2, dh);

    Graph dg;
    NodeId hin = dg.input("h");
    NodeId ones = dg.input("ones");
    dg.set_output(append_discriminator(dg, hin, ones, din, dh));
    model.discriminator = std::move(dg);
  }

  {
    Graph eg;
    NodeId x = eg.input("x");
    NodeId ones = eg.input("ones");
    eg.set_output(append_extractor(eg, x, ones, dims));
    model.extractor = std::move(eg);
  }
  {
    Graph cg;
    NodeId phi = cg.input("phi");
    NodeId ones = cg.input("ones");
    cg.set_output(append_classifier(cg, phi, ones, dims));
    model.classifier = std::move(cg);
  }
  return model;
}

Bindings param_bindings(const UdaModel& model, bool requires_grad) {
  Bindings b;
  for (const auto& [name, t] : model.params) b.emplace(name, t.with_grad(requires_grad));
  return b;
}

Tensor predict(const UdaModel& model, const Tensor& features) {
  require(features.is_matrix(), "predict: features must be a matrix");
  require(features.cols() == model.dims.input,
          "predict: feature dimension " + std::to_string(features.cols()) +
              " does not match model input " + std::to_string(model.dims.input));
  Bindings b = param_bindings(model, false);
  b.emplace("ones", Tensor::full({features.rows(), 1}, 1.0));
  b.emplace("x", features);
  Tensor phi = forward(model.extractor, b);
  b.emplace("phi", std::move(phi));
  return forward(model.classifier, b);
}

std::vector<int> argmax_rows(const Tensor& probs) {
  require(probs.is_matrix(), "argmax_rows: matrix required");
  std::vector<int> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < probs.cols(); ++j)
      if (probs.at(i, j) > probs.at(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> argmin_rows(const Tensor& probs) {
  require(probs.is_matrix(), "argmin_rows: matrix required");
  std::vector<int> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < probs.cols(); ++j)
      if (probs.at(i, j) < probs.at(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

double accuracy_on(const UdaModel& model, const Tensor& features, const std::vector<int>& labels) {
  require(!labels.empty(), "accuracy: empty evaluation set");
  require(features.rows() == labels.size(), "accuracy: feature/label count mismatch");
  std::vector<int> pred = argmax_rows(predict(model, features));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (pred[i] == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double accuracy(const UdaModel& model, const LabeledDataset& ds) {
  ds.validate();
  return accuracy_on(model, ds.features, ds.labels);
}

double target_accuracy(const UdaModel& model, const DomainPair& pair) {
  return accuracy_on(model, pair.target_features(), pair.target_labels(GateScope::Evaluation));
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  require(ec == std::errc{}, "fmt_double: conversion failed");
  return std::string(buf, ptr);
}

}  // namespace

void save_model(const UdaModel& model, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "save_model: cannot open '" + path + "' for writing");
  out << "ADVA-MODEL v1 method=" << method_name(model.method) << " dims=" << model.dims.input
      << ',' << model.dims.hidden << ',' << model.dims.feature << ',' << model.dims.classes
      << " seed=" << model.seed << "\n";
  for (const auto& [name, t] : model.params) {
    out << "param " << name << ' ' << t.numel() << "\n";
    for (std::size_t i = 0; i < t.numel(); ++i) {
      if (i) out << ' ';
      out << fmt_double(t.values[i]);
    }
    out << "\n";
  }
  require(out.good(), "save_model: write to '" + path + "' failed");
}

UdaModel load_model(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "load_model: cannot open '" + path + "'");
  std::string header;
  require(static_cast<bool>(std::getline(in, header)), "load_model: '" + path + "' is empty");
  std::istringstream hs(header);
  std::string magic, version, field;
  hs >> magic >> version;
  require(magic == "ADVA-MODEL" && version == "v1",
          "load_model: bad header '" + header + "' in '" + path + "'");

  std::string method_tag;
  Dims dims{0, 0, 0, 0};
  std::uint64_t seed = 0;
  bool have_method = false, have_dims = false;
  while (hs >> field) {
    auto eq = field.find('=');
    require(eq != std::string::npos, "load_model: bad header field '" + field + "'");
    std::string key = field.substr(0, eq), val = field.substr(eq + 1);
    if (key == "method") {
      method_tag = val;
      have_method = true;
    } else if (key == "dims") {
      std::istringstream ds(val);
      char comma;
      ds >> dims.input >> comma >> dims.hidden >> comma >> dims.feature >> comma >> dims.classes;
      require(static_cast<bool>(ds) && dims.input >= 1 && dims.hidden >= 1 && dims.feature >= 1 &&
                  dims.classes >= 1,
              "load_model: dims mismatch, cannot parse '" + val + "'");
      have_dims = true;
    } else if (key == "seed") {
      seed = static_cast<std::uint64_t>(std::stoull(val));
    } else {
      fail("load_model: unknown header field '" + key + "'");
    }
  }
  require(have_method && have_dims, "load_model: header must carry method and dims");

  UdaModel model = init_model(parse_method(method_tag), dims, seed);
  std::map<std::string, Tensor> loaded;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kw, name;
    std::size_t len = 0;
    ls >> kw >> name >> len;
    require(static_cast<bool>(ls) && kw == "param",
            "load_model: expected 'param <name> <len>', got '" + line + "'");
    auto expected = model.params.find(name);
    require(expected != model.params.end(), "load_model: unexpected parameter '" + name + "'");
    require(expected->second.numel() == len,
            "load_model: parameter '" + name + "' has length " + std::to_string(len) +
                ", expected " + std::to_string(expected->second.numel()));
    Tensor t = Tensor::zeros(expected->second.shape);
    for (std::size_t i = 0; i < len; ++i) {
      std::string tok;
      require(static_cast<bool>(in >> tok),
              "load_model: '" + path + "' truncated inside parameter '" + name + "'");
      double v = 0.0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      require(ec == std::errc{} && p == tok.data() + tok.size() && std::isfinite(v),
              "load_model: bad value '" + tok + "' in parameter '" + name + "'");
      t.values[i] = v;
    }
    in >> std::ws;
    require(loaded.emplace(name, std::move(t)).second,
            "load_model: duplicate parameter '" + name + "'");
  }
  require(loaded.size() == model.params.size(),
          "load_model: '" + path + "' truncated, has " + std::to_string(loaded.size()) +
              " parameters, expected " + std::to_string(model.params.size()));
  model.params = std::move(loaded);
  return model;
}

std::uint64_t params_hash(const UdaModel& model) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, t] : model.params) {
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    h ^= value_hash(t);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace adva
