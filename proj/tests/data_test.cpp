#include <fstream>

#include "doctest.h"
#include "test_support.hpp"

using namespace adva;
using namespace testsup;

TEST_CASE("generator: no shift means matched domains") {
  ShiftSpec spec = default_shift(3);
  spec.rotation_angle = 0.0;
  auto [src, tgt] = make_shifted_datasets(spec);
  CentroidClassifier clf = CentroidClassifier::fit(src);
  double acc_s = clf.accuracy(src.features, src.labels);
  double acc_t = clf.accuracy(tgt.features, tgt.labels);
  CHECK(std::fabs(acc_s - acc_t) <= 0.05);
}

TEST_CASE("generator: rotation pi swaps clusters across the origin") {
  // With 3 classes at 120 degrees, a half-turn puts every target cluster
  // equidistant from the two wrong source clusters, so a source-fitted
  // classifier can hardly ever pick the true class.
  ShiftSpec spec = default_shift(3);
  spec.rotation_angle = 3.14159265358979323846;
  auto [src, tgt] = make_shifted_datasets(spec);
  CentroidClassifier clf = CentroidClassifier::fit(src);
  CHECK(clf.accuracy(tgt.features, tgt.labels) <= 0.40);
}

TEST_CASE("generator: identical seeds give bit-identical datasets") {
  ShiftSpec spec = default_shift(11);
  auto [s1, t1] = make_shifted_datasets(spec);
  auto [s2, t2] = make_shifted_datasets(spec);
  CHECK(s1.features.values == s2.features.values);
  CHECK(t1.features.values == t2.features.values);
  CHECK(s1.labels == s2.labels);
  CHECK(t1.labels == t2.labels);
}

TEST_CASE("generator: empirical noise deviation tracks sigma within 15%") {
  ShiftSpec spec;
  spec.num_classes = 3;
  spec.samples_per_class_source = 400;  // 1200 samples
  spec.samples_per_class_target = 2;
  spec.feature_dim = 4;
  spec.noise_sigma = 0.3;
  spec.seed = 21;
  auto [src, tgt] = make_shifted_datasets(spec);
  // per class and per coordinate, the spread around the class mean is the
  // configured noise level
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t j = 0; j < spec.feature_dim; ++j) {
      double mean = 0.0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < src.size(); ++i) {
        if (static_cast<std::size_t>(src.labels[i]) != c) continue;
        mean += src.features.at(i, j);
        ++n;
      }
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < src.size(); ++i) {
        if (static_cast<std::size_t>(src.labels[i]) != c) continue;
        double d = src.features.at(i, j) - mean;
        var += d * d;
      }
      double sd = std::sqrt(var / static_cast<double>(n));
      CHECK(sd == doctest::Approx(spec.noise_sigma).epsilon(0.15));
    }
  }
}

TEST_CASE("generator: invalid specs are rejected") {
  ShiftSpec bad = default_shift();
  bad.feature_dim = 1;
  CHECK_THROWS_AS(make_shifted_domains(bad), Error);
  bad = default_shift();
  bad.noise_sigma = 0.0;
  CHECK_THROWS_AS(make_shifted_domains(bad), Error);
  bad = default_shift();
  bad.translation = {1.0, 2.0, 3.0};
  CHECK_THROWS_AS(make_shifted_domains(bad), Error);
}

TEST_CASE("persistence: save/load round trip is exact field for field") {
  auto [src, tgt] = make_shifted_datasets(default_shift(31));
  std::string path = temp_path("roundtrip.ds");
  save_dataset(src, path);
  LabeledDataset back = load_dataset(path);
  CHECK(back.features.values == src.features.values);
  CHECK(back.labels == src.labels);
  CHECK(back.num_classes == src.num_classes);
  CHECK(back.domain_name == src.domain_name);
  // generator provenance goes to the sidecar
  std::ifstream side(path + ".meta.json");
  CHECK(side.good());
}

TEST_CASE("persistence: property round trip over 50 random datasets") {
  for (std::uint64_t i = 0; i < 50; ++i) {
    Rng rng(seed_combine(777, i));
    ShiftSpec spec;
    spec.num_classes = 2 + rng.index(4);
    spec.samples_per_class_source = 2 + rng.index(8);
    spec.samples_per_class_target = 2;
    spec.feature_dim = 2 + rng.index(5);
    spec.rotation_angle = rng.uniform(-3.0, 3.0);
    spec.scale = rng.uniform(0.5, 2.0);
    spec.noise_sigma = rng.uniform(0.05, 0.8);
    spec.seed = rng.next();
    auto [src, tgt] = make_shifted_datasets(spec);
    std::string path = temp_path("prop.ds");
    save_dataset(src, path);
    LabeledDataset back = load_dataset(path);
    CHECK(back.features.values == src.features.values);
    CHECK(back.labels == src.labels);
  }
}

TEST_CASE("persistence: malformed files are rejected with positions") {
  std::string path = temp_path("bad.ds");

  auto write = [&](const std::string& text) {
    std::ofstream f(path);
    f << text;
  };

  write("ADVA-DS v1 n=2 d=2 k=2 domain=x\n2,0.5,0.5\n0,1,1\n");  // label == k
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("label 2 out of range"), Error);

  write("ADVA-DS v1 n=1 d=2 k=1 domain=x\n0\n");  // empty feature section
  CHECK_THROWS_AS(load_dataset(path), Error);

  write("ADVA-DS v1 n=3 d=2 k=2 domain=x\n0,1,1\n1,2,2\n");  // truncated
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("line 4"), Error);

  write("ADVA-DS v2 n=1 d=1 k=1 domain=x\n0,1\n");  // wrong version
  CHECK_THROWS_AS(load_dataset(path), Error);

  write("ADVA-DS v1 n=1 d=2 k=1 domain=x\n0,1,2,3\n");  // too many features
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("more than 2"), Error);

  write("ADVA-DS v1 n=1 d=2 k=1 domain=x\n0,1,oops\n");  // bad float
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("offset"), Error);
}

TEST_CASE("split: stratified counts, determinism and degenerate fraction") {
  ShiftSpec spec = default_shift(5);
  spec.samples_per_class_source = 10;
  auto [src, tgt] = make_shifted_datasets(spec);

  auto [left, right] = split(src, 0.5, 9);
  for (std::size_t c = 0; c < 3; ++c) {
    auto count = [&](const LabeledDataset& ds) {
      std::size_t n = 0;
      for (int l : ds.labels)
        if (static_cast<std::size_t>(l) == c) ++n;
      return n;
    };
    CHECK(count(left) == 5);
    CHECK(count(right) == 5);
  }

  auto [l2, r2] = split(src, 0.5, 9);
  CHECK(l2.features.values == left.features.values);

  ShiftSpec tiny = default_shift(5);
  tiny.samples_per_class_source = 2;
  auto [small_src, small_tgt] = make_shifted_datasets(tiny);
  CHECK_THROWS_AS(split(small_src, 0.99, 1), Error);
}

TEST_CASE("label gate: evaluation reads are tallied, training reads trip it") {
  DomainPair pair = make_shifted_domains(default_shift(17));
  CHECK(pair.gated());
  CHECK(pair.gate_counts().eval_reads == 0);
  CHECK(pair.gate_counts().other_reads == 0);

  (void)pair.target_labels(GateScope::Evaluation);
  CHECK(pair.gate_counts().eval_reads == 1);
  CHECK(pair.gate_counts().other_reads == 0);

  // a cheating path that routes target labels into a training batch
  Batch leaked{pair.target_features(), pair.target_labels(GateScope::Other)};
  CHECK(leaked.labels.size() == pair.target_size());
  CHECK(pair.gate_counts().other_reads == 1);

  pair.reset_gate();
  CHECK(pair.gate_counts().eval_reads == 0);
}

TEST_CASE("label gate: training a model performs no target-label reads") {
  DomainPair pair = make_shifted_domains(default_shift(19));
  UdaModel model = init_model(Method::Dann, Dims{4, 16, 8, 3}, 19);
  TrainConfig tc = quick_train(3);
  (void)train_uda(model, pair, tc);
  CHECK(pair.gate_counts().other_reads == 0);
  CHECK(pair.gate_counts().eval_reads == 0);  // train_uda never evaluates the target
}

TEST_CASE("domain pair: mismatched domains are rejected") {
  auto [a_src, a_tgt] = make_shifted_datasets(default_shift(3));
  ShiftSpec other = default_shift(3);
  other.feature_dim = 5;
  auto [b_src, b_tgt] = make_shifted_datasets(other);
  CHECK_THROWS_AS(DomainPair(a_src, b_tgt, true), Error);
}
