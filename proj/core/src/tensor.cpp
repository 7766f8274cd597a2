#include "adva/tensor.hpp"

#include <cstring>

namespace adva {

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

Tensor one_hot(const std::vector<int>& labels, std::size_t k) {
  require(k > 0, "one_hot: k must be positive");
  Tensor out = Tensor::zeros({labels.size(), k});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < k,
            "one_hot: label " + std::to_string(labels[i]) + " out of range [0," +
                std::to_string(k) + ") at row " + std::to_string(i));
    out.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return out;
}

Tensor vstack(const Tensor& a, const Tensor& b) {
  require(a.is_matrix() && b.is_matrix(), "vstack: both arguments must be matrices");
  require(a.cols() == b.cols(), "vstack: column mismatch " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
  Tensor out = Tensor::zeros({a.rows() + b.rows(), a.cols()});
  std::copy(a.values.begin(), a.values.end(), out.values.begin());
  std::copy(b.values.begin(), b.values.end(), out.values.begin() + a.values.size());
  return out;
}

Tensor take_rows(const Tensor& m, std::size_t begin, std::size_t end) {
  require(m.is_matrix(), "take_rows: matrix required");
  require(begin < end && end <= m.rows(), "take_rows: bad range [" + std::to_string(begin) +
                                              "," + std::to_string(end) + ") of " +
                                              std::to_string(m.rows()) + " rows");
  std::size_t c = m.cols();
  Tensor out = Tensor::zeros({end - begin, c});
  std::copy(m.values.begin() + begin * c, m.values.begin() + end * c, out.values.begin());
  return out;
}

Tensor gather_rows(const Tensor& m, const std::vector<std::size_t>& idx) {
  require(m.is_matrix(), "gather_rows: matrix required");
  require(!idx.empty(), "gather_rows: empty index list");
  std::size_t c = m.cols();
  Tensor out = Tensor::zeros({idx.size(), c});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < m.rows(), "gather_rows: index out of range");
    std::copy(m.values.begin() + idx[i] * c, m.values.begin() + (idx[i] + 1) * c,
              out.values.begin() + i * c);
  }
  return out;
}

std::uint64_t value_hash(const Tensor& t) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const unsigned char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (std::size_t d : t.shape) {
    std::uint64_t v = d;
    mix(reinterpret_cast<const unsigned char*>(&v), sizeof v);
  }
  for (double x : t.values) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    mix(reinterpret_cast<const unsigned char*>(&bits), sizeof bits);
  }
  return h;
}

}  // namespace adva
