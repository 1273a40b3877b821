#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "bdg/tensor.hpp"

namespace bdg::test {

template <typename T = double>
Tensor<T> randn(Shape s, std::mt19937_64& rng, double sd = 1.0) {
  Tensor<T> t(s);
  std::normal_distribution<double> d(0.0, sd);
  for (T& v : t.data_mut()) v = static_cast<T>(d(rng));
  return t;
}

template <typename T>
std::vector<T> values(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

inline Tensor<double> mat(std::int64_t rows, std::int64_t cols, std::vector<double> v) {
  return Tensor<double>(Shape::matrix(rows, cols), std::move(v));
}

}  // namespace bdg::test
