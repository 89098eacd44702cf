#pragma once

#include <gtest/gtest.h>

#include "mrcine/mrcine.hpp"

namespace mrcine::test {

template <typename R>
CTensor<R> random_c(const Shape& s, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  CTensor<R> t(s);
  for (Index i = 0; i < t.size(); ++i) t[i] = {R(scale * rng.normal()), R(scale * rng.normal())};
  return t;
}

template <typename R>
RTensor<R> random_r(const Shape& s, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  RTensor<R> t(s);
  for (Index i = 0; i < t.size(); ++i) t[i] = R(scale * rng.normal());
  return t;
}

template <typename T>
double rel_diff(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> d = a;
  d -= b;
  return norm(d) / std::max(norm(b), 1e-300);
}

// Small forward model with random maps and a random mask.
template <typename R>
ForwardModel<R> random_model(Index nx, Index ny, Index nc, Index nsets, Index nt, std::uint64_t seed,
                             double density = 0.4) {
  auto maps = random_c<R>({nx, ny, nc, nsets}, seed);
  Rng rng(seed + 99);
  Tensor<std::uint8_t> mask({nx, ny, nt});
  for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.coin(density) ? 1 : 0;
  return ForwardModel<R>(maps, mask);
}

}  // namespace mrcine::test
