// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace clue {

/// Fisher-Yates with engine outputs consumed directly, so shuffles replay
/// identically on every platform (std::shuffle's draw pattern is
/// implementation-defined; the raw mt19937_64 stream is not).
template <typename T>
void deterministic_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);  // bias is ~2^-64, irrelevant here
    std::swap(items[i - 1], items[j]);
  }
}

/// Uniform sample of n distinct items via a partial Fisher-Yates over an
/// index vector; order of the sample is the draw order. n is clamped to the
/// source size.
template <typename T>
std::vector<T> sample_without_replacement(const std::vector<T>& source, std::size_t n,
                                          std::mt19937_64& rng) {
  std::vector<std::size_t> indices(source.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  n = std::min(n, indices.size());
  std::vector<T> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = k + static_cast<std::size_t>(rng() % (indices.size() - k));
    std::swap(indices[k], indices[j]);
    out.push_back(source[indices[k]]);
  }
  return out;
}

}  // namespace clue
