/*
 * Copyright 2026 The FedSim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedsim {

using Rng = std::mt19937_64;

// Stage tags for keyed random streams. Every consumer of randomness derives
// its own stream from (run seed, tag, ids...) so that execution order and
// worker count never change results.
enum class Stream : std::uint64_t {
  kClientData = 1,
  kTestData = 2,
  kModelInit = 3,
  kLocalTrain = 4,
  kSelection = 5,
  kBiasedModel = 6,
  kAttributeModel = 7,
  kPretrain = 8,
  kProjection = 9,
  kClustering = 10,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, Stream stream,
                                 std::initializer_list<std::uint64_t> keys = {}) {
  std::uint64_t h = splitmix64(base ^ splitmix64(static_cast<std::uint64_t>(stream)));
  for (std::uint64_t k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t base, Stream stream,
                    std::initializer_list<std::uint64_t> keys = {}) {
  return Rng(derive_seed(base, stream, keys));
}

// Uniform double in [0, 1) built from the top 53 bits; unlike
// std::uniform_real_distribution this is identical across standard libraries.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n) by rejection.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

}  // namespace fedsim
