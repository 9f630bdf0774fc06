// Copyright 2026 The SEVA Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace seva {

// All numeric work is double precision; matrices are row-major so that a
// T x D feature matrix stores one frame per contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

using Rng = std::mt19937_64;

// Error hierarchy. The CLI maps DataError to exit code 2 and NumericError
// to exit code 3; everything else derived from Error is a usage problem.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Intelligibility subgroup. Lower index means more severe impairment.
enum class SeverityLevel : std::uint8_t { kVeryLow = 0, kLow = 1, kMid = 2, kHigh = 3 };

inline constexpr std::size_t kNumSeverities = 4;
inline constexpr std::array<SeverityLevel, kNumSeverities> kAllSeverities = {
    SeverityLevel::kVeryLow, SeverityLevel::kLow, SeverityLevel::kMid, SeverityLevel::kHigh};

constexpr std::size_t to_index(SeverityLevel s) { return static_cast<std::size_t>(s); }
SeverityLevel severity_from_index(std::size_t i);
/// Short table names: VL, L, M, H.
std::string_view severity_name(SeverityLevel s);
SeverityLevel parse_severity(std::string_view name);

// Deterministic seed derivation for per-item substreams.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// 64-bit FNV-1a, used for content addressing of artifacts.
std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t v);

/// Fisher-Yates permutation of [0, n) driven by `rng`.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

double uniform01(Rng& rng);
double gaussian(Rng& rng);

// Little-endian binary helpers shared by the archive and checkpoint formats.
namespace binio {
void write_u32(std::ostream& os, std::uint32_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
void write_magic(std::ostream& os, std::string_view magic);
void write_string(std::ostream& os, std::string_view s);
std::uint32_t read_u32(std::istream& is);
float read_f32(std::istream& is);
double read_f64(std::istream& is);
void expect_magic(std::istream& is, std::string_view magic);
std::string read_string(std::istream& is);
}  // namespace binio

}  // namespace seva
