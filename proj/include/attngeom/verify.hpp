#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attngeom/training.hpp"
#include "attngeom/transformer.hpp"

namespace attngeom {

struct PropertyResult {
  std::string name;
  bool passed;
  double margin;       // distance from the failure boundary; > 0 when passing
  std::string detail;  // human-readable measurement
};

struct SuiteResult {
  std::string suite;
  std::vector<PropertyResult> properties;
  bool passed() const;
};

/// suite in {scores, gradients, ratios, counting, tails, all}. Deterministic
/// for a fixed seed. Throws std::invalid_argument on an unknown suite name.
std::vector<SuiteResult> run_verification(const std::string& suite, std::uint64_t seed);

/// Analytic gradients vs central finite differences (h = 1e-5) over every
/// parameter tensor; per-entry relative error |a-n| / max(|a|,|n|,1e-3).
/// Returns the maximum over all entries.
double gradcheck_max_rel_error(const ModelConfig& config, Objective objective,
                               std::uint64_t seed);

/// Worker cap from ATTN_GEOM_THREADS (0 or unset = hardware concurrency).
std::size_t worker_count();

}  // namespace attngeom
