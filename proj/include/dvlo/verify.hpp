#pragma once

// Self-check suites behind `dvlo verify`.

#include "dvlo/config.hpp"
#include "dvlo/dataio.hpp"
#include "dvlo/params.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dvlo {

struct CheckLine {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SuiteResult {
  std::string suite;
  std::vector<CheckLine> checks;

  bool passed() const;
};

std::vector<std::string> verify_suite_names();

/// Runs one suite ("all" runs every suite). Throws std::invalid_argument on
/// an unknown name.
std::vector<SuiteResult> run_verify(const std::string& suite, std::uint64_t seed);

/// Small configuration for gradient checks and unit tests: 2 levels, 4
/// channels, 4x32 pseudo-image.
Config toy_config();

/// Toy sequence matching toy_config (32x16 images).
SequenceBundle toy_sequence(int frames, std::uint64_t seed);

/// Replaces every parameter value with N(0, scale^2) draws.
void randomize_params(ModelParams& params, std::uint64_t seed, double scale);

}  // namespace dvlo
