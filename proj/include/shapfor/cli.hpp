#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "shapfor/oracle.hpp"
#include "shapfor/sampler.hpp"

namespace shapfor {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitRuntime = 3;

/// Entry point of the `shapfor` tool. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Piecewise-constant black box returning the response of the nearest data
/// row, with distances measured after min-max scaling of each input.
BlackBox nearest_neighbour_box(const Dataset& data);

/// Worker count: SHAPFOR_THREADS if set, else the hardware concurrency.
unsigned default_threads();

}  // namespace shapfor
