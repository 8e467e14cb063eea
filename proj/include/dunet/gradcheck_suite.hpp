#pragma once

#include "dunet/grad_check.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace dunet {

struct GradCheckCase {
  std::string name;
  std::function<GradCheckReport(std::uint64_t seed, const GradCheckOptions& options)> run;
};

/// One case per primitive op and per building block, all at double precision.
std::vector<GradCheckCase> gradcheck_cases();

/// Runs every case for seeds 1..seeds; one report per case holding the worst seed.
std::vector<GradCheckReport> run_gradcheck_suite(int seeds = 20, const GradCheckOptions& options = {});

/// Aligned "op  max_rel_err  coords  PASS|FAIL" table.
void write_gradcheck_table(std::ostream& os, std::span<const GradCheckReport> reports);

}  // namespace dunet
