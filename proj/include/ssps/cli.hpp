#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "ssps/metrics.hpp"

namespace ssps {

// Entry point of the ssps tool. Returns the process exit code: 0 on
// success, 1 on a runtime error, 2 on a usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// `base` if it does not exist yet, otherwise the first free `base.N`.
std::filesystem::path fresh_run_dir(const std::filesystem::path& base);

// Plot-ready series reconstructed from a metrics log alone. Each entry is
// (file name, CSV text).
std::vector<std::pair<std::string, std::string>> report_series(const std::vector<MetricsRow>& rows);

}  // namespace ssps
