#include "mist/log.hpp"

#include <fmt/core.h>

namespace mist {

void log_warning(std::string_view message) { fmt::print(stderr, "warning: {}\n", message); }

void log_info(std::string_view message) { fmt::print(stderr, "{}\n", message); }

}  // namespace mist
