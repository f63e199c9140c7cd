#pragma once

#include <string_view>

namespace mist {

/// Writes "warning: <message>" to stderr.
void log_warning(std::string_view message);

/// Writes "<message>" to stderr.
void log_info(std::string_view message);

}  // namespace mist
