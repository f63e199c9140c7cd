#include "mist/domain.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include "mist/errors.hpp"

namespace mist {

Domain domain_from_index(std::size_t index) {
  if (index >= kNumDomains) {
    throw UsageError("domain index " + std::to_string(index) + " out of range [0,3]");
  }
  return static_cast<Domain>(index);
}

std::string_view domain_name(Domain d) {
  static constexpr std::array<std::string_view, kNumDomains> names{"T1", "T1c", "T2", "F"};
  return names.at(domain_index(d));
}

std::string_view domain_file_stem(Domain d) {
  static constexpr std::array<std::string_view, kNumDomains> stems{"t1", "t1c", "t2", "flair"};
  return stems.at(domain_index(d));
}

Domain parse_domain(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "t1") return Domain::T1;
  if (lower == "t1c") return Domain::T1c;
  if (lower == "t2") return Domain::T2;
  if (lower == "f" || lower == "flair") return Domain::F;
  throw UsageError("unknown domain '" + std::string(text) + "' (expected T1, T1c, T2 or F)");
}

}  // namespace mist
