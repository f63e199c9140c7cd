#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace mist {

/// MRI modality treated as a translation domain. Indices are fixed.
enum class Domain : std::uint8_t { T1 = 0, T1c = 1, T2 = 2, F = 3 };

inline constexpr std::size_t kNumDomains = 4;
inline constexpr std::array<Domain, kNumDomains> kAllDomains{Domain::T1, Domain::T1c, Domain::T2, Domain::F};

constexpr std::size_t domain_index(Domain d) { return static_cast<std::size_t>(d); }

/// Throws UsageError for index >= 4.
Domain domain_from_index(std::size_t index);

/// "T1", "T1c", "T2", "F".
std::string_view domain_name(Domain d);

/// File stem used on disk: "t1", "t1c", "t2", "flair".
std::string_view domain_file_stem(Domain d);

/// Accepts names and file stems case-insensitively ("F", "flair", "T1c", ...).
Domain parse_domain(std::string_view text);

}  // namespace mist
