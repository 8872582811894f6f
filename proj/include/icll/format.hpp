#pragma once

#include <string>

namespace icll {

// Shortest decimal text that round-trips to the same double; "nan", "inf",
// "-inf" for non-finite values. Output is locale-independent.
std::string format_number(double value);
// Shortest text that round-trips to the same float.
std::string format_number(float value);

// Parses a full string as a double; throws SpecError naming `what` on failure.
double parse_number(const std::string& text, const std::string& what);

}  // namespace icll
