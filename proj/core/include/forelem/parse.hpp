#ifndef FORELEM_PARSE_HPP
#define FORELEM_PARSE_HPP

#include <string_view>

#include "forelem/ir.hpp"

namespace forelem::ir {

// Parses DSL text into a validated Program. Loop bounds written 1-based
// inclusive (`for (i = 1 .. N)`, `for (i = N downto 1)`) are normalized to
// 0-based half-open ranges. Throws ParseError with line/column on bad input.
Program parse_program(std::string_view source);

// True when the program has the shape of one of the builtin kernels.
std::optional<KernelKind> recognize_kernel(const Program& p);

} // namespace forelem::ir

#endif // FORELEM_PARSE_HPP
