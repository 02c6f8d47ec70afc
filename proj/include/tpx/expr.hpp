#pragma once

#include <map>
#include <string>
#include <string_view>

namespace tpx::expr {

using Env = std::map<std::string, double, std::less<>>;

/// Evaluates `+ - * / ( )`, unary sign, decimal literals and variable
/// references. Throws ToolError on syntax errors, undefined variables and
/// division by zero.
double evaluate(std::string_view source, const Env& env = {});

/// Integral values up to 1e15 print without a fraction ("140200"); anything
/// else uses the shortest round-trip representation ("3.1").
std::string format_number(double value);

}  // namespace tpx::expr
