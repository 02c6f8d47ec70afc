#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tpx {

enum class ErrorCode {
  MalformedToolSyntax,
  UnclosedToolRegion,
  UnknownTool,
  DuplicateName,
  InvalidDescriptor,
  StartupFailure,
  ToolRuntimeError,
  IncompleteInput,
  JobTerminal,
  DrainTimeout,
  TraceExhausted,
  StreamBroken,
  MaxRoundsExceeded,
  ModelIllFormed,
  DegenerateModel,
  InvalidConfig,
  ParserFinalized,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-readable code. Used for contract violations and
/// configuration errors; recoverable tool-level failures travel as Observations.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tpx
