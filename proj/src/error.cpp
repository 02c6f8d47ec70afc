#include "tpx/error.hpp"

namespace tpx {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedToolSyntax: return "MalformedToolSyntax";
    case ErrorCode::UnclosedToolRegion: return "UnclosedToolRegion";
    case ErrorCode::UnknownTool: return "UnknownTool";
    case ErrorCode::DuplicateName: return "DuplicateName";
    case ErrorCode::InvalidDescriptor: return "InvalidDescriptor";
    case ErrorCode::StartupFailure: return "StartupFailure";
    case ErrorCode::ToolRuntimeError: return "ToolRuntimeError";
    case ErrorCode::IncompleteInput: return "IncompleteInput";
    case ErrorCode::JobTerminal: return "JobTerminal";
    case ErrorCode::DrainTimeout: return "DrainTimeout";
    case ErrorCode::TraceExhausted: return "TraceExhausted";
    case ErrorCode::StreamBroken: return "StreamBroken";
    case ErrorCode::MaxRoundsExceeded: return "MaxRoundsExceeded";
    case ErrorCode::ModelIllFormed: return "ModelIllFormed";
    case ErrorCode::DegenerateModel: return "DegenerateModel";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ParserFinalized: return "ParserFinalized";
  }
  return "?";
}

}  // namespace tpx
