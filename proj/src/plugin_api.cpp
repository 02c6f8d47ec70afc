#include "tpx/plugin_api.hpp"

namespace tpx {

std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::Line: return "line";
    case Granularity::Field: return "field";
    case Granularity::Stage: return "stage";
    case Granularity::WholeCall: return "whole_call";
  }
  return "?";
}

std::string_view to_string(StartCondition s) {
  return s == StartCondition::OnRegionOpen ? "on_region_open" : "on_name_parsed";
}

void validate(const PluginDescriptor& d) {
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::InvalidDescriptor, "plugin '" + d.name + "': " + why);
  };
  if (d.name.empty()) fail("empty name");
  if (d.binding.key.empty()) fail("empty binding key");
  GrammarId expected = GrammarId::Fence;
  switch (d.granularity) {
    case Granularity::Line: expected = GrammarId::Fence; break;
    case Granularity::Field:
    case Granularity::WholeCall: expected = GrammarId::Call; break;
    case Granularity::Stage: expected = GrammarId::Plan; break;
  }
  if (d.binding.grammar != expected) {
    fail(std::string(to_string(d.granularity)) + " granularity needs a " + std::string(to_string(expected)) +
         " binding");
  }
  if (d.start == StartCondition::OnNameParsed && d.binding.grammar != GrammarId::Call) {
    fail("on_name_parsed requires a call binding");
  }
}

PartialResult PartialResult::abort(std::string reason) {
  if (reason.empty()) reason = "aborted";
  return {PartialStatus::Abort, std::move(reason)};
}

void Registry::register_plugin(PluginDescriptor descriptor, ToolFactory factory) {
  validate(descriptor);
  if (!factory) throw Error(ErrorCode::InvalidDescriptor, "plugin '" + descriptor.name + "': no factory");
  if (entries_.count(descriptor.name)) {
    throw Error(ErrorCode::DuplicateName, "plugin '" + descriptor.name + "' already registered");
  }
  if (by_binding_.count(descriptor.binding)) {
    throw Error(ErrorCode::DuplicateName, "binding '" + descriptor.binding.key + "' already taken by '" +
                                              by_binding_.at(descriptor.binding) + "'");
  }
  by_binding_.emplace(descriptor.binding, descriptor.name);
  std::string name = descriptor.name;
  entries_.emplace(std::move(name), Entry{std::move(descriptor), std::move(factory)});
}

const PluginDescriptor* Registry::find(const Binding& binding) const noexcept {
  auto it = by_binding_.find(binding);
  if (it == by_binding_.end()) return nullptr;
  return &entries_.find(it->second)->second.descriptor;
}

const PluginDescriptor& Registry::lookup(const Binding& binding) const {
  if (const auto* d = find(binding)) return *d;
  throw Error(ErrorCode::UnknownTool, "no tool bound to " + std::string(to_string(binding.grammar)) + " '" +
                                          binding.key + "'");
}

const PluginDescriptor* Registry::find_name(std::string_view name) const noexcept {
  auto it = entries_.find(name);
  return it == entries_.end() ? nullptr : &it->second.descriptor;
}

std::unique_ptr<ToolPlugin> Registry::create(std::string_view name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error(ErrorCode::UnknownTool, "unknown tool '" + std::string(name) + "'");
  return it->second.factory();
}

Grammar Registry::grammar_for(GrammarId id) const {
  switch (id) {
    case GrammarId::Fence: {
      std::map<std::string, std::string> tools;
      for (const auto& [binding, name] : by_binding_) {
        if (binding.grammar == GrammarId::Fence) tools.emplace(binding.key, name);
      }
      return Grammar::fence(std::move(tools));
    }
    case GrammarId::Call: return Grammar::call();
    case GrammarId::Plan: return Grammar::plan();
  }
  return Grammar::call();
}

std::vector<PluginDescriptor> Registry::descriptors() const {
  std::vector<PluginDescriptor> out;
  out.reserve(entries_.size());
  for (const auto& [_, e] : entries_) out.push_back(e.descriptor);
  return out;
}

}  // namespace tpx
