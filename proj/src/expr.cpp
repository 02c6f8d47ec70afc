#include "tpx/expr.hpp"

#include <cctype>
#include <charconv>
#include <cmath>

#include "tpx/plugin_api.hpp"

namespace tpx::expr {

namespace {

class Parser {
 public:
  Parser(std::string_view src, const Env& env) : src_(src), env_(env) {}

  double parse() {
    double v = sum();
    skip_ws();
    if (pos_ != src_.size()) fail("unexpected '" + std::string(1, src_[pos_]) + "'");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw ToolError("expression '" + std::string(src_) + "': " + why);
  }

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  bool eat(char c) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  double sum() {
    double v = product();
    for (;;) {
      if (eat('+')) {
        v += product();
      } else if (eat('-')) {
        v -= product();
      } else {
        return v;
      }
    }
  }

  double product() {
    double v = unary();
    for (;;) {
      if (eat('*')) {
        v *= unary();
      } else if (eat('/')) {
        double d = unary();
        if (d == 0.0) fail("division by zero");
        v /= d;
      } else {
        return v;
      }
    }
  }

  double unary() {
    if (eat('-')) return -unary();
    if (eat('+')) return unary();
    return primary();
  }

  double primary() {
    skip_ws();
    if (pos_ >= src_.size()) fail("unexpected end of expression");
    char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      double v = sum();
      if (!eat(')')) fail("missing ')'");
      return v;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t begin = pos_;
      while (pos_ < src_.size() &&
             (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.' || src_[pos_] == 'e' ||
              src_[pos_] == 'E' ||
              ((src_[pos_] == '+' || src_[pos_] == '-') && pos_ > begin &&
               (src_[pos_ - 1] == 'e' || src_[pos_ - 1] == 'E')))) {
        ++pos_;
      }
      double v = 0;
      auto [ptr, ec] = std::from_chars(src_.data() + begin, src_.data() + pos_, v);
      if (ec != std::errc{} || ptr != src_.data() + pos_) {
        fail("bad number '" + std::string(src_.substr(begin, pos_ - begin)) + "'");
      }
      return v;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t begin = pos_;
      while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
        ++pos_;
      }
      std::string_view name = src_.substr(begin, pos_ - begin);
      auto it = env_.find(name);
      if (it == env_.end()) fail("undefined variable '" + std::string(name) + "'");
      return it->second;
    }
    fail("unexpected '" + std::string(1, c) + "'");
  }

  std::string_view src_;
  const Env& env_;
  std::size_t pos_ = 0;
};

}  // namespace

double evaluate(std::string_view source, const Env& env) { return Parser(source, env).parse(); }

std::string format_number(double value) {
  if (std::isfinite(value) && std::nearbyint(value) == value && std::fabs(value) < 1e15) {
    return std::to_string(static_cast<long long>(value));
  }
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

}  // namespace tpx::expr
