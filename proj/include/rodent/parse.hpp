#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "rodent/ast.hpp"

namespace rodent {

class parse_error : public std::runtime_error {
public:
    parse_error(source_span sp, std::string message, std::vector<std::string> expected = {})
        : std::runtime_error(message), span_(sp), message_(std::move(message)),
          expected_(std::move(expected)) {}

    const source_span& span() const { return span_; }
    const std::string& message() const { return message_; }
    const std::vector<std::string>& expected() const { return expected_; }

    /// "line:col: message (expected ...)"
    std::string describe() const;

private:
    source_span span_;
    std::string message_;
    std::vector<std::string> expected_;
};

/// Parses one storage-algebra expression. Name references are classified:
/// names bound by an enclosing generator become variables, all others table
/// references (select/partition condition arguments bind their free name to
/// the element implicitly).
expr_ptr parse(const std::string& text);

/// Parses a `.rsa` program: optional `let NAME = expr` lines followed by one
/// expression; let bindings are inlined into the result.
expr_ptr parse_program(const std::string& text);

/// Canonical text of an expression; parse(format(e)) is structurally e.
std::string format(const expr_ptr& e);

}  // namespace rodent
