#pragma once

#include <map>
#include <string>
#include <vector>

#include "rodent/ast.hpp"
#include "rodent/eval.hpp"

namespace rodent {

struct bind_error {
    source_span span;
    std::string message;
};

struct bind_env {
    std::map<std::string, std::vector<column_def>> tables;

    static bind_env of(const logical_table& t) {
        bind_env e;
        e.tables[t.name] = t.schema;
        return e;
    }
};

/// Static name checks: unbound variables, unknown tables, unknown transform
/// names, transform arity, and unknown labels where a record shape is
/// derivable. Returns every problem found; empty means ok.
std::vector<bind_error> bind_check(const expr_ptr& e, const bind_env& env);

}  // namespace rodent
