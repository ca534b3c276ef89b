#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rodent/types.hpp"

namespace rodent {

/// Byte range plus line/column of its start, both 1-based.
struct source_span {
    std::uint32_t start = 0;
    std::uint32_t end = 0;
    std::uint32_t line = 1;
    std::uint32_t column = 1;
};

class expr;
using expr_ptr = std::shared_ptr<const expr>;

enum class expr_kind : std::uint8_t {
    literal,     // scalar or fully-literal list
    bool_lit,    // true / false (condition contexts only)
    table_ref,
    var_ref,
    field_access,
    comprehension,
    transform,
    list_ctor,   // [e1, e2, ...] with non-literal elements (e.g. column layouts)
    arith,
    helper_call,
};

enum class arith_op : std::uint8_t {
    add, sub, mul, div, mod,
    eq, ne, lt, le, gt, ge,
    logic_and, logic_or, logic_not,
    neg,
};

const char* arith_op_text(arith_op op);

enum class helper_kind : std::uint8_t { pos, count, bin, interleave, zip };

const char* helper_name(helper_kind h);
std::optional<helper_kind> helper_from_name(const std::string& name);

/// Transform names form a closed set plus a registration hook.
bool is_known_transform(const std::string& name);
void register_transform_name(const std::string& name);

struct order_key {
    expr_ptr key;
    bool descending = false;
};

struct partition_key {
    expr_ptr key;
    value stride;  // numeric literal
};

struct qualifier {
    enum class q_kind : std::uint8_t {
        generator, condition, order_by, group_by, partition_by, limit
    };
    q_kind kind;
    std::string var;                   // generator
    expr_ptr e;                        // generator source / condition / group key / limit count
    std::vector<order_key> keys;       // order_by
    std::vector<partition_key> parts;  // partition_by

    static qualifier generator(std::string v, expr_ptr source);
    static qualifier condition(expr_ptr cond);
    static qualifier order_by(std::vector<order_key> keys);
    static qualifier group_by(expr_ptr key);
    static qualifier partition_by(std::vector<partition_key> parts);
    static qualifier limit(expr_ptr count);
};

/// Static (bracket) argument of a transform, e.g. `lat:0.01` or `Addr; Area`.
struct static_arg {
    enum class a_kind : std::uint8_t { ident, number, keyed, split };
    a_kind kind;
    std::string name;             // ident / keyed name / first of split
    std::string name2;            // second of split
    value num;                    // number / keyed stride
    std::optional<value> origin;  // keyed only: explicit origin

    static static_arg ident(std::string n);
    static static_arg number(value v);
    static static_arg keyed(std::string n, value stride,
                            std::optional<value> origin = std::nullopt);
    static static_arg split(std::string before, std::string after);
};

class expr : public std::enable_shared_from_this<expr> {
public:
    expr_kind kind() const { return kind_; }
    const source_span& span() const { return span_; }

    const value& literal_value() const { return lit_; }
    bool bool_value() const { return bval_; }
    const std::string& name() const { return name_; }  // table/var/label/transform
    const expr_ptr& base() const { return base_; }     // field_access
    const std::vector<expr_ptr>& children() const { return children_; }
    const std::vector<qualifier>& qualifiers() const { return quals_; }
    const std::vector<static_arg>& static_args() const { return args_; }
    arith_op op() const { return op_; }
    helper_kind helper() const { return helper_; }

    // -- factories ---------------------------------------------------------
    static expr_ptr literal(value v, source_span sp = {});
    static expr_ptr boolean(bool b, source_span sp = {});
    static expr_ptr table_ref(std::string name, source_span sp = {});
    static expr_ptr var_ref(std::string name, source_span sp = {});
    static expr_ptr field_access(expr_ptr base, std::string label, source_span sp = {});
    static expr_ptr comprehension(std::vector<expr_ptr> heads, std::vector<qualifier> quals,
                                  source_span sp = {});
    static expr_ptr transform(std::string name, std::vector<static_arg> args,
                              std::vector<expr_ptr> inputs, source_span sp = {});
    static expr_ptr list_ctor(std::vector<expr_ptr> elements, source_span sp = {});
    static expr_ptr arith(arith_op op, std::vector<expr_ptr> operands, source_span sp = {});
    static expr_ptr helper_call(helper_kind h, std::vector<expr_ptr> args, source_span sp = {});

    /// Rebuilds this node with a replaced name kind (var <-> table ref).
    static expr_ptr rename_ref(const expr_ptr& node, expr_kind new_kind);

private:
    expr() = default;
    static std::shared_ptr<expr> make() { return std::shared_ptr<expr>(new expr()); }

    expr_kind kind_ = expr_kind::literal;
    source_span span_;
    value lit_;
    bool bval_ = false;
    std::string name_;
    expr_ptr base_;
    std::vector<expr_ptr> children_;
    std::vector<qualifier> quals_;
    std::vector<static_arg> args_;
    arith_op op_ = arith_op::add;
    helper_kind helper_ = helper_kind::pos;
};

/// Deep structural equality ignoring source spans.
bool structurally_equal(const expr_ptr& a, const expr_ptr& b);

/// Field label list of `fold[B; A]`-style args: (before-split, after-split).
std::pair<std::vector<std::string>, std::vector<std::string>>
split_static_args(const std::vector<static_arg>& args);

}  // namespace rodent
