#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rodent/ast.hpp"
#include "rodent/types.hpp"

namespace rodent {

class eval_error : public std::runtime_error {
public:
    eval_error(source_span sp, std::string message)
        : std::runtime_error(message), span_(sp) {}
    const source_span& span() const { return span_; }

private:
    source_span span_;
};

/// Best-effort element shape, used to resolve labels through transforms.
struct shape {
    enum class s_kind : std::uint8_t { unknown, scalar, record, list };
    s_kind kind = s_kind::unknown;
    std::vector<std::string> labels;     // record only; empty = labels unknown
    std::shared_ptr<shape> element;      // list only; null = element unknown

    static shape unknown() { return {}; }
    static shape scalar();
    static shape record(std::vector<std::string> labels);
    static shape list_of(shape element);

    bool is_list() const { return kind == s_kind::list; }
    const shape& elem() const;
    std::optional<std::size_t> label_index(const std::string& name) const;
};

/// Infers the shape of an expression given variable shapes and table schemas.
shape infer_shape(const expr_ptr& e,
                  const std::map<std::string, shape>& var_shapes,
                  const std::function<const std::vector<column_def>*(const std::string&)>&
                      table_lookup);

struct binding {
    value val;
    std::int64_t position = 0;  // zero-based index within the generator source
    shape sh;
};

/// Evaluation environment: tables plus lexical variable scopes.
struct env {
    std::map<std::string, const logical_table*> tables;

    const binding* lookup(const std::string& name) const;
    std::map<std::string, shape> var_shapes() const;

    void push_scope();
    void pop_scope();
    void bind(const std::string& name, binding b);

    std::vector<std::map<std::string, binding>> scopes;
};

// --- grid side channel -------------------------------------------------------

struct grid_dim {
    std::string attr;
    double stride = 1.0;
    double origin = 0.0;
    std::int64_t cell_count = 0;
};

struct grid_cell_info {
    std::vector<std::int64_t> index;  // one coordinate per dimension
    std::vector<double> mins, maxs;   // per gridded attribute; empty cell: mins > maxs
    std::uint64_t count = 0;
};

/// Structure metadata produced by grid/partitionby and carried through zorder
/// and element-wise comprehensions; feeds the cell directory at render time.
struct grid_info {
    std::vector<grid_dim> dims;
    std::vector<grid_cell_info> cells;  // parallel to the cells of the value, stored order
    std::vector<std::string> record_labels;
    bool morton = false;
};

struct eval_context {
    std::optional<grid_info> grid;
};

// --- evaluation --------------------------------------------------------------

/// Evaluates a layout expression to a value. Qualifiers apply left to right;
/// generators nest with the rightmost varying fastest.
value eval(const expr_ptr& e, env& en, eval_context* ctx = nullptr);

/// Evaluates a boolean expression (conditions).
bool eval_condition(const expr_ptr& e, env& en);

// --- engine-level layouts ------------------------------------------------------

value row_layout(const logical_table& t);
value column_layout(const logical_table& t);
expr_ptr row_layout_expr(const logical_table& t);
expr_ptr column_layout_expr(const logical_table& t);

// --- transforms (value-level entry points used by tests and the engine) -------

value transform_project(const std::vector<std::string>& attrs, const value& n,
                        const std::vector<std::string>& labels);
value transform_append(const value& elements, const value& n);
value transform_fold(const std::vector<std::string>& b_attrs,
                     const std::vector<std::string>& a_attrs, const value& n,
                     const std::vector<std::string>& labels);
/// Hash-based fold; must agree element-for-element with transform_fold.
value transform_fold_hashed(const std::vector<std::string>& b_attrs,
                            const std::vector<std::string>& a_attrs, const value& n,
                            const std::vector<std::string>& labels);
value transform_unfold(const value& n);
value transform_delta(const value& n);
value transform_zorder(const value& n);
value transform_transpose(const value& n);

struct grid_spec_dim {
    std::string attr;
    double stride = 1.0;
    std::optional<double> origin;  // default: data minimum
};
value transform_grid(const std::vector<grid_spec_dim>& dims, const value& n,
                     const std::vector<std::string>& labels, grid_info* info_out = nullptr);

// --- helpers -------------------------------------------------------------------

/// Interleaves the bits of a and b, a contributing the more significant bit
/// of each pair; widths are padded to the wider of the two.
std::uint64_t morton_code(std::uint64_t a, std::uint64_t b);

/// Total order over values: kind rank, then content; lists lexicographic.
/// Used for deterministic keyed grouping, not exposed as algebra semantics.
bool value_less(const value& a, const value& b);

/// Comparison for orderby keys; throws eval_error on list-valued keys.
bool order_key_less(const value& a, const value& b, source_span sp);

// --- physical representation (φ) -------------------------------------------------

struct structure_node {
    std::uint32_t depth = 0;
    std::uint64_t child_count = 0;
    // (depth, child_count) alone cannot tell [1, []] from [[], 1]; the leaf
    // marker keeps flatten/unflatten a bijection.
    bool is_list = false;
    bool operator==(const structure_node&) const = default;
};

/// Flat entry list plus nesting structure, leftmost-first recursive order.
struct physical_representation {
    std::vector<value> entries;            // scalar leaves
    std::vector<structure_node> structure; // preorder list nodes
};

physical_representation flatten(const value& v);
value unflatten(const physical_representation& rep);

}  // namespace rodent
