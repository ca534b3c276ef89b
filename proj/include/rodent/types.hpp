#pragma once

#include <bit>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace rodent {

/// Scalar kinds supported by the data model.
enum class scalar_kind : std::uint8_t {
    int64 = 0,
    float64 = 1,
    str = 2,
};

const char* scalar_kind_name(scalar_kind k);

/// Parses "int" | "float" | "string" (as used in schema text).
std::optional<scalar_kind> scalar_kind_from_name(const std::string& name);

class nested_type;

/// A type tree: scalar | label:inner | nesting of children.
class nested_type {
public:
    enum class node_kind : std::uint8_t { scalar, labeled, nesting };

    static nested_type scalar(scalar_kind k) {
        nested_type t;
        t.kind_ = node_kind::scalar;
        t.scalar_ = k;
        return t;
    }
    static nested_type labeled(std::string label, nested_type inner);
    static nested_type nesting(std::vector<nested_type> children);

    node_kind kind() const { return kind_; }
    scalar_kind scalar_type() const { return scalar_; }
    const std::string& label() const { return label_; }
    const nested_type& inner() const { return children_.front(); }
    const std::vector<nested_type>& children() const { return children_; }

    bool operator==(const nested_type& other) const;

private:
    nested_type() = default;

    node_kind kind_ = node_kind::scalar;
    scalar_kind scalar_ = scalar_kind::int64;
    std::string label_;                  // labeled only
    std::vector<nested_type> children_;  // labeled: exactly one; nesting: any
};

/// A runtime value: 64-bit int, binary64 float, UTF-8 string, or ordered list.
class value {
public:
    using list = std::vector<value>;

    value() : data_(std::int64_t{0}) {}
    value(std::int64_t v) : data_(v) {}
    value(int v) : data_(std::int64_t{v}) {}
    value(double v) : data_(v) {}
    value(std::string v) : data_(std::move(v)) {}
    value(const char* v) : data_(std::string(v)) {}
    value(list v) : data_(std::move(v)) {}

    bool is_int() const { return std::holds_alternative<std::int64_t>(data_); }
    bool is_float() const { return std::holds_alternative<double>(data_); }
    bool is_str() const { return std::holds_alternative<std::string>(data_); }
    bool is_list() const { return std::holds_alternative<list>(data_); }
    bool is_scalar() const { return !is_list(); }
    bool is_numeric() const { return is_int() || is_float(); }

    std::int64_t as_int() const { return std::get<std::int64_t>(data_); }
    double as_float() const { return std::get<double>(data_); }
    const std::string& as_str() const { return std::get<std::string>(data_); }
    const list& children() const { return std::get<list>(data_); }
    list& children() { return std::get<list>(data_); }

    /// Numeric value widened to double (int or float).
    double as_double() const { return is_int() ? static_cast<double>(as_int()) : as_float(); }

    std::size_t size() const { return children().size(); }
    const value& operator[](std::size_t i) const { return children()[i]; }

    /// Structural equality. Floats compare bitwise.
    bool operator==(const value& other) const;
    bool operator!=(const value& other) const { return !(*this == other); }

    /// Renders the value as algebra-literal text, e.g. `[[1, 2], "a"]`.
    std::string to_string() const;

private:
    std::variant<std::int64_t, double, std::string, list> data_;
};

/// Canonical text for a scalar: ints as decimal, floats shortest round-trip
/// with a forced '.'/'e', strings double-quoted with escapes.
std::string scalar_to_string(const value& v);

/// A named attribute of a table schema.
struct column_def {
    std::string name;
    scalar_kind type = scalar_kind::int64;

    bool operator==(const column_def&) const = default;
};

/// A flat relational table: named columns of scalars, ordered records.
struct logical_table {
    std::string name;
    std::vector<column_def> schema;
    std::vector<value> records;  // each a list conforming to the schema

    std::optional<std::size_t> column_index(const std::string& attr) const;
};

/// True iff `label` is a valid identifier: [A-Za-z_][A-Za-z0-9_]*.
bool valid_identifier(const std::string& label);

/// Total conformance check: value shape and scalar kinds match the type tree.
bool conforms(const value& v, const nested_type& t);

/// Builds the schema type (nesting of labeled scalars) for a column list.
nested_type schema_type(const std::vector<column_def>& schema);

/// Validates schema labels and record conformance; throws std::invalid_argument.
logical_table make_table(std::string name, std::vector<column_def> schema,
                         std::vector<value> records);

/// Parses schema text like `t:int,lat:float,lon:float,id:string`.
std::vector<column_def> parse_schema_text(const std::string& text);
std::string schema_to_text(const std::vector<column_def>& schema);

}  // namespace rodent
