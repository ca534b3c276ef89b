#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rodent/store.hpp"

namespace rodent {

class access_error : public std::runtime_error {
public:
    explicit access_error(const std::string& m) : std::runtime_error(m) {}
};

/// Conjunction of per-attribute half-open ranges [low, high) and equalities.
struct predicate {
    struct range {
        std::string attr;
        std::optional<double> low;   // inclusive
        std::optional<double> high;  // exclusive
    };
    std::vector<range> ranges;
    std::vector<std::pair<std::string, value>> equalities;

    bool empty() const { return ranges.empty() && equalities.empty(); }
    bool matches(const std::vector<std::string>& labels, const value& record) const;

    /// CLI mini-syntax: `attr>=v&attr<v&attr=v` conjunctions only.
    static predicate parse(const std::string& text);
};

struct cost_model {
    double seek_ms = 10.0;
    double transfer_ms_per_byte = 1e-5;  // ~100 MB/s
};

using sort_order = std::vector<std::pair<std::string, bool>>;  // attr, descending

struct scan_options {
    std::optional<std::vector<std::string>> fields;
    std::optional<predicate> pred;
    std::optional<sort_order> order;
};

struct scan_result {
    std::vector<std::string> fields;
    std::vector<value> rows;  // each a list parallel to fields
};

/// Full-table scan with optional projection, range predicate, and sort order.
/// Gridded layouts skip cells whose directory bounds are disjoint from the
/// predicate; the result always equals filtering a full scan.
scan_result scan(database& db, const std::string& table, const scan_options& opts = {});

/// Positional access in the table's stored default order. Grid layouts accept
/// one coordinate per dimension plus an intra-cell position.
std::vector<value> get_element(database& db, const std::string& table,
                               std::span<const std::int64_t> index,
                               const std::optional<std::vector<std::string>>& fields = {});

struct scan_estimate {
    std::uint64_t data_pages = 0;
    std::uint64_t directory_pages = 0;
    std::uint64_t seeks = 0;
    double ms = 0.0;
};

scan_estimate scan_cost(database& db, const std::string& table, const scan_options& opts = {},
                        const cost_model& model = {});

double get_element_cost(database& db, const std::string& table,
                        std::span<const std::int64_t> index, const cost_model& model = {});

/// Sort orders the stored organization satisfies with zero re-sorting.
std::vector<ordering_desc> order_list(database& db, const std::string& table);

/// Cursor over a table in an optional order; positioned by get_element / next.
class table_cursor {
public:
    table_cursor(database& db, std::string table, std::optional<sort_order> order = {});

    /// Positions the cursor and returns the record at `index`.
    std::optional<std::vector<value>> get_element(std::int64_t index);

    /// Next record in order; std::nullopt signals end-of-table.
    std::optional<std::vector<value>> next();

    const std::vector<std::string>& fields();

private:
    void materialize();

    database& db_;
    std::string table_;
    std::optional<sort_order> order_;
    std::optional<scan_result> snapshot_;
    std::int64_t pos_ = -1;
};

/// All records of the stored layout in logical order, one list per record
/// over the table's stored fields.
std::vector<value> read_table_records(database& db, const stored_table& t);

/// The fields a layout physically retains (may be narrower than the schema).
std::vector<column_def> stored_field_schema(const stored_table& t);

}  // namespace rodent
