#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rodent/ast.hpp"
#include "rodent/codec.hpp"
#include "rodent/eval.hpp"
#include "rodent/page_file.hpp"
#include "rodent/types.hpp"

namespace rodent {

class store_error : public std::runtime_error {
public:
    explicit store_error(const std::string& m) : std::runtime_error(m) {}
};

enum class segment_kind : std::uint8_t { rows = 0, column = 1, cells = 2, blob = 3 };
enum class encoding_kind : std::uint8_t { plain = 0, delta_fixedpoint = 1 };

struct ordering_desc {
    enum class o_kind : std::uint8_t { insertion = 0, keys = 1, morton = 2 };
    o_kind kind = o_kind::insertion;
    std::vector<std::pair<std::string, bool>> keys;  // attr, descending
    std::vector<std::string> morton_dims;

    static ordering_desc insertion() { return {}; }
    static ordering_desc by_keys(std::vector<std::pair<std::string, bool>> k);
    static ordering_desc morton(std::vector<std::string> dims);
    std::string to_string() const;
    bool operator==(const ordering_desc&) const = default;
};

struct segment {
    std::uint64_t id = 0;  // ids start at 1
    segment_kind kind = segment_kind::rows;
    std::uint64_t first_page = 0;
    std::uint64_t page_span = 0;
    std::uint64_t entry_count = 0;
    ordering_desc order;
    encoding_kind encoding = encoding_kind::plain;
};

struct cell_directory_dim {
    std::string attr;
    double stride = 1.0;
    double origin = 0.0;
    std::int64_t cell_count = 0;
};

struct cell_entry {
    std::vector<std::int64_t> index;
    std::vector<double> mins, maxs;  // per gridded attribute
    std::uint64_t count = 0;
    std::uint64_t byte_offset = 0;   // within the cells segment payload
    std::uint64_t byte_len = 0;
};

/// Per-cell bounds and extents for a gridded layout; memory-resident once the
/// table is opened (the paper's hash table of spatial boundaries).
struct cell_directory {
    std::vector<cell_directory_dim> dims;
    std::vector<cell_entry> cells;  // nonempty cells, stored order; extents disjoint
};

// --- layout plans ------------------------------------------------------------------
//
// A layout expression is analyzed into a plan that fixes the segment roles,
// entry types, orderings, and encodings. The plan is re-derived from the
// stored canonical expression text when a database is opened.

struct layout_plan {
    enum class p_kind : std::uint8_t { rows, columns, cells, blob };

    struct column_group {
        std::vector<std::string> labels;
        stype entry_type;                 // scalar or record
        bool delta = false;               // delta-fixedpoint encoded column
        scalar_kind delta_kind = scalar_kind::float64;
        ordering_desc order;
        expr_ptr eval_expr;               // delta-stripped child expression
    };

    enum class cell_format : std::uint8_t { tuples, delta_columns };

    p_kind kind = p_kind::rows;
    expr_ptr eval_expr;                   // delta-stripped whole expression

    // rows
    stype entry_type;
    int unnest_levels = 0;                // list wraps above records in an entry
    ordering_desc order;

    // columns
    std::vector<column_group> groups;

    // cells
    std::vector<std::string> grid_attrs;
    bool morton = false;
    cell_format cellformat = cell_format::tuples;
    stype cell_record_type;
    std::vector<scalar_kind> cell_col_kinds;   // delta_columns: per column scalar kind
    std::vector<bool> cell_col_delta;          // delta_columns: per column delta flag

    // all kinds
    std::vector<std::string> out_labels;       // logical record fields of a scan
    std::vector<scalar_kind> out_kinds;
};

/// Derives the storage plan for a layout expression over a schema.
/// Falls back to a blob plan for valid but non-specialized shapes.
layout_plan analyze_layout(const expr_ptr& e, const std::vector<column_def>& schema);

// --- stored tables and the database ---------------------------------------------------

struct stored_table {
    std::string name;
    std::vector<column_def> schema;
    std::string layout_text;
    std::uint64_t record_count = 0;
    std::vector<std::uint64_t> segment_ids;
    std::uint64_t celldir_segment = 0;                 // 0 = none
    std::map<std::uint32_t, std::uint64_t> perm_segments;  // group index -> segment id

    // runtime
    layout_plan plan;
    std::shared_ptr<const cell_directory> directory;
    std::map<std::uint32_t, std::vector<std::uint64_t>> perms;  // stored -> logical row
};

inline constexpr std::uint32_t k_default_page_size = 8192;
inline constexpr std::uint16_t k_format_version = 1;

/// Single-file database: header page, segment pages, catalog pages.
class database {
public:
    static database create(const std::string& path,
                           std::uint32_t page_size = k_default_page_size);
    static database open(const std::string& path);

    page_file& file() { return *file_; }
    const page_file& file() const { return *file_; }

    void create_table(const std::string& name, std::vector<column_def> schema);
    bool has_table(const std::string& name) const { return tables_.count(name) > 0; }
    const stored_table& table(const std::string& name) const;
    std::vector<std::string> table_names() const;

    /// Appends records and re-renders the current layout.
    void load_records(const std::string& name, std::vector<value> records);

    /// Renders the table under a new layout expression and atomically swaps
    /// the catalog; on failure the previous layout stays intact.
    void apply_layout(const std::string& name, const expr_ptr& layout);

    const segment& segment_by_id(std::uint64_t id) const;

    /// Sum of page spans of a table's segments, in bytes.
    std::uint64_t table_bytes_on_disk(const std::string& name) const;

    /// Reads all records of a table in logical (insertion-equivalent) order.
    std::vector<value> read_all_records(const std::string& name);

    /// First data page of a segment's payload region (after any offsets extent).
    std::uint64_t payload_first_page(const segment& seg) const;
    std::uint64_t payload_page_count(const segment& seg) const;
    std::uint64_t offsets_page_count(const segment& seg) const;
    bool segment_has_offsets(const segment& seg, const stored_table& t) const;

    friend struct scan_executor;

private:
    database() = default;

    void apply_layout_records(const std::string& name, const expr_ptr& layout,
                              std::vector<value> records);
    void write_header();
    void write_catalog_and_swap();
    byte_buffer serialize_catalog() const;
    void load_catalog(std::uint64_t catalog_page);
    void rebuild_free_pages();
    std::uint64_t allocate_run(std::uint64_t npages);
    void write_bytes_to_pages(std::uint64_t first_page, const byte_buffer& bytes);

    struct render_output {
        std::vector<segment> segments;
        std::uint64_t celldir_segment = 0;
        std::map<std::uint32_t, std::uint64_t> perm_segments;
        std::uint64_t record_count = 0;
        std::shared_ptr<const cell_directory> directory;
        std::map<std::uint32_t, std::vector<std::uint64_t>> perms;
    };
    render_output render(const stored_table& t, const layout_plan& plan,
                         const std::vector<value>& records);

    std::unique_ptr<page_file> file_;
    std::map<std::string, stored_table> tables_;
    std::map<std::uint64_t, segment> segments_;
    std::uint64_t next_segment_id_ = 1;
    std::uint64_t catalog_page_ = 0;
    std::uint64_t catalog_span_ = 0;
    std::set<std::uint64_t> free_pages_;
};

/// Serialized cell directory blob payload.
byte_buffer serialize_cell_directory(const cell_directory& dir);
cell_directory deserialize_cell_directory(byte_reader& in);

}  // namespace rodent
