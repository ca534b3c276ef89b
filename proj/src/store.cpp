#include "rodent/store.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "rodent/bind.hpp"
#include "rodent/parse.hpp"

namespace rodent {

ordering_desc ordering_desc::by_keys(std::vector<std::pair<std::string, bool>> k) {
    ordering_desc d;
    d.kind = o_kind::keys;
    d.keys = std::move(k);
    return d;
}

ordering_desc ordering_desc::morton(std::vector<std::string> dims) {
    ordering_desc d;
    d.kind = o_kind::morton;
    d.morton_dims = std::move(dims);
    return d;
}

std::string ordering_desc::to_string() const {
    switch (kind) {
        case o_kind::insertion:
            return "insertion";
        case o_kind::keys: {
            std::string out;
            for (std::size_t i = 0; i < keys.size(); ++i) {
                if (i) out += ", ";
                out += keys[i].first;
                out += keys[i].second ? " DESC" : " ASC";
            }
            return out;
        }
        case o_kind::morton: {
            std::string out = "morton(";
            for (std::size_t i = 0; i < morton_dims.size(); ++i) {
                if (i) out += ",";
                out += morton_dims[i];
            }
            return out + ")";
        }
    }
    return "?";
}

// --- layout analysis -----------------------------------------------------------------

namespace {

std::optional<scalar_kind> kind_of(const std::vector<column_def>& schema,
                                   const std::string& attr) {
    for (const auto& c : schema)
        if (c.name == attr) return c.type;
    return std::nullopt;
}

struct core_info {
    expr_ptr e;  // unchanged expression
    std::vector<std::string> labels;
    std::vector<scalar_kind> kinds;
    bool scalar_entries = false;  // head was a bare field access
    int unnest_levels = 0;        // groupby wraps
    ordering_desc order;
    // partitionby-with-field-keys makes the core grid-like
    std::vector<static_arg> grid_args;
};

// Record-producing spine: table refs, projections/selections, and single-
// generator comprehensions with field-access heads.
std::optional<core_info> analyze_core(const expr_ptr& e, const std::vector<column_def>& schema) {
    switch (e->kind()) {
        case expr_kind::table_ref: {
            core_info c;
            c.e = e;
            for (const auto& col : schema) {
                c.labels.push_back(col.name);
                c.kinds.push_back(col.type);
            }
            return c;
        }
        case expr_kind::transform: {
            if (e->name() == "project" && e->children().size() == 1) {
                auto inner = analyze_core(e->children()[0], schema);
                if (!inner) return std::nullopt;
                core_info c;
                c.e = e;
                for (const auto& a : e->static_args()) {
                    if (a.kind != static_arg::a_kind::ident) return std::nullopt;
                    auto k = kind_of(schema, a.name);
                    if (!k) return std::nullopt;
                    c.labels.push_back(a.name);
                    c.kinds.push_back(*k);
                }
                c.order = inner->order;
                return c;
            }
            if (e->name() == "select" && e->children().size() == 2) {
                auto inner = analyze_core(e->children()[1], schema);
                if (!inner) return std::nullopt;
                core_info c = *inner;
                c.e = e;
                return c;
            }
            return std::nullopt;
        }
        case expr_kind::comprehension: {
            core_info c;
            c.e = e;
            bool saw_generator = false;
            std::string gen_var;
            std::vector<std::string> src_labels;
            bool order_effective = false;
            std::vector<std::pair<std::string, bool>> order_keys;
            for (const auto& q : e->qualifiers()) {
                switch (q.kind) {
                    case qualifier::q_kind::generator: {
                        if (saw_generator) return std::nullopt;  // joins not planned
                        saw_generator = true;
                        gen_var = q.var;
                        auto src = analyze_core(q.e, schema);
                        if (!src || src->unnest_levels != 0 || !src->grid_args.empty())
                            return std::nullopt;
                        src_labels = src->labels;
                        break;
                    }
                    case qualifier::q_kind::condition:
                    case qualifier::q_kind::limit:
                        break;
                    case qualifier::q_kind::order_by: {
                        order_keys.clear();
                        for (const auto& k : q.keys) {
                            if (k.key->kind() != expr_kind::field_access ||
                                k.key->base()->kind() != expr_kind::var_ref ||
                                k.key->base()->name() != gen_var)
                                return std::nullopt;
                            order_keys.emplace_back(k.key->name(), k.descending);
                        }
                        order_effective = true;
                        break;
                    }
                    case qualifier::q_kind::group_by:
                        c.unnest_levels += 1;
                        order_effective = false;
                        break;
                    case qualifier::q_kind::partition_by: {
                        bool field_keys = true;
                        std::vector<static_arg> args;
                        for (const auto& p : q.parts) {
                            if (p.key->kind() == expr_kind::field_access &&
                                p.key->base()->kind() == expr_kind::var_ref &&
                                p.key->base()->name() == gen_var) {
                                args.push_back(static_arg::keyed(p.key->name(), p.stride));
                            } else {
                                field_keys = false;
                            }
                        }
                        if (field_keys && c.unnest_levels == 0 && c.grid_args.empty()) {
                            c.grid_args = std::move(args);
                        } else {
                            c.unnest_levels += static_cast<int>(q.parts.size());
                        }
                        order_effective = false;
                        break;
                    }
                }
            }
            if (!saw_generator) return std::nullopt;

            auto field_of = [&](const expr_ptr& h) -> std::optional<std::string> {
                if (h->kind() == expr_kind::field_access &&
                    h->base()->kind() == expr_kind::var_ref && h->base()->name() == gen_var)
                    return h->name();
                return std::nullopt;
            };

            const auto& heads = e->children();
            std::vector<std::string> labels;
            bool scalar_entries = false;
            if (heads.size() == 1 && heads[0]->kind() == expr_kind::var_ref &&
                heads[0]->name() == gen_var) {
                labels = src_labels;
            } else if (heads.size() == 1 && heads[0]->kind() == expr_kind::list_ctor) {
                for (const auto& h : heads[0]->children()) {
                    auto f = field_of(h);
                    if (!f) return std::nullopt;
                    labels.push_back(*f);
                }
            } else if (heads.size() == 1) {
                auto f = field_of(heads[0]);
                if (!f) return std::nullopt;
                labels.push_back(*f);
                scalar_entries = true;
            } else {
                for (const auto& h : heads) {
                    auto f = field_of(h);
                    if (!f) return std::nullopt;
                    labels.push_back(*f);
                }
            }
            for (const auto& l : labels) {
                auto k = kind_of(schema, l);
                if (!k) return std::nullopt;
                c.kinds.push_back(*k);
            }
            c.labels = std::move(labels);
            c.scalar_entries = scalar_entries;
            if (order_effective) c.order = ordering_desc::by_keys(std::move(order_keys));
            return c;
        }
        default:
            return std::nullopt;
    }
}

stype record_stype(const core_info& c) {
    if (c.scalar_entries) return stype::scalar(c.kinds[0]);
    return stype::record(c.kinds);
}

// Matches a per-cell column extraction: `[p.A | \p <- c]` or `delta[A](c)` or
// `delta([p.A | \p <- c])`, where c is the cell variable. Returns (attr,
// delta?, stripped column expr).
struct cell_column {
    std::string attr;
    bool delta = false;
    expr_ptr stripped;
};

std::optional<cell_column> analyze_cell_column(const expr_ptr& h, const std::string& cell_var) {
    auto plain_column = [&](const expr_ptr& x) -> std::optional<std::pair<std::string, expr_ptr>> {
        if (x->kind() != expr_kind::comprehension || x->children().size() != 1) return std::nullopt;
        if (x->qualifiers().size() != 1 ||
            x->qualifiers()[0].kind != qualifier::q_kind::generator)
            return std::nullopt;
        const auto& gen = x->qualifiers()[0];
        if (gen.e->kind() != expr_kind::var_ref || gen.e->name() != cell_var) return std::nullopt;
        const auto& head = x->children()[0];
        if (head->kind() != expr_kind::field_access ||
            head->base()->kind() != expr_kind::var_ref || head->base()->name() != gen.var)
            return std::nullopt;
        return std::make_pair(head->name(), x);
    };

    if (h->kind() == expr_kind::transform && h->name() == "delta" &&
        h->children().size() == 1) {
        const auto& args = h->static_args();
        if (args.size() == 1 && args[0].kind == static_arg::a_kind::ident &&
            h->children()[0]->kind() == expr_kind::var_ref &&
            h->children()[0]->name() == cell_var) {
            // delta[A](c): strip to the equivalent column comprehension.
            expr_ptr col = expr::comprehension(
                {expr::field_access(expr::var_ref("p"), args[0].name)},
                {qualifier::generator("p", expr::var_ref(cell_var))});
            return cell_column{args[0].name, true, col};
        }
        if (auto pc = plain_column(h->children()[0]))
            return cell_column{pc->first, true, pc->second};
        return std::nullopt;
    }
    if (auto pc = plain_column(h)) return cell_column{pc->first, false, pc->second};
    return std::nullopt;
}

std::vector<grid_spec_dim> grid_dims_from_args(const std::vector<static_arg>& args) {
    std::vector<grid_spec_dim> dims;
    for (const auto& a : args) {
        grid_spec_dim d;
        if (a.kind == static_arg::a_kind::ident) {
            d.attr = a.name;
        } else if (a.kind == static_arg::a_kind::keyed) {
            d.attr = a.name;
            d.stride = a.num.as_double();
            if (a.origin) d.origin = a.origin->as_double();
        } else {
            throw store_error("grid expects attr[:stride[:origin]] arguments");
        }
        dims.push_back(std::move(d));
    }
    return dims;
}

}  // namespace

layout_plan analyze_layout(const expr_ptr& e, const std::vector<column_def>& schema) {
    layout_plan plan;

    // Column layouts: a bracket list of per-group expressions.
    if (e->kind() == expr_kind::list_ctor) {
        plan.kind = layout_plan::p_kind::columns;
        std::vector<expr_ptr> stripped_children;
        bool ok = true;
        for (const auto& child : e->children()) {
            layout_plan::column_group g;
            expr_ptr body = child;
            if (child->kind() == expr_kind::transform && child->name() == "delta" &&
                child->static_args().empty() && child->children().size() == 1) {
                g.delta = true;
                body = child->children()[0];
            }
            auto core = analyze_core(body, schema);
            if (!core || core->unnest_levels != 0 || !core->grid_args.empty()) {
                ok = false;
                break;
            }
            if (g.delta && (!core->scalar_entries || core->kinds[0] == scalar_kind::str)) {
                ok = false;  // delta only over a numeric scalar column
                break;
            }
            g.labels = core->labels;
            g.entry_type = record_stype(*core);
            if (g.delta) g.delta_kind = core->kinds[0];
            g.order = core->order;
            g.eval_expr = body;
            stripped_children.push_back(body);
            plan.groups.push_back(std::move(g));
            for (std::size_t i = 0; i < core->labels.size(); ++i) {
                plan.out_labels.push_back(core->labels[i]);
                plan.out_kinds.push_back(core->kinds[i]);
            }
        }
        if (ok && !plan.groups.empty()) {
            plan.eval_expr = expr::list_ctor(std::move(stripped_children));
            return plan;
        }
        plan = layout_plan{};
    }

    // Cells spine: [delta-map]? ( zorder )? ( grid(core) | core-with-partitionby ).
    {
        expr_ptr spine = e;
        bool morton = false;
        std::vector<cell_column> delta_cols;
        bool have_delta_map = false;

        if (spine->kind() == expr_kind::comprehension && spine->qualifiers().size() == 1 &&
            spine->qualifiers()[0].kind == qualifier::q_kind::generator) {
            const auto& gen = spine->qualifiers()[0];
            const auto& heads = spine->children();
            std::vector<expr_ptr> parts;
            if (heads.size() == 1 && heads[0]->kind() == expr_kind::list_ctor)
                parts = heads[0]->children();
            else
                parts = heads;
            std::vector<cell_column> cols;
            bool all = !parts.empty();
            for (const auto& p : parts) {
                auto cc = analyze_cell_column(p, gen.var);
                if (!cc) {
                    all = false;
                    break;
                }
                cols.push_back(*cc);
            }
            if (all) {
                have_delta_map = true;
                delta_cols = std::move(cols);
                spine = gen.e;
            } else if (heads.size() == 1 && heads[0]->kind() == expr_kind::var_ref &&
                       heads[0]->name() == gen.var) {
                spine = gen.e;  // identity map
            }
        }
        if (spine->kind() == expr_kind::transform && spine->name() == "zorder" &&
            spine->children().size() == 1) {
            morton = true;
            spine = spine->children()[0];
        }

        std::optional<core_info> core;
        std::vector<grid_spec_dim> dims;
        if (spine->kind() == expr_kind::transform && spine->name() == "grid" &&
            spine->children().size() == 1) {
            core = analyze_core(spine->children()[0], schema);
            if (core && core->unnest_levels == 0 && core->grid_args.empty() &&
                !core->scalar_entries) {
                dims = grid_dims_from_args(spine->static_args());
            } else {
                core.reset();
            }
        } else {
            core = analyze_core(spine, schema);
            if (core && !core->grid_args.empty() && core->unnest_levels == 0 &&
                !core->scalar_entries) {
                dims = grid_dims_from_args(core->grid_args);
            } else {
                core.reset();
            }
        }

        if (core && !dims.empty()) {
            plan.kind = layout_plan::p_kind::cells;
            plan.morton = morton;
            for (const auto& d : dims) plan.grid_attrs.push_back(d.attr);

            if (have_delta_map) {
                plan.cellformat = layout_plan::cell_format::delta_columns;
                std::vector<expr_ptr> stripped_cols;
                for (const auto& cc : delta_cols) {
                    auto k = kind_of(schema, cc.attr);
                    if (!k) throw store_error("unknown attribute in cell columns: " + cc.attr);
                    plan.out_labels.push_back(cc.attr);
                    plan.out_kinds.push_back(*k);
                    plan.cell_col_kinds.push_back(*k);
                    plan.cell_col_delta.push_back(cc.delta);
                    stripped_cols.push_back(cc.stripped);
                }
                plan.cell_record_type = stype::record(plan.cell_col_kinds);
                // Rebuild the map comprehension without the delta wrappers.
                expr_ptr inner = spine;
                plan.eval_expr = expr::comprehension(
                    {expr::list_ctor(stripped_cols)},
                    {qualifier::generator("c", inner)});
                // The stripped column comprehensions reference the original
                // cell variable name; regenerate them against "c".
                {
                    std::vector<expr_ptr> cols2;
                    for (const auto& cc : delta_cols) {
                        cols2.push_back(expr::comprehension(
                            {expr::field_access(expr::var_ref("p"), cc.attr)},
                            {qualifier::generator("p", expr::var_ref("c"))}));
                    }
                    plan.eval_expr = expr::comprehension(
                        {expr::list_ctor(std::move(cols2))},
                        {qualifier::generator("c", inner)});
                }
            } else {
                plan.cellformat = layout_plan::cell_format::tuples;
                plan.out_labels = core->labels;
                plan.out_kinds = core->kinds;
                plan.cell_record_type = record_stype(*core);
                plan.eval_expr = e;
            }
            return plan;
        }
        plan = layout_plan{};
    }

    // Flat delta over one numeric column.
    if (e->kind() == expr_kind::transform && e->name() == "delta" &&
        e->static_args().empty() && e->children().size() == 1) {
        auto core = analyze_core(e->children()[0], schema);
        if (core && core->scalar_entries && core->unnest_levels == 0 &&
            core->grid_args.empty() && core->kinds[0] != scalar_kind::str) {
            plan.kind = layout_plan::p_kind::columns;
            layout_plan::column_group g;
            g.labels = core->labels;
            g.entry_type = record_stype(*core);
            g.delta = true;
            g.delta_kind = core->kinds[0];
            g.order = core->order;
            g.eval_expr = e->children()[0];
            plan.groups.push_back(std::move(g));
            plan.out_labels = core->labels;
            plan.out_kinds = core->kinds;
            plan.eval_expr = expr::list_ctor({e->children()[0]});
            return plan;
        }
    }

    // Plain rows (possibly grouped).
    if (auto core = analyze_core(e, schema)) {
        if (core->grid_args.empty()) {
            plan.kind = layout_plan::p_kind::rows;
            plan.eval_expr = e;
            plan.out_labels = core->labels;
            plan.out_kinds = core->kinds;
            plan.unnest_levels = core->unnest_levels;
            plan.order = core->order;
            stype entry = record_stype(*core);
            for (int i = 0; i < core->unnest_levels; ++i) entry = stype::list_of(entry);
            plan.entry_type = entry;
            return plan;
        }
    }

    // Generic fallback: store the evaluated value as one self-describing blob.
    plan.kind = layout_plan::p_kind::blob;
    plan.eval_expr = e;
    return plan;
}

// --- catalog serialization ---------------------------------------------------------

namespace {

void put_ordering(byte_buffer& out, const ordering_desc& o) {
    out.push_back(static_cast<std::uint8_t>(o.kind));
    if (o.kind == ordering_desc::o_kind::keys) {
        put_varint(out, o.keys.size());
        for (const auto& [attr, desc] : o.keys) {
            put_string(out, attr);
            out.push_back(desc ? 1 : 0);
        }
    } else if (o.kind == ordering_desc::o_kind::morton) {
        put_varint(out, o.morton_dims.size());
        for (const auto& d : o.morton_dims) put_string(out, d);
    }
}

ordering_desc get_ordering(byte_reader& in) {
    ordering_desc o;
    o.kind = static_cast<ordering_desc::o_kind>(in.get_u8());
    if (o.kind == ordering_desc::o_kind::keys) {
        std::uint64_t n = in.get_varint();
        for (std::uint64_t i = 0; i < n; ++i) {
            std::string attr = in.get_string();
            bool desc = in.get_u8() != 0;
            o.keys.emplace_back(std::move(attr), desc);
        }
    } else if (o.kind == ordering_desc::o_kind::morton) {
        std::uint64_t n = in.get_varint();
        for (std::uint64_t i = 0; i < n; ++i) o.morton_dims.push_back(in.get_string());
    }
    return o;
}

}  // namespace

byte_buffer serialize_cell_directory(const cell_directory& dir) {
    byte_buffer out;
    put_varint(out, dir.dims.size());
    for (const auto& d : dir.dims) {
        put_string(out, d.attr);
        put_f64(out, d.stride);
        put_f64(out, d.origin);
        put_varint(out, static_cast<std::uint64_t>(d.cell_count));
    }
    put_varint(out, dir.cells.size());
    for (const auto& c : dir.cells) {
        for (std::int64_t idx : c.index) put_varint(out, zigzag_encode(idx));
        for (std::size_t d = 0; d < dir.dims.size(); ++d) {
            put_f64(out, c.mins[d]);
            put_f64(out, c.maxs[d]);
        }
        put_varint(out, c.count);
        put_varint(out, c.byte_offset);
        put_varint(out, c.byte_len);
    }
    return out;
}

cell_directory deserialize_cell_directory(byte_reader& in) {
    cell_directory dir;
    std::uint64_t ndims = in.get_varint();
    for (std::uint64_t i = 0; i < ndims; ++i) {
        cell_directory_dim d;
        d.attr = in.get_string();
        d.stride = in.get_f64();
        d.origin = in.get_f64();
        d.cell_count = static_cast<std::int64_t>(in.get_varint());
        dir.dims.push_back(std::move(d));
    }
    std::uint64_t ncells = in.get_varint();
    for (std::uint64_t i = 0; i < ncells; ++i) {
        cell_entry c;
        c.index.resize(ndims);
        for (std::uint64_t d = 0; d < ndims; ++d)
            c.index[d] = zigzag_decode(in.get_varint());
        c.mins.resize(ndims);
        c.maxs.resize(ndims);
        for (std::uint64_t d = 0; d < ndims; ++d) {
            c.mins[d] = in.get_f64();
            c.maxs[d] = in.get_f64();
        }
        c.count = in.get_varint();
        c.byte_offset = in.get_varint();
        c.byte_len = in.get_varint();
        dir.cells.push_back(std::move(c));
    }
    return dir;
}

byte_buffer database::serialize_catalog() const {
    byte_buffer out;
    put_varint(out, segments_.size());
    for (const auto& [id, seg] : segments_) {
        put_varint(out, seg.id);
        out.push_back(static_cast<std::uint8_t>(seg.kind));
        put_u64(out, seg.first_page);
        put_u64(out, seg.page_span);
        put_u64(out, seg.entry_count);
        put_ordering(out, seg.order);
        out.push_back(static_cast<std::uint8_t>(seg.encoding));
    }
    put_varint(out, tables_.size());
    for (const auto& [name, t] : tables_) {
        put_string(out, t.name);
        put_varint(out, t.schema.size());
        for (const auto& c : t.schema) {
            put_string(out, c.name);
            out.push_back(static_cast<std::uint8_t>(c.type));
        }
        put_string(out, t.layout_text);
        put_varint(out, t.record_count);
        put_varint(out, t.segment_ids.size());
        for (auto id : t.segment_ids) put_varint(out, id);
        put_varint(out, t.celldir_segment);
        put_varint(out, t.perm_segments.size());
        for (const auto& [group, segid] : t.perm_segments) {
            put_varint(out, group);
            put_varint(out, segid);
        }
    }
    return out;
}

// --- database ------------------------------------------------------------------------

database database::create(const std::string& path, std::uint32_t page_size) {
    database db;
    db.file_ = page_file::create(path, page_size);
    db.write_catalog_and_swap();
    return db;
}

database database::open(const std::string& path) {
    // The header carries the page size; peek at it with a plain read.
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw io_error("cannot open " + path);
    char hdr[18];
    probe.read(hdr, sizeof hdr);
    if (probe.gcount() != sizeof hdr || std::memcmp(hdr, "RDNT", 4) != 0)
        throw store_error("not a database file: " + path);
    byte_reader r(reinterpret_cast<const std::uint8_t*>(hdr + 4), sizeof hdr - 4);
    std::uint16_t version = r.get_u16();
    if (version != k_format_version)
        throw store_error("unsupported format version " + std::to_string(version));
    std::uint32_t page_size = r.get_u32();
    std::uint64_t catalog_page = r.get_u64();
    probe.close();

    database db;
    db.file_ = page_file::open(path, page_size);
    db.load_catalog(catalog_page);
    return db;
}

void database::write_header() {
    byte_buffer hdr;
    hdr.push_back('R');
    hdr.push_back('D');
    hdr.push_back('N');
    hdr.push_back('T');
    put_u16(hdr, k_format_version);
    put_u32(hdr, file_->page_size());
    put_u64(hdr, catalog_page_);
    file_->write_page(0, hdr);
    file_->sync();
}

void database::write_catalog_and_swap() {
    byte_buffer bytes = serialize_catalog();
    std::uint64_t npages =
        std::max<std::uint64_t>(1, (bytes.size() + file_->page_size() - 1) / file_->page_size());
    std::uint64_t old_first = catalog_page_;
    std::uint64_t old_span = catalog_span_;
    std::uint64_t run = allocate_run(npages);
    write_bytes_to_pages(run, bytes);
    file_->sync();
    catalog_page_ = run;
    catalog_span_ = npages;
    write_header();  // the swap: a single header page update
    for (std::uint64_t i = 0; i < old_span; ++i) free_pages_.insert(old_first + i);
}

void database::write_bytes_to_pages(std::uint64_t first_page, const byte_buffer& bytes) {
    std::uint32_t P = file_->page_size();
    std::uint64_t npages = std::max<std::uint64_t>(1, (bytes.size() + P - 1) / P);
    for (std::uint64_t i = 0; i < npages; ++i) {
        std::size_t from = static_cast<std::size_t>(i) * P;
        std::size_t len = std::min<std::size_t>(P, bytes.size() > from ? bytes.size() - from : 0);
        file_->write_page(first_page + i,
                          std::span<const std::uint8_t>(bytes.data() + from, len));
    }
}

std::uint64_t database::allocate_run(std::uint64_t npages) {
    if (npages == 0) npages = 1;
    // First fit over free runs.
    std::uint64_t run_start = 0, run_len = 0;
    for (auto it = free_pages_.begin(); it != free_pages_.end(); ++it) {
        if (run_len == 0 || *it != run_start + run_len) {
            run_start = *it;
            run_len = 1;
        } else {
            run_len += 1;
        }
        if (run_len == npages) {
            for (std::uint64_t p = run_start; p < run_start + npages; ++p) free_pages_.erase(p);
            return run_start;
        }
    }
    return file_->allocate_pages(npages);
}

void database::rebuild_free_pages() {
    std::set<std::uint64_t> used;
    used.insert(0);
    for (std::uint64_t i = 0; i < catalog_span_; ++i) used.insert(catalog_page_ + i);
    for (const auto& [id, seg] : segments_)
        for (std::uint64_t i = 0; i < seg.page_span; ++i) used.insert(seg.first_page + i);
    free_pages_.clear();
    for (std::uint64_t p = 1; p < file_->page_count(); ++p)
        if (!used.count(p)) free_pages_.insert(p);
}

void database::load_catalog(std::uint64_t catalog_page) {
    catalog_page_ = catalog_page;
    byte_buffer bytes;
    std::uint64_t pages_loaded = 0;
    // The catalog is self-delimiting; read pages until it parses.
    for (;;) {
        if (catalog_page + pages_loaded >= file_->page_count())
            throw store_error("catalog truncated");
        byte_buffer page = file_->read_page(catalog_page + pages_loaded);
        bytes.insert(bytes.end(), page.begin(), page.end());
        pages_loaded += 1;
        try {
            byte_reader in(bytes.data(), bytes.size());
            std::map<std::uint64_t, segment> segs;
            std::uint64_t nsegs = in.get_varint();
            for (std::uint64_t i = 0; i < nsegs; ++i) {
                segment s;
                s.id = in.get_varint();
                s.kind = static_cast<segment_kind>(in.get_u8());
                s.first_page = in.get_u64();
                s.page_span = in.get_u64();
                s.entry_count = in.get_u64();
                s.order = get_ordering(in);
                s.encoding = static_cast<encoding_kind>(in.get_u8());
                segs[s.id] = std::move(s);
            }
            std::map<std::string, stored_table> tables;
            std::uint64_t ntables = in.get_varint();
            for (std::uint64_t i = 0; i < ntables; ++i) {
                stored_table t;
                t.name = in.get_string();
                std::uint64_t ncols = in.get_varint();
                for (std::uint64_t c = 0; c < ncols; ++c) {
                    column_def col;
                    col.name = in.get_string();
                    col.type = static_cast<scalar_kind>(in.get_u8());
                    t.schema.push_back(std::move(col));
                }
                t.layout_text = in.get_string();
                t.record_count = in.get_varint();
                std::uint64_t nsegids = in.get_varint();
                for (std::uint64_t s = 0; s < nsegids; ++s)
                    t.segment_ids.push_back(in.get_varint());
                t.celldir_segment = in.get_varint();
                std::uint64_t nperms = in.get_varint();
                for (std::uint64_t p = 0; p < nperms; ++p) {
                    std::uint32_t group = static_cast<std::uint32_t>(in.get_varint());
                    t.perm_segments[group] = in.get_varint();
                }
                tables[t.name] = std::move(t);
            }
            segments_ = std::move(segs);
            tables_ = std::move(tables);
            break;
        } catch (const codec_error&) {
            continue;  // need another page
        }
    }
    catalog_span_ = pages_loaded;

    next_segment_id_ = 1;
    for (const auto& [id, seg] : segments_) next_segment_id_ = std::max(next_segment_id_, id + 1);

    // Rebuild plans and resident structures.
    for (auto& [name, t] : tables_) {
        expr_ptr layout = parse(t.layout_text);
        t.plan = analyze_layout(layout, t.schema);
        if (t.celldir_segment != 0) {
            const segment& seg = segments_.at(t.celldir_segment);
            byte_buffer blob = file_->read_extent(seg.first_page * file_->page_size(),
                                                  seg.page_span * file_->page_size());
            byte_reader in(blob.data(), blob.size());
            t.directory = std::make_shared<cell_directory>(deserialize_cell_directory(in));
        }
        for (const auto& [group, segid] : t.perm_segments) {
            const segment& seg = segments_.at(segid);
            byte_buffer blob = file_->read_extent(seg.first_page * file_->page_size(),
                                                  seg.page_span * file_->page_size());
            byte_reader in(blob.data(), blob.size());
            std::uint64_t n = in.get_varint();
            std::vector<std::uint64_t> perm(n);
            for (auto& x : perm) x = in.get_varint();
            t.perms[group] = std::move(perm);
        }
    }
    rebuild_free_pages();
}

void database::create_table(const std::string& name, std::vector<column_def> schema) {
    if (tables_.count(name)) throw store_error("table already exists: " + name);
    logical_table probe = make_table(name, schema, {});  // validates name and labels
    stored_table t;
    t.name = name;
    t.schema = std::move(schema);
    expr_ptr layout = row_layout_expr(probe);
    t.layout_text = format(layout);
    t.plan = analyze_layout(layout, t.schema);
    render_output out = render(t, t.plan, {});
    t.record_count = 0;
    for (const auto& s : out.segments) t.segment_ids.push_back(s.id);
    t.celldir_segment = out.celldir_segment;
    t.perm_segments = out.perm_segments;
    t.directory = out.directory;
    t.perms = out.perms;
    for (const auto& s : out.segments) segments_[s.id] = s;
    tables_[name] = std::move(t);
    write_catalog_and_swap();
}

const stored_table& database::table(const std::string& name) const {
    auto it = tables_.find(name);
    if (it == tables_.end()) throw store_error("unknown table: " + name);
    return it->second;
}

std::vector<std::string> database::table_names() const {
    std::vector<std::string> out;
    for (const auto& [name, t] : tables_) out.push_back(name);
    return out;
}

const segment& database::segment_by_id(std::uint64_t id) const {
    auto it = segments_.find(id);
    if (it == segments_.end()) throw store_error("unknown segment: " + std::to_string(id));
    return it->second;
}

std::uint64_t database::table_bytes_on_disk(const std::string& name) const {
    const stored_table& t = table(name);
    std::uint64_t pages = 0;
    for (auto id : t.segment_ids) pages += segment_by_id(id).page_span;
    if (t.celldir_segment) pages += segment_by_id(t.celldir_segment).page_span;
    for (const auto& [g, id] : t.perm_segments) pages += segment_by_id(id).page_span;
    return pages * file_->page_size();
}

bool database::segment_has_offsets(const segment& seg, const stored_table& t) const {
    if (seg.encoding == encoding_kind::delta_fixedpoint) return false;
    if (seg.kind == segment_kind::rows)
        return t.plan.entry_type.fixed_width() == 0;
    if (seg.kind == segment_kind::column) {
        for (std::size_t g = 0; g < t.segment_ids.size(); ++g) {
            if (t.segment_ids[g] == seg.id && g < t.plan.groups.size())
                return t.plan.groups[g].entry_type.fixed_width() == 0;
        }
    }
    return false;
}

std::uint64_t database::offsets_page_count(const segment& seg) const {
    std::uint64_t bytes = (seg.entry_count + 1) * 8;
    return (bytes + file_->page_size() - 1) / file_->page_size();
}

std::uint64_t database::payload_first_page(const segment& seg) const {
    return seg.first_page;  // callers add offsets_page_count when applicable
}

std::uint64_t database::payload_page_count(const segment& seg) const {
    return seg.page_span;
}

// --- render ----------------------------------------------------------------------------

namespace {

void encode_checked(const value& v, const stype& t, byte_buffer& out) {
    switch (t.kind) {
        case stype::t_kind::scalar:
            if ((t.sc == scalar_kind::int64 && !v.is_int()) ||
                (t.sc == scalar_kind::float64 && !v.is_float()) ||
                (t.sc == scalar_kind::str && !v.is_str()))
                throw store_error("value does not match its storage type: " + v.to_string());
            encode_value(v, out);
            return;
        case stype::t_kind::record: {
            if (!v.is_list() || v.size() != t.fields.size())
                throw store_error("record does not match its storage type: " + v.to_string());
            put_varint(out, v.size());
            for (std::size_t i = 0; i < t.fields.size(); ++i)
                encode_checked(v[i], stype::scalar(t.fields[i]), out);
            return;
        }
        case stype::t_kind::list: {
            if (!v.is_list())
                throw store_error("list does not match its storage type: " + v.to_string());
            put_varint(out, v.size());
            for (const auto& c : v.children()) encode_checked(c, *t.element, out);
            return;
        }
    }
}

byte_buffer offsets_region(const std::vector<std::uint64_t>& offsets) {
    byte_buffer out;
    out.reserve(offsets.size() * 8);
    for (auto o : offsets) put_u64(out, o);
    return out;
}

}  // namespace

database::render_output database::render(const stored_table& t, const layout_plan& plan,
                                         const std::vector<value>& records) {
    logical_table tmp{t.name, t.schema, records};
    env en;
    en.tables[t.name] = &tmp;
    eval_context ctx;
    value v = [&] {
        try {
            return eval(plan.eval_expr, en, &ctx);
        } catch (const eval_error& e) {
            throw store_error(std::string("layout evaluation failed: ") + e.what());
        }
    }();

    render_output out;
    out.record_count = records.size();

    struct pending_segment {
        segment meta;
        byte_buffer payload;
        std::vector<std::uint64_t> offsets;  // nonempty for variable-width entries
    };
    std::vector<pending_segment> pending;

    auto add_blob = [&](const byte_buffer& payload, std::uint64_t entries) {
        pending_segment ps;
        ps.meta.id = next_segment_id_++;
        ps.meta.kind = segment_kind::blob;
        ps.meta.entry_count = entries;
        ps.payload = payload;
        pending.push_back(std::move(ps));
        return pending.back().meta.id;
    };

    switch (plan.kind) {
        case layout_plan::p_kind::rows: {
            if (!v.is_list()) throw store_error("row layout did not produce a nesting");
            pending_segment ps;
            ps.meta.id = next_segment_id_++;
            ps.meta.kind = segment_kind::rows;
            ps.meta.entry_count = v.size();
            ps.meta.order = plan.order;
            bool variable = plan.entry_type.fixed_width() == 0;
            if (variable) ps.offsets.push_back(0);
            for (const auto& entry : v.children()) {
                encode_checked(entry, plan.entry_type, ps.payload);
                if (variable) ps.offsets.push_back(ps.payload.size());
            }
            out.segments.push_back(ps.meta);
            pending.push_back(std::move(ps));
            break;
        }
        case layout_plan::p_kind::columns: {
            if (!v.is_list() || v.size() != plan.groups.size())
                throw store_error("column layout shape mismatch");
            // Orders differ between groups => permutation maps are required.
            bool orders_differ = false;
            for (const auto& g : plan.groups)
                if (!(g.order == plan.groups[0].order)) orders_differ = true;
            for (std::size_t gi = 0; gi < plan.groups.size(); ++gi) {
                const auto& g = plan.groups[gi];
                const value& col = v[gi];
                if (!col.is_list()) throw store_error("column group did not produce a nesting");
                pending_segment ps;
                ps.meta.id = next_segment_id_++;
                ps.meta.kind = segment_kind::column;
                ps.meta.entry_count = col.size();
                ps.meta.order = g.order;
                if (g.delta) {
                    ps.meta.encoding = encoding_kind::delta_fixedpoint;
                    encode_delta_block(col.children(), g.delta_kind, false, ps.payload);
                } else {
                    bool variable = g.entry_type.fixed_width() == 0;
                    if (variable) ps.offsets.push_back(0);
                    for (const auto& entry : col.children()) {
                        encode_checked(entry, g.entry_type, ps.payload);
                        if (variable) ps.offsets.push_back(ps.payload.size());
                    }
                }
                out.segments.push_back(ps.meta);
                pending.push_back(std::move(ps));

                if (orders_differ && g.order.kind == ordering_desc::o_kind::keys) {
                    // Stored position -> logical row, via a pos() head rewrite.
                    if (g.eval_expr->kind() != expr_kind::comprehension ||
                        g.eval_expr->qualifiers().empty() ||
                        g.eval_expr->qualifiers()[0].kind != qualifier::q_kind::generator)
                        throw store_error(
                            "differently ordered column groups need comprehension children");
                    const std::string& var = g.eval_expr->qualifiers()[0].var;
                    expr_ptr pos_expr = expr::comprehension(
                        {expr::helper_call(helper_kind::pos, {expr::var_ref(var)})},
                        g.eval_expr->qualifiers());
                    value positions = eval(pos_expr, en);
                    byte_buffer blob;
                    put_varint(blob, positions.size());
                    std::vector<std::uint64_t> perm;
                    for (const auto& p : positions.children()) {
                        put_varint(blob, static_cast<std::uint64_t>(p.as_int()));
                        perm.push_back(static_cast<std::uint64_t>(p.as_int()));
                    }
                    std::uint64_t segid = add_blob(blob, positions.size());
                    out.perm_segments[static_cast<std::uint32_t>(gi)] = segid;
                    out.perms[static_cast<std::uint32_t>(gi)] = std::move(perm);
                }
            }
            break;
        }
        case layout_plan::p_kind::cells: {
            if (!ctx.grid)
                throw store_error("cell layout expression did not produce a grid");
            const grid_info& info = *ctx.grid;
            // Locate the flat cell values: after zorder the value is already
            // flat; a plain grid nests by dimension.
            std::vector<const value*> cell_values;
            if (plan.morton || info.morton) {
                if (!v.is_list()) throw store_error("cell layout shape mismatch");
                for (const auto& c : v.children()) cell_values.push_back(&c);
            } else {
                std::function<void(const value&, std::size_t)> walk = [&](const value& node,
                                                                          std::size_t depth) {
                    if (depth == info.dims.size()) {
                        cell_values.push_back(&node);
                        return;
                    }
                    for (const auto& c : node.children()) walk(c, depth + 1);
                };
                walk(v, 1);
            }
            if (cell_values.size() != info.cells.size())
                throw store_error("grid side data does not match the evaluated value");

            auto dir = std::make_shared<cell_directory>();
            for (const auto& d : info.dims)
                dir->dims.push_back({d.attr, d.stride, d.origin, d.cell_count});

            pending_segment ps;
            ps.meta.id = next_segment_id_++;
            ps.meta.kind = segment_kind::cells;
            ps.meta.order = plan.morton ? ordering_desc::morton(plan.grid_attrs)
                                        : ordering_desc::insertion();
            ps.meta.encoding = plan.cellformat == layout_plan::cell_format::delta_columns
                                   ? encoding_kind::delta_fixedpoint
                                   : encoding_kind::plain;
            std::uint64_t total_entries = 0;
            for (std::size_t ci = 0; ci < cell_values.size(); ++ci) {
                const grid_cell_info& gi = info.cells[ci];
                if (gi.count == 0) continue;
                cell_entry ce;
                ce.index = gi.index;
                ce.mins = gi.mins;
                ce.maxs = gi.maxs;
                ce.count = gi.count;
                ce.byte_offset = ps.payload.size();
                const value& cv = *cell_values[ci];
                if (plan.cellformat == layout_plan::cell_format::tuples) {
                    if (!cv.is_list() || cv.size() != gi.count)
                        throw store_error("cell tuple count mismatch");
                    put_varint(ps.payload, cv.size());
                    for (const auto& rec : cv.children())
                        encode_checked(rec, plan.cell_record_type, ps.payload);
                } else {
                    if (!cv.is_list() || cv.size() != plan.cell_col_kinds.size())
                        throw store_error("cell column count mismatch");
                    put_varint(ps.payload, gi.count);
                    for (std::size_t col = 0; col < plan.cell_col_kinds.size(); ++col) {
                        const value& column = cv[col];
                        if (!column.is_list() || column.size() != gi.count)
                            throw store_error("cell column length mismatch");
                        if (plan.cell_col_delta[col]) {
                            encode_delta_block(column.children(), plan.cell_col_kinds[col],
                                               false, ps.payload);
                        } else {
                            for (const auto& x : column.children())
                                encode_checked(x, stype::scalar(plan.cell_col_kinds[col]),
                                               ps.payload);
                        }
                    }
                }
                ce.byte_len = ps.payload.size() - ce.byte_offset;
                total_entries += gi.count;
                dir->cells.push_back(std::move(ce));
            }
            ps.meta.entry_count = total_entries;
            out.segments.push_back(ps.meta);
            pending.push_back(std::move(ps));

            byte_buffer dir_blob = serialize_cell_directory(*dir);
            out.celldir_segment = add_blob(dir_blob, dir->cells.size());
            out.directory = dir;
            break;
        }
        case layout_plan::p_kind::blob: {
            pending_segment ps;
            ps.meta.id = next_segment_id_++;
            ps.meta.kind = segment_kind::blob;
            ps.meta.entry_count = v.is_list() ? v.size() : 1;
            encode_tagged(v, ps.payload);
            out.segments.push_back(ps.meta);
            pending.push_back(std::move(ps));
            break;
        }
    }

    // Allocate pages and write: offsets extent first, then dense payload.
    std::uint32_t P = file_->page_size();
    for (auto& ps : pending) {
        byte_buffer region;
        if (!ps.offsets.empty()) {
            byte_buffer off = offsets_region(ps.offsets);
            std::uint64_t off_pages = (off.size() + P - 1) / P;
            region.resize(off_pages * P, 0);
            std::memcpy(region.data(), off.data(), off.size());
        }
        region.insert(region.end(), ps.payload.begin(), ps.payload.end());
        std::uint64_t npages = std::max<std::uint64_t>(1, (region.size() + P - 1) / P);
        std::uint64_t first = allocate_run(npages);
        ps.meta.first_page = first;
        ps.meta.page_span = npages;
        write_bytes_to_pages(first, region);
    }
    file_->sync();

    // Propagate final page locations into the returned metadata.
    for (auto& seg : out.segments)
        for (const auto& ps : pending)
            if (ps.meta.id == seg.id) seg = ps.meta;
    // Register blob segments (cell directory, perms) in out.segments too.
    for (const auto& ps : pending) {
        bool listed = false;
        for (const auto& seg : out.segments)
            if (seg.id == ps.meta.id) listed = true;
        if (!listed) out.segments.push_back(ps.meta);
    }
    return out;
}

void database::load_records(const std::string& name, std::vector<value> records) {
    stored_table& t = tables_.at(name);
    const nested_type ty = schema_type(t.schema);
    for (const auto& r : records)
        if (!conforms(r, ty))
            throw store_error("record does not conform to schema: " + r.to_string());
    std::vector<value> all = read_all_records(name);
    all.insert(all.end(), std::make_move_iterator(records.begin()),
               std::make_move_iterator(records.end()));
    apply_layout_records(name, parse(t.layout_text), std::move(all));
}

void database::apply_layout(const std::string& name, const expr_ptr& layout) {
    std::vector<value> records = read_all_records(name);
    apply_layout_records(name, layout, std::move(records));
}

void database::apply_layout_records(const std::string& name, const expr_ptr& layout,
                                    std::vector<value> records) {
    stored_table& t = tables_.at(name);

    bind_env benv;
    benv.tables[t.name] = t.schema;
    auto errors = bind_check(layout, benv);
    if (!errors.empty()) {
        std::string msg = "layout expression does not bind: ";
        for (const auto& e : errors) msg += e.message + "; ";
        throw store_error(msg);
    }

    layout_plan plan = analyze_layout(layout, t.schema);

    // Render into fresh pages; nothing the old layout references is touched
    // until the catalog swap below.
    std::uint64_t saved_next_id = next_segment_id_;
    std::set<std::uint64_t> saved_free = free_pages_;
    render_output out;
    try {
        out = render(t, plan, records);
    } catch (...) {
        next_segment_id_ = saved_next_id;
        free_pages_ = std::move(saved_free);
        throw;
    }

    std::vector<std::uint64_t> old_segments = t.segment_ids;
    if (t.celldir_segment) old_segments.push_back(t.celldir_segment);
    for (const auto& [g, id] : t.perm_segments) old_segments.push_back(id);

    t.layout_text = format(layout);
    t.plan = std::move(plan);
    t.record_count = out.record_count;
    t.segment_ids.clear();
    for (const auto& s : out.segments) {
        segments_[s.id] = s;
        bool aux = s.id == out.celldir_segment;
        for (const auto& [g, id] : out.perm_segments)
            if (id == s.id) aux = true;
        if (!aux) t.segment_ids.push_back(s.id);
    }
    t.celldir_segment = out.celldir_segment;
    t.perm_segments = out.perm_segments;
    t.directory = out.directory;
    t.perms = out.perms;

    write_catalog_and_swap();

    // Reclaim the replaced layout's pages.
    for (auto id : old_segments) {
        auto it = segments_.find(id);
        if (it == segments_.end()) continue;
        for (std::uint64_t p = 0; p < it->second.page_span; ++p)
            free_pages_.insert(it->second.first_page + p);
        segments_.erase(it);
    }
}

}  // namespace rodent
