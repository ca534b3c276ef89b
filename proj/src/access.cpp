#include "rodent/access.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace rodent {

// --- predicate -------------------------------------------------------------------

namespace {

std::size_t field_index(const std::vector<std::string>& labels, const std::string& attr) {
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == attr) return i;
    throw access_error("unknown field: " + attr);
}

bool value_equals(const value& a, const value& b) {
    if (a.is_numeric() && b.is_numeric()) {
        if (a.is_int() && b.is_int()) return a.as_int() == b.as_int();
        return a.as_double() == b.as_double();
    }
    return a == b;
}

}  // namespace

bool predicate::matches(const std::vector<std::string>& labels, const value& record) const {
    for (const auto& r : ranges) {
        const value& v = record[field_index(labels, r.attr)];
        if (!v.is_numeric()) return false;
        double x = v.as_double();
        if (r.low && x < *r.low) return false;
        if (r.high && x >= *r.high) return false;
    }
    for (const auto& [attr, want] : equalities) {
        if (!value_equals(record[field_index(labels, attr)], want)) return false;
    }
    return true;
}

predicate predicate::parse(const std::string& text) {
    predicate p;
    std::size_t pos = 0;
    std::map<std::string, range> open_ranges;
    while (pos < text.size()) {
        std::size_t amp = text.find('&', pos);
        std::string part =
            text.substr(pos, amp == std::string::npos ? std::string::npos : amp - pos);
        std::size_t op_pos = part.find_first_of("<>=");
        if (op_pos == std::string::npos || op_pos == 0)
            throw access_error("bad predicate term: " + part);
        std::string attr = part.substr(0, op_pos);
        std::string op, rhs;
        if (part[op_pos] == '>' && op_pos + 1 < part.size() && part[op_pos + 1] == '=') {
            op = ">=";
            rhs = part.substr(op_pos + 2);
        } else if (part[op_pos] == '<') {
            op = "<";
            rhs = part.substr(op_pos + 1);
        } else if (part[op_pos] == '=') {
            op = "=";
            rhs = part.substr(op_pos + 1);
        } else {
            throw access_error("bad predicate operator in: " + part +
                               " (use attr>=v, attr<v, attr=v)");
        }
        if (rhs.empty()) throw access_error("missing value in predicate term: " + part);
        if (op == "=") {
            char* end = nullptr;
            double num = std::strtod(rhs.c_str(), &end);
            if (end && *end == '\0')
                p.equalities.emplace_back(attr, value(num));
            else
                p.equalities.emplace_back(attr, value(rhs));
        } else {
            double num = std::strtod(rhs.c_str(), nullptr);
            auto& r = open_ranges[attr];
            r.attr = attr;
            if (op == ">=") r.low = num;
            else r.high = num;
        }
        if (amp == std::string::npos) break;
        pos = amp + 1;
    }
    for (auto& [attr, r] : open_ranges) {
        if (r.low && r.high && !(*r.low < *r.high))
            throw access_error("empty range for " + attr);
        p.ranges.push_back(std::move(r));
    }
    return p;
}

// --- shared scan machinery ------------------------------------------------------------

namespace {

struct extent {
    std::uint64_t offset = 0;  // absolute bytes
    std::uint64_t len = 0;
};

std::uint64_t pages_of(const extent& e, std::uint32_t P) {
    if (e.len == 0) return 0;
    return (e.offset + e.len - 1) / P - e.offset / P + 1;
}

// Distinct pages/seeks an extent list would cost (mirrors page_file counting).
void estimate_extents(const std::vector<extent>& extents, std::uint32_t P,
                      std::uint64_t& pages, std::uint64_t& seeks) {
    std::set<std::uint64_t> fetched;
    std::uint64_t last_end = static_cast<std::uint64_t>(-1);
    for (const auto& e : extents) {
        if (e.offset != last_end) seeks += 1;
        last_end = e.offset + e.len;
        if (e.len == 0) continue;
        for (std::uint64_t p = e.offset / P; p <= (e.offset + e.len - 1) / P; ++p)
            if (fetched.insert(p).second) pages += 1;
    }
}

struct loaded_table {
    std::vector<std::string> labels;
    std::vector<value> records;
};

// Unnests grouped entries down to record level.
void unnest_into(const value& v, int levels, std::vector<value>& out) {
    if (levels <= 0) {
        out.push_back(v);
        return;
    }
    for (const auto& c : v.children()) unnest_into(c, levels - 1, out);
}

// Fallback for blob layouts: maximal all-scalar lists are records.
void unnest_blob(const value& v, std::vector<value>& out) {
    if (v.is_scalar()) {
        out.push_back(value(value::list{v}));
        return;
    }
    bool all_scalar = !v.children().empty();
    for (const auto& c : v.children())
        if (c.is_list()) all_scalar = false;
    if (all_scalar) {
        out.push_back(v);
        return;
    }
    for (const auto& c : v.children()) unnest_blob(c, out);
}

struct cell_read_plan {
    std::vector<std::size_t> cell_ids;  // indexes into directory cells, stored order
    std::vector<extent> extents;        // merged byte runs
};

bool cell_overlaps(const cell_directory& dir, const cell_entry& cell,
                   const std::vector<std::string>& grid_attrs, const predicate& pred) {
    for (std::size_t d = 0; d < dir.dims.size(); ++d) {
        const std::string& attr = d < grid_attrs.size() ? grid_attrs[d] : dir.dims[d].attr;
        for (const auto& r : pred.ranges) {
            if (r.attr != attr) continue;
            if (r.high && !(cell.mins[d] < *r.high)) return false;
            if (r.low && !(cell.maxs[d] >= *r.low)) return false;
        }
        for (const auto& [eattr, ev] : pred.equalities) {
            if (eattr != attr || !ev.is_numeric()) continue;
            double x = ev.as_double();
            if (x < cell.mins[d] || x > cell.maxs[d]) return false;
        }
    }
    return true;
}

cell_read_plan plan_cells(const database& db, const stored_table& t, const segment& seg,
                          const predicate* pred) {
    cell_read_plan plan;
    const cell_directory& dir = *t.directory;
    std::uint64_t base = seg.first_page * db.file().page_size();
    for (std::size_t i = 0; i < dir.cells.size(); ++i) {
        const cell_entry& c = dir.cells[i];
        if (pred && !cell_overlaps(dir, c, t.plan.grid_attrs, *pred)) continue;
        plan.cell_ids.push_back(i);
        extent e{base + c.byte_offset, c.byte_len};
        if (!plan.extents.empty() &&
            plan.extents.back().offset + plan.extents.back().len == e.offset) {
            plan.extents.back().len += e.len;  // byte-contiguous cells form one run
        } else {
            plan.extents.push_back(e);
        }
    }
    return plan;
}

value decode_cell(const std::uint8_t* data, std::size_t len, const layout_plan& plan) {
    byte_reader in(data, len);
    std::uint64_t n = in.get_varint();
    if (plan.cellformat == layout_plan::cell_format::tuples) {
        value::list records;
        records.reserve(n);
        for (std::uint64_t i = 0; i < n; ++i)
            records.push_back(decode_entry(in, plan.cell_record_type));
        return value(std::move(records));
    }
    std::vector<std::vector<value>> cols(plan.cell_col_kinds.size());
    for (std::size_t c = 0; c < cols.size(); ++c) {
        if (plan.cell_col_delta[c]) {
            cols[c] = decode_delta_block(in, plan.cell_col_kinds[c], n);
        } else {
            cols[c].reserve(n);
            for (std::uint64_t i = 0; i < n; ++i)
                cols[c].push_back(decode_entry(in, stype::scalar(plan.cell_col_kinds[c])));
        }
    }
    value::list records;
    records.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        value::list rec;
        rec.reserve(cols.size());
        for (const auto& col : cols) rec.push_back(col[i]);
        records.emplace_back(std::move(rec));
    }
    return value(std::move(records));
}

struct executor {
    database& db;
    const stored_table& t;
    std::set<std::uint64_t> fetched;

    std::uint32_t P() const { return db.file().page_size(); }

    extent payload_extent(const segment& seg) const {
        std::uint64_t off_pages =
            db.segment_has_offsets(seg, t) ? db.offsets_page_count(seg) : 0;
        return {(seg.first_page + off_pages) * P(), (seg.page_span - off_pages) * P()};
    }

    std::vector<value> decode_segment_entries(const segment& seg, const stype& ty, bool delta,
                                              scalar_kind delta_kind) {
        extent e = payload_extent(seg);
        byte_buffer bytes = db.file().read_extent(e.offset, e.len, &fetched);
        byte_reader in(bytes.data(), bytes.size());
        if (delta) return decode_delta_block(in, delta_kind, seg.entry_count);
        std::vector<value> out;
        out.reserve(seg.entry_count);
        for (std::uint64_t i = 0; i < seg.entry_count; ++i)
            out.push_back(decode_entry(in, ty));
        return out;
    }

    loaded_table load(const predicate* pred,
                      const std::optional<std::vector<std::string>>& needed_attrs) {
        const layout_plan& plan = t.plan;
        loaded_table out;
        switch (plan.kind) {
            case layout_plan::p_kind::rows: {
                const segment& seg = db.segment_by_id(t.segment_ids.at(0));
                out.labels = plan.out_labels;
                std::vector<value> entries =
                    decode_segment_entries(seg, plan.entry_type, false, scalar_kind::int64);
                if (plan.unnest_levels == 0 &&
                    plan.entry_type.kind == stype::t_kind::scalar) {
                    for (auto& e : entries) out.records.push_back(value(value::list{e}));
                } else {
                    for (const auto& e : entries)
                        unnest_into(e, plan.unnest_levels, out.records);
                }
                return out;
            }
            case layout_plan::p_kind::columns: {
                // Read only the groups covering the needed attributes.
                std::vector<bool> group_needed(plan.groups.size(), !needed_attrs.has_value());
                if (needed_attrs) {
                    for (std::size_t g = 0; g < plan.groups.size(); ++g)
                        for (const auto& attr : plan.groups[g].labels)
                            for (const auto& want : *needed_attrs)
                                if (attr == want) group_needed[g] = true;
                }
                std::uint64_t nrows = t.record_count;
                std::vector<std::vector<value>> group_entries(plan.groups.size());
                for (std::size_t g = 0; g < plan.groups.size(); ++g) {
                    if (!group_needed[g]) continue;
                    const segment& seg = db.segment_by_id(t.segment_ids.at(g));
                    const auto& grp = plan.groups[g];
                    std::vector<value> entries =
                        decode_segment_entries(seg, grp.entry_type, grp.delta, grp.delta_kind);
                    if (entries.size() != nrows)
                        throw access_error("column group length mismatch");
                    // Realign differently ordered groups to logical order.
                    auto pit = t.perms.find(static_cast<std::uint32_t>(g));
                    if (pit != t.perms.end()) {
                        std::vector<value> logical(entries.size());
                        for (std::size_t s = 0; s < entries.size(); ++s)
                            logical[pit->second[s]] = std::move(entries[s]);
                        entries = std::move(logical);
                    }
                    group_entries[g] = std::move(entries);
                }
                for (std::size_t g = 0; g < plan.groups.size(); ++g) {
                    if (!group_needed[g]) continue;
                    for (const auto& l : plan.groups[g].labels) out.labels.push_back(l);
                }
                for (std::uint64_t i = 0; i < nrows; ++i) {
                    value::list rec;
                    for (std::size_t g = 0; g < plan.groups.size(); ++g) {
                        if (!group_needed[g]) continue;
                        const value& e = group_entries[g][i];
                        if (plan.groups[g].entry_type.kind == stype::t_kind::record)
                            for (const auto& f : e.children()) rec.push_back(f);
                        else
                            rec.push_back(e);
                    }
                    out.records.emplace_back(std::move(rec));
                }
                return out;
            }
            case layout_plan::p_kind::cells: {
                const segment& seg = db.segment_by_id(t.segment_ids.at(0));
                out.labels = plan.out_labels;
                if (!t.directory) throw access_error("gridded table is missing its directory");
                cell_read_plan cp = plan_cells(db, t, seg, pred);
                const cell_directory& dir = *t.directory;
                // Read merged runs, then slice each cell out of its run.
                std::size_t cell_cursor = 0;
                for (const auto& e : cp.extents) {
                    byte_buffer bytes = db.file().read_extent(e.offset, e.len, &fetched);
                    std::uint64_t base =
                        seg.first_page * static_cast<std::uint64_t>(P());
                    while (cell_cursor < cp.cell_ids.size()) {
                        const cell_entry& c = dir.cells[cp.cell_ids[cell_cursor]];
                        std::uint64_t abs = base + c.byte_offset;
                        if (abs < e.offset || abs + c.byte_len > e.offset + e.len) break;
                        value cell = decode_cell(bytes.data() + (abs - e.offset),
                                                 c.byte_len, plan);
                        for (const auto& rec : cell.children()) out.records.push_back(rec);
                        cell_cursor += 1;
                    }
                }
                return out;
            }
            case layout_plan::p_kind::blob: {
                const segment& seg = db.segment_by_id(t.segment_ids.at(0));
                extent e = payload_extent(seg);
                byte_buffer bytes = db.file().read_extent(e.offset, e.len, &fetched);
                byte_reader in(bytes.data(), bytes.size());
                value v = decode_tagged(in);
                out.labels = plan.out_labels;
                unnest_blob(v, out.records);
                return out;
            }
        }
        throw access_error("unhandled layout kind");
    }
};

std::optional<sort_order> stored_order_keys(const stored_table& t) {
    const layout_plan& plan = t.plan;
    ordering_desc d;
    switch (plan.kind) {
        case layout_plan::p_kind::rows:
            d = plan.order;
            break;
        case layout_plan::p_kind::columns:
            if (!t.perms.empty()) return sort_order{};  // insertion via perms
            d = plan.groups.empty() ? ordering_desc::insertion() : plan.groups[0].order;
            break;
        default:
            return std::nullopt;
    }
    if (d.kind == ordering_desc::o_kind::keys) return d.keys;
    if (d.kind == ordering_desc::o_kind::insertion) return sort_order{};
    return std::nullopt;
}

void sort_records(std::vector<value>& records, const std::vector<std::string>& labels,
                  const sort_order& order) {
    std::vector<std::size_t> idx;
    idx.reserve(order.size());
    for (const auto& [attr, desc] : order) idx.push_back(field_index(labels, attr));
    std::stable_sort(records.begin(), records.end(), [&](const value& a, const value& b) {
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const value& x = a[idx[k]];
            const value& y = b[idx[k]];
            bool less = order_key_less(x, y, {});
            bool greater = order_key_less(y, x, {});
            if (!less && !greater) continue;
            return order[k].second ? greater : less;
        }
        return false;
    });
}

}  // namespace

std::vector<column_def> stored_field_schema(const stored_table& t) {
    if (t.plan.out_labels.empty()) return t.schema;
    std::vector<column_def> out;
    for (std::size_t i = 0; i < t.plan.out_labels.size(); ++i)
        out.push_back({t.plan.out_labels[i], t.plan.out_kinds[i]});
    return out;
}

scan_result scan(database& db, const std::string& table, const scan_options& opts) {
    const stored_table& t = db.table(table);
    executor ex{db, t, {}};

    // Column layouts only read groups covering projected/filter/sort fields.
    std::optional<std::vector<std::string>> needed;
    if (opts.fields) {
        needed = *opts.fields;
        if (opts.pred) {
            for (const auto& r : opts.pred->ranges) needed->push_back(r.attr);
            for (const auto& [a, v] : opts.pred->equalities) needed->push_back(a);
        }
        if (opts.order)
            for (const auto& [a, d] : *opts.order) needed->push_back(a);
    }

    loaded_table loaded =
        ex.load(opts.pred && !opts.pred->empty() ? &*opts.pred : nullptr, needed);

    scan_result out;
    std::vector<value> records = std::move(loaded.records);

    if (opts.pred && !opts.pred->empty()) {
        std::vector<value> kept;
        kept.reserve(records.size());
        for (auto& r : records)
            if (opts.pred->matches(loaded.labels, r)) kept.push_back(std::move(r));
        records = std::move(kept);
    }

    if (opts.order && !opts.order->empty()) {
        auto stored = stored_order_keys(t);
        bool satisfied = stored && *stored == *opts.order;
        if (!satisfied) sort_records(records, loaded.labels, *opts.order);
    }

    if (opts.fields) {
        std::vector<std::size_t> idx;
        for (const auto& f : *opts.fields) idx.push_back(field_index(loaded.labels, f));
        std::vector<value> projected;
        projected.reserve(records.size());
        for (const auto& r : records) {
            value::list row;
            row.reserve(idx.size());
            for (std::size_t i : idx) row.push_back(r[i]);
            projected.emplace_back(std::move(row));
        }
        out.fields = *opts.fields;
        out.rows = std::move(projected);
    } else {
        out.fields = loaded.labels;
        out.rows = std::move(records);
    }
    return out;
}

std::vector<value> read_table_records(database& db, const stored_table& t) {
    executor ex{db, t, {}};
    return ex.load(nullptr, std::nullopt).records;
}

std::vector<value> database::read_all_records(const std::string& name) {
    return read_table_records(*this, table(name));
}

// --- getElement -----------------------------------------------------------------------

namespace {

std::vector<value> project_record(const value& rec, const std::vector<std::string>& labels,
                                  const std::optional<std::vector<std::string>>& fields) {
    if (!fields) return rec.children();
    std::vector<value> out;
    for (const auto& f : *fields) out.push_back(rec[field_index(labels, f)]);
    return out;
}

value record_of_entry(const value& e, const layout_plan& plan) {
    if (plan.kind == layout_plan::p_kind::rows &&
        plan.entry_type.kind == stype::t_kind::scalar)
        return value(value::list{e});
    return e;
}

}  // namespace

std::vector<value> get_element(database& db, const std::string& table,
                               std::span<const std::int64_t> index,
                               const std::optional<std::vector<std::string>>& fields) {
    const stored_table& t = db.table(table);
    const layout_plan& plan = t.plan;
    std::uint32_t P = db.file().page_size();

    if (index.empty()) throw access_error("empty index");

    if (plan.kind == layout_plan::p_kind::cells) {
        if (!t.directory) throw access_error("gridded table is missing its directory");
        const cell_directory& dir = *t.directory;
        if (index.size() != dir.dims.size() + 1)
            throw access_error("grid index needs one coordinate per dimension plus position");
        const cell_entry* cell = nullptr;
        for (const auto& c : dir.cells) {
            bool match = true;
            for (std::size_t d = 0; d < dir.dims.size(); ++d)
                if (c.index[d] != index[d]) match = false;
            if (match) {
                cell = &c;
                break;
            }
        }
        std::int64_t k = index[index.size() - 1];
        if (!cell || k < 0 || static_cast<std::uint64_t>(k) >= cell->count)
            throw access_error("index out of bounds");
        const segment& seg = db.segment_by_id(t.segment_ids.at(0));
        byte_buffer bytes = db.file().read_extent(
            seg.first_page * static_cast<std::uint64_t>(P) + cell->byte_offset, cell->byte_len);
        value cellv = decode_cell(bytes.data(), bytes.size(), plan);
        return project_record(cellv[static_cast<std::size_t>(k)], plan.out_labels, fields);
    }

    if (index.size() != 1) throw access_error("flat layouts take a single index");
    std::int64_t i = index[0];
    if (i < 0) throw access_error("index out of bounds");
    auto ui = static_cast<std::uint64_t>(i);

    switch (plan.kind) {
        case layout_plan::p_kind::rows: {
            const segment& seg = db.segment_by_id(t.segment_ids.at(0));
            if (plan.unnest_levels > 0) {
                // Grouped entries have no per-record offsets; decode sequentially.
                executor ex{db, t, {}};
                auto recs = ex.load(nullptr, std::nullopt).records;
                if (ui >= recs.size()) throw access_error("index out of bounds");
                return project_record(recs[ui], plan.out_labels, fields);
            }
            if (ui >= seg.entry_count) throw access_error("index out of bounds");
            std::size_t w = plan.entry_type.fixed_width();
            std::uint64_t payload_base =
                (seg.first_page + (w == 0 ? db.offsets_page_count(seg) : 0)) *
                static_cast<std::uint64_t>(P);
            if (w != 0) {
                byte_buffer bytes = db.file().read_extent(payload_base + ui * w, w);
                byte_reader in(bytes.data(), bytes.size());
                value e = decode_entry(in, plan.entry_type);
                return project_record(record_of_entry(e, plan), plan.out_labels, fields);
            }
            // Out-of-band offsets: two slots, then the payload slice.
            byte_buffer off = db.file().read_extent(
                seg.first_page * static_cast<std::uint64_t>(P) + ui * 8, 16);
            byte_reader oin(off.data(), off.size());
            std::uint64_t from = oin.get_u64();
            std::uint64_t to = oin.get_u64();
            byte_buffer bytes = db.file().read_extent(payload_base + from, to - from);
            byte_reader in(bytes.data(), bytes.size());
            value e = decode_entry(in, plan.entry_type);
            return project_record(record_of_entry(e, plan), plan.out_labels, fields);
        }
        case layout_plan::p_kind::columns: {
            if (ui >= t.record_count) throw access_error("index out of bounds");
            value::list rec;
            std::vector<std::string> labels;
            for (std::size_t g = 0; g < plan.groups.size(); ++g) {
                const auto& grp = plan.groups[g];
                const segment& seg = db.segment_by_id(t.segment_ids.at(g));
                std::uint64_t stored_pos = ui;
                auto pit = t.perms.find(static_cast<std::uint32_t>(g));
                if (pit != t.perms.end()) {
                    stored_pos = seg.entry_count;  // sentinel
                    for (std::size_t s = 0; s < pit->second.size(); ++s)
                        if (pit->second[s] == ui) stored_pos = s;
                    if (stored_pos == seg.entry_count)
                        throw access_error("permutation map is incomplete");
                }
                value e;
                if (grp.delta) {
                    executor ex{db, t, {}};
                    auto entries =
                        ex.decode_segment_entries(seg, grp.entry_type, true, grp.delta_kind);
                    e = entries.at(stored_pos);
                } else {
                    std::size_t w = grp.entry_type.fixed_width();
                    std::uint64_t payload_base =
                        (seg.first_page + (w == 0 ? db.offsets_page_count(seg) : 0)) *
                        static_cast<std::uint64_t>(P);
                    if (w != 0) {
                        byte_buffer bytes = db.file().read_extent(payload_base + stored_pos * w, w);
                        byte_reader in(bytes.data(), bytes.size());
                        e = decode_entry(in, grp.entry_type);
                    } else {
                        byte_buffer off = db.file().read_extent(
                            seg.first_page * static_cast<std::uint64_t>(P) + stored_pos * 8, 16);
                        byte_reader oin(off.data(), off.size());
                        std::uint64_t from = oin.get_u64();
                        std::uint64_t to = oin.get_u64();
                        byte_buffer bytes = db.file().read_extent(payload_base + from, to - from);
                        byte_reader in(bytes.data(), bytes.size());
                        e = decode_entry(in, grp.entry_type);
                    }
                }
                if (grp.entry_type.kind == stype::t_kind::record)
                    for (const auto& f : e.children()) rec.push_back(f);
                else
                    rec.push_back(e);
                for (const auto& l : grp.labels) labels.push_back(l);
            }
            return project_record(value(std::move(rec)), labels, fields);
        }
        default: {
            executor ex{db, t, {}};
            auto recs = ex.load(nullptr, std::nullopt).records;
            if (ui >= recs.size()) throw access_error("index out of bounds");
            return project_record(recs[ui], plan.out_labels, fields);
        }
    }
}

// --- costs ------------------------------------------------------------------------------

scan_estimate scan_cost(database& db, const std::string& table, const scan_options& opts,
                        const cost_model& model) {
    const stored_table& t = db.table(table);
    const layout_plan& plan = t.plan;
    std::uint32_t P = db.file().page_size();
    scan_estimate est;

    auto payload_pages = [&](const segment& seg) {
        std::uint64_t off = db.segment_has_offsets(seg, t) ? db.offsets_page_count(seg) : 0;
        return seg.page_span - off;
    };

    switch (plan.kind) {
        case layout_plan::p_kind::rows:
        case layout_plan::p_kind::blob: {
            const segment& seg = db.segment_by_id(t.segment_ids.at(0));
            est.data_pages = payload_pages(seg);
            est.seeks = 1;
            break;
        }
        case layout_plan::p_kind::columns: {
            std::optional<std::vector<std::string>> needed;
            if (opts.fields) {
                needed = *opts.fields;
                if (opts.pred) {
                    for (const auto& r : opts.pred->ranges) needed->push_back(r.attr);
                    for (const auto& [a, v] : opts.pred->equalities) needed->push_back(a);
                }
                if (opts.order)
                    for (const auto& [a, d] : *opts.order) needed->push_back(a);
            }
            for (std::size_t g = 0; g < plan.groups.size(); ++g) {
                bool want = !needed.has_value();
                if (needed) {
                    for (const auto& attr : plan.groups[g].labels)
                        for (const auto& w : *needed)
                            if (attr == w) want = true;
                }
                if (!want) continue;
                est.data_pages += payload_pages(db.segment_by_id(t.segment_ids.at(g)));
                est.seeks += 1;
            }
            break;
        }
        case layout_plan::p_kind::cells: {
            const segment& seg = db.segment_by_id(t.segment_ids.at(0));
            if (!t.directory) throw access_error("gridded table is missing its directory");
            const predicate* pred =
                opts.pred && !opts.pred->empty() ? &*opts.pred : nullptr;
            cell_read_plan cp = plan_cells(db, t, seg, pred);
            std::uint64_t pages = 0, seeks = 0;
            estimate_extents(cp.extents, P, pages, seeks);
            est.data_pages = pages;
            est.seeks = seeks;
            if (t.celldir_segment) {
                est.directory_pages = db.segment_by_id(t.celldir_segment).page_span;
                est.seeks += 1;
            }
            break;
        }
    }
    est.ms = static_cast<double>(est.seeks) * model.seek_ms +
             static_cast<double>(est.data_pages + est.directory_pages) * P *
                 model.transfer_ms_per_byte;
    return est;
}

double get_element_cost(database& db, const std::string& table,
                        std::span<const std::int64_t> index, const cost_model& model) {
    const stored_table& t = db.table(table);
    const layout_plan& plan = t.plan;
    std::uint32_t P = db.file().page_size();
    std::uint64_t pages = 0;

    auto entry_pages = [&](const stype& ty, const segment& seg, bool delta) -> std::uint64_t {
        if (delta) return seg.page_span;  // sequential decode up to the element
        std::size_t w = ty.fixed_width();
        if (w != 0) return std::max<std::uint64_t>(1, (w + P - 1) / P);
        // One offsets page plus the payload page(s) holding the entry.
        std::uint64_t payload = seg.page_span - db.offsets_page_count(seg);
        std::uint64_t avg = seg.entry_count
                                ? std::max<std::uint64_t>(1, payload * P / seg.entry_count)
                                : 1;
        return 1 + std::max<std::uint64_t>(1, (avg + P - 1) / P);
    };

    switch (plan.kind) {
        case layout_plan::p_kind::rows: {
            const segment& seg = db.segment_by_id(t.segment_ids.at(0));
            if (plan.unnest_levels > 0) pages = seg.page_span;
            else pages = entry_pages(plan.entry_type, seg, false);
            break;
        }
        case layout_plan::p_kind::columns:
            for (std::size_t g = 0; g < plan.groups.size(); ++g)
                pages += entry_pages(plan.groups[g].entry_type,
                                     db.segment_by_id(t.segment_ids.at(g)),
                                     plan.groups[g].delta);
            break;
        case layout_plan::p_kind::cells: {
            if (!t.directory || index.size() != t.directory->dims.size() + 1)
                pages = 1;
            else {
                const cell_directory& dir = *t.directory;
                pages = 1;
                for (const auto& c : dir.cells) {
                    bool match = true;
                    for (std::size_t d = 0; d < dir.dims.size(); ++d)
                        if (c.index[d] != index[d]) match = false;
                    if (match) {
                        pages = std::max<std::uint64_t>(
                            1, pages_of({0, std::max<std::uint64_t>(c.byte_len, 1)}, P));
                        break;
                    }
                }
            }
            break;
        }
        case layout_plan::p_kind::blob:
            pages = db.segment_by_id(t.segment_ids.at(0)).page_span;
            break;
    }
    return static_cast<double>(pages) * P * model.transfer_ms_per_byte + model.seek_ms;
}

std::vector<ordering_desc> order_list(database& db, const std::string& table) {
    const stored_table& t = db.table(table);
    const layout_plan& plan = t.plan;
    switch (plan.kind) {
        case layout_plan::p_kind::rows:
            return {plan.order};
        case layout_plan::p_kind::columns:
            if (!t.perms.empty()) return {ordering_desc::insertion()};
            return {plan.groups.empty() ? ordering_desc::insertion() : plan.groups[0].order};
        case layout_plan::p_kind::cells:
            if (plan.morton) return {ordering_desc::morton(plan.grid_attrs)};
            return {ordering_desc::insertion()};
        case layout_plan::p_kind::blob:
            return {ordering_desc::insertion()};
    }
    return {};
}

// --- cursor ------------------------------------------------------------------------------

table_cursor::table_cursor(database& db, std::string table, std::optional<sort_order> order)
    : db_(db), table_(std::move(table)), order_(std::move(order)) {}

void table_cursor::materialize() {
    if (snapshot_) return;
    scan_options opts;
    opts.order = order_;
    snapshot_ = scan(db_, table_, opts);
}

std::optional<std::vector<value>> table_cursor::get_element(std::int64_t index) {
    pos_ = index;
    if (!order_ || order_->empty()) {
        // Stored default order: use the positioned access path.
        try {
            std::array<std::int64_t, 1> idx{index};
            return rodent::get_element(db_, table_, idx);
        } catch (const access_error&) {
            return std::nullopt;
        }
    }
    materialize();
    if (index < 0 || static_cast<std::size_t>(index) >= snapshot_->rows.size())
        return std::nullopt;
    return snapshot_->rows[static_cast<std::size_t>(index)].children();
}

std::optional<std::vector<value>> table_cursor::next() {
    if (pos_ < -1) throw access_error("cursor not positioned");
    materialize();
    std::int64_t next_pos = pos_ + 1;
    if (next_pos < 0 || static_cast<std::size_t>(next_pos) >= snapshot_->rows.size())
        return std::nullopt;
    pos_ = next_pos;
    return snapshot_->rows[static_cast<std::size_t>(next_pos)].children();
}

const std::vector<std::string>& table_cursor::fields() {
    materialize();
    return snapshot_->fields;
}

}  // namespace rodent
