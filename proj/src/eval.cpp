#include "rodent/eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <set>
#include <unordered_map>

namespace rodent {

// --- shape --------------------------------------------------------------------

shape shape::scalar() {
    shape s;
    s.kind = s_kind::scalar;
    return s;
}

shape shape::record(std::vector<std::string> labels) {
    shape s;
    s.kind = s_kind::record;
    s.labels = std::move(labels);
    return s;
}

shape shape::list_of(shape element) {
    shape s;
    s.kind = s_kind::list;
    s.element = std::make_shared<shape>(std::move(element));
    return s;
}

const shape& shape::elem() const {
    static const shape unknown_shape;
    return element ? *element : unknown_shape;
}

std::optional<std::size_t> shape::label_index(const std::string& name) const {
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == name) return i;
    return std::nullopt;
}

namespace {

shape value_shape(const value& v) {
    if (v.is_scalar()) return shape::scalar();
    const auto& kids = v.children();
    if (kids.empty()) return shape::list_of(shape::unknown());
    bool all_scalar = true;
    for (const auto& k : kids)
        if (k.is_list()) { all_scalar = false; break; }
    if (all_scalar) return shape::list_of(shape::scalar());
    return shape::list_of(value_shape(kids.front()));
}

shape head_shape(const std::vector<expr_ptr>& heads,
                 const std::function<shape(const expr_ptr&)>& of) {
    if (heads.size() == 1) return of(heads[0]);
    std::vector<std::string> labels;
    bool labeled = true;
    for (const auto& h : heads) {
        if (h->kind() == expr_kind::field_access) labels.push_back(h->name());
        else labeled = false;
    }
    return shape::record(labeled ? std::move(labels) : std::vector<std::string>{});
}

}  // namespace

shape infer_shape(const expr_ptr& e,
                  const std::map<std::string, shape>& var_shapes,
                  const std::function<const std::vector<column_def>*(const std::string&)>&
                      table_lookup) {
    std::function<shape(const expr_ptr&, std::map<std::string, shape>&)> go =
        [&](const expr_ptr& x, std::map<std::string, shape>& vars) -> shape {
        auto sub = [&](const expr_ptr& c) { return go(c, vars); };
        switch (x->kind()) {
            case expr_kind::literal:
                return value_shape(x->literal_value());
            case expr_kind::bool_lit:
            case expr_kind::arith:
                return shape::scalar();
            case expr_kind::table_ref: {
                const auto* schema = table_lookup ? table_lookup(x->name()) : nullptr;
                if (!schema) return shape::unknown();
                std::vector<std::string> labels;
                for (const auto& c : *schema) labels.push_back(c.name);
                return shape::list_of(shape::record(std::move(labels)));
            }
            case expr_kind::var_ref: {
                auto it = vars.find(x->name());
                return it == vars.end() ? shape::unknown() : it->second;
            }
            case expr_kind::field_access:
                return shape::scalar();
            case expr_kind::helper_call:
                switch (x->helper()) {
                    case helper_kind::bin: return shape::list_of(shape::scalar());
                    case helper_kind::zip: return shape::list_of(shape::record({}));
                    default: return shape::scalar();
                }
            case expr_kind::list_ctor: {
                bool all_scalar = true;
                std::vector<std::string> labels;
                bool labeled = true;
                for (const auto& c : x->children()) {
                    shape cs = sub(c);
                    if (cs.kind == shape::s_kind::list ||
                        cs.kind == shape::s_kind::record ||
                        cs.kind == shape::s_kind::unknown)
                        all_scalar = false;
                    if (c->kind() == expr_kind::field_access) labels.push_back(c->name());
                    else labeled = false;
                }
                if (all_scalar)
                    return shape::record(labeled ? std::move(labels)
                                                 : std::vector<std::string>{});
                return shape::list_of(sub(x->children().front()));
            }
            case expr_kind::comprehension: {
                std::map<std::string, shape> inner = vars;
                int shaping_wraps = 0;
                for (const auto& q : x->qualifiers()) {
                    if (q.kind == qualifier::q_kind::generator) {
                        shape src = go(q.e, inner);
                        inner[q.var] = src.is_list() ? src.elem() : shape::unknown();
                    } else if (q.kind == qualifier::q_kind::group_by) {
                        shaping_wraps += 1;
                    } else if (q.kind == qualifier::q_kind::partition_by) {
                        shaping_wraps += static_cast<int>(q.parts.size());
                    }
                }
                shape h = head_shape(x->children(),
                                     [&](const expr_ptr& c) { return go(c, inner); });
                shape out = shape::list_of(std::move(h));
                for (int i = 0; i < shaping_wraps; ++i) out = shape::list_of(std::move(out));
                return out;
            }
            case expr_kind::transform: {
                const std::string& n = x->name();
                auto input = [&](std::size_t i) -> shape {
                    return i < x->children().size() ? sub(x->children()[i]) : shape::unknown();
                };
                if (n == "project") {
                    std::vector<std::string> attrs;
                    for (const auto& a : x->static_args())
                        if (a.kind == static_arg::a_kind::ident) attrs.push_back(a.name);
                    return shape::list_of(shape::record(std::move(attrs)));
                }
                if (n == "select") return input(1);
                if (n == "partition") return shape::list_of(input(1));
                if (n == "append" || n == "unfold" || n == "prejoin" || n == "fold")
                    return shape::list_of(shape::record({}));
                if (n == "delta") return shape::list_of(shape::scalar());
                if (n == "transpose") return input(0);
                if (n == "zorder") {
                    shape s = input(0);
                    return s.is_list() ? s.elem() : shape::unknown();
                }
                if (n == "grid") {
                    shape out = input(0);
                    for (std::size_t i = 0; i < x->static_args().size(); ++i)
                        out = shape::list_of(std::move(out));
                    return out;
                }
                return shape::unknown();
            }
        }
        return shape::unknown();
    };
    std::map<std::string, shape> vars = var_shapes;
    return go(e, vars);
}

// --- env ------------------------------------------------------------------------

const binding* env::lookup(const std::string& name) const {
    for (auto it = scopes.rbegin(); it != scopes.rend(); ++it) {
        auto f = it->find(name);
        if (f != it->end()) return &f->second;
    }
    return nullptr;
}

std::map<std::string, shape> env::var_shapes() const {
    std::map<std::string, shape> out;
    for (const auto& scope : scopes)
        for (const auto& [name, b] : scope) out[name] = b.sh;
    return out;
}

void env::push_scope() { scopes.emplace_back(); }
void env::pop_scope() { scopes.pop_back(); }
void env::bind(const std::string& name, binding b) { scopes.back()[name] = std::move(b); }

// --- value ordering & hashing ----------------------------------------------------

bool value_less(const value& a, const value& b) {
    auto rank = [](const value& v) {
        if (v.is_int()) return 0;
        if (v.is_float()) return 1;
        if (v.is_str()) return 2;
        return 3;
    };
    if (rank(a) != rank(b)) return rank(a) < rank(b);
    if (a.is_int()) return a.as_int() < b.as_int();
    if (a.is_float()) return a.as_float() < b.as_float();
    if (a.is_str()) return a.as_str() < b.as_str();
    const auto& ka = a.children();
    const auto& kb = b.children();
    for (std::size_t i = 0; i < std::min(ka.size(), kb.size()); ++i) {
        if (value_less(ka[i], kb[i])) return true;
        if (value_less(kb[i], ka[i])) return false;
    }
    return ka.size() < kb.size();
}

bool order_key_less(const value& a, const value& b, source_span sp) {
    if (a.is_list() || b.is_list())
        throw eval_error(sp, "type error: ordering on a List key");
    if (a.is_str() != b.is_str())
        throw eval_error(sp, "type error: ordering mixes strings and numbers");
    if (a.is_str()) return a.as_str() < b.as_str();
    if (a.is_int() && b.is_int()) return a.as_int() < b.as_int();
    return a.as_double() < b.as_double();
}

namespace {

struct value_hash {
    std::size_t operator()(const value& v) const {
        std::size_t h = 1469598103934665603ull;
        auto mix = [&](std::uint64_t x) {
            h ^= x;
            h *= 1099511628211ull;
        };
        if (v.is_int()) {
            mix(1);
            mix(static_cast<std::uint64_t>(v.as_int()));
        } else if (v.is_float()) {
            mix(2);
            mix(std::bit_cast<std::uint64_t>(v.as_float()));
        } else if (v.is_str()) {
            mix(3);
            for (char c : v.as_str()) mix(static_cast<unsigned char>(c));
        } else {
            mix(4);
            for (const auto& k : v.children()) mix((*this)(k));
        }
        return h;
    }
};

// --- morton ------------------------------------------------------------------

}  // namespace

std::uint64_t morton_code(std::uint64_t a, std::uint64_t b) {
    int width = std::max({static_cast<int>(std::bit_width(a)),
                          static_cast<int>(std::bit_width(b)), 1});
    std::uint64_t code = 0;
    for (int k = width - 1; k >= 0; --k) {
        code = (code << 1) | ((a >> k) & 1u);
        code = (code << 1) | ((b >> k) & 1u);
    }
    return code;
}

// --- transforms ----------------------------------------------------------------

namespace {

std::size_t resolve_label(const std::vector<std::string>& labels, const std::string& attr,
                          source_span sp) {
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == attr) return i;
    throw eval_error(sp, "unknown attribute: " + attr);
}

const value::list& record_children(const value& r, source_span sp) {
    if (!r.is_list()) throw eval_error(sp, "expected a record (list) element");
    return r.children();
}

}  // namespace

value transform_project(const std::vector<std::string>& attrs, const value& n,
                        const std::vector<std::string>& labels) {
    source_span sp{};
    std::vector<std::size_t> idx;
    idx.reserve(attrs.size());
    for (const auto& a : attrs) idx.push_back(resolve_label(labels, a, sp));
    value::list out;
    out.reserve(n.is_list() ? n.size() : 0);
    for (const auto& r : n.children()) {
        const auto& kids = record_children(r, sp);
        value::list row;
        row.reserve(idx.size());
        for (std::size_t i : idx) {
            if (i >= kids.size()) throw eval_error(sp, "record narrower than schema");
            row.push_back(kids[i]);
        }
        out.emplace_back(std::move(row));
    }
    return value(std::move(out));
}

value transform_append(const value& elements, const value& n) {
    source_span sp{};
    if (!elements.is_list() || !n.is_list())
        throw eval_error(sp, "append expects two nestings");
    if (elements.size() != n.size())
        throw eval_error(sp, "append length mismatch: " + std::to_string(elements.size()) +
                                 " vs " + std::to_string(n.size()));
    value::list out;
    out.reserve(n.size());
    for (std::size_t i = 0; i < n.size(); ++i) {
        value::list row = record_children(n[i], sp);
        row.push_back(elements[i]);
        out.emplace_back(std::move(row));
    }
    return value(std::move(out));
}

namespace {

value fold_key(const value& r, const std::vector<std::size_t>& a_idx, source_span sp) {
    const auto& kids = record_children(r, sp);
    if (a_idx.size() == 1) return kids[a_idx[0]];
    value::list key;
    for (std::size_t i : a_idx) key.push_back(kids[i]);
    return value(std::move(key));
}

value fold_bval(const value& r, const std::vector<std::size_t>& b_idx, source_span sp) {
    const auto& kids = record_children(r, sp);
    if (b_idx.size() == 1) return kids[b_idx[0]];
    value::list b;
    for (std::size_t i : b_idx) b.push_back(kids[i]);
    return value(std::move(b));
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
fold_indices(const std::vector<std::string>& b_attrs, const std::vector<std::string>& a_attrs,
             const std::vector<std::string>& labels, source_span sp) {
    std::vector<std::size_t> bi, ai;
    for (const auto& a : b_attrs) bi.push_back(resolve_label(labels, a, sp));
    for (const auto& a : a_attrs) ai.push_back(resolve_label(labels, a, sp));
    return {bi, ai};
}

}  // namespace

value transform_fold(const std::vector<std::string>& b_attrs,
                     const std::vector<std::string>& a_attrs, const value& n,
                     const std::vector<std::string>& labels) {
    source_span sp{};
    auto [b_idx, a_idx] = fold_indices(b_attrs, a_attrs, labels, sp);
    // Nested for loops: one entry per distinct A-value in first-occurrence order.
    value::list out;
    std::vector<value> seen;
    for (const auto& r : n.children()) {
        value key = fold_key(r, a_idx, sp);
        bool dup = false;
        for (const auto& s : seen)
            if (s == key) { dup = true; break; }
        if (dup) continue;
        value::list inner;
        for (const auto& r2 : n.children()) {
            if (fold_key(r2, a_idx, sp) == key) inner.push_back(fold_bval(r2, b_idx, sp));
        }
        seen.push_back(key);
        out.emplace_back(value::list{key, value(std::move(inner))});
    }
    return value(std::move(out));
}

value transform_fold_hashed(const std::vector<std::string>& b_attrs,
                            const std::vector<std::string>& a_attrs, const value& n,
                            const std::vector<std::string>& labels) {
    source_span sp{};
    auto [b_idx, a_idx] = fold_indices(b_attrs, a_attrs, labels, sp);
    std::unordered_map<value, std::vector<value>, value_hash> groups;
    std::vector<value> order;
    for (const auto& r : n.children()) {
        value key = fold_key(r, a_idx, sp);
        auto [it, inserted] = groups.try_emplace(key);
        if (inserted) order.push_back(key);
        it->second.push_back(fold_bval(r, b_idx, sp));
    }
    value::list out;
    out.reserve(order.size());
    for (const auto& key : order) {
        value::list inner = groups.at(key);
        out.emplace_back(value::list{key, value(std::move(inner))});
    }
    return value(std::move(out));
}

value transform_unfold(const value& n) {
    source_span sp{};
    value::list out;
    for (const auto& entry : n.children()) {
        const auto& kids = record_children(entry, sp);
        if (kids.size() != 2 || !kids[1].is_list())
            throw eval_error(sp, "unfold expects entries of the form [a, list]");
        auto flat = [](const value& v, value::list& into) {
            if (v.is_list())
                for (const auto& c : v.children()) into.push_back(c);
            else
                into.push_back(v);
        };
        for (const auto& b : kids[1].children()) {
            value::list row;
            flat(kids[0], row);
            flat(b, row);
            out.emplace_back(std::move(row));
        }
    }
    return value(std::move(out));
}

value transform_delta(const value& n) {
    source_span sp{};
    if (!n.is_list()) throw eval_error(sp, "delta expects a list");
    const auto& kids = n.children();
    if (kids.empty()) return value(value::list{});
    bool all_int = true, all_float = true;
    for (const auto& k : kids) {
        all_int &= k.is_int();
        all_float &= k.is_float();
    }
    if (!all_int && !all_float)
        throw eval_error(sp, "delta expects all-int or all-float input");
    value::list out;
    out.reserve(kids.size());
    if (all_int) {
        std::int64_t prev = 0;
        for (const auto& k : kids) {
            out.emplace_back(k.as_int() - prev);
            prev = k.as_int();
        }
    } else {
        double prev = 0.0;
        for (const auto& k : kids) {
            out.emplace_back(k.as_float() - prev);
            prev = k.as_float();
        }
    }
    return value(std::move(out));
}

value transform_zorder(const value& n) {
    source_span sp{};
    if (!n.is_list()) throw eval_error(sp, "zorder expects a two-level nesting");
    struct item {
        std::uint64_t code;
        const value* v;
    };
    std::vector<item> items;
    for (std::size_t i = 0; i < n.size(); ++i) {
        if (!n[i].is_list())
            throw eval_error(sp, "zorder expects a two-level nesting");
        for (std::size_t j = 0; j < n[i].size(); ++j)
            items.push_back({morton_code(i, j), &n[i][j]});
    }
    std::stable_sort(items.begin(), items.end(),
                     [](const item& a, const item& b) { return a.code < b.code; });
    value::list out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(*it.v);
    return value(std::move(out));
}

value transform_transpose(const value& n) {
    source_span sp{};
    if (!n.is_list()) throw eval_error(sp, "transpose expects a nesting");
    if (n.size() == 0) return value(value::list{});
    std::size_t cols = 0;
    for (std::size_t i = 0; i < n.size(); ++i) {
        if (!n[i].is_list()) throw eval_error(sp, "transpose expects a two-level nesting");
        if (i == 0) cols = n[i].size();
        else if (n[i].size() != cols)
            throw eval_error(sp, "transpose expects a rectangular nesting");
    }
    value::list out;
    out.reserve(cols);
    for (std::size_t j = 0; j < cols; ++j) {
        value::list col;
        col.reserve(n.size());
        for (std::size_t i = 0; i < n.size(); ++i) col.push_back(n[i][j]);
        out.emplace_back(std::move(col));
    }
    return value(std::move(out));
}

namespace {

double numeric_of(const value& v, source_span sp, const char* what) {
    if (v.is_int()) return static_cast<double>(v.as_int());
    if (v.is_float()) return v.as_float();
    throw eval_error(sp, std::string(what) + " requires a numeric value, got " + v.to_string());
}

}  // namespace

value transform_grid(const std::vector<grid_spec_dim>& dims, const value& n,
                     const std::vector<std::string>& labels, grid_info* info_out) {
    source_span sp{};
    if (dims.empty()) throw eval_error(sp, "grid requires at least one dimension");
    for (const auto& d : dims)
        if (!(d.stride > 0.0)) throw eval_error(sp, "grid stride must be positive");

    const std::size_t k = dims.size();
    std::vector<std::size_t> attr_idx;
    for (const auto& d : dims) attr_idx.push_back(resolve_label(labels, d.attr, sp));

    const auto& rows = n.children();
    std::vector<std::vector<double>> keys(rows.size(), std::vector<double>(k));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& kids = record_children(rows[r], sp);
        for (std::size_t d = 0; d < k; ++d) {
            if (attr_idx[d] >= kids.size())
                throw eval_error(sp, "record narrower than schema");
            keys[r][d] = numeric_of(kids[attr_idx[d]], sp, "grid attribute");
        }
    }

    if (info_out) {
        info_out->dims.clear();
        info_out->cells.clear();
        info_out->record_labels = labels;
        info_out->morton = false;
    }
    if (rows.empty()) {
        if (info_out)
            for (const auto& d : dims)
                info_out->dims.push_back({d.attr, d.stride, d.origin.value_or(0.0), 0});
        return value(value::list{});
    }

    // Per-dimension origin (data minimum unless given) and index range.
    std::vector<double> origin(k);
    std::vector<std::int64_t> first_idx(k), last_idx(k), counts(k);
    for (std::size_t d = 0; d < k; ++d) {
        double mn = std::numeric_limits<double>::infinity();
        double mx = -mn;
        for (const auto& key : keys) {
            mn = std::min(mn, key[d]);
            mx = std::max(mx, key[d]);
        }
        origin[d] = dims[d].origin.value_or(mn);
        first_idx[d] = static_cast<std::int64_t>(std::floor((mn - origin[d]) / dims[d].stride));
        last_idx[d] = static_cast<std::int64_t>(std::floor((mx - origin[d]) / dims[d].stride));
        counts[d] = last_idx[d] - first_idx[d] + 1;
    }

    std::size_t total = 1;
    for (std::size_t d = 0; d < k; ++d) total *= static_cast<std::size_t>(counts[d]);

    std::vector<std::vector<std::size_t>> cell_rows(total);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::size_t flat = 0;
        for (std::size_t d = 0; d < k; ++d) {
            auto idx = static_cast<std::int64_t>(
                std::floor((keys[r][d] - origin[d]) / dims[d].stride));
            flat = flat * static_cast<std::size_t>(counts[d]) +
                   static_cast<std::size_t>(idx - first_idx[d]);
        }
        cell_rows[flat].push_back(r);
    }

    if (info_out) {
        for (std::size_t d = 0; d < k; ++d)
            info_out->dims.push_back({dims[d].attr, dims[d].stride, origin[d], counts[d]});
        info_out->cells.resize(total);
        for (std::size_t c = 0; c < total; ++c) {
            auto& info = info_out->cells[c];
            info.index.resize(k);
            std::size_t rem = c;
            for (std::size_t d = k; d-- > 0;) {
                info.index[d] = first_idx[d] +
                                static_cast<std::int64_t>(rem % static_cast<std::size_t>(counts[d]));
                rem /= static_cast<std::size_t>(counts[d]);
            }
            info.mins.assign(k, std::numeric_limits<double>::infinity());
            info.maxs.assign(k, -std::numeric_limits<double>::infinity());
            info.count = cell_rows[c].size();
            for (std::size_t r : cell_rows[c]) {
                for (std::size_t d = 0; d < k; ++d) {
                    info.mins[d] = std::min(info.mins[d], keys[r][d]);
                    info.maxs[d] = std::max(info.maxs[d], keys[r][d]);
                }
            }
        }
    }

    // Materialize the nesting, dims in listed order, row-major.
    std::function<value(std::size_t, std::size_t)> build =
        [&](std::size_t dim, std::size_t base) -> value {
        if (dim == k) {
            value::list cell;
            cell.reserve(cell_rows[base].size());
            for (std::size_t r : cell_rows[base]) cell.push_back(rows[r]);
            return value(std::move(cell));
        }
        std::size_t span = 1;
        for (std::size_t d = dim + 1; d < k; ++d) span *= static_cast<std::size_t>(counts[d]);
        value::list level;
        level.reserve(static_cast<std::size_t>(counts[dim]));
        for (std::int64_t i = 0; i < counts[dim]; ++i)
            level.push_back(build(dim + 1, base + static_cast<std::size_t>(i) * span));
        return value(std::move(level));
    };
    return build(0, 0);
}

// --- evaluator -------------------------------------------------------------------

namespace {

class evaluator {
public:
    evaluator(env& en, eval_context* ctx) : en_(en), ctx_(ctx) {}

    value eval_v(const expr_ptr& e) {
        switch (e->kind()) {
            case expr_kind::literal:
                clear_grid();
                return e->literal_value();
            case expr_kind::bool_lit:
                throw eval_error(e->span(), "boolean used as a value");
            case expr_kind::table_ref: {
                clear_grid();
                auto it = en_.tables.find(e->name());
                if (it == en_.tables.end())
                    throw eval_error(e->span(), "unknown table: " + e->name());
                return row_layout(*it->second);
            }
            case expr_kind::var_ref: {
                clear_grid();
                const binding* b = en_.lookup(e->name());
                if (!b) throw eval_error(e->span(), "unbound variable: " + e->name());
                return b->val;
            }
            case expr_kind::field_access:
                clear_grid();
                return eval_field(e);
            case expr_kind::comprehension:
                return eval_comprehension(e);
            case expr_kind::list_ctor: {
                value::list kids;
                kids.reserve(e->children().size());
                for (const auto& c : e->children()) kids.push_back(eval_v(c));
                clear_grid();
                return value(std::move(kids));
            }
            case expr_kind::arith:
                clear_grid();
                return eval_arith(e);
            case expr_kind::helper_call:
                clear_grid();
                return eval_helper(e);
            case expr_kind::transform:
                return eval_transform(e);
        }
        throw eval_error(e->span(), "unevaluable expression");
    }

    bool eval_b(const expr_ptr& e) {
        switch (e->kind()) {
            case expr_kind::bool_lit:
                return e->bool_value();
            case expr_kind::arith:
                switch (e->op()) {
                    case arith_op::logic_and:
                        return eval_b(e->children()[0]) && eval_b(e->children()[1]);
                    case arith_op::logic_or:
                        return eval_b(e->children()[0]) || eval_b(e->children()[1]);
                    case arith_op::logic_not:
                        return !eval_b(e->children()[0]);
                    case arith_op::eq: case arith_op::ne: case arith_op::lt:
                    case arith_op::le: case arith_op::gt: case arith_op::ge:
                        return eval_compare(e);
                    default:
                        break;
                }
                throw eval_error(e->span(), "non-boolean condition");
            default:
                throw eval_error(e->span(), "non-boolean condition");
        }
    }

    shape shape_of(const expr_ptr& e) {
        return infer_shape(e, en_.var_shapes(), [this](const std::string& name) {
            auto it = en_.tables.find(name);
            return it == en_.tables.end() ? nullptr : &it->second->schema;
        });
    }

private:
    void clear_grid() {
        if (ctx_) ctx_->grid.reset();
    }

    value eval_field(const expr_ptr& e) {
        shape base_sh = shape_of(e->base());
        value base = eval_v(e->base());
        if (!base.is_list())
            throw eval_error(e->span(), "field access on a scalar value");
        if (base_sh.kind != shape::s_kind::record || base_sh.labels.empty())
            throw eval_error(e->span(), "unknown label: " + e->name() +
                                            " (record shape not known here)");
        auto idx = base_sh.label_index(e->name());
        if (!idx) throw eval_error(e->span(), "unknown label: " + e->name());
        if (*idx >= base.size())
            throw eval_error(e->span(), "record narrower than its schema");
        return base[*idx];
    }

    bool eval_compare(const expr_ptr& e) {
        value l = eval_v(e->children()[0]);
        value r = eval_v(e->children()[1]);
        auto op = e->op();
        if (l.is_list() || r.is_list())
            throw eval_error(e->span(), "type error: comparing list values");
        if (l.is_str() != r.is_str())
            throw eval_error(e->span(), "type error: comparing string with number");
        if (op == arith_op::eq || op == arith_op::ne) {
            bool eq;
            if (l.is_str()) eq = l.as_str() == r.as_str();
            else if (l.is_int() && r.is_int()) eq = l.as_int() == r.as_int();
            else if (l.is_float() && r.is_float()) eq = (l == r);  // bitwise
            else eq = l.as_double() == r.as_double();
            return op == arith_op::eq ? eq : !eq;
        }
        bool lt;
        if (l.is_str()) lt = l.as_str() < r.as_str();
        else if (l.is_int() && r.is_int()) lt = l.as_int() < r.as_int();
        else lt = l.as_double() < r.as_double();
        bool gt;
        if (l.is_str()) gt = l.as_str() > r.as_str();
        else if (l.is_int() && r.is_int()) gt = l.as_int() > r.as_int();
        else gt = l.as_double() > r.as_double();
        switch (op) {
            case arith_op::lt: return lt;
            case arith_op::le: return !gt;
            case arith_op::gt: return gt;
            case arith_op::ge: return !lt;
            default: return false;
        }
    }

    value eval_arith(const expr_ptr& e) {
        switch (e->op()) {
            case arith_op::eq: case arith_op::ne: case arith_op::lt:
            case arith_op::le: case arith_op::gt: case arith_op::ge:
            case arith_op::logic_and: case arith_op::logic_or: case arith_op::logic_not:
                throw eval_error(e->span(), "boolean used as a value");
            case arith_op::neg: {
                value v = eval_v(e->children()[0]);
                if (v.is_int()) return value(-v.as_int());
                if (v.is_float()) return value(-v.as_float());
                throw eval_error(e->span(), "negation of a non-numeric value");
            }
            default:
                break;
        }
        value l = eval_v(e->children()[0]);
        value r = eval_v(e->children()[1]);
        if (!l.is_numeric() || !r.is_numeric())
            throw eval_error(e->span(), "arithmetic on non-numeric values");
        bool ints = l.is_int() && r.is_int();
        switch (e->op()) {
            case arith_op::add:
                return ints ? value(l.as_int() + r.as_int()) : value(l.as_double() + r.as_double());
            case arith_op::sub:
                return ints ? value(l.as_int() - r.as_int()) : value(l.as_double() - r.as_double());
            case arith_op::mul:
                return ints ? value(l.as_int() * r.as_int()) : value(l.as_double() * r.as_double());
            case arith_op::div:
                if (ints) {
                    if (r.as_int() == 0) throw eval_error(e->span(), "division by zero");
                    return value(l.as_int() / r.as_int());
                }
                if (r.as_double() == 0.0) throw eval_error(e->span(), "division by zero");
                return value(l.as_double() / r.as_double());
            case arith_op::mod: {
                if (!ints) throw eval_error(e->span(), "mod requires integers");
                if (r.as_int() == 0) throw eval_error(e->span(), "division by zero");
                std::int64_t m = l.as_int() % r.as_int();
                if (m != 0 && ((m < 0) != (r.as_int() < 0))) m += r.as_int();
                return value(m);
            }
            default:
                throw eval_error(e->span(), "unsupported arithmetic operator");
        }
    }

    value eval_helper(const expr_ptr& e) {
        const auto& args = e->children();
        switch (e->helper()) {
            case helper_kind::pos: {
                if (args.size() != 1 || args[0]->kind() != expr_kind::var_ref)
                    throw eval_error(e->span(), "pos expects a generator variable");
                const binding* b = en_.lookup(args[0]->name());
                if (!b) throw eval_error(e->span(), "unbound variable: " + args[0]->name());
                return value(b->position);
            }
            case helper_kind::count: {
                if (args.size() != 1) throw eval_error(e->span(), "count expects one argument");
                value v = eval_v(args[0]);
                if (!v.is_list()) throw eval_error(e->span(), "count expects a nesting");
                return value(static_cast<std::int64_t>(v.size()));
            }
            case helper_kind::bin: {
                if (args.size() != 1) throw eval_error(e->span(), "bin expects one argument");
                value v = eval_v(args[0]);
                if (!v.is_int() || v.as_int() < 0)
                    throw eval_error(e->span(), "bin expects a nonnegative integer");
                auto u = static_cast<std::uint64_t>(v.as_int());
                int width = std::max(static_cast<int>(std::bit_width(u)), 1);
                value::list bits;
                for (int k = width - 1; k >= 0; --k)
                    bits.emplace_back(static_cast<std::int64_t>((u >> k) & 1u));
                return value(std::move(bits));
            }
            case helper_kind::interleave: {
                if (args.size() != 2)
                    throw eval_error(e->span(), "interleave expects two arguments");
                auto to_word = [&](const value& v) -> std::uint64_t {
                    if (v.is_int()) return static_cast<std::uint64_t>(v.as_int());
                    if (!v.is_list())
                        throw eval_error(e->span(), "interleave expects bit sequences");
                    std::uint64_t w = 0;
                    for (const auto& bit : v.children()) {
                        if (!bit.is_int() || (bit.as_int() != 0 && bit.as_int() != 1))
                            throw eval_error(e->span(), "interleave expects bit sequences");
                        w = (w << 1) | static_cast<std::uint64_t>(bit.as_int());
                    }
                    return w;
                };
                std::uint64_t a = to_word(eval_v(args[0]));
                std::uint64_t b = to_word(eval_v(args[1]));
                return value(static_cast<std::int64_t>(morton_code(a, b)));
            }
            case helper_kind::zip: {
                if (args.size() != 2) throw eval_error(e->span(), "zip expects two arguments");
                value a = eval_v(args[0]);
                value b = eval_v(args[1]);
                if (!a.is_list() || !b.is_list())
                    throw eval_error(e->span(), "zip expects two nestings");
                if (a.size() != b.size())
                    throw eval_error(e->span(), "zip length mismatch");
                value::list out;
                out.reserve(a.size());
                for (std::size_t i = 0; i < a.size(); ++i)
                    out.emplace_back(value::list{a[i], b[i]});
                return value(std::move(out));
            }
        }
        throw eval_error(e->span(), "unknown helper");
    }

    // One free variable of an expression under the current scopes.
    void collect_free_vars(const expr_ptr& e, std::set<std::string>& out,
                           std::set<std::string>& bound) const {
        switch (e->kind()) {
            case expr_kind::var_ref:
                if (!bound.count(e->name()) && !en_.lookup(e->name())) out.insert(e->name());
                return;
            case expr_kind::field_access:
                collect_free_vars(e->base(), out, bound);
                return;
            case expr_kind::comprehension: {
                std::set<std::string> inner = bound;
                for (const auto& q : e->qualifiers()) {
                    if (q.e) collect_free_vars(q.e, out, inner);
                    for (const auto& k : q.keys) collect_free_vars(k.key, out, inner);
                    for (const auto& p : q.parts) collect_free_vars(p.key, out, inner);
                    if (q.kind == qualifier::q_kind::generator) inner.insert(q.var);
                }
                for (const auto& h : e->children()) collect_free_vars(h, out, inner);
                return;
            }
            default:
                for (const auto& c : e->children()) collect_free_vars(c, out, bound);
        }
    }

    // Binds cond's single free variable to successive elements of n.
    template <typename Fn>
    void for_each_element(const expr_ptr& cond, const value& n, const shape& elem_shape,
                          Fn&& fn) {
        std::set<std::string> free, bound;
        collect_free_vars(cond, free, bound);
        if (free.size() > 1)
            throw eval_error(cond->span(), "element condition binds more than one variable");
        std::optional<std::string> var;
        if (!free.empty()) var = *free.begin();
        for (std::size_t i = 0; i < n.size(); ++i) {
            en_.push_scope();
            if (var)
                en_.bind(*var, binding{n[i], static_cast<std::int64_t>(i), elem_shape});
            struct pop_guard {
                env& e;
                ~pop_guard() { e.pop_scope(); }
            } guard{en_};
            fn(i);
        }
    }

    value eval_transform(const expr_ptr& e);
    value eval_comprehension(const expr_ptr& e);

    env& en_;
    eval_context* ctx_;
};

value evaluator::eval_transform(const expr_ptr& e) {
    const std::string& n = e->name();
    const auto& inputs = e->children();
    auto need_inputs = [&](std::size_t want) {
        if (inputs.size() != want)
            throw eval_error(e->span(), n + " expects " + std::to_string(want) + " input(s)");
    };
    auto input_labels = [&](std::size_t i) -> std::vector<std::string> {
        shape s = shape_of(inputs[i]);
        if (s.is_list() && s.elem().kind == shape::s_kind::record) return s.elem().labels;
        return {};
    };
    auto ident_args = [&]() {
        std::vector<std::string> out;
        for (const auto& a : e->static_args()) {
            if (a.kind != static_arg::a_kind::ident)
                throw eval_error(e->span(), n + " expects attribute-name arguments");
            out.push_back(a.name);
        }
        return out;
    };

    try {
        if (n == "project") {
            need_inputs(1);
            auto labels = input_labels(0);
            value v = eval_v(inputs[0]);
            clear_grid();
            return transform_project(ident_args(), v, labels);
        }
        if (n == "append") {
            need_inputs(2);
            value elems = eval_v(inputs[0]);
            value base = eval_v(inputs[1]);
            clear_grid();
            return transform_append(elems, base);
        }
        if (n == "select" || n == "partition") {
            need_inputs(2);
            shape src = shape_of(inputs[1]);
            value v = eval_v(inputs[1]);
            clear_grid();
            if (!v.is_list()) throw eval_error(e->span(), n + " expects a nesting input");
            const expr_ptr& cond = inputs[0];
            shape elem_shape = src.is_list() ? src.elem() : shape::unknown();
            if (n == "select") {
                value::list out;
                for_each_element(cond, v, elem_shape, [&](std::size_t i) {
                    if (eval_b(cond)) out.push_back(v[i]);
                });
                return value(std::move(out));
            }
            // partition: key-equality buckets in first-occurrence order.
            std::vector<value> keys(v.size());
            bool boolean_key = cond->kind() == expr_kind::bool_lit ||
                               (cond->kind() == expr_kind::arith &&
                                (cond->op() == arith_op::eq || cond->op() == arith_op::ne ||
                                 cond->op() == arith_op::lt || cond->op() == arith_op::le ||
                                 cond->op() == arith_op::gt || cond->op() == arith_op::ge ||
                                 cond->op() == arith_op::logic_and ||
                                 cond->op() == arith_op::logic_or ||
                                 cond->op() == arith_op::logic_not));
            for_each_element(cond, v, elem_shape, [&](std::size_t i) {
                keys[i] = boolean_key ? value(std::int64_t{eval_b(cond) ? 1 : 0}) : eval_v(cond);
            });
            std::vector<value> key_order;
            std::map<value, std::size_t, bool (*)(const value&, const value&)> index(value_less);
            std::vector<value::list> buckets;
            for (std::size_t i = 0; i < v.size(); ++i) {
                auto it = index.find(keys[i]);
                if (it == index.end()) {
                    it = index.emplace(keys[i], buckets.size()).first;
                    buckets.emplace_back();
                }
                buckets[it->second].push_back(v[i]);
            }
            value::list out;
            out.reserve(buckets.size());
            for (auto& b : buckets) out.emplace_back(std::move(b));
            return value(std::move(out));
        }
        if (n == "fold") {
            need_inputs(1);
            auto labels = input_labels(0);
            value v = eval_v(inputs[0]);
            clear_grid();
            auto [b_attrs, a_attrs] = split_static_args(e->static_args());
            if (a_attrs.empty())
                throw eval_error(e->span(), "fold requires `fold[B; A]` arguments");
            return transform_fold(b_attrs, a_attrs, v, labels);
        }
        if (n == "unfold") {
            need_inputs(1);
            value v = eval_v(inputs[0]);
            clear_grid();
            return transform_unfold(v);
        }
        if (n == "prejoin") {
            need_inputs(2);
            auto args = ident_args();
            if (args.size() != 1)
                throw eval_error(e->span(), "prejoin expects one join attribute");
            auto l1 = input_labels(0);
            auto l2 = input_labels(1);
            value n1 = eval_v(inputs[0]);
            value n2 = eval_v(inputs[1]);
            clear_grid();
            std::size_t i1 = resolve_label(l1, args[0], e->span());
            std::size_t i2 = resolve_label(l2, args[0], e->span());
            value::list out;
            for (const auto& r1 : n1.children()) {
                const auto& k1 = record_children(r1, e->span());
                for (const auto& r2 : n2.children()) {
                    const auto& k2 = record_children(r2, e->span());
                    if (k1[i1] == k2[i2]) out.emplace_back(value::list{r1, r2});
                }
            }
            return value(std::move(out));
        }
        if (n == "delta") {
            need_inputs(1);
            auto labels = input_labels(0);
            value v = eval_v(inputs[0]);
            clear_grid();
            auto attrs = ident_args();
            if (attrs.empty()) return transform_delta(v);
            auto column = [&](const std::string& attr) {
                std::size_t idx = resolve_label(labels, attr, e->span());
                value::list col;
                col.reserve(v.size());
                for (const auto& r : v.children())
                    col.push_back(record_children(r, e->span())[idx]);
                return transform_delta(value(std::move(col)));
            };
            if (attrs.size() == 1) return column(attrs[0]);
            value::list out;
            for (const auto& a : attrs) out.push_back(column(a));
            return value(std::move(out));
        }
        if (n == "zorder") {
            need_inputs(1);
            value v = eval_v(inputs[0]);
            // Keep the grid side channel in sync with the reordering.
            std::optional<grid_info> info;
            if (ctx_ && ctx_->grid && ctx_->grid->dims.size() == 2) info = std::move(ctx_->grid);
            clear_grid();
            value out = transform_zorder(v);
            if (info) {
                std::vector<std::pair<std::uint64_t, std::size_t>> order;
                std::size_t flat = 0;
                for (std::size_t i = 0; i < v.size(); ++i)
                    for (std::size_t j = 0; j < v[i].size(); ++j)
                        order.emplace_back(morton_code(i, j), flat++);
                if (flat == info->cells.size()) {
                    std::stable_sort(order.begin(), order.end());
                    std::vector<grid_cell_info> cells;
                    cells.reserve(info->cells.size());
                    for (const auto& [code, idx] : order) cells.push_back(info->cells[idx]);
                    info->cells = std::move(cells);
                    info->morton = true;
                    if (ctx_) ctx_->grid = std::move(info);
                }
            }
            return out;
        }
        if (n == "transpose") {
            need_inputs(1);
            value v = eval_v(inputs[0]);
            clear_grid();
            return transform_transpose(v);
        }
        if (n == "grid") {
            need_inputs(1);
            auto labels = input_labels(0);
            value v = eval_v(inputs[0]);
            clear_grid();
            std::vector<grid_spec_dim> dims;
            for (const auto& a : e->static_args()) {
                grid_spec_dim d;
                switch (a.kind) {
                    case static_arg::a_kind::ident:
                        d.attr = a.name;  // default stride 1
                        break;
                    case static_arg::a_kind::keyed:
                        d.attr = a.name;
                        d.stride = a.num.as_double();
                        if (a.origin) d.origin = a.origin->as_double();
                        break;
                    default:
                        throw eval_error(e->span(), "grid expects attr[:stride[:origin]] arguments");
                }
                dims.push_back(std::move(d));
            }
            if (dims.empty()) throw eval_error(e->span(), "grid requires dimensions");
            grid_info info;
            value out = transform_grid(dims, v, labels, &info);
            if (ctx_) ctx_->grid = std::move(info);
            return out;
        }
    } catch (eval_error& err) {
        // Attach this transform's span when the inner error had none.
        if (err.span().start == 0 && err.span().end == 0 && e->span().end != 0)
            throw eval_error(e->span(), err.what());
        throw;
    }
    throw eval_error(e->span(), "unknown transform: " + n);
}

value evaluator::eval_comprehension(const expr_ptr& e) {
    struct row {
        std::vector<std::pair<std::string, binding>> vars;
        std::vector<value> shaping_keys;
    };
    struct shaping_desc {
        bool is_group = false;
        std::vector<double> strides;      // partition only
        std::vector<std::string> attrs;   // partition: key attr names when derivable
    };

    std::vector<row> rows(1);
    std::vector<shaping_desc> shapings;
    std::vector<std::pair<std::string, shape>> declared_vars;
    std::optional<grid_info> source_info;
    bool map_like = true;  // single generator, no filtering/reordering/shaping
    std::size_t generator_count = 0;

    auto with_row = [&](const row& r, auto&& fn) {
        en_.push_scope();
        for (const auto& [name, b] : r.vars) en_.bind(name, b);
        struct pop_guard {
            env& e;
            ~pop_guard() { e.pop_scope(); }
        } guard{en_};
        return fn();
    };

    for (const auto& q : e->qualifiers()) {
        switch (q.kind) {
            case qualifier::q_kind::generator: {
                generator_count += 1;
                if (generator_count > 1) map_like = false;
                shape src_shape;
                {
                    en_.push_scope();
                    for (const auto& [name, sh] : declared_vars)
                        en_.bind(name, binding{value(), 0, sh});
                    src_shape = shape_of(q.e);
                    en_.pop_scope();
                }
                shape elem_shape = src_shape.is_list() ? src_shape.elem() : shape::unknown();
                declared_vars.emplace_back(q.var, elem_shape);

                std::vector<row> expanded;
                for (const auto& r : rows) {
                    value src = with_row(r, [&] { return eval_v(q.e); });
                    if (generator_count == 1 && ctx_ && ctx_->grid)
                        source_info = ctx_->grid;
                    if (!src.is_list())
                        throw eval_error(q.e->span(), "generator source is not a nesting");
                    for (std::size_t i = 0; i < src.size(); ++i) {
                        row nr = r;
                        nr.vars.emplace_back(
                            q.var, binding{src[i], static_cast<std::int64_t>(i), elem_shape});
                        expanded.push_back(std::move(nr));
                    }
                }
                rows = std::move(expanded);
                break;
            }
            case qualifier::q_kind::condition: {
                map_like = false;
                std::vector<row> kept;
                for (auto& r : rows) {
                    bool ok = with_row(r, [&] { return eval_b(q.e); });
                    if (ok) kept.push_back(std::move(r));
                }
                rows = std::move(kept);
                break;
            }
            case qualifier::q_kind::order_by: {
                map_like = false;
                std::vector<std::vector<value>> keys(rows.size());
                for (std::size_t i = 0; i < rows.size(); ++i) {
                    keys[i] = with_row(rows[i], [&] {
                        std::vector<value> k;
                        k.reserve(q.keys.size());
                        for (const auto& ok : q.keys) k.push_back(eval_v(ok.key));
                        return k;
                    });
                }
                std::vector<std::size_t> order(rows.size());
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                    for (std::size_t k = 0; k < q.keys.size(); ++k) {
                        source_span sp = q.keys[k].key->span();
                        bool less = order_key_less(keys[a][k], keys[b][k], sp);
                        bool greater = order_key_less(keys[b][k], keys[a][k], sp);
                        if (!less && !greater) continue;
                        return q.keys[k].descending ? greater : less;
                    }
                    return false;
                });
                std::vector<row> sorted;
                sorted.reserve(rows.size());
                for (std::size_t i : order) sorted.push_back(std::move(rows[i]));
                rows = std::move(sorted);
                break;
            }
            case qualifier::q_kind::group_by: {
                map_like = false;
                for (auto& r : rows)
                    r.shaping_keys.push_back(with_row(r, [&] { return eval_v(q.e); }));
                shapings.push_back({true, {}, {}});
                break;
            }
            case qualifier::q_kind::partition_by: {
                map_like = false;
                shaping_desc d;
                d.is_group = false;
                for (const auto& p : q.parts) {
                    double stride = p.stride.as_double();
                    if (!(stride > 0.0))
                        throw eval_error(p.key->span(), "partition stride must be positive");
                    d.strides.push_back(stride);
                    if (p.key->kind() == expr_kind::field_access)
                        d.attrs.push_back(p.key->name());
                    else
                        d.attrs.push_back("");
                }
                for (auto& r : rows) {
                    value::list keys;
                    with_row(r, [&] {
                        for (const auto& p : q.parts) keys.push_back(eval_v(p.key));
                        return 0;
                    });
                    r.shaping_keys.emplace_back(std::move(keys));
                }
                shapings.push_back(std::move(d));
                break;
            }
            case qualifier::q_kind::limit: {
                map_like = false;
                value n = eval_v(q.e);
                if (!n.is_int() || n.as_int() < 0)
                    throw eval_error(q.e->span(), "limit expects a nonnegative integer");
                if (static_cast<std::size_t>(n.as_int()) < rows.size())
                    rows.resize(static_cast<std::size_t>(n.as_int()));
                break;
            }
        }
    }

    auto eval_head = [&](const row& r) {
        return with_row(r, [&]() -> value {
            if (e->children().size() == 1) return eval_v(e->children()[0]);
            value::list tuple;
            tuple.reserve(e->children().size());
            for (const auto& h : e->children()) tuple.push_back(eval_v(h));
            return value(std::move(tuple));
        });
    };

    // Head evaluation may touch the side channel; isolate and restore after.
    std::optional<grid_info> exported;
    std::optional<grid_info> partition_info;

    std::function<value(const std::vector<const row*>&, std::size_t)> emit =
        [&](const std::vector<const row*>& view, std::size_t si) -> value {
        if (si == shapings.size()) {
            value::list out;
            out.reserve(view.size());
            for (const row* r : view) out.push_back(eval_head(*r));
            return value(std::move(out));
        }
        const auto& s = shapings[si];
        if (s.is_group) {
            std::map<value, std::size_t, bool (*)(const value&, const value&)> index(value_less);
            std::vector<std::vector<const row*>> groups;
            for (const row* r : view) {
                const value& key = r->shaping_keys[si];
                auto it = index.find(key);
                if (it == index.end()) {
                    it = index.emplace(key, groups.size()).first;
                    groups.emplace_back();
                }
                groups[it->second].push_back(r);
            }
            value::list out;
            out.reserve(groups.size());
            for (const auto& g : groups) out.push_back(emit(g, si + 1));
            return value(std::move(out));
        }
        // partitionby: stride buckets, dims in listed order, row-major, data
        // bounding box materialized including empty cells.
        const std::size_t k = s.strides.size();
        if (view.empty()) return value(value::list{});
        std::vector<std::vector<double>> keys(view.size(), std::vector<double>(k));
        for (std::size_t i = 0; i < view.size(); ++i) {
            const value& kv = view[i]->shaping_keys[si];
            for (std::size_t d = 0; d < k; ++d)
                keys[i][d] = numeric_of(kv[d], e->span(), "partition key");
        }
        std::vector<double> origin(k);
        std::vector<std::int64_t> counts(k);
        for (std::size_t d = 0; d < k; ++d) {
            double mn = keys[0][d], mx = keys[0][d];
            for (const auto& kv : keys) {
                mn = std::min(mn, kv[d]);
                mx = std::max(mx, kv[d]);
            }
            origin[d] = mn;
            counts[d] = static_cast<std::int64_t>(std::floor((mx - mn) / s.strides[d])) + 1;
        }
        std::size_t total = 1;
        for (std::size_t d = 0; d < k; ++d) total *= static_cast<std::size_t>(counts[d]);
        std::vector<std::vector<const row*>> cells(total);
        std::vector<std::vector<std::size_t>> cell_key_rows(total);
        for (std::size_t i = 0; i < view.size(); ++i) {
            std::size_t flat = 0;
            for (std::size_t d = 0; d < k; ++d) {
                auto idx = static_cast<std::int64_t>(
                    std::floor((keys[i][d] - origin[d]) / s.strides[d]));
                flat = flat * static_cast<std::size_t>(counts[d]) +
                       static_cast<std::size_t>(idx);
            }
            cells[flat].push_back(view[i]);
            cell_key_rows[flat].push_back(i);
        }

        bool want_info = shapings.size() == 1 && si == 0;
        for (const auto& a : s.attrs) want_info &= !a.empty();
        if (want_info) {
            grid_info info;
            for (std::size_t d = 0; d < k; ++d)
                info.dims.push_back({s.attrs[d], s.strides[d], origin[d], counts[d]});
            info.cells.resize(total);
            for (std::size_t c = 0; c < total; ++c) {
                auto& ci = info.cells[c];
                ci.index.resize(k);
                std::size_t rem = c;
                for (std::size_t d = k; d-- > 0;) {
                    ci.index[d] = static_cast<std::int64_t>(rem % static_cast<std::size_t>(counts[d]));
                    rem /= static_cast<std::size_t>(counts[d]);
                }
                ci.mins.assign(k, std::numeric_limits<double>::infinity());
                ci.maxs.assign(k, -std::numeric_limits<double>::infinity());
                ci.count = cells[c].size();
                for (std::size_t i : cell_key_rows[c])
                    for (std::size_t d = 0; d < k; ++d) {
                        ci.mins[d] = std::min(ci.mins[d], keys[i][d]);
                        ci.maxs[d] = std::max(ci.maxs[d], keys[i][d]);
                    }
            }
            partition_info = std::move(info);
        }

        std::function<value(std::size_t, std::size_t)> build =
            [&](std::size_t dim, std::size_t base) -> value {
            if (dim == k) return emit(cells[base], si + 1);
            std::size_t span = 1;
            for (std::size_t d = dim + 1; d < k; ++d) span *= static_cast<std::size_t>(counts[d]);
            value::list level;
            level.reserve(static_cast<std::size_t>(counts[dim]));
            for (std::int64_t i = 0; i < counts[dim]; ++i)
                level.push_back(build(dim + 1, base + static_cast<std::size_t>(i) * span));
            return value(std::move(level));
        };
        return build(0, 0);
    };

    std::vector<const row*> view;
    view.reserve(rows.size());
    for (const auto& r : rows) view.push_back(&r);
    value result = emit(view, 0);

    if (ctx_) {
        ctx_->grid.reset();
        if (partition_info) {
            // Record labels from the head when derivable.
            std::vector<std::string> labels;
            bool labeled = true;
            const auto& heads = e->children();
            if (heads.size() == 1 && heads[0]->kind() == expr_kind::var_ref) {
                for (const auto& [name, sh] : declared_vars)
                    if (name == heads[0]->name() && sh.kind == shape::s_kind::record)
                        labels = sh.labels;
                labeled = !labels.empty();
            } else {
                const auto& parts =
                    heads.size() == 1 && heads[0]->kind() == expr_kind::list_ctor
                        ? heads[0]->children()
                        : heads;
                for (const auto& h : parts) {
                    if (h->kind() == expr_kind::field_access) labels.push_back(h->name());
                    else labeled = false;
                }
            }
            if (labeled) partition_info->record_labels = std::move(labels);
            ctx_->grid = std::move(partition_info);
        } else if (map_like && source_info) {
            // Element-wise mapping over a grid-shaped source: cell order,
            // counts, and attribute bounds are unchanged.
            ctx_->grid = std::move(source_info);
        }
    }
    return result;
}

}  // namespace

value eval(const expr_ptr& e, env& en, eval_context* ctx) {
    return evaluator(en, ctx).eval_v(e);
}

bool eval_condition(const expr_ptr& e, env& en) {
    return evaluator(en, nullptr).eval_b(e);
}

// --- engine-level layouts ---------------------------------------------------------

value row_layout(const logical_table& t) {
    value::list rows = t.records;
    return value(std::move(rows));
}

value column_layout(const logical_table& t) {
    value::list cols;
    cols.reserve(t.schema.size());
    for (std::size_t c = 0; c < t.schema.size(); ++c) {
        value::list col;
        col.reserve(t.records.size());
        for (const auto& r : t.records) col.push_back(r[c]);
        cols.emplace_back(std::move(col));
    }
    return value(std::move(cols));
}

expr_ptr row_layout_expr(const logical_table& t) {
    std::vector<expr_ptr> fields;
    for (const auto& c : t.schema)
        fields.push_back(expr::field_access(expr::var_ref("r"), c.name));
    return expr::comprehension({expr::list_ctor(std::move(fields))},
                               {qualifier::generator("r", expr::table_ref(t.name))});
}

expr_ptr column_layout_expr(const logical_table& t) {
    std::vector<expr_ptr> cols;
    for (const auto& c : t.schema) {
        cols.push_back(expr::comprehension(
            {expr::field_access(expr::var_ref("r"), c.name)},
            {qualifier::generator("r", expr::table_ref(t.name))}));
    }
    return expr::list_ctor(std::move(cols));
}

// --- physical representation -------------------------------------------------------

namespace {

void flatten_walk(const value& v, std::uint32_t depth, physical_representation& rep) {
    if (v.is_scalar()) {
        rep.structure.push_back({depth, 0, false});
        rep.entries.push_back(v);
        return;
    }
    rep.structure.push_back({depth, v.size(), true});
    for (const auto& c : v.children()) flatten_walk(c, depth + 1, rep);
}

}  // namespace

physical_representation flatten(const value& v) {
    physical_representation rep;
    flatten_walk(v, 0, rep);
    return rep;
}

value unflatten(const physical_representation& rep) {
    std::size_t si = 0, ei = 0;
    std::function<value(std::uint32_t)> build = [&](std::uint32_t depth) -> value {
        if (si >= rep.structure.size())
            throw std::invalid_argument("physical representation truncated");
        structure_node node = rep.structure[si++];
        if (node.depth != depth)
            throw std::invalid_argument("physical representation depth mismatch");
        if (!node.is_list) {
            if (ei >= rep.entries.size())
                throw std::invalid_argument("physical representation missing entries");
            return rep.entries[ei++];
        }
        value::list kids;
        kids.reserve(node.child_count);
        for (std::uint64_t i = 0; i < node.child_count; ++i) kids.push_back(build(depth + 1));
        return value(std::move(kids));
    };
    value v = build(0);
    if (si != rep.structure.size() || ei != rep.entries.size())
        throw std::invalid_argument("physical representation has trailing data");
    return v;
}

}  // namespace rodent
