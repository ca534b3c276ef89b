#include "rodent/ast.hpp"

#include <mutex>
#include <set>

namespace rodent {

const char* arith_op_text(arith_op op) {
    switch (op) {
        case arith_op::add: return "+";
        case arith_op::sub: return "-";
        case arith_op::mul: return "*";
        case arith_op::div: return "/";
        case arith_op::mod: return "mod";
        case arith_op::eq: return "=";
        case arith_op::ne: return "!=";
        case arith_op::lt: return "<";
        case arith_op::le: return "<=";
        case arith_op::gt: return ">";
        case arith_op::ge: return ">=";
        case arith_op::logic_and: return "and";
        case arith_op::logic_or: return "or";
        case arith_op::logic_not: return "not";
        case arith_op::neg: return "-";
    }
    return "?";
}

const char* helper_name(helper_kind h) {
    switch (h) {
        case helper_kind::pos: return "pos";
        case helper_kind::count: return "count";
        case helper_kind::bin: return "bin";
        case helper_kind::interleave: return "interleave";
        case helper_kind::zip: return "zip";
    }
    return "?";
}

std::optional<helper_kind> helper_from_name(const std::string& name) {
    if (name == "pos") return helper_kind::pos;
    if (name == "count") return helper_kind::count;
    if (name == "bin") return helper_kind::bin;
    if (name == "interleave") return helper_kind::interleave;
    if (name == "zip") return helper_kind::zip;
    return std::nullopt;
}

namespace {
std::set<std::string>& transform_registry() {
    static std::set<std::string> names = {
        "project", "append", "select", "partition", "fold", "unfold",
        "prejoin", "delta", "zorder", "transpose", "grid",
    };
    return names;
}
std::mutex registry_mutex;
}  // namespace

bool is_known_transform(const std::string& name) {
    std::lock_guard lock(registry_mutex);
    return transform_registry().count(name) > 0;
}

void register_transform_name(const std::string& name) {
    std::lock_guard lock(registry_mutex);
    transform_registry().insert(name);
}

qualifier qualifier::generator(std::string v, expr_ptr source) {
    qualifier q;
    q.kind = q_kind::generator;
    q.var = std::move(v);
    q.e = std::move(source);
    return q;
}

qualifier qualifier::condition(expr_ptr cond) {
    qualifier q;
    q.kind = q_kind::condition;
    q.e = std::move(cond);
    return q;
}

qualifier qualifier::order_by(std::vector<order_key> keys) {
    qualifier q;
    q.kind = q_kind::order_by;
    q.keys = std::move(keys);
    return q;
}

qualifier qualifier::group_by(expr_ptr key) {
    qualifier q;
    q.kind = q_kind::group_by;
    q.e = std::move(key);
    return q;
}

qualifier qualifier::partition_by(std::vector<partition_key> parts) {
    qualifier q;
    q.kind = q_kind::partition_by;
    q.parts = std::move(parts);
    return q;
}

qualifier qualifier::limit(expr_ptr count) {
    qualifier q;
    q.kind = q_kind::limit;
    q.e = std::move(count);
    return q;
}

static_arg static_arg::ident(std::string n) {
    static_arg a;
    a.kind = a_kind::ident;
    a.name = std::move(n);
    return a;
}

static_arg static_arg::number(value v) {
    static_arg a;
    a.kind = a_kind::number;
    a.num = std::move(v);
    return a;
}

static_arg static_arg::keyed(std::string n, value stride, std::optional<value> origin) {
    static_arg a;
    a.kind = a_kind::keyed;
    a.name = std::move(n);
    a.num = std::move(stride);
    a.origin = std::move(origin);
    return a;
}

static_arg static_arg::split(std::string before, std::string after) {
    static_arg a;
    a.kind = a_kind::split;
    a.name = std::move(before);
    a.name2 = std::move(after);
    return a;
}

expr_ptr expr::literal(value v, source_span sp) {
    auto e = make();
    e->kind_ = expr_kind::literal;
    e->lit_ = std::move(v);
    e->span_ = sp;
    return e;
}

expr_ptr expr::boolean(bool b, source_span sp) {
    auto e = make();
    e->kind_ = expr_kind::bool_lit;
    e->bval_ = b;
    e->span_ = sp;
    return e;
}

expr_ptr expr::table_ref(std::string name, source_span sp) {
    auto e = make();
    e->kind_ = expr_kind::table_ref;
    e->name_ = std::move(name);
    e->span_ = sp;
    return e;
}

expr_ptr expr::var_ref(std::string name, source_span sp) {
    auto e = make();
    e->kind_ = expr_kind::var_ref;
    e->name_ = std::move(name);
    e->span_ = sp;
    return e;
}

expr_ptr expr::field_access(expr_ptr base, std::string label, source_span sp) {
    auto e = make();
    e->kind_ = expr_kind::field_access;
    e->base_ = std::move(base);
    e->name_ = std::move(label);
    e->span_ = sp;
    return e;
}

expr_ptr expr::comprehension(std::vector<expr_ptr> heads, std::vector<qualifier> quals,
                             source_span sp) {
    auto e = make();
    e->kind_ = expr_kind::comprehension;
    e->children_ = std::move(heads);
    e->quals_ = std::move(quals);
    e->span_ = sp;
    return e;
}

expr_ptr expr::transform(std::string name, std::vector<static_arg> args,
                         std::vector<expr_ptr> inputs, source_span sp) {
    auto e = make();
    e->kind_ = expr_kind::transform;
    e->name_ = std::move(name);
    e->args_ = std::move(args);
    e->children_ = std::move(inputs);
    e->span_ = sp;
    return e;
}

expr_ptr expr::list_ctor(std::vector<expr_ptr> elements, source_span sp) {
    auto e = make();
    e->kind_ = expr_kind::list_ctor;
    e->children_ = std::move(elements);
    e->span_ = sp;
    return e;
}

expr_ptr expr::arith(arith_op op, std::vector<expr_ptr> operands, source_span sp) {
    auto e = make();
    e->kind_ = expr_kind::arith;
    e->op_ = op;
    e->children_ = std::move(operands);
    e->span_ = sp;
    return e;
}

expr_ptr expr::helper_call(helper_kind h, std::vector<expr_ptr> args, source_span sp) {
    auto e = make();
    e->kind_ = expr_kind::helper_call;
    e->helper_ = h;
    e->children_ = std::move(args);
    e->span_ = sp;
    return e;
}

expr_ptr expr::rename_ref(const expr_ptr& node, expr_kind new_kind) {
    auto e = make();
    *e = *node;
    e->kind_ = new_kind;
    return e;
}

namespace {

bool args_equal(const std::vector<static_arg>& a, const std::vector<static_arg>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].kind != b[i].kind || a[i].name != b[i].name || a[i].name2 != b[i].name2 ||
            a[i].num != b[i].num || a[i].origin.has_value() != b[i].origin.has_value())
            return false;
        if (a[i].origin && *a[i].origin != *b[i].origin) return false;
    }
    return true;
}

bool quals_equal(const std::vector<qualifier>& a, const std::vector<qualifier>& b);

}  // namespace

bool structurally_equal(const expr_ptr& a, const expr_ptr& b) {
    if (a == b) return true;
    if (!a || !b) return false;
    if (a->kind() != b->kind()) return false;
    switch (a->kind()) {
        case expr_kind::literal:
            return a->literal_value() == b->literal_value();
        case expr_kind::bool_lit:
            return a->bool_value() == b->bool_value();
        case expr_kind::table_ref:
        case expr_kind::var_ref:
            return a->name() == b->name();
        case expr_kind::field_access:
            return a->name() == b->name() && structurally_equal(a->base(), b->base());
        case expr_kind::arith:
            if (a->op() != b->op()) return false;
            break;
        case expr_kind::helper_call:
            if (a->helper() != b->helper()) return false;
            break;
        case expr_kind::transform:
            if (a->name() != b->name() || !args_equal(a->static_args(), b->static_args()))
                return false;
            break;
        case expr_kind::comprehension:
            if (!quals_equal(a->qualifiers(), b->qualifiers())) return false;
            break;
        case expr_kind::list_ctor:
            break;
    }
    const auto& ca = a->children();
    const auto& cb = b->children();
    if (ca.size() != cb.size()) return false;
    for (std::size_t i = 0; i < ca.size(); ++i)
        if (!structurally_equal(ca[i], cb[i])) return false;
    return true;
}

namespace {

bool quals_equal(const std::vector<qualifier>& a, const std::vector<qualifier>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& x = a[i];
        const auto& y = b[i];
        if (x.kind != y.kind || x.var != y.var) return false;
        if ((x.e == nullptr) != (y.e == nullptr)) return false;
        if (x.e && !structurally_equal(x.e, y.e)) return false;
        if (x.keys.size() != y.keys.size() || x.parts.size() != y.parts.size()) return false;
        for (std::size_t k = 0; k < x.keys.size(); ++k) {
            if (x.keys[k].descending != y.keys[k].descending ||
                !structurally_equal(x.keys[k].key, y.keys[k].key))
                return false;
        }
        for (std::size_t k = 0; k < x.parts.size(); ++k) {
            if (x.parts[k].stride != y.parts[k].stride ||
                !structurally_equal(x.parts[k].key, y.parts[k].key))
                return false;
        }
    }
    return true;
}

}  // namespace

std::pair<std::vector<std::string>, std::vector<std::string>>
split_static_args(const std::vector<static_arg>& args) {
    std::vector<std::string> before, after;
    bool seen_split = false;
    for (const auto& a : args) {
        switch (a.kind) {
            case static_arg::a_kind::ident:
                (seen_split ? after : before).push_back(a.name);
                break;
            case static_arg::a_kind::split:
                before.push_back(a.name);
                after.push_back(a.name2);
                seen_split = true;
                break;
            default:
                throw std::invalid_argument("expected attribute names in transform arguments");
        }
    }
    return {before, after};
}

}  // namespace rodent
