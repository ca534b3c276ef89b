#include "rodent/bind.hpp"

#include <set>

namespace rodent {

namespace {

class checker {
public:
    explicit checker(const bind_env& env) : env_(env) {}

    std::vector<bind_error> run(const expr_ptr& e) {
        check(e);
        return std::move(errors_);
    }

private:
    shape shape_of(const expr_ptr& e) {
        return infer_shape(e, shapes_, [this](const std::string& name) {
            auto it = env_.tables.find(name);
            return it == env_.tables.end() ? nullptr : &it->second;
        });
    }

    void error(const source_span& sp, std::string message) {
        errors_.push_back({sp, std::move(message)});
    }

    void check(const expr_ptr& e) {
        switch (e->kind()) {
            case expr_kind::literal:
            case expr_kind::bool_lit:
                return;
            case expr_kind::table_ref:
                if (!env_.tables.count(e->name()))
                    error(e->span(), "unknown table: " + e->name());
                return;
            case expr_kind::var_ref:
                if (!shapes_.count(e->name()))
                    error(e->span(), "unbound variable: " + e->name());
                return;
            case expr_kind::field_access: {
                check(e->base());
                shape base = shape_of(e->base());
                if (base.kind == shape::s_kind::record && !base.labels.empty() &&
                    !base.label_index(e->name())) {
                    error(e->span(), "unknown label: " + e->name());
                }
                return;
            }
            case expr_kind::comprehension:
                check_comprehension(e);
                return;
            case expr_kind::transform:
                check_transform(e);
                return;
            case expr_kind::list_ctor:
            case expr_kind::arith:
                for (const auto& c : e->children()) check(c);
                return;
            case expr_kind::helper_call: {
                std::size_t want =
                    (e->helper() == helper_kind::interleave || e->helper() == helper_kind::zip)
                        ? 2 : 1;
                if (e->children().size() != want)
                    error(e->span(), std::string(helper_name(e->helper())) + " expects " +
                                         std::to_string(want) + " argument(s)");
                for (const auto& c : e->children()) check(c);
                return;
            }
        }
    }

    void check_comprehension(const expr_ptr& e) {
        std::map<std::string, shape> saved = shapes_;
        for (const auto& q : e->qualifiers()) {
            switch (q.kind) {
                case qualifier::q_kind::generator: {
                    check(q.e);
                    shape src = shape_of(q.e);
                    shapes_[q.var] = src.is_list() ? src.elem() : shape::unknown();
                    break;
                }
                case qualifier::q_kind::condition:
                case qualifier::q_kind::group_by:
                case qualifier::q_kind::limit:
                    check(q.e);
                    break;
                case qualifier::q_kind::order_by:
                    for (const auto& k : q.keys) check(k.key);
                    break;
                case qualifier::q_kind::partition_by:
                    for (const auto& p : q.parts) {
                        check(p.key);
                        if (p.stride.as_double() <= 0.0)
                            error(p.key->span(), "partition stride must be positive");
                    }
                    break;
            }
        }
        for (const auto& h : e->children()) check(h);
        shapes_ = std::move(saved);
    }

    void collect_free(const expr_ptr& e, std::set<std::string>& out,
                      std::set<std::string>& bound) {
        switch (e->kind()) {
            case expr_kind::var_ref:
                if (!bound.count(e->name()) && !shapes_.count(e->name()))
                    out.insert(e->name());
                return;
            case expr_kind::field_access:
                collect_free(e->base(), out, bound);
                return;
            case expr_kind::comprehension: {
                std::set<std::string> inner = bound;
                for (const auto& q : e->qualifiers()) {
                    if (q.e) collect_free(q.e, out, inner);
                    for (const auto& k : q.keys) collect_free(k.key, out, inner);
                    for (const auto& p : q.parts) collect_free(p.key, out, inner);
                    if (q.kind == qualifier::q_kind::generator) inner.insert(q.var);
                }
                for (const auto& h : e->children()) collect_free(h, out, inner);
                return;
            }
            default:
                for (const auto& c : e->children()) collect_free(c, out, bound);
        }
    }

    void check_transform(const expr_ptr& e) {
        const std::string& n = e->name();
        const auto& inputs = e->children();
        const auto& args = e->static_args();

        if (!is_known_transform(n)) {
            error(e->span(), "unknown transform: " + n);
            for (const auto& c : inputs) check(c);
            return;
        }

        auto want_inputs = [&](std::size_t want) {
            if (inputs.size() != want)
                error(e->span(), n + " expects " + std::to_string(want) + " input(s), got " +
                                     std::to_string(inputs.size()));
        };
        auto ident_count = [&]() {
            std::size_t c = 0;
            for (const auto& a : args)
                if (a.kind == static_arg::a_kind::ident ||
                    a.kind == static_arg::a_kind::split)
                    ++c;
            return c;
        };

        if (n == "project") {
            want_inputs(1);
            if (args.empty()) error(e->span(), "project requires attribute arguments");
        } else if (n == "append") {
            want_inputs(2);
        } else if (n == "select" || n == "partition") {
            want_inputs(2);
        } else if (n == "fold") {
            want_inputs(1);
            auto [b, a] = [&]() {
                try {
                    return split_static_args(args);
                } catch (const std::invalid_argument&) {
                    return std::make_pair(std::vector<std::string>{}, std::vector<std::string>{});
                }
            }();
            if (b.empty() || a.empty())
                error(e->span(), "fold requires `fold[B; A]` attribute arguments");
        } else if (n == "unfold" || n == "zorder" || n == "transpose") {
            want_inputs(1);
            if (!args.empty()) error(e->span(), n + " takes no bracket arguments");
        } else if (n == "prejoin") {
            want_inputs(2);
            if (ident_count() != 1 || args.size() != 1)
                error(e->span(), "prejoin expects one join attribute");
        } else if (n == "delta") {
            want_inputs(1);
        } else if (n == "grid") {
            want_inputs(1);
            if (args.empty()) error(e->span(), "grid requires dimension arguments");
            for (const auto& a : args) {
                if (a.kind == static_arg::a_kind::keyed && a.num.as_double() <= 0.0)
                    error(e->span(), "grid stride must be positive");
                if (a.kind == static_arg::a_kind::number ||
                    a.kind == static_arg::a_kind::split)
                    error(e->span(), "grid expects attr[:stride[:origin]] arguments");
            }
        }

        // Attribute-name arguments checked against the input schema when known.
        if ((n == "project" || n == "fold" || n == "prejoin" || n == "delta" || n == "grid") &&
            !inputs.empty()) {
            auto check_attrs = [&](const expr_ptr& input, const std::vector<std::string>& attrs) {
                shape s = shape_of(input);
                if (!s.is_list() || s.elem().kind != shape::s_kind::record ||
                    s.elem().labels.empty())
                    return;
                for (const auto& a : attrs)
                    if (!s.elem().label_index(a)) error(e->span(), "unknown attribute: " + a);
            };
            std::vector<std::string> attrs;
            for (const auto& a : args) {
                if (a.kind == static_arg::a_kind::ident || a.kind == static_arg::a_kind::keyed)
                    attrs.push_back(a.name);
                if (a.kind == static_arg::a_kind::split) {
                    attrs.push_back(a.name);
                    attrs.push_back(a.name2);
                }
            }
            if (n == "prejoin" && inputs.size() == 2) {
                check_attrs(inputs[0], attrs);
                check_attrs(inputs[1], attrs);
            } else {
                check_attrs(inputs[0], attrs);
            }
        }

        if ((n == "select" || n == "partition") && inputs.size() == 2) {
            check(inputs[1]);
            // The condition may bind exactly one implicit element variable.
            std::set<std::string> free, bound;
            collect_free(inputs[0], free, bound);
            if (free.size() > 1) {
                for (const auto& v : free)
                    error(inputs[0]->span(), "ambiguous element variable: " + v);
            }
            std::map<std::string, shape> saved = shapes_;
            shape src = shape_of(inputs[1]);
            for (const auto& v : free)
                shapes_[v] = src.is_list() ? src.elem() : shape::unknown();
            check(inputs[0]);
            shapes_ = std::move(saved);
            return;
        }

        for (const auto& c : inputs) check(c);
    }

    const bind_env& env_;
    std::vector<bind_error> errors_;
    std::map<std::string, shape> shapes_;
};

}  // namespace

std::vector<bind_error> bind_check(const expr_ptr& e, const bind_env& env) {
    return checker(env).run(e);
}

}  // namespace rodent
