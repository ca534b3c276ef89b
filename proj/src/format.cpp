#include "rodent/parse.hpp"

namespace rodent {

namespace {

// Precedence levels, loosest first. Primary constructs are level 8.
int op_prec(arith_op op) {
    switch (op) {
        case arith_op::logic_or: return 1;
        case arith_op::logic_and: return 2;
        case arith_op::logic_not: return 3;
        case arith_op::eq: case arith_op::ne: case arith_op::lt:
        case arith_op::le: case arith_op::gt: case arith_op::ge: return 4;
        case arith_op::add: case arith_op::sub: return 5;
        case arith_op::mul: case arith_op::div: case arith_op::mod: return 6;
        case arith_op::neg: return 7;
    }
    return 8;
}

int expr_prec(const expr_ptr& e) {
    return e->kind() == expr_kind::arith ? op_prec(e->op()) : 8;
}

class printer {
public:
    std::string run(const expr_ptr& e) {
        print(e, 1);
        return std::move(out_);
    }

private:
    void print(const expr_ptr& e, int min_prec) {
        bool parens = expr_prec(e) < min_prec;
        if (parens) out_ += '(';
        print_node(e);
        if (parens) out_ += ')';
    }

    void print_node(const expr_ptr& e) {
        switch (e->kind()) {
            case expr_kind::literal:
                out_ += e->literal_value().to_string();
                return;
            case expr_kind::bool_lit:
                out_ += e->bool_value() ? "true" : "false";
                return;
            case expr_kind::table_ref:
            case expr_kind::var_ref:
                out_ += e->name();
                return;
            case expr_kind::field_access:
                print(e->base(), 8);
                out_ += '.';
                out_ += e->name();
                return;
            case expr_kind::comprehension: {
                out_ += '[';
                join(e->children(), [&](const expr_ptr& h) { print(h, 1); });
                out_ += " | ";
                const auto& quals = e->qualifiers();
                for (std::size_t i = 0; i < quals.size(); ++i) {
                    if (i) out_ += ", ";
                    print_qualifier(quals[i]);
                }
                out_ += ']';
                return;
            }
            case expr_kind::list_ctor:
                out_ += '[';
                join(e->children(), [&](const expr_ptr& c) { print(c, 1); });
                out_ += ']';
                return;
            case expr_kind::transform: {
                out_ += e->name();
                const auto& args = e->static_args();
                if (!args.empty()) {
                    out_ += '[';
                    for (std::size_t i = 0; i < args.size(); ++i) {
                        if (i) out_ += ", ";
                        print_static_arg(args[i]);
                    }
                    out_ += ']';
                }
                out_ += '(';
                join(e->children(), [&](const expr_ptr& c) { print(c, 1); });
                out_ += ')';
                return;
            }
            case expr_kind::helper_call:
                out_ += helper_name(e->helper());
                out_ += '(';
                join(e->children(), [&](const expr_ptr& c) { print(c, 1); });
                out_ += ')';
                return;
            case expr_kind::arith: {
                arith_op op = e->op();
                int prec = op_prec(op);
                if (op == arith_op::logic_not) {
                    out_ += "not ";
                    print(e->children()[0], prec);
                    return;
                }
                if (op == arith_op::neg) {
                    out_ += '-';
                    print(e->children()[0], prec + 1);
                    return;
                }
                // Comparisons do not chain; everything else is left-associative.
                bool comparison = prec == 4;
                print(e->children()[0], comparison ? prec + 1 : prec);
                out_ += ' ';
                out_ += arith_op_text(op);
                out_ += ' ';
                print(e->children()[1], prec + 1);
                return;
            }
        }
    }

    void print_qualifier(const qualifier& q) {
        switch (q.kind) {
            case qualifier::q_kind::generator:
                out_ += '\\';
                out_ += q.var;
                out_ += " <- ";
                print(q.e, 1);
                return;
            case qualifier::q_kind::condition:
                print(q.e, 1);
                return;
            case qualifier::q_kind::order_by:
                out_ += "orderby ";
                for (std::size_t i = 0; i < q.keys.size(); ++i) {
                    if (i) out_ += ", ";
                    print(q.keys[i].key, 1);
                    out_ += q.keys[i].descending ? " DESC" : " ASC";
                }
                return;
            case qualifier::q_kind::group_by:
                out_ += "groupby ";
                print(q.e, 1);
                return;
            case qualifier::q_kind::partition_by:
                out_ += "partitionby ";
                for (std::size_t i = 0; i < q.parts.size(); ++i) {
                    if (i) out_ += ", ";
                    print(q.parts[i].key, 1);
                    out_ += ' ';
                    out_ += scalar_to_string(q.parts[i].stride);
                }
                return;
            case qualifier::q_kind::limit:
                out_ += "limit ";
                print(q.e, 1);
                return;
        }
    }

    void print_static_arg(const static_arg& a) {
        switch (a.kind) {
            case static_arg::a_kind::ident:
                out_ += a.name;
                return;
            case static_arg::a_kind::number:
                out_ += scalar_to_string(a.num);
                return;
            case static_arg::a_kind::keyed:
                out_ += a.name;
                out_ += ':';
                out_ += scalar_to_string(a.num);
                if (a.origin) {
                    out_ += ':';
                    out_ += scalar_to_string(*a.origin);
                }
                return;
            case static_arg::a_kind::split:
                out_ += a.name;
                out_ += "; ";
                out_ += a.name2;
                return;
        }
    }

    template <typename Fn>
    void join(const std::vector<expr_ptr>& items, Fn&& fn) {
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (i) out_ += ", ";
            fn(items[i]);
        }
    }

    std::string out_;
};

}  // namespace

std::string format(const expr_ptr& e) { return printer().run(e); }

}  // namespace rodent
