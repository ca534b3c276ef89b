#include <cctype>
#include <charconv>
#include <map>
#include <set>

#include "rodent/parse.hpp"

namespace rodent {

std::string parse_error::describe() const {
    std::string out = std::to_string(span_.line) + ":" + std::to_string(span_.column) + ": " +
                      message_;
    if (!expected_.empty()) {
        out += " (expected ";
        for (std::size_t i = 0; i < expected_.size(); ++i) {
            if (i) out += ", ";
            out += expected_[i];
        }
        out += ")";
    }
    return out;
}

namespace {

enum class tok : std::uint8_t {
    ident, number_int, number_float, string_lit,
    lbracket, rbracket, lparen, rparen, comma, pipe, backslash, arrow,
    dot, colon, semicolon,
    eq, ne, lt, le, gt, ge, plus, minus, star, slash,
    kw_mod, kw_and, kw_or, kw_not, kw_true, kw_false,
    kw_orderby, kw_groupby, kw_partitionby, kw_limit, kw_asc, kw_desc, kw_let,
    assign,  // '=' in let context is the same token as eq; kept for clarity
    end,
};

const char* tok_name(tok t) {
    switch (t) {
        case tok::ident: return "identifier";
        case tok::number_int: case tok::number_float: return "number";
        case tok::string_lit: return "string";
        case tok::lbracket: return "'['";
        case tok::rbracket: return "']'";
        case tok::lparen: return "'('";
        case tok::rparen: return "')'";
        case tok::comma: return "','";
        case tok::pipe: return "'|'";
        case tok::backslash: return "'\\'";
        case tok::arrow: return "'<-'";
        case tok::dot: return "'.'";
        case tok::colon: return "':'";
        case tok::semicolon: return "';'";
        case tok::eq: return "'='";
        case tok::ne: return "'!='";
        case tok::lt: return "'<'";
        case tok::le: return "'<='";
        case tok::gt: return "'>'";
        case tok::ge: return "'>='";
        case tok::plus: return "'+'";
        case tok::minus: return "'-'";
        case tok::star: return "'*'";
        case tok::slash: return "'/'";
        case tok::kw_mod: return "'mod'";
        case tok::kw_and: return "'and'";
        case tok::kw_or: return "'or'";
        case tok::kw_not: return "'not'";
        case tok::kw_true: return "'true'";
        case tok::kw_false: return "'false'";
        case tok::kw_orderby: return "'orderby'";
        case tok::kw_groupby: return "'groupby'";
        case tok::kw_partitionby: return "'partitionby'";
        case tok::kw_limit: return "'limit'";
        case tok::kw_asc: return "'ASC'";
        case tok::kw_desc: return "'DESC'";
        case tok::kw_let: return "'let'";
        case tok::assign: return "'='";
        case tok::end: return "end of input";
    }
    return "?";
}

struct token {
    tok kind;
    source_span span;
    std::string text;       // ident / string contents
    std::int64_t int_val = 0;
    double float_val = 0.0;
};

const std::map<std::string, tok, std::less<>> keywords = {
    {"mod", tok::kw_mod},       {"and", tok::kw_and},
    {"or", tok::kw_or},         {"not", tok::kw_not},
    {"true", tok::kw_true},     {"false", tok::kw_false},
    {"orderby", tok::kw_orderby}, {"groupby", tok::kw_groupby},
    {"partitionby", tok::kw_partitionby}, {"limit", tok::kw_limit},
    {"ASC", tok::kw_asc},       {"DESC", tok::kw_desc},
    {"let", tok::kw_let},
};

class lexer {
public:
    explicit lexer(const std::string& text) : text_(text) {}

    std::vector<token> run() {
        std::vector<token> out;
        for (;;) {
            skip_trivia();
            token t = next();
            out.push_back(t);
            if (t.kind == tok::end) break;
        }
        return out;
    }

private:
    void skip_trivia() {
        for (;;) {
            while (pos_ < text_.size() &&
                   (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\r' ||
                    text_[pos_] == '\n')) {
                advance();
            }
            if (pos_ + 1 < text_.size() && text_[pos_] == '-' && text_[pos_ + 1] == '-') {
                while (pos_ < text_.size() && text_[pos_] != '\n') advance();
                continue;
            }
            break;
        }
    }

    void advance() {
        if (text_[pos_] == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        ++pos_;
    }

    source_span here() const {
        return {static_cast<std::uint32_t>(pos_), static_cast<std::uint32_t>(pos_), line_, col_};
    }

    token make(tok kind, source_span start) {
        token t;
        t.kind = kind;
        t.span = start;
        t.span.end = static_cast<std::uint32_t>(pos_);
        return t;
    }

    token next() {
        source_span start = here();
        if (pos_ >= text_.size()) return make(tok::end, start);
        char c = text_[pos_];

        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t b = pos_;
            while (pos_ < text_.size() &&
                   (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
                advance();
            std::string word = text_.substr(b, pos_ - b);
            auto kw = keywords.find(word);
            token t = make(kw == keywords.end() ? tok::ident : kw->second, start);
            t.text = std::move(word);
            return t;
        }

        if (std::isdigit(static_cast<unsigned char>(c))) return lex_number(start);

        if (c == '"') return lex_string(start);

        auto two = [&](char a, char b) {
            return text_[pos_] == a && pos_ + 1 < text_.size() && text_[pos_ + 1] == b;
        };
        if (two('<', '-')) { advance(); advance(); return make(tok::arrow, start); }
        if (two('<', '=')) { advance(); advance(); return make(tok::le, start); }
        if (two('>', '=')) { advance(); advance(); return make(tok::ge, start); }
        if (two('!', '=')) { advance(); advance(); return make(tok::ne, start); }

        advance();
        switch (c) {
            case '[': return make(tok::lbracket, start);
            case ']': return make(tok::rbracket, start);
            case '(': return make(tok::lparen, start);
            case ')': return make(tok::rparen, start);
            case ',': return make(tok::comma, start);
            case '|': return make(tok::pipe, start);
            case '\\': return make(tok::backslash, start);
            case '.': return make(tok::dot, start);
            case ':': return make(tok::colon, start);
            case ';': return make(tok::semicolon, start);
            case '=': return make(tok::eq, start);
            case '<': return make(tok::lt, start);
            case '>': return make(tok::gt, start);
            case '+': return make(tok::plus, start);
            case '-': return make(tok::minus, start);
            case '*': return make(tok::star, start);
            case '/': return make(tok::slash, start);
        }
        throw parse_error(start, std::string("unexpected character '") + c + "'");
    }

    token lex_number(source_span start) {
        std::size_t b = pos_;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])))
            advance();
        bool is_float = false;
        if (pos_ + 1 < text_.size() && text_[pos_] == '.' &&
            std::isdigit(static_cast<unsigned char>(text_[pos_ + 1]))) {
            is_float = true;
            advance();
            while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])))
                advance();
        }
        if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
            std::size_t save = pos_;
            std::size_t p = pos_ + 1;
            if (p < text_.size() && (text_[p] == '+' || text_[p] == '-')) ++p;
            if (p < text_.size() && std::isdigit(static_cast<unsigned char>(text_[p]))) {
                is_float = true;
                while (pos_ < save + (p - save) + 1) advance();
                while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])))
                    advance();
            }
        }
        std::string lit = text_.substr(b, pos_ - b);
        token t = make(is_float ? tok::number_float : tok::number_int, start);
        if (is_float) {
            t.float_val = std::strtod(lit.c_str(), nullptr);
        } else {
            auto [p, ec] = std::from_chars(lit.data(), lit.data() + lit.size(), t.int_val);
            if (ec != std::errc()) throw parse_error(start, "integer literal out of range");
        }
        return t;
    }

    token lex_string(source_span start) {
        advance();  // opening quote
        std::string out;
        while (pos_ < text_.size() && text_[pos_] != '"') {
            char c = text_[pos_];
            if (c == '\\') {
                advance();
                if (pos_ >= text_.size()) break;
                char esc = text_[pos_];
                switch (esc) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case '"': out += '"'; break;
                    case '\\': out += '\\'; break;
                    default:
                        throw parse_error(here(), std::string("unknown escape '\\") + esc + "'");
                }
                advance();
            } else {
                out += c;
                advance();
            }
        }
        if (pos_ >= text_.size()) throw parse_error(start, "unterminated string literal");
        advance();  // closing quote
        token t = make(tok::string_lit, start);
        t.text = std::move(out);
        return t;
    }

    const std::string& text_;
    std::size_t pos_ = 0;
    std::uint32_t line_ = 1;
    std::uint32_t col_ = 1;
};

// ---------------------------------------------------------------------------

class parser {
public:
    explicit parser(const std::string& text) : tokens_(lexer(text).run()) {}

    expr_ptr parse_one() {
        expr_ptr e = parse_expr();
        expect(tok::end);
        return e;
    }

    std::vector<std::pair<std::string, expr_ptr>> parse_lets() {
        std::vector<std::pair<std::string, expr_ptr>> lets;
        while (peek().kind == tok::kw_let) {
            take();
            token name = expect(tok::ident);
            expect(tok::eq);
            lets.emplace_back(name.text, parse_expr());
        }
        return lets;
    }

    expr_ptr parse_final() {
        expr_ptr e = parse_expr();
        expect(tok::end);
        return e;
    }

private:
    const token& peek(std::size_t ahead = 0) const {
        std::size_t i = pos_ + ahead;
        return tokens_[std::min(i, tokens_.size() - 1)];
    }

    token take() { return tokens_[std::min(pos_++, tokens_.size() - 1)]; }

    token expect(tok kind) {
        const token& t = peek();
        if (t.kind != kind)
            throw parse_error(t.span, std::string("unexpected ") + tok_name(t.kind),
                              {tok_name(kind)});
        return take();
    }

    bool accept(tok kind) {
        if (peek().kind == kind) {
            take();
            return true;
        }
        return false;
    }

    source_span span_from(source_span start) const {
        source_span s = start;
        s.end = pos_ > 0 ? tokens_[pos_ - 1].span.end : start.end;
        return s;
    }

    // expr := or-level
    expr_ptr parse_expr() { return parse_or(); }

    expr_ptr parse_or() {
        source_span start = peek().span;
        expr_ptr left = parse_and();
        while (peek().kind == tok::kw_or) {
            take();
            expr_ptr right = parse_and();
            left = expr::arith(arith_op::logic_or, {left, right}, span_from(start));
        }
        return left;
    }

    expr_ptr parse_and() {
        source_span start = peek().span;
        expr_ptr left = parse_not();
        while (peek().kind == tok::kw_and) {
            take();
            expr_ptr right = parse_not();
            left = expr::arith(arith_op::logic_and, {left, right}, span_from(start));
        }
        return left;
    }

    expr_ptr parse_not() {
        if (peek().kind == tok::kw_not) {
            source_span start = take().span;
            expr_ptr inner = parse_not();
            return expr::arith(arith_op::logic_not, {inner}, span_from(start));
        }
        return parse_cmp();
    }

    expr_ptr parse_cmp() {
        source_span start = peek().span;
        expr_ptr left = parse_add();
        arith_op op;
        switch (peek().kind) {
            case tok::eq: op = arith_op::eq; break;
            case tok::ne: op = arith_op::ne; break;
            case tok::lt: op = arith_op::lt; break;
            case tok::le: op = arith_op::le; break;
            case tok::gt: op = arith_op::gt; break;
            case tok::ge: op = arith_op::ge; break;
            default: return left;
        }
        take();
        expr_ptr right = parse_add();
        return expr::arith(op, {left, right}, span_from(start));
    }

    expr_ptr parse_add() {
        source_span start = peek().span;
        expr_ptr left = parse_mul();
        for (;;) {
            arith_op op;
            if (peek().kind == tok::plus) op = arith_op::add;
            else if (peek().kind == tok::minus) op = arith_op::sub;
            else break;
            take();
            expr_ptr right = parse_mul();
            left = expr::arith(op, {left, right}, span_from(start));
        }
        return left;
    }

    expr_ptr parse_mul() {
        source_span start = peek().span;
        expr_ptr left = parse_unary();
        for (;;) {
            arith_op op;
            if (peek().kind == tok::star) op = arith_op::mul;
            else if (peek().kind == tok::slash) op = arith_op::div;
            else if (peek().kind == tok::kw_mod) op = arith_op::mod;
            else break;
            take();
            expr_ptr right = parse_unary();
            left = expr::arith(op, {left, right}, span_from(start));
        }
        return left;
    }

    expr_ptr parse_unary() {
        if (peek().kind == tok::minus) {
            source_span start = take().span;
            // Fold a leading minus into a numeric literal.
            if (peek().kind == tok::number_int) {
                token n = take();
                return expr::literal(value(-n.int_val), span_from(start));
            }
            if (peek().kind == tok::number_float) {
                token n = take();
                return expr::literal(value(-n.float_val), span_from(start));
            }
            expr_ptr inner = parse_unary();
            return expr::arith(arith_op::neg, {inner}, span_from(start));
        }
        return parse_postfix();
    }

    expr_ptr parse_postfix() {
        expr_ptr base = parse_primary();
        while (peek().kind == tok::dot) {
            source_span start = base->span();
            take();
            token label = expect(tok::ident);
            base = expr::field_access(base, label.text, span_from(start));
        }
        return base;
    }

    expr_ptr parse_primary() {
        const token& t = peek();
        switch (t.kind) {
            case tok::lbracket: return parse_bracket();
            case tok::ident: return parse_call_or_ref();
            case tok::number_int: {
                token n = take();
                return expr::literal(value(n.int_val), n.span);
            }
            case tok::number_float: {
                token n = take();
                return expr::literal(value(n.float_val), n.span);
            }
            case tok::string_lit: {
                token s = take();
                return expr::literal(value(s.text), s.span);
            }
            case tok::kw_true: {
                token b = take();
                return expr::boolean(true, b.span);
            }
            case tok::kw_false: {
                token b = take();
                return expr::boolean(false, b.span);
            }
            case tok::lparen: {
                take();
                expr_ptr inner = parse_expr();
                expect(tok::rparen);
                return inner;
            }
            default:
                throw parse_error(t.span, std::string("unexpected ") + tok_name(t.kind),
                                  {"expression"});
        }
    }

    // '[' ... ']' — comprehension when a top-level '|' follows the heads.
    expr_ptr parse_bracket() {
        source_span start = expect(tok::lbracket).span;
        if (accept(tok::rbracket))
            return expr::literal(value(value::list{}), span_from(start));

        std::vector<expr_ptr> elements;
        elements.push_back(parse_expr());
        while (accept(tok::comma)) elements.push_back(parse_expr());

        if (accept(tok::pipe)) {
            std::vector<qualifier> quals;
            quals.push_back(parse_qualifier());
            while (accept(tok::comma)) quals.push_back(parse_qualifier());
            expect(tok::rbracket);
            return expr::comprehension(std::move(elements), std::move(quals), span_from(start));
        }
        expect(tok::rbracket);

        // Collapse an all-literal bracket into one literal list value.
        bool all_literal = true;
        for (const auto& e : elements)
            if (e->kind() != expr_kind::literal) { all_literal = false; break; }
        if (all_literal) {
            value::list items;
            items.reserve(elements.size());
            for (const auto& e : elements) items.push_back(e->literal_value());
            return expr::literal(value(std::move(items)), span_from(start));
        }
        return expr::list_ctor(std::move(elements), span_from(start));
    }

    qualifier parse_qualifier() {
        const token& t = peek();
        switch (t.kind) {
            case tok::backslash: {
                take();
                token var = expect(tok::ident);
                expect(tok::arrow);
                return qualifier::generator(var.text, parse_expr());
            }
            case tok::kw_orderby: {
                take();
                std::vector<order_key> keys;
                keys.push_back(parse_order_key());
                while (peek().kind == tok::comma && !starts_qualifier(peek(1))) {
                    take();
                    keys.push_back(parse_order_key());
                }
                return qualifier::order_by(std::move(keys));
            }
            case tok::kw_groupby: {
                take();
                return qualifier::group_by(parse_expr());
            }
            case tok::kw_partitionby: {
                take();
                std::vector<partition_key> parts;
                parts.push_back(parse_partition_key());
                while (peek().kind == tok::comma && !starts_qualifier(peek(1))) {
                    take();
                    parts.push_back(parse_partition_key());
                }
                return qualifier::partition_by(std::move(parts));
            }
            case tok::kw_limit: {
                take();
                return qualifier::limit(parse_expr());
            }
            default:
                return qualifier::condition(parse_expr());
        }
    }

    static bool starts_qualifier(const token& t) {
        return t.kind == tok::backslash || t.kind == tok::kw_orderby ||
               t.kind == tok::kw_groupby || t.kind == tok::kw_partitionby ||
               t.kind == tok::kw_limit;
    }

    order_key parse_order_key() {
        order_key k;
        k.key = parse_expr();
        if (accept(tok::kw_desc)) k.descending = true;
        else accept(tok::kw_asc);
        return k;
    }

    partition_key parse_partition_key() {
        partition_key k;
        k.key = parse_expr();
        k.stride = parse_signed_number("partition stride");
        return k;
    }

    value parse_signed_number(const char* what) {
        bool negative = accept(tok::minus);
        const token& t = peek();
        if (t.kind == tok::number_int) {
            token n = take();
            return value(negative ? -n.int_val : n.int_val);
        }
        if (t.kind == tok::number_float) {
            token n = take();
            return value(negative ? -n.float_val : n.float_val);
        }
        throw parse_error(t.span, std::string("expected number for ") + what, {"number"});
    }

    // IDENT, IDENT '(' ... ')', IDENT '[' targs ']' '(' ... ')'
    expr_ptr parse_call_or_ref() {
        token name = expect(tok::ident);
        source_span start = name.span;

        std::vector<static_arg> args;
        bool has_args = false;
        if (peek().kind == tok::lbracket && looks_like_static_args()) {
            has_args = true;
            take();
            args.push_back(parse_static_arg());
            while (accept(tok::comma)) args.push_back(parse_static_arg());
            expect(tok::rbracket);
        }

        if (has_args || peek().kind == tok::lparen) {
            expect(tok::lparen);
            std::vector<expr_ptr> inputs;
            inputs.push_back(parse_expr());
            while (accept(tok::comma)) inputs.push_back(parse_expr());
            expect(tok::rparen);
            if (auto h = helper_from_name(name.text)) {
                if (has_args)
                    throw parse_error(start, "helper " + name.text + " takes no bracket arguments");
                return expr::helper_call(*h, std::move(inputs), span_from(start));
            }
            return expr::transform(name.text, std::move(args), std::move(inputs),
                                   span_from(start));
        }
        return expr::table_ref(name.text, start);
    }

    // Distinguishes `name[...]` static args from a name followed by a literal
    // list. Static args start with IDENT followed by ',', ';', ':' or ']' or a
    // bare NUMBER; only a known transform/helper position ever reaches here
    // with '['. A conservative scan suffices because the grammar disallows
    // `ref literal` juxtaposition.
    bool looks_like_static_args() const {
        const token& t1 = peek(1);
        if (t1.kind == tok::number_int || t1.kind == tok::number_float ||
            t1.kind == tok::minus)
            return true;
        if (t1.kind != tok::ident) return false;
        const token& t2 = peek(2);
        return t2.kind == tok::comma || t2.kind == tok::semicolon || t2.kind == tok::colon ||
               t2.kind == tok::rbracket;
    }

    static_arg parse_static_arg() {
        if (peek().kind == tok::number_int || peek().kind == tok::number_float ||
            peek().kind == tok::minus) {
            return static_arg::number(parse_signed_number("transform argument"));
        }
        token name = expect(tok::ident);
        if (accept(tok::semicolon)) {
            token after = expect(tok::ident);
            return static_arg::split(name.text, after.text);
        }
        if (accept(tok::colon)) {
            value stride = parse_signed_number("stride");
            std::optional<value> origin;
            if (accept(tok::colon)) origin = parse_signed_number("origin");
            return static_arg::keyed(name.text, std::move(stride), std::move(origin));
        }
        return static_arg::ident(name.text);
    }

    std::vector<token> tokens_;
    std::size_t pos_ = 0;
};

// --- name resolution --------------------------------------------------------
//
// The raw parse produces table_ref nodes for every bare name; this pass
// rewrites names bound by a generator into var_ref nodes. Inside the
// condition argument of select/partition, free names denote the implicit
// element variable and become var_ref as well.

class resolver {
public:
    expr_ptr resolve(const expr_ptr& e, bool implicit_vars = false) {
        switch (e->kind()) {
            case expr_kind::literal:
            case expr_kind::bool_lit:
            case expr_kind::var_ref:
                return e;
            case expr_kind::table_ref:
                if (bound(e->name()) || implicit_vars)
                    return expr::rename_ref(e, expr_kind::var_ref);
                return e;
            case expr_kind::field_access: {
                expr_ptr base = resolve(e->base(), implicit_vars);
                if (base == e->base()) return e;
                return expr::field_access(base, e->name(), e->span());
            }
            case expr_kind::comprehension:
                return resolve_comprehension(e, implicit_vars);
            case expr_kind::transform:
                return resolve_transform(e, implicit_vars);
            case expr_kind::list_ctor:
            case expr_kind::arith:
            case expr_kind::helper_call: {
                std::vector<expr_ptr> kids;
                kids.reserve(e->children().size());
                bool changed = false;
                for (const auto& c : e->children()) {
                    kids.push_back(resolve(c, implicit_vars));
                    changed |= kids.back() != c;
                }
                if (!changed) return e;
                if (e->kind() == expr_kind::list_ctor)
                    return expr::list_ctor(std::move(kids), e->span());
                if (e->kind() == expr_kind::arith)
                    return expr::arith(e->op(), std::move(kids), e->span());
                return expr::helper_call(e->helper(), std::move(kids), e->span());
            }
        }
        return e;
    }

private:
    bool bound(const std::string& name) const {
        for (auto it = scopes_.rbegin(); it != scopes_.rend(); ++it)
            if (it->count(name)) return true;
        return false;
    }

    expr_ptr resolve_comprehension(const expr_ptr& e, bool implicit_vars) {
        scopes_.emplace_back();
        std::vector<qualifier> quals;
        quals.reserve(e->qualifiers().size());
        for (const auto& q : e->qualifiers()) {
            qualifier nq = q;
            switch (q.kind) {
                case qualifier::q_kind::generator:
                    nq.e = resolve(q.e, implicit_vars);
                    scopes_.back().insert(q.var);
                    break;
                case qualifier::q_kind::condition:
                case qualifier::q_kind::group_by:
                case qualifier::q_kind::limit:
                    nq.e = resolve(q.e, implicit_vars);
                    break;
                case qualifier::q_kind::order_by:
                    for (auto& k : nq.keys) k.key = resolve(k.key, implicit_vars);
                    break;
                case qualifier::q_kind::partition_by:
                    for (auto& p : nq.parts) p.key = resolve(p.key, implicit_vars);
                    break;
            }
            quals.push_back(std::move(nq));
        }
        std::vector<expr_ptr> heads;
        heads.reserve(e->children().size());
        for (const auto& h : e->children()) heads.push_back(resolve(h, implicit_vars));
        scopes_.pop_back();
        return expr::comprehension(std::move(heads), std::move(quals), e->span());
    }

    expr_ptr resolve_transform(const expr_ptr& e, bool implicit_vars) {
        const bool element_cond =
            (e->name() == "select" || e->name() == "partition") && e->children().size() >= 2;
        std::vector<expr_ptr> kids;
        kids.reserve(e->children().size());
        for (std::size_t i = 0; i < e->children().size(); ++i) {
            bool implicit = implicit_vars || (element_cond && i == 0);
            kids.push_back(resolve(e->children()[i], implicit));
        }
        return expr::transform(e->name(), e->static_args(), std::move(kids), e->span());
    }

    std::vector<std::set<std::string>> scopes_;
};

expr_ptr substitute_lets(const expr_ptr& e,
                         const std::map<std::string, expr_ptr>& lets) {
    switch (e->kind()) {
        case expr_kind::table_ref: {
            auto it = lets.find(e->name());
            return it == lets.end() ? e : it->second;
        }
        case expr_kind::literal:
        case expr_kind::bool_lit:
        case expr_kind::var_ref:
            return e;
        case expr_kind::field_access:
            return expr::field_access(substitute_lets(e->base(), lets), e->name(), e->span());
        case expr_kind::comprehension: {
            std::vector<qualifier> quals = e->qualifiers();
            for (auto& q : quals) {
                if (q.e) q.e = substitute_lets(q.e, lets);
                for (auto& k : q.keys) k.key = substitute_lets(k.key, lets);
                for (auto& p : q.parts) p.key = substitute_lets(p.key, lets);
            }
            std::vector<expr_ptr> heads;
            for (const auto& h : e->children()) heads.push_back(substitute_lets(h, lets));
            return expr::comprehension(std::move(heads), std::move(quals), e->span());
        }
        default: {
            std::vector<expr_ptr> kids;
            for (const auto& c : e->children()) kids.push_back(substitute_lets(c, lets));
            if (e->kind() == expr_kind::transform)
                return expr::transform(e->name(), e->static_args(), std::move(kids), e->span());
            if (e->kind() == expr_kind::list_ctor)
                return expr::list_ctor(std::move(kids), e->span());
            if (e->kind() == expr_kind::arith)
                return expr::arith(e->op(), std::move(kids), e->span());
            return expr::helper_call(e->helper(), std::move(kids), e->span());
        }
    }
}

}  // namespace

expr_ptr parse(const std::string& text) {
    parser p(text);
    expr_ptr raw = p.parse_one();
    return resolver().resolve(raw);
}

expr_ptr parse_program(const std::string& text) {
    parser p(text);
    auto raw_lets = p.parse_lets();
    expr_ptr raw = p.parse_final();

    std::map<std::string, expr_ptr> lets;
    for (auto& [name, bound_raw] : raw_lets) {
        expr_ptr resolved = resolver().resolve(bound_raw);
        lets[name] = substitute_lets(resolved, lets);
    }
    return substitute_lets(resolver().resolve(raw), lets);
}

}  // namespace rodent
