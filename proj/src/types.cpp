#include "rodent/types.hpp"

#include <charconv>
#include <cstring>

namespace rodent {

const char* scalar_kind_name(scalar_kind k) {
    switch (k) {
        case scalar_kind::int64: return "int";
        case scalar_kind::float64: return "float";
        case scalar_kind::str: return "string";
    }
    return "?";
}

std::optional<scalar_kind> scalar_kind_from_name(const std::string& name) {
    if (name == "int") return scalar_kind::int64;
    if (name == "float") return scalar_kind::float64;
    if (name == "string") return scalar_kind::str;
    return std::nullopt;
}

nested_type nested_type::labeled(std::string label, nested_type inner) {
    if (!valid_identifier(label))
        throw std::invalid_argument("invalid label: " + label);
    nested_type t;
    t.kind_ = node_kind::labeled;
    t.label_ = std::move(label);
    t.children_.push_back(std::move(inner));
    return t;
}

nested_type nested_type::nesting(std::vector<nested_type> children) {
    // Labels within one nesting level must be unique.
    for (std::size_t i = 0; i < children.size(); ++i) {
        if (children[i].kind() != node_kind::labeled) continue;
        for (std::size_t j = i + 1; j < children.size(); ++j) {
            if (children[j].kind() == node_kind::labeled &&
                children[j].label() == children[i].label()) {
                throw std::invalid_argument("duplicate label: " + children[i].label());
            }
        }
    }
    nested_type t;
    t.kind_ = node_kind::nesting;
    t.children_ = std::move(children);
    return t;
}

bool nested_type::operator==(const nested_type& other) const {
    if (kind_ != other.kind_) return false;
    switch (kind_) {
        case node_kind::scalar: return scalar_ == other.scalar_;
        case node_kind::labeled:
            return label_ == other.label_ && inner() == other.inner();
        case node_kind::nesting: return children_ == other.children_;
    }
    return false;
}

bool value::operator==(const value& other) const {
    if (data_.index() != other.data_.index()) return false;
    if (is_float()) {
        // Exact bitwise comparison; range predicates are the float idiom.
        return std::bit_cast<std::uint64_t>(as_float()) ==
               std::bit_cast<std::uint64_t>(other.as_float());
    }
    return data_ == other.data_;
}

std::string scalar_to_string(const value& v) {
    if (v.is_int()) return std::to_string(v.as_int());
    if (v.is_float()) {
        char buf[32];
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v.as_float());
        std::string s(buf, p);
        if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
            s.find("inf") == std::string::npos && s.find("nan") == std::string::npos) {
            s += ".0";
        }
        return s;
    }
    std::string out = "\"";
    for (char c : v.as_str()) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default: out += c;
        }
    }
    out += '"';
    return out;
}

std::string value::to_string() const {
    if (!is_list()) return scalar_to_string(*this);
    std::string out = "[";
    const auto& kids = children();
    for (std::size_t i = 0; i < kids.size(); ++i) {
        if (i) out += ", ";
        out += kids[i].to_string();
    }
    out += ']';
    return out;
}

std::optional<std::size_t> logical_table::column_index(const std::string& attr) const {
    for (std::size_t i = 0; i < schema.size(); ++i)
        if (schema[i].name == attr) return i;
    return std::nullopt;
}

bool valid_identifier(const std::string& label) {
    if (label.empty()) return false;
    auto head = [](char c) { return c == '_' || (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z'); };
    auto tail = [&](char c) { return head(c) || (c >= '0' && c <= '9'); };
    if (!head(label[0])) return false;
    for (std::size_t i = 1; i < label.size(); ++i)
        if (!tail(label[i])) return false;
    return true;
}

bool conforms(const value& v, const nested_type& t) {
    switch (t.kind()) {
        case nested_type::node_kind::scalar:
            switch (t.scalar_type()) {
                case scalar_kind::int64: return v.is_int();
                case scalar_kind::float64: return v.is_float();
                case scalar_kind::str: return v.is_str();
            }
            return false;
        case nested_type::node_kind::labeled:
            return conforms(v, t.inner());
        case nested_type::node_kind::nesting: {
            if (!v.is_list()) return false;
            const auto& kids = v.children();
            const auto& types = t.children();
            if (kids.size() != types.size()) return false;
            for (std::size_t i = 0; i < kids.size(); ++i)
                if (!conforms(kids[i], types[i])) return false;
            return true;
        }
    }
    return false;
}

nested_type schema_type(const std::vector<column_def>& schema) {
    std::vector<nested_type> cols;
    cols.reserve(schema.size());
    for (const auto& c : schema)
        cols.push_back(nested_type::labeled(c.name, nested_type::scalar(c.type)));
    return nested_type::nesting(std::move(cols));
}

logical_table make_table(std::string name, std::vector<column_def> schema,
                         std::vector<value> records) {
    if (!valid_identifier(name)) throw std::invalid_argument("invalid table name: " + name);
    const nested_type ty = schema_type(schema);  // validates labels and uniqueness
    for (const auto& r : records) {
        if (!conforms(r, ty))
            throw std::invalid_argument("record does not conform to schema of " + name +
                                        ": " + r.to_string());
    }
    return logical_table{std::move(name), std::move(schema), std::move(records)};
}

std::vector<column_def> parse_schema_text(const std::string& text) {
    std::vector<column_def> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t comma = text.find(',', pos);
        std::string part = text.substr(pos, comma == std::string::npos ? std::string::npos
                                                                       : comma - pos);
        std::size_t colon = part.find(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("schema item missing ':': " + part);
        auto strip = [](std::string s) {
            while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
            while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.pop_back();
            return s;
        };
        std::string name = strip(part.substr(0, colon));
        std::string tyname = strip(part.substr(colon + 1));
        if (!valid_identifier(name))
            throw std::invalid_argument("invalid attribute name: " + name);
        auto k = scalar_kind_from_name(tyname);
        if (!k) throw std::invalid_argument("unknown type name: " + tyname);
        out.push_back({name, *k});
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (out.empty()) throw std::invalid_argument("empty schema");
    return out;
}

std::string schema_to_text(const std::vector<column_def>& schema) {
    std::string out;
    for (std::size_t i = 0; i < schema.size(); ++i) {
        if (i) out += ',';
        out += schema[i].name;
        out += ':';
        out += scalar_kind_name(schema[i].type);
    }
    return out;
}

}  // namespace rodent
