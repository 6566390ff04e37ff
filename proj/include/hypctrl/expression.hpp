#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hypctrl/error.hpp"

namespace hypctrl {

/// Values bound to the free variables of an Expression: position x, time t
/// and the state vector w (referenced as w1..wn, one-based).
struct Bindings {
    double x = 0.0;
    double t = 0.0;
    std::span<const double> w{};
};

/// Arithmetic expression tree parsed from text such as "1 + 0.1*w2^2" or
/// "exp(-100*(x-0.5)^2)". Supports + - * / ^, unary minus, the constants pi
/// and e, and the functions sin cos tan exp log sqrt abs tanh sinh cosh atan
/// min max pow.
class Expression {
public:
    Expression() : Expression(constant(0.0)) {}

    static Expression parse(std::string_view text) {
        Parser parser{text, 0};
        auto root = parser.parse_sum();
        parser.skip_ws();
        if (parser.pos != text.size()) {
            parser.fail("unexpected trailing input");
        }
        return Expression(std::move(root), std::string(text));
    }

    static Expression constant(double value) {
        auto node = std::make_shared<Node>();
        node->kind = Kind::Number;
        node->value = value;
        return Expression(std::move(node), format_constant(value));
    }

    double operator()(const Bindings& b) const { return eval(*root_, b); }
    double operator()(double x) const { return eval(*root_, Bindings{x, 0.0, {}}); }

    const std::string& text() const { return text_; }

    /// Largest state index referenced (w3 -> 3), 0 when state-independent.
    std::size_t max_state_index() const { return max_index(*root_); }
    bool uses_state() const { return max_state_index() > 0; }

    bool is_constant() const { return !depends_on_variables(*root_); }

private:
    enum class Kind { Number, VarX, VarT, VarW, Negate, Binary, Call };

    struct Node {
        Kind kind = Kind::Number;
        double value = 0.0;
        std::size_t index = 0;
        char op = 0;
        std::string fn;
        std::vector<std::shared_ptr<const Node>> args;
    };
    using NodePtr = std::shared_ptr<const Node>;

    Expression(NodePtr root, std::string text) : root_(std::move(root)), text_(std::move(text)) {}

    static std::string format_constant(double value) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", value);
        return buf;
    }

    static double eval(const Node& n, const Bindings& b) {
        switch (n.kind) {
            case Kind::Number: return n.value;
            case Kind::VarX: return b.x;
            case Kind::VarT: return b.t;
            case Kind::VarW:
                if (n.index == 0 || n.index > b.w.size()) {
                    throw Error(ErrorCode::DimensionMismatch,
                                "expression references w" + std::to_string(n.index) +
                                    " but state has " + std::to_string(b.w.size()) + " components");
                }
                return b.w[n.index - 1];
            case Kind::Negate: return -eval(*n.args[0], b);
            case Kind::Binary: {
                const double l = eval(*n.args[0], b);
                const double r = eval(*n.args[1], b);
                switch (n.op) {
                    case '+': return l + r;
                    case '-': return l - r;
                    case '*': return l * r;
                    case '/': return l / r;
                    case '^': return std::pow(l, r);
                }
                break;
            }
            case Kind::Call: return call(n, b);
        }
        return std::nan("");
    }

    static double call(const Node& n, const Bindings& b) {
        const double a = eval(*n.args[0], b);
        const std::string& f = n.fn;
        if (n.args.size() == 2) {
            const double c = eval(*n.args[1], b);
            if (f == "min") return std::min(a, c);
            if (f == "max") return std::max(a, c);
            return std::pow(a, c);
        }
        if (f == "sin") return std::sin(a);
        if (f == "cos") return std::cos(a);
        if (f == "tan") return std::tan(a);
        if (f == "exp") return std::exp(a);
        if (f == "log") return std::log(a);
        if (f == "sqrt") return std::sqrt(a);
        if (f == "abs") return std::abs(a);
        if (f == "tanh") return std::tanh(a);
        if (f == "sinh") return std::sinh(a);
        if (f == "cosh") return std::cosh(a);
        return std::atan(a);
    }

    static std::size_t max_index(const Node& n) {
        std::size_t best = n.kind == Kind::VarW ? n.index : 0;
        for (const auto& a : n.args) best = std::max(best, max_index(*a));
        return best;
    }

    static bool depends_on_variables(const Node& n) {
        if (n.kind == Kind::VarX || n.kind == Kind::VarT || n.kind == Kind::VarW) return true;
        for (const auto& a : n.args) {
            if (depends_on_variables(*a)) return true;
        }
        return false;
    }

    struct Parser {
        std::string_view src;
        std::size_t pos;

        [[noreturn]] void fail(const std::string& what) const {
            throw Error(ErrorCode::ParseError,
                        what + " at offset " + std::to_string(pos) + " in \"" + std::string(src) + "\"");
        }

        void skip_ws() {
            while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
        }

        bool accept(char c) {
            skip_ws();
            if (pos < src.size() && src[pos] == c) {
                ++pos;
                return true;
            }
            return false;
        }

        static NodePtr binary(char op, NodePtr l, NodePtr r) {
            auto node = std::make_shared<Node>();
            node->kind = Kind::Binary;
            node->op = op;
            node->args = {std::move(l), std::move(r)};
            return node;
        }

        NodePtr parse_sum() {
            auto lhs = parse_product();
            for (;;) {
                if (accept('+')) {
                    lhs = binary('+', lhs, parse_product());
                } else if (accept('-')) {
                    lhs = binary('-', lhs, parse_product());
                } else {
                    return lhs;
                }
            }
        }

        NodePtr parse_product() {
            auto lhs = parse_unary();
            for (;;) {
                if (accept('*')) {
                    lhs = binary('*', lhs, parse_unary());
                } else if (accept('/')) {
                    lhs = binary('/', lhs, parse_unary());
                } else {
                    return lhs;
                }
            }
        }

        NodePtr parse_unary() {
            if (accept('-')) {
                auto node = std::make_shared<Node>();
                node->kind = Kind::Negate;
                node->args = {parse_unary()};
                return node;
            }
            if (accept('+')) return parse_unary();
            return parse_power();
        }

        // '^' binds tighter than unary minus on its left and is right-associative.
        NodePtr parse_power() {
            auto base = parse_primary();
            if (accept('^')) return binary('^', base, parse_unary());
            return base;
        }

        NodePtr parse_primary() {
            skip_ws();
            if (pos >= src.size()) fail("unexpected end of expression");
            const char c = src[pos];
            if (c == '(') {
                ++pos;
                auto inner = parse_sum();
                if (!accept(')')) fail("expected ')'");
                return inner;
            }
            if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
            if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_identifier();
            fail(std::string("unexpected character '") + c + "'");
        }

        NodePtr parse_number() {
            const std::string rest(src.substr(pos));
            char* end = nullptr;
            const double v = std::strtod(rest.c_str(), &end);
            if (end == rest.c_str()) fail("malformed number");
            pos += static_cast<std::size_t>(end - rest.c_str());
            auto node = std::make_shared<Node>();
            node->kind = Kind::Number;
            node->value = v;
            return node;
        }

        NodePtr parse_identifier() {
            const std::size_t start = pos;
            while (pos < src.size() &&
                   (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_')) {
                ++pos;
            }
            const std::string name(src.substr(start, pos - start));
            auto node = std::make_shared<Node>();
            if (name == "x") {
                node->kind = Kind::VarX;
                return node;
            }
            if (name == "t") {
                node->kind = Kind::VarT;
                return node;
            }
            if (name == "pi") {
                node->value = std::numbers::pi;
                return node;
            }
            if (name == "e") {
                node->value = std::numbers::e;
                return node;
            }
            if (name.size() > 1 && name[0] == 'w' &&
                name.find_first_not_of("0123456789", 1) == std::string::npos) {
                node->kind = Kind::VarW;
                node->index = std::stoul(name.substr(1));
                if (node->index == 0) fail("state index must be >= 1");
                return node;
            }
            static const std::vector<std::string> unary{"sin",  "cos",  "tan",  "exp",  "log", "sqrt",
                                                        "abs",  "tanh", "sinh", "cosh", "atan"};
            static const std::vector<std::string> binary_fns{"min", "max", "pow"};
            const bool is_unary = std::find(unary.begin(), unary.end(), name) != unary.end();
            const bool is_binary = std::find(binary_fns.begin(), binary_fns.end(), name) != binary_fns.end();
            if (!is_unary && !is_binary) fail("unknown identifier '" + name + "'");
            if (!accept('(')) fail("expected '(' after " + name);
            node->kind = Kind::Call;
            node->fn = name;
            node->args.push_back(parse_sum());
            if (is_binary) {
                if (!accept(',')) fail("expected ',' in " + name);
                node->args.push_back(parse_sum());
            }
            if (!accept(')')) fail("expected ')' after arguments of " + name);
            return node;
        }
    };

    NodePtr root_;
    std::string text_;
};

}  // namespace hypctrl
