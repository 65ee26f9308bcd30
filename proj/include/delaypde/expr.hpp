#pragma once

#include <cctype>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "delaypde/errors.hpp"

namespace delaypde {

/// Minimal arithmetic expression evaluator for config values and initial
/// conditions.  Grammar: + - * / ^ (right assoc), unary minus, parentheses,
/// one-argument functions, the constants pi and e, and free variables bound
/// at evaluation time.  Parsed once into a flat node vector, evaluated many
/// times without allocation.
class Expr {
public:
    static Expr parse(const std::string& text) {
        Expr e;
        Parser p{text, 0, &e};
        e.root_ = p.parse_expr();
        p.skip_ws();
        if (p.pos != text.size())
            throw ValidationError("expression: unexpected trailing input at position " +
                                  std::to_string(p.pos) + " in '" + text + "'");
        return e;
    }

    double eval(const std::map<std::string, double>& vars = {}) const {
        return eval_node(root_, vars);
    }

    /// True if the expression references the named variable anywhere.
    bool references(const std::string& name) const {
        for (const auto& n : nodes_)
            if (n.op == Op::var && n.name == name) return true;
        return false;
    }

private:
    enum class Op { num, var, add, sub, mul, div, pow, neg, call };

    struct Node {
        Op op;
        double value = 0.0;
        std::string name; // variable or function name
        int lhs = -1, rhs = -1;
    };

    std::vector<Node> nodes_;
    int root_ = -1;

    int push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    struct Parser {
        const std::string& s;
        std::size_t pos;
        Expr* e;

        void skip_ws() {
            while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        }
        bool accept(char c) {
            skip_ws();
            if (pos < s.size() && s[pos] == c) { ++pos; return true; }
            return false;
        }
        void expect(char c) {
            if (!accept(c))
                throw ValidationError(std::string("expression: expected '") + c + "' in '" + s + "'");
        }

        int parse_expr() {
            int lhs = parse_term();
            for (;;) {
                if (accept('+')) lhs = e->push({Op::add, 0, {}, lhs, parse_term()});
                else if (accept('-')) lhs = e->push({Op::sub, 0, {}, lhs, parse_term()});
                else return lhs;
            }
        }
        int parse_term() {
            int lhs = parse_factor();
            for (;;) {
                if (accept('*')) lhs = e->push({Op::mul, 0, {}, lhs, parse_factor()});
                else if (accept('/')) lhs = e->push({Op::div, 0, {}, lhs, parse_factor()});
                else return lhs;
            }
        }
        int parse_factor() {
            if (accept('-')) return e->push({Op::neg, 0, {}, parse_factor(), -1});
            int base = parse_primary();
            if (accept('^')) return e->push({Op::pow, 0, {}, base, parse_factor()});
            return base;
        }
        int parse_primary() {
            skip_ws();
            if (pos >= s.size()) throw ValidationError("expression: unexpected end of '" + s + "'");
            const char c = s[pos];
            if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
                std::size_t used = 0;
                double v = std::stod(s.substr(pos), &used);
                pos += used;
                return e->push({Op::num, v, {}, -1, -1});
            }
            if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
                std::size_t start = pos;
                while (pos < s.size() &&
                       (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_'))
                    ++pos;
                std::string name = s.substr(start, pos - start);
                skip_ws();
                if (pos < s.size() && s[pos] == '(') {
                    ++pos;
                    int arg = parse_expr();
                    expect(')');
                    if (!is_function(name))
                        throw ValidationError("expression: unknown function '" + name + "'");
                    return e->push({Op::call, 0, name, arg, -1});
                }
                if (name == "pi") return e->push({Op::num, std::acos(-1.0), {}, -1, -1});
                if (name == "e") return e->push({Op::num, std::exp(1.0), {}, -1, -1});
                return e->push({Op::var, 0, name, -1, -1});
            }
            if (c == '(') {
                ++pos;
                int inner = parse_expr();
                expect(')');
                return inner;
            }
            throw ValidationError(std::string("expression: unexpected character '") + c + "' in '" +
                                  s + "'");
        }
        static bool is_function(const std::string& n) {
            return n == "sin" || n == "cos" || n == "tan" || n == "exp" || n == "log" ||
                   n == "sqrt" || n == "abs" || n == "sinh" || n == "cosh" || n == "tanh";
        }
    };

    double eval_node(int idx, const std::map<std::string, double>& vars) const {
        const Node& n = nodes_[idx];
        switch (n.op) {
            case Op::num: return n.value;
            case Op::var: {
                auto it = vars.find(n.name);
                // "t" is accepted as an alias for the history variable "tau".
                if (it == vars.end() && n.name == "t") it = vars.find("tau");
                if (it == vars.end())
                    throw ValidationError("expression: unbound variable '" + n.name + "'");
                return it->second;
            }
            case Op::add: return eval_node(n.lhs, vars) + eval_node(n.rhs, vars);
            case Op::sub: return eval_node(n.lhs, vars) - eval_node(n.rhs, vars);
            case Op::mul: return eval_node(n.lhs, vars) * eval_node(n.rhs, vars);
            case Op::div: return eval_node(n.lhs, vars) / eval_node(n.rhs, vars);
            case Op::pow: return std::pow(eval_node(n.lhs, vars), eval_node(n.rhs, vars));
            case Op::neg: return -eval_node(n.lhs, vars);
            case Op::call: {
                const double a = eval_node(n.lhs, vars);
                if (n.name == "sin") return std::sin(a);
                if (n.name == "cos") return std::cos(a);
                if (n.name == "tan") return std::tan(a);
                if (n.name == "exp") return std::exp(a);
                if (n.name == "log") return std::log(a);
                if (n.name == "sqrt") return std::sqrt(a);
                if (n.name == "abs") return std::abs(a);
                if (n.name == "sinh") return std::sinh(a);
                if (n.name == "cosh") return std::cosh(a);
                return std::tanh(a);
            }
        }
        throw NumericalError("expression: corrupt node");
    }
};

/// Parses a config scalar that may be a plain number or a variable-free
/// expression such as "pi/3".
inline double parse_scalar(const std::string& text) {
    return Expr::parse(text).eval({});
}

} // namespace delaypde
