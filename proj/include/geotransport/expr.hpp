#pragma once

// Arithmetic expression fields over phase-space variables. The language is
// total: +, -, *, /, exp, sin, cos, sqrt, gaussian(center,width), constants,
// and the variables x1..x3, v1..v3, vp1..vp3. gaussian(c,w) is the isotropic
// spatial bump exp(-sum_i (x_i-c)^2 / w^2).

#include <cctype>
#include <memory>
#include <sstream>

#include "common.hpp"

namespace geotransport {

enum class FieldRole { Metric, Attenuation, Scattering };

struct ExprNode;
using ExprPtr = std::shared_ptr<const ExprNode>;

struct ExprNode {
    enum Kind { Const, Var, Add, Sub, Mul, Div, Neg, Exp, Sin, Cos, Sqrt, Gaussian } kind;
    double value = 0.0;      // Const
    int var = 0;             // Var: 0..2 -> x, 3..5 -> v, 6..8 -> vp
    ExprPtr a, b;            // operands; Gaussian stores center in a, width in b
};

inline ExprPtr make_const(double v) {
    auto n = std::make_shared<ExprNode>();
    n->kind = ExprNode::Const;
    n->value = v;
    return n;
}
inline ExprPtr make_node(ExprNode::Kind k, ExprPtr a, ExprPtr b = nullptr) {
    auto n = std::make_shared<ExprNode>();
    n->kind = k;
    n->a = std::move(a);
    n->b = std::move(b);
    return n;
}

class FieldExpr {
  public:
    FieldExpr() = default;
    FieldExpr(ExprPtr root, int dim, FieldRole role)
        : root_(std::move(root)), dim_(dim), role_(role) {}

    bool valid() const { return root_ != nullptr; }
    int dimension() const { return dim_; }
    FieldRole role() const { return role_; }

    double eval(const Vec& x, const Vec& v = {}, const Vec& vp = {}) const {
        return eval_node(root_.get(), x, v, vp, dim_);
    }

    // Symbolic partial derivative with respect to x_i (metric factors only
    // depend on x, which is what the geometry needs).
    FieldExpr d_x(int i) const { return FieldExpr(diff(root_, i), dim_, role_); }

    std::string print() const {
        std::ostringstream os;
        print_node(root_.get(), os);
        return os.str();
    }

  private:
    ExprPtr root_;
    int dim_ = 2;
    FieldRole role_ = FieldRole::Metric;

    static double eval_node(const ExprNode* n, const Vec& x, const Vec& v, const Vec& vp, int dim) {
        switch (n->kind) {
            case ExprNode::Const: return n->value;
            case ExprNode::Var:
                if (n->var < 3) return x[n->var];
                if (n->var < 6) return v[n->var - 3];
                return vp[n->var - 6];
            case ExprNode::Add: return eval_node(n->a.get(), x, v, vp, dim) + eval_node(n->b.get(), x, v, vp, dim);
            case ExprNode::Sub: return eval_node(n->a.get(), x, v, vp, dim) - eval_node(n->b.get(), x, v, vp, dim);
            case ExprNode::Mul: return eval_node(n->a.get(), x, v, vp, dim) * eval_node(n->b.get(), x, v, vp, dim);
            case ExprNode::Div: return eval_node(n->a.get(), x, v, vp, dim) / eval_node(n->b.get(), x, v, vp, dim);
            case ExprNode::Neg: return -eval_node(n->a.get(), x, v, vp, dim);
            case ExprNode::Exp: return std::exp(eval_node(n->a.get(), x, v, vp, dim));
            case ExprNode::Sin: return std::sin(eval_node(n->a.get(), x, v, vp, dim));
            case ExprNode::Cos: return std::cos(eval_node(n->a.get(), x, v, vp, dim));
            case ExprNode::Sqrt: return std::sqrt(eval_node(n->a.get(), x, v, vp, dim));
            case ExprNode::Gaussian: {
                double c = n->a->value, w = n->b->value;
                double s = 0.0;
                for (int i = 0; i < dim; ++i) s += (x[i] - c) * (x[i] - c);
                return std::exp(-s / (w * w));
            }
        }
        return 0.0;
    }

    static ExprPtr diff(const ExprPtr& n, int i) {
        switch (n->kind) {
            case ExprNode::Const: return make_const(0.0);
            case ExprNode::Var: return make_const(n->var == i ? 1.0 : 0.0);
            case ExprNode::Add: return make_node(ExprNode::Add, diff(n->a, i), diff(n->b, i));
            case ExprNode::Sub: return make_node(ExprNode::Sub, diff(n->a, i), diff(n->b, i));
            case ExprNode::Mul:
                return make_node(ExprNode::Add, make_node(ExprNode::Mul, diff(n->a, i), n->b),
                                 make_node(ExprNode::Mul, n->a, diff(n->b, i)));
            case ExprNode::Div:
                return make_node(
                    ExprNode::Div,
                    make_node(ExprNode::Sub, make_node(ExprNode::Mul, diff(n->a, i), n->b),
                              make_node(ExprNode::Mul, n->a, diff(n->b, i))),
                    make_node(ExprNode::Mul, n->b, n->b));
            case ExprNode::Neg: return make_node(ExprNode::Neg, diff(n->a, i));
            case ExprNode::Exp:
                return make_node(ExprNode::Mul, make_node(ExprNode::Exp, n->a), diff(n->a, i));
            case ExprNode::Sin:
                return make_node(ExprNode::Mul, make_node(ExprNode::Cos, n->a), diff(n->a, i));
            case ExprNode::Cos:
                return make_node(ExprNode::Neg,
                                 make_node(ExprNode::Mul, make_node(ExprNode::Sin, n->a), diff(n->a, i)));
            case ExprNode::Sqrt:
                return make_node(ExprNode::Div, diff(n->a, i),
                                 make_node(ExprNode::Mul, make_const(2.0), make_node(ExprNode::Sqrt, n->a)));
            case ExprNode::Gaussian: {
                // d/dx_i exp(-sum (x_j-c)^2/w^2) = -2 (x_i-c)/w^2 * gaussian
                if (i > 2) return make_const(0.0);
                double c = n->a->value, w = n->b->value;
                auto xi = std::make_shared<ExprNode>();
                xi->kind = ExprNode::Var;
                xi->var = i;
                ExprPtr factor = make_node(
                    ExprNode::Mul, make_const(-2.0 / (w * w)),
                    make_node(ExprNode::Sub, xi, make_const(c)));
                auto g = std::make_shared<ExprNode>(*n);
                return make_node(ExprNode::Mul, factor, ExprPtr(g));
            }
        }
        return make_const(0.0);
    }

    static void print_node(const ExprNode* n, std::ostringstream& os) {
        static const char* vars[] = {"x1", "x2", "x3", "v1", "v2", "v3", "vp1", "vp2", "vp3"};
        switch (n->kind) {
            case ExprNode::Const: os << n->value; return;
            case ExprNode::Var: os << vars[n->var]; return;
            case ExprNode::Add:
                os << "(";
                print_node(n->a.get(), os);
                os << "+";
                print_node(n->b.get(), os);
                os << ")";
                return;
            case ExprNode::Sub:
                os << "(";
                print_node(n->a.get(), os);
                os << "-";
                print_node(n->b.get(), os);
                os << ")";
                return;
            case ExprNode::Mul:
                os << "(";
                print_node(n->a.get(), os);
                os << "*";
                print_node(n->b.get(), os);
                os << ")";
                return;
            case ExprNode::Div:
                os << "(";
                print_node(n->a.get(), os);
                os << "/";
                print_node(n->b.get(), os);
                os << ")";
                return;
            case ExprNode::Neg:
                os << "(-";
                print_node(n->a.get(), os);
                os << ")";
                return;
            case ExprNode::Exp:
                os << "exp(";
                print_node(n->a.get(), os);
                os << ")";
                return;
            case ExprNode::Sin:
                os << "sin(";
                print_node(n->a.get(), os);
                os << ")";
                return;
            case ExprNode::Cos:
                os << "cos(";
                print_node(n->a.get(), os);
                os << ")";
                return;
            case ExprNode::Sqrt:
                os << "sqrt(";
                print_node(n->a.get(), os);
                os << ")";
                return;
            case ExprNode::Gaussian:
                os << "gaussian(" << n->a->value << "," << n->b->value << ")";
                return;
        }
    }
};

namespace detail {

class ExprParser {
  public:
    ExprParser(const std::string& src, int dim, FieldRole role)
        : src_(src), dim_(dim), role_(role) {}

    ExprPtr parse() {
        ExprPtr e = parse_sum();
        skip_ws();
        if (pos_ != src_.size()) fail("unexpected trailing input");
        return e;
    }

  private:
    const std::string& src_;
    std::size_t pos_ = 0;
    int dim_;
    FieldRole role_;

    [[noreturn]] void fail(const std::string& msg) const {
        throw config_error("expression error at position " + std::to_string(pos_) + ": " + msg);
    }

    void skip_ws() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }
    bool consume(char c) {
        skip_ws();
        if (pos_ < src_.size() && src_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    ExprPtr parse_sum() {
        ExprPtr e = parse_product();
        for (;;) {
            if (consume('+'))
                e = make_node(ExprNode::Add, e, parse_product());
            else if (consume('-'))
                e = make_node(ExprNode::Sub, e, parse_product());
            else
                return e;
        }
    }

    ExprPtr parse_product() {
        ExprPtr e = parse_unary();
        for (;;) {
            if (consume('*'))
                e = make_node(ExprNode::Mul, e, parse_unary());
            else if (consume('/'))
                e = make_node(ExprNode::Div, e, parse_unary());
            else
                return e;
        }
    }

    ExprPtr parse_unary() {
        if (consume('-')) return make_node(ExprNode::Neg, parse_unary());
        return parse_atom();
    }

    ExprPtr parse_atom() {
        skip_ws();
        if (pos_ >= src_.size()) fail("unexpected end of expression");
        char c = src_[pos_];
        if (c == '(') {
            ++pos_;
            ExprPtr e = parse_sum();
            if (!consume(')')) fail("missing ')'");
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c))) return parse_ident();
        fail(std::string("unexpected character '") + c + "'");
    }

    ExprPtr parse_number() {
        std::size_t end = pos_;
        while (end < src_.size() &&
               (std::isdigit(static_cast<unsigned char>(src_[end])) || src_[end] == '.' ||
                src_[end] == 'e' || src_[end] == 'E' ||
                ((src_[end] == '+' || src_[end] == '-') && end > pos_ &&
                 (src_[end - 1] == 'e' || src_[end - 1] == 'E'))))
            ++end;
        double v = 0.0;
        try {
            v = std::stod(src_.substr(pos_, end - pos_));
        } catch (...) {
            fail("malformed number");
        }
        pos_ = end;
        return make_const(v);
    }

    ExprPtr parse_ident() {
        std::size_t end = pos_;
        while (end < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[end])) || src_[end] == '_'))
            ++end;
        std::string name = src_.substr(pos_, end - pos_);
        pos_ = end;

        static const char* vars[] = {"x1", "x2", "x3", "v1", "v2", "v3", "vp1", "vp2", "vp3"};
        for (int i = 0; i < 9; ++i) {
            if (name == vars[i]) {
                check_var(i);
                auto n = std::make_shared<ExprNode>();
                n->kind = ExprNode::Var;
                n->var = i;
                return n;
            }
        }
        ExprNode::Kind k;
        if (name == "exp")
            k = ExprNode::Exp;
        else if (name == "sin")
            k = ExprNode::Sin;
        else if (name == "cos")
            k = ExprNode::Cos;
        else if (name == "sqrt")
            k = ExprNode::Sqrt;
        else if (name == "gaussian")
            k = ExprNode::Gaussian;
        else
            fail("unknown function or variable '" + name + "'");

        if (!consume('(')) fail("expected '(' after " + name);
        if (k == ExprNode::Gaussian) {
            ExprPtr center = parse_sum();
            if (!consume(',')) fail("gaussian takes two arguments (center, width)");
            ExprPtr width = parse_sum();
            if (!consume(')')) fail("missing ')'");
            if (center->kind != ExprNode::Const || width->kind != ExprNode::Const)
                fail("gaussian arguments must be constants");
            return make_node(ExprNode::Gaussian, center, width);
        }
        ExprPtr arg = parse_sum();
        if (consume(',')) fail(name + " takes one argument");
        if (!consume(')')) fail("missing ')'");
        return make_node(k, arg);
    }

    void check_var(int i) {
        int comp = i % 3;
        if (comp >= dim_) fail("variable out of range for dimension " + std::to_string(dim_));
        bool is_v = (i >= 3 && i < 6), is_vp = (i >= 6);
        switch (role_) {
            case FieldRole::Metric:
                if (is_v || is_vp) fail("metric factor may depend on x only");
                break;
            case FieldRole::Attenuation:
                if (is_vp) fail("attenuation field may not reference v' components");
                break;
            case FieldRole::Scattering: break;
        }
    }
};

}  // namespace detail

inline FieldExpr parse_field_expr(const std::string& src, FieldRole role, int dim) {
    detail::ExprParser p(src, dim, role);
    return FieldExpr(p.parse(), dim, role);
}

}  // namespace geotransport
