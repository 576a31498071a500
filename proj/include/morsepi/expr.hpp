#pragma once

// Scalar expression language used for fields and interpolation profiles.
// Variables x, y, z, s, t; operators + - * / and unary minus; sin, cos, exp;
// pow(base, integer); constant pi. Unary minus binds tighter than *.
// Derivatives are symbolic, so evaluation of a derivative carries no
// finite-difference noise.

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace morsepi {

enum class Var : int { X = 0, Y = 1, Z = 2, S = 3, T = 4 };
inline constexpr int kNumVars = 5;

inline const char* var_name(Var v) {
    static const char* names[kNumVars] = {"x", "y", "z", "s", "t"};
    return names[static_cast<int>(v)];
}

inline std::optional<Var> var_from_name(std::string_view s) {
    if (s.size() != 1) return std::nullopt;
    switch (s[0]) {
        case 'x': return Var::X;
        case 'y': return Var::Y;
        case 'z': return Var::Z;
        case 's': return Var::S;
        case 't': return Var::T;
        default: return std::nullopt;
    }
}

struct EvalEnv {
    std::array<double, kNumVars> value{};
    std::array<bool, kNumVars> bound{};

    void set(Var v, double x) {
        value[static_cast<size_t>(v)] = x;
        bound[static_cast<size_t>(v)] = true;
    }
};

struct ExprError : std::runtime_error {
    explicit ExprError(const std::string& m) : std::runtime_error(m) {}
};

// Parse failure; offset is a byte position into the source string.
struct SyntaxError : ExprError {
    size_t offset;
    std::string expected;
    SyntaxError(size_t off, const std::string& exp)
        : ExprError("syntax error at offset " + std::to_string(off) + ": expected " + exp),
          offset(off),
          expected(exp) {}
};

struct UnknownIdentifier : ExprError {
    std::string name;
    size_t offset;
    UnknownIdentifier(const std::string& n, size_t off)
        : ExprError("unknown identifier '" + n + "' at offset " + std::to_string(off)),
          name(n),
          offset(off) {}
};

struct UnboundVariable : ExprError {
    Var var;
    explicit UnboundVariable(Var v)
        : ExprError(std::string("unbound variable '") + var_name(v) + "'"), var(v) {}
};

struct DivisionByZero : ExprError {
    DivisionByZero() : ExprError("division by zero") {}
};

// Integer power by binary powering. Shared by tree and tape evaluation so the
// two agree bit for bit.
inline double pow_int(double base, int n) {
    if (n == 0) return 1.0;
    bool neg = n < 0;
    unsigned int e = neg ? static_cast<unsigned int>(-(long long)n) : static_cast<unsigned int>(n);
    if (neg && base == 0.0) throw DivisionByZero();
    double acc = 1.0, b = base;
    while (e) {
        if (e & 1u) acc *= b;
        b *= b;
        e >>= 1;
    }
    return neg ? 1.0 / acc : acc;
}

namespace detail {

enum class NodeKind : std::uint8_t { Const, Variable, Add, Sub, Mul, Div, Neg, Sin, Cos, Exp, Pow };

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
    NodeKind kind;
    double cval = 0.0;  // Const
    Var var = Var::X;   // Variable
    int ipow = 0;       // Pow exponent
    NodePtr a, b;
};

inline NodePtr make_const(double v) {
    auto n = std::make_shared<Node>();
    n->kind = NodeKind::Const;
    n->cval = v;
    return n;
}

inline bool is_const(const NodePtr& n, double v) {
    return n->kind == NodeKind::Const && n->cval == v;
}

// Constant folding happens here and only here: literal subtrees collapse at
// construction time, nothing is simplified by value later.
inline NodePtr make2(NodeKind k, NodePtr a, NodePtr b) {
    if (a->kind == NodeKind::Const && b->kind == NodeKind::Const) {
        switch (k) {
            case NodeKind::Add: return make_const(a->cval + b->cval);
            case NodeKind::Sub: return make_const(a->cval - b->cval);
            case NodeKind::Mul: return make_const(a->cval * b->cval);
            case NodeKind::Div:
                if (b->cval != 0.0) return make_const(a->cval / b->cval);
                break;  // keep the node; error surfaces at eval
            default: break;
        }
    }
    // Structural identities that keep derivative trees small.
    switch (k) {
        case NodeKind::Add:
            if (is_const(a, 0.0)) return b;
            if (is_const(b, 0.0)) return a;
            break;
        case NodeKind::Sub:
            if (is_const(b, 0.0)) return a;
            break;
        case NodeKind::Mul:
            if (is_const(a, 0.0) || is_const(b, 0.0)) return make_const(0.0);
            if (is_const(a, 1.0)) return b;
            if (is_const(b, 1.0)) return a;
            break;
        case NodeKind::Div:
            if (is_const(a, 0.0) && !is_const(b, 0.0)) return make_const(0.0);
            if (is_const(b, 1.0)) return a;
            break;
        default: break;
    }
    auto n = std::make_shared<Node>();
    n->kind = k;
    n->a = std::move(a);
    n->b = std::move(b);
    return n;
}

inline NodePtr make1(NodeKind k, NodePtr a) {
    if (a->kind == NodeKind::Const) {
        switch (k) {
            case NodeKind::Neg: return make_const(-a->cval);
            case NodeKind::Sin: return make_const(std::sin(a->cval));
            case NodeKind::Cos: return make_const(std::cos(a->cval));
            case NodeKind::Exp: return make_const(std::exp(a->cval));
            default: break;
        }
    }
    auto n = std::make_shared<Node>();
    n->kind = k;
    n->a = std::move(a);
    return n;
}

inline NodePtr make_pow(NodePtr a, int e) {
    if (e == 0) return make_const(1.0);
    if (e == 1) return a;
    if (a->kind == NodeKind::Const && !(a->cval == 0.0 && e < 0)) return make_const(pow_int(a->cval, e));
    auto n = std::make_shared<Node>();
    n->kind = NodeKind::Pow;
    n->ipow = e;
    n->a = std::move(a);
    return n;
}

}  // namespace detail

// Tape operation codes for the compiled form.
enum class TapeOp : std::uint8_t { PushConst, PushVar, Add, Sub, Mul, Div, Neg, Sin, Cos, Exp, PowInt };

// Postfix tape; ~10x faster than walking the shared_ptr tree, which matters in
// the flow integrator where a field gradient is evaluated millions of times.
class CompiledExpr {
public:
    struct Instr {
        TapeOp op;
        std::uint8_t var = 0;
        int ipow = 0;
        double imm = 0.0;
    };

    double eval(const double* vars) const {
        double stack[64];
        int sp = 0;
        for (const Instr& it : code_) {
            switch (it.op) {
                case TapeOp::PushConst: stack[sp++] = it.imm; break;
                case TapeOp::PushVar: stack[sp++] = vars[it.var]; break;
                case TapeOp::Add: --sp; stack[sp - 1] += stack[sp]; break;
                case TapeOp::Sub: --sp; stack[sp - 1] -= stack[sp]; break;
                case TapeOp::Mul: --sp; stack[sp - 1] *= stack[sp]; break;
                case TapeOp::Div:
                    --sp;
                    if (stack[sp] == 0.0) throw DivisionByZero();
                    stack[sp - 1] /= stack[sp];
                    break;
                case TapeOp::Neg: stack[sp - 1] = -stack[sp - 1]; break;
                case TapeOp::Sin: stack[sp - 1] = std::sin(stack[sp - 1]); break;
                case TapeOp::Cos: stack[sp - 1] = std::cos(stack[sp - 1]); break;
                case TapeOp::Exp: stack[sp - 1] = std::exp(stack[sp - 1]); break;
                case TapeOp::PowInt: stack[sp - 1] = pow_int(stack[sp - 1], it.ipow); break;
            }
        }
        return stack[0];
    }

    bool empty() const { return code_.empty(); }
    std::vector<Instr> code_;
    int depth_ = 0;
};

class Expr {
public:
    Expr() : root_(detail::make_const(0.0)) {}
    explicit Expr(detail::NodePtr n) : root_(std::move(n)) {}

    static Expr constant(double v) { return Expr(detail::make_const(v)); }
    static Expr variable(Var v) {
        auto n = std::make_shared<detail::Node>();
        n->kind = detail::NodeKind::Variable;
        n->var = v;
        return Expr(n);
    }

    friend Expr operator+(const Expr& a, const Expr& b) { return Expr(detail::make2(detail::NodeKind::Add, a.root_, b.root_)); }
    friend Expr operator-(const Expr& a, const Expr& b) { return Expr(detail::make2(detail::NodeKind::Sub, a.root_, b.root_)); }
    friend Expr operator*(const Expr& a, const Expr& b) { return Expr(detail::make2(detail::NodeKind::Mul, a.root_, b.root_)); }
    friend Expr operator/(const Expr& a, const Expr& b) { return Expr(detail::make2(detail::NodeKind::Div, a.root_, b.root_)); }
    friend Expr operator-(const Expr& a) { return Expr(detail::make1(detail::NodeKind::Neg, a.root_)); }
    static Expr sin(const Expr& a) { return Expr(detail::make1(detail::NodeKind::Sin, a.root_)); }
    static Expr cos(const Expr& a) { return Expr(detail::make1(detail::NodeKind::Cos, a.root_)); }
    static Expr exp(const Expr& a) { return Expr(detail::make1(detail::NodeKind::Exp, a.root_)); }
    static Expr pow(const Expr& a, int e) { return Expr(detail::make_pow(a.root_, e)); }

    double eval(const EvalEnv& env) const { return eval_node(root_.get(), env); }

    Expr diff(Var v) const { return Expr(diff_node(root_, v)); }

    std::string to_string() const {
        std::ostringstream os;
        print_node(root_.get(), os);
        return os.str();
    }

    // Variables actually referenced.
    std::array<bool, kNumVars> used_vars() const {
        std::array<bool, kNumVars> u{};
        collect_vars(root_.get(), u);
        return u;
    }

    CompiledExpr compile() const {
        CompiledExpr c;
        int depth = 0, maxdepth = 0;
        compile_node(root_.get(), c, depth, maxdepth);
        if (maxdepth > 63) throw ExprError("expression too deep to compile");
        c.depth_ = maxdepth;
        return c;
    }

private:
    detail::NodePtr root_;

    static double eval_node(const detail::Node* n, const EvalEnv& env) {
        using detail::NodeKind;
        switch (n->kind) {
            case NodeKind::Const: return n->cval;
            case NodeKind::Variable: {
                size_t i = static_cast<size_t>(n->var);
                if (!env.bound[i]) throw UnboundVariable(n->var);
                return env.value[i];
            }
            case NodeKind::Add: return eval_node(n->a.get(), env) + eval_node(n->b.get(), env);
            case NodeKind::Sub: return eval_node(n->a.get(), env) - eval_node(n->b.get(), env);
            case NodeKind::Mul: return eval_node(n->a.get(), env) * eval_node(n->b.get(), env);
            case NodeKind::Div: {
                double num = eval_node(n->a.get(), env);
                double den = eval_node(n->b.get(), env);
                if (den == 0.0) throw DivisionByZero();
                return num / den;
            }
            case NodeKind::Neg: return -eval_node(n->a.get(), env);
            case NodeKind::Sin: return std::sin(eval_node(n->a.get(), env));
            case NodeKind::Cos: return std::cos(eval_node(n->a.get(), env));
            case NodeKind::Exp: return std::exp(eval_node(n->a.get(), env));
            case NodeKind::Pow: return pow_int(eval_node(n->a.get(), env), n->ipow);
        }
        throw ExprError("corrupt expression node");
    }

    static detail::NodePtr diff_node(const detail::NodePtr& n, Var v) {
        using namespace detail;
        switch (n->kind) {
            case NodeKind::Const: return make_const(0.0);
            case NodeKind::Variable: return make_const(n->var == v ? 1.0 : 0.0);
            case NodeKind::Add: return make2(NodeKind::Add, diff_node(n->a, v), diff_node(n->b, v));
            case NodeKind::Sub: return make2(NodeKind::Sub, diff_node(n->a, v), diff_node(n->b, v));
            case NodeKind::Mul:
                return make2(NodeKind::Add, make2(NodeKind::Mul, diff_node(n->a, v), n->b),
                             make2(NodeKind::Mul, n->a, diff_node(n->b, v)));
            case NodeKind::Div:
                // (a'b - ab') / b^2
                return make2(NodeKind::Div,
                             make2(NodeKind::Sub, make2(NodeKind::Mul, diff_node(n->a, v), n->b),
                                   make2(NodeKind::Mul, n->a, diff_node(n->b, v))),
                             make_pow(n->b, 2));
            case NodeKind::Neg: return make1(NodeKind::Neg, diff_node(n->a, v));
            case NodeKind::Sin: return make2(NodeKind::Mul, make1(NodeKind::Cos, n->a), diff_node(n->a, v));
            case NodeKind::Cos:
                return make1(NodeKind::Neg, make2(NodeKind::Mul, make1(NodeKind::Sin, n->a), diff_node(n->a, v)));
            case NodeKind::Exp: return make2(NodeKind::Mul, make1(NodeKind::Exp, n->a), diff_node(n->a, v));
            case NodeKind::Pow:
                return make2(NodeKind::Mul, make_const(static_cast<double>(n->ipow)),
                             make2(NodeKind::Mul, make_pow(n->a, n->ipow - 1), diff_node(n->a, v)));
        }
        throw ExprError("corrupt expression node");
    }

    // Fully parenthesized, so parse(to_string(e)) rebuilds the same tree.
    static void print_node(const detail::Node* n, std::ostringstream& os) {
        using detail::NodeKind;
        char buf[40];
        switch (n->kind) {
            case NodeKind::Const:
                std::snprintf(buf, sizeof buf, "%.17g", n->cval);
                os << buf;
                return;
            case NodeKind::Variable: os << var_name(n->var); return;
            case NodeKind::Add: os << '('; print_node(n->a.get(), os); os << '+'; print_node(n->b.get(), os); os << ')'; return;
            case NodeKind::Sub: os << '('; print_node(n->a.get(), os); os << '-'; print_node(n->b.get(), os); os << ')'; return;
            case NodeKind::Mul: os << '('; print_node(n->a.get(), os); os << '*'; print_node(n->b.get(), os); os << ')'; return;
            case NodeKind::Div: os << '('; print_node(n->a.get(), os); os << '/'; print_node(n->b.get(), os); os << ')'; return;
            case NodeKind::Neg: os << "(-"; print_node(n->a.get(), os); os << ')'; return;
            case NodeKind::Sin: os << "sin("; print_node(n->a.get(), os); os << ')'; return;
            case NodeKind::Cos: os << "cos("; print_node(n->a.get(), os); os << ')'; return;
            case NodeKind::Exp: os << "exp("; print_node(n->a.get(), os); os << ')'; return;
            case NodeKind::Pow:
                os << "pow(";
                print_node(n->a.get(), os);
                os << ',' << n->ipow << ')';
                return;
        }
    }

    static void collect_vars(const detail::Node* n, std::array<bool, kNumVars>& u) {
        if (n->kind == detail::NodeKind::Variable) u[static_cast<size_t>(n->var)] = true;
        if (n->a) collect_vars(n->a.get(), u);
        if (n->b) collect_vars(n->b.get(), u);
    }

    static void compile_node(const detail::Node* n, CompiledExpr& c, int& depth, int& maxdepth) {
        using detail::NodeKind;
        auto push = [&](CompiledExpr::Instr in) {
            c.code_.push_back(in);
        };
        switch (n->kind) {
            case NodeKind::Const:
                push({TapeOp::PushConst, 0, 0, n->cval});
                ++depth;
                break;
            case NodeKind::Variable:
                push({TapeOp::PushVar, static_cast<std::uint8_t>(n->var), 0, 0.0});
                ++depth;
                break;
            case NodeKind::Add:
            case NodeKind::Sub:
            case NodeKind::Mul:
            case NodeKind::Div: {
                compile_node(n->a.get(), c, depth, maxdepth);
                compile_node(n->b.get(), c, depth, maxdepth);
                TapeOp op = n->kind == NodeKind::Add   ? TapeOp::Add
                            : n->kind == NodeKind::Sub ? TapeOp::Sub
                            : n->kind == NodeKind::Mul ? TapeOp::Mul
                                                       : TapeOp::Div;
                push({op, 0, 0, 0.0});
                --depth;
                break;
            }
            case NodeKind::Neg:
                compile_node(n->a.get(), c, depth, maxdepth);
                push({TapeOp::Neg, 0, 0, 0.0});
                break;
            case NodeKind::Sin:
                compile_node(n->a.get(), c, depth, maxdepth);
                push({TapeOp::Sin, 0, 0, 0.0});
                break;
            case NodeKind::Cos:
                compile_node(n->a.get(), c, depth, maxdepth);
                push({TapeOp::Cos, 0, 0, 0.0});
                break;
            case NodeKind::Exp:
                compile_node(n->a.get(), c, depth, maxdepth);
                push({TapeOp::Exp, 0, 0, 0.0});
                break;
            case NodeKind::Pow:
                compile_node(n->a.get(), c, depth, maxdepth);
                push({TapeOp::PowInt, 0, n->ipow, 0.0});
                break;
        }
        if (depth > maxdepth) maxdepth = depth;
    }
};

namespace detail {

class Parser {
public:
    explicit Parser(std::string_view src) : src_(src) {}

    Expr parse() {
        Expr e = parse_expr(0);
        skip_ws();
        if (pos_ != src_.size()) throw SyntaxError(pos_, "end of input or operator");
        return e;
    }

private:
    std::string_view src_;
    size_t pos_ = 0;

    static constexpr int kMaxDepth = 200;

    void skip_ws() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }

    bool eat(char c) {
        skip_ws();
        if (pos_ < src_.size() && src_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    char peek() {
        skip_ws();
        return pos_ < src_.size() ? src_[pos_] : '\0';
    }

    Expr parse_expr(int depth) {
        if (depth > kMaxDepth) throw SyntaxError(pos_, "shallower expression");
        Expr e = parse_term(depth + 1);
        for (;;) {
            char c = peek();
            if (c == '+') {
                ++pos_;
                e = e + parse_term(depth + 1);
            } else if (c == '-') {
                ++pos_;
                e = e - parse_term(depth + 1);
            } else {
                return e;
            }
        }
    }

    Expr parse_term(int depth) {
        if (depth > kMaxDepth) throw SyntaxError(pos_, "shallower expression");
        Expr e = parse_factor(depth + 1);
        for (;;) {
            char c = peek();
            if (c == '*') {
                ++pos_;
                e = e * parse_factor(depth + 1);
            } else if (c == '/') {
                ++pos_;
                e = e / parse_factor(depth + 1);
            } else {
                return e;
            }
        }
    }

    // Unary minus lives at factor level, so -x*y parses as (-x)*y.
    Expr parse_factor(int depth) {
        if (depth > kMaxDepth) throw SyntaxError(pos_, "shallower expression");
        if (eat('-')) return -parse_factor(depth + 1);
        return parse_primary(depth + 1);
    }

    Expr parse_primary(int depth) {
        if (depth > kMaxDepth) throw SyntaxError(pos_, "shallower expression");
        skip_ws();
        if (pos_ >= src_.size()) throw SyntaxError(pos_, "number, identifier or '('");
        char c = src_[pos_];
        if (c == '(') {
            ++pos_;
            Expr e = parse_expr(depth + 1);
            if (!eat(')')) throw SyntaxError(pos_, "')'");
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_ident(depth + 1);
        throw SyntaxError(pos_, "number, identifier or '('");
    }

    Expr parse_number() {
        size_t start = pos_;
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        if (pos_ < src_.size() && src_[pos_] == '.') {
            ++pos_;
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        }
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            size_t mark = pos_;
            ++pos_;
            if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
            if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
            } else {
                pos_ = mark;  // 'e' belongs to something else
            }
        }
        if (pos_ == start || (pos_ == start + 1 && src_[start] == '.'))
            throw SyntaxError(start, "number");
        std::string tok(src_.substr(start, pos_ - start));
        return Expr::constant(std::strtod(tok.c_str(), nullptr));
    }

    Expr parse_ident(int depth) {
        size_t start = pos_;
        while (pos_ < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
            ++pos_;
        std::string_view name = src_.substr(start, pos_ - start);
        if (name == "pi") return Expr::constant(3.14159265358979323846);
        if (auto v = var_from_name(name)) return Expr::variable(*v);
        if (name == "sin" || name == "cos" || name == "exp") {
            if (!eat('(')) throw SyntaxError(pos_, "'('");
            Expr arg = parse_expr(depth + 1);
            if (!eat(')')) throw SyntaxError(pos_, "')'");
            if (name == "sin") return Expr::sin(arg);
            if (name == "cos") return Expr::cos(arg);
            return Expr::exp(arg);
        }
        if (name == "pow") {
            if (!eat('(')) throw SyntaxError(pos_, "'('");
            Expr base = parse_expr(depth + 1);
            if (!eat(',')) throw SyntaxError(pos_, "','");
            int expo = parse_int_literal();
            if (!eat(')')) throw SyntaxError(pos_, "')'");
            return Expr::pow(base, expo);
        }
        throw UnknownIdentifier(std::string(name), start);
    }

    // pow exponents must be literal integers (optionally signed) so that
    // derivatives stay total.
    int parse_int_literal() {
        skip_ws();
        size_t start = pos_;
        bool neg = false;
        if (pos_ < src_.size() && (src_[pos_] == '-' || src_[pos_] == '+')) {
            neg = src_[pos_] == '-';
            ++pos_;
        }
        if (pos_ >= src_.size() || !std::isdigit(static_cast<unsigned char>(src_[pos_])))
            throw SyntaxError(start, "integer exponent");
        long long v = 0;
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
            v = v * 10 + (src_[pos_] - '0');
            if (v > 1000000) throw SyntaxError(start, "exponent within +/-1000000");
            ++pos_;
        }
        return static_cast<int>(neg ? -v : v);
    }
};

}  // namespace detail

inline Expr parse_expr(std::string_view src) { return detail::Parser(src).parse(); }

}
