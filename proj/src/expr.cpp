#include "odesr/expr.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace odesr {

struct Expr::Node {
    Kind kind;
    std::uint8_t op = 0;
    std::size_t index = 0; // variable index or placeholder slot
    double value = 0.0;
    std::shared_ptr<const Node> a;
    std::shared_ptr<const Node> b;
};

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double finite_or_nan(double v) noexcept { return std::isfinite(v) ? v : kNaN; }
} // namespace

bool allowed_in(UnaryOp op, Grammar g) noexcept
{
    if (g == Grammar::Simulation) {
        return true;
    }
    switch (op) {
    case UnaryOp::Neg:
    case UnaryOp::Sin:
    case UnaryOp::Log:
    case UnaryOp::Exp:
    case UnaryOp::Abs:
        return true;
    default:
        return false;
    }
}

std::string_view name_of(UnaryOp op) noexcept
{
    switch (op) {
    case UnaryOp::Neg: return "-";
    case UnaryOp::Sin: return "sin";
    case UnaryOp::Cos: return "cos";
    case UnaryOp::Log: return "log";
    case UnaryOp::Exp: return "exp";
    case UnaryOp::Abs: return "Abs";
    case UnaryOp::Sqrt: return "sqrt";
    case UnaryOp::Sgn: return "sgn";
    case UnaryOp::Cot: return "cot";
    }
    return "?";
}

std::string_view symbol_of(BinaryOp op) noexcept
{
    switch (op) {
    case BinaryOp::Add: return " + ";
    case BinaryOp::Sub: return " - ";
    case BinaryOp::Mul: return "*";
    case BinaryOp::Div: return "/";
    case BinaryOp::Pow: return "**";
    }
    return "?";
}

double apply(UnaryOp op, double a) noexcept
{
    double r = kNaN;
    switch (op) {
    case UnaryOp::Neg: r = -a; break;
    case UnaryOp::Sin: r = std::sin(a); break;
    case UnaryOp::Cos: r = std::cos(a); break;
    case UnaryOp::Log: r = a > 0.0 ? std::log(a) : kNaN; break;
    case UnaryOp::Exp: r = std::exp(a); break;
    case UnaryOp::Abs: r = std::fabs(a); break;
    case UnaryOp::Sqrt: r = a >= 0.0 ? std::sqrt(a) : kNaN; break;
    case UnaryOp::Sgn: r = std::isnan(a) ? kNaN : static_cast<double>((a > 0.0) - (a < 0.0)); break;
    case UnaryOp::Cot: {
        const double s = std::sin(a);
        r = s != 0.0 ? std::cos(a) / s : kNaN;
        break;
    }
    }
    return finite_or_nan(r);
}

double apply(BinaryOp op, double a, double b) noexcept
{
    double r = kNaN;
    switch (op) {
    case BinaryOp::Add: r = a + b; break;
    case BinaryOp::Sub: r = a - b; break;
    case BinaryOp::Mul: r = a * b; break;
    case BinaryOp::Div: r = b != 0.0 ? a / b : kNaN; break;
    case BinaryOp::Pow:
        // Real-valued power only. std::pow(1, NaN) is 1, so NaN is checked first.
        r = (std::isnan(a) || std::isnan(b) || (a < 0.0 && std::trunc(b) != b)) ? kNaN : std::pow(a, b);
        break;
    }
    return finite_or_nan(r);
}

// --- construction / access -------------------------------------------------

Expr Expr::variable(std::size_t index)
{
    return Expr(std::make_shared<const Node>(Node{Kind::Variable, 0, index, 0.0, nullptr, nullptr}));
}

Expr Expr::constant(std::size_t slot)
{
    return Expr(std::make_shared<const Node>(Node{Kind::Constant, 0, slot, 0.0, nullptr, nullptr}));
}

Expr Expr::literal(double value)
{
    return Expr(std::make_shared<const Node>(Node{Kind::Literal, 0, 0, value, nullptr, nullptr}));
}

Expr Expr::unary(UnaryOp op, Expr child)
{
    return Expr(std::make_shared<const Node>(
        Node{Kind::Unary, static_cast<std::uint8_t>(op), 0, 0.0, std::move(child.node_), nullptr}));
}

Expr Expr::binary(BinaryOp op, Expr lhs, Expr rhs)
{
    return Expr(std::make_shared<const Node>(
        Node{Kind::Binary, static_cast<std::uint8_t>(op), 0, 0.0, std::move(lhs.node_), std::move(rhs.node_)}));
}

Expr::Kind Expr::kind() const noexcept { return node_->kind; }
std::size_t Expr::index() const noexcept { return node_->index; }
std::size_t Expr::slot() const noexcept { return node_->index; }
double Expr::value() const noexcept { return node_->value; }
UnaryOp Expr::unary_op() const noexcept { return static_cast<UnaryOp>(node_->op); }
BinaryOp Expr::binary_op() const noexcept { return static_cast<BinaryOp>(node_->op); }
Expr Expr::child() const noexcept { return Expr(node_->a); }
Expr Expr::lhs() const noexcept { return Expr(node_->a); }
Expr Expr::rhs() const noexcept { return Expr(node_->b); }

// --- structural queries ----------------------------------------------------

bool structurally_equal(const Expr& a, const Expr& b) noexcept
{
    if (a.kind() != b.kind()) {
        return false;
    }
    switch (a.kind()) {
    case Expr::Kind::Variable: return a.index() == b.index();
    case Expr::Kind::Constant: return a.slot() == b.slot();
    case Expr::Kind::Literal: return a.value() == b.value();
    case Expr::Kind::Unary: return a.unary_op() == b.unary_op() && structurally_equal(a.child(), b.child());
    case Expr::Kind::Binary:
        return a.binary_op() == b.binary_op() && structurally_equal(a.lhs(), b.lhs())
            && structurally_equal(a.rhs(), b.rhs());
    }
    return false;
}

std::size_t complexity(const Expr& e) noexcept
{
    switch (e.kind()) {
    case Expr::Kind::Unary: return 1 + complexity(e.child());
    case Expr::Kind::Binary: return 1 + complexity(e.lhs()) + complexity(e.rhs());
    default: return 1;
    }
}

std::size_t constant_count(const Expr& e) noexcept
{
    switch (e.kind()) {
    case Expr::Kind::Constant: return 1;
    case Expr::Kind::Unary: return constant_count(e.child());
    case Expr::Kind::Binary: return constant_count(e.lhs()) + constant_count(e.rhs());
    default: return 0;
    }
}

std::size_t depth(const Expr& e) noexcept
{
    switch (e.kind()) {
    case Expr::Kind::Unary: return 1 + depth(e.child());
    case Expr::Kind::Binary: return 1 + std::max(depth(e.lhs()), depth(e.rhs()));
    default: return 0;
    }
}

bool has_variable(const Expr& e) noexcept
{
    switch (e.kind()) {
    case Expr::Kind::Variable: return true;
    case Expr::Kind::Unary: return has_variable(e.child());
    case Expr::Kind::Binary: return has_variable(e.lhs()) || has_variable(e.rhs());
    default: return false;
    }
}

bool has_literal(const Expr& e) noexcept
{
    switch (e.kind()) {
    case Expr::Kind::Literal: return true;
    case Expr::Kind::Unary: return has_literal(e.child());
    case Expr::Kind::Binary: return has_literal(e.lhs()) || has_literal(e.rhs());
    default: return false;
    }
}

bool within_grammar(const Expr& e, Grammar g) noexcept
{
    switch (e.kind()) {
    case Expr::Kind::Literal: return g == Grammar::Simulation;
    case Expr::Kind::Unary: return allowed_in(e.unary_op(), g) && within_grammar(e.child(), g);
    case Expr::Kind::Binary: return within_grammar(e.lhs(), g) && within_grammar(e.rhs(), g);
    default: return true;
    }
}

// --- rewriting -------------------------------------------------------------

namespace {

// Generic bottom-up rebuild with a leaf mapper; preserves operator structure.
template <typename LeafFn>
Expr rebuild(const Expr& e, LeafFn& leaf)
{
    switch (e.kind()) {
    case Expr::Kind::Unary: return Expr::unary(e.unary_op(), rebuild(e.child(), leaf));
    case Expr::Kind::Binary: {
        // Left before right so slot order follows the textual order.
        Expr l = rebuild(e.lhs(), leaf);
        Expr r = rebuild(e.rhs(), leaf);
        return Expr::binary(e.binary_op(), std::move(l), std::move(r));
    }
    default: return leaf(e);
    }
}

void collect(const Expr& e, std::vector<Expr>& out)
{
    out.push_back(e);
    if (e.kind() == Expr::Kind::Unary) {
        collect(e.child(), out);
    } else if (e.kind() == Expr::Kind::Binary) {
        collect(e.lhs(), out);
        collect(e.rhs(), out);
    }
}

Expr replace_at(const Expr& e, std::size_t& counter, std::size_t target, const Expr& replacement)
{
    if (counter++ == target) {
        return replacement;
    }
    switch (e.kind()) {
    case Expr::Kind::Unary: return Expr::unary(e.unary_op(), replace_at(e.child(), counter, target, replacement));
    case Expr::Kind::Binary: {
        Expr l = replace_at(e.lhs(), counter, target, replacement);
        Expr r = replace_at(e.rhs(), counter, target, replacement);
        return Expr::binary(e.binary_op(), std::move(l), std::move(r));
    }
    default: return e;
    }
}

} // namespace

Expr renumber_constants(const Expr& e)
{
    std::size_t next = 0;
    auto leaf = [&](const Expr& x) { return x.kind() == Expr::Kind::Constant ? Expr::constant(next++) : x; };
    return rebuild(e, leaf);
}

MaskedExpr mask_literals(const Expr& e)
{
    ConstVector init;
    auto leaf = [&](const Expr& x) {
        if (x.kind() == Expr::Kind::Literal) {
            init.push_back(x.value());
            return Expr::constant(init.size() - 1);
        }
        if (x.kind() == Expr::Kind::Constant) {
            init.push_back(1.0);
            return Expr::constant(init.size() - 1);
        }
        return x;
    };
    Expr masked = rebuild(e, leaf);
    return {std::move(masked), std::move(init)};
}

Expr inline_constants(const Expr& e, std::span<const double> c)
{
    auto leaf = [&](const Expr& x) {
        if (x.kind() == Expr::Kind::Constant) {
            if (x.slot() >= c.size()) {
                throw ArityError(fmt::format("placeholder slot {} has no value ({} given)", x.slot(), c.size()));
            }
            return Expr::literal(c[x.slot()]);
        }
        return x;
    };
    return rebuild(e, leaf);
}

std::vector<Expr> subtrees(const Expr& e)
{
    std::vector<Expr> out;
    collect(e, out);
    return out;
}

Expr replace_subtree(const Expr& e, std::size_t preorder_index, const Expr& replacement)
{
    std::size_t counter = 0;
    return replace_at(e, counter, preorder_index, replacement);
}

// --- printing --------------------------------------------------------------

namespace {

// Binding strength, mirroring the parser: sums < products < unary minus < power < atoms.
int precedence(const Expr& e, bool masked, std::span<const double> c)
{
    switch (e.kind()) {
    case Expr::Kind::Binary:
        switch (e.binary_op()) {
        case BinaryOp::Add:
        case BinaryOp::Sub: return 1;
        case BinaryOp::Mul:
        case BinaryOp::Div: return 2;
        case BinaryOp::Pow: return 4;
        }
        return 0;
    case Expr::Kind::Unary: return e.unary_op() == UnaryOp::Neg ? 3 : 5;
    case Expr::Kind::Literal: return (!masked && e.value() < 0.0) ? 3 : 5;
    case Expr::Kind::Constant: return (!masked && e.slot() < c.size() && c[e.slot()] < 0.0) ? 3 : 5;
    default: return 5;
    }
}

struct Printer {
    std::span<const double> c;
    bool masked;
    std::string out;

    int prec(const Expr& e) const { return precedence(e, masked, c); }

    void number(double v) { out += fmt::format("{}", v); }

    void wrapped(const Expr& e, bool parens)
    {
        if (parens) {
            out += '(';
        }
        print(e);
        if (parens) {
            out += ')';
        }
    }

    void print(const Expr& e)
    {
        switch (e.kind()) {
        case Expr::Kind::Variable: out += fmt::format("x_{}", e.index()); return;
        case Expr::Kind::Constant:
            if (masked || e.slot() >= c.size()) {
                out += 'C';
            } else {
                number(c[e.slot()]);
            }
            return;
        case Expr::Kind::Literal:
            if (masked) {
                out += 'C';
            } else {
                number(e.value());
            }
            return;
        case Expr::Kind::Unary:
            if (e.unary_op() == UnaryOp::Neg) {
                out += '-';
                wrapped(e.child(), prec(e.child()) < 4);
            } else {
                out += name_of(e.unary_op());
                out += '(';
                print(e.child());
                out += ')';
            }
            return;
        case Expr::Kind::Binary: {
            const int p = prec(e);
            const Expr l = e.lhs();
            const Expr r = e.rhs();
            const int pl = prec(l);
            const int pr = prec(r);
            if (e.binary_op() == BinaryOp::Pow) {
                wrapped(l, pl <= 4);
                out += symbol_of(e.binary_op());
                wrapped(r, pr < 4);
            } else {
                wrapped(l, pl < p);
                out += symbol_of(e.binary_op());
                wrapped(r, pr <= p || pr == 3);
            }
            return;
        }
        }
    }
};

} // namespace

std::string to_masked_string(const Expr& e)
{
    Printer p{{}, true, {}};
    p.print(e);
    return std::move(p.out);
}

std::string to_string(const Expr& e, std::span<const double> c)
{
    Printer p{c, false, {}};
    p.print(e);
    return std::move(p.out);
}

// --- evaluation ------------------------------------------------------------

namespace {

void check_arity(const Expr& e, std::span<const double> c)
{
    const std::size_t n = constant_count(e);
    if (n != c.size()) {
        throw ArityError(fmt::format("expression has {} constant slots but {} values were given", n, c.size()));
    }
}

std::vector<double> eval_rows(const Expr& e, std::span<const double> c, const Matrix& X)
{
    const std::size_t n = X.rows();
    switch (e.kind()) {
    case Expr::Kind::Variable: {
        if (e.index() >= X.cols()) {
            throw DimError(fmt::format("variable x_{} out of range for {} columns", e.index(), X.cols()));
        }
        return X.column(e.index());
    }
    case Expr::Kind::Constant: return std::vector<double>(n, c[e.slot()]);
    case Expr::Kind::Literal: return std::vector<double>(n, e.value());
    case Expr::Kind::Unary: {
        auto v = eval_rows(e.child(), c, X);
        const UnaryOp op = e.unary_op();
        for (double& x : v) {
            x = apply(op, x);
        }
        return v;
    }
    case Expr::Kind::Binary: {
        auto l = eval_rows(e.lhs(), c, X);
        const auto r = eval_rows(e.rhs(), c, X);
        const BinaryOp op = e.binary_op();
        for (std::size_t i = 0; i < n; ++i) {
            l[i] = apply(op, l[i], r[i]);
        }
        return l;
    }
    }
    return {};
}

double eval_point(const Expr& e, std::span<const double> c, std::span<const double> x)
{
    switch (e.kind()) {
    case Expr::Kind::Variable: return x[e.index()];
    case Expr::Kind::Constant: return c[e.slot()];
    case Expr::Kind::Literal: return e.value();
    case Expr::Kind::Unary: return apply(e.unary_op(), eval_point(e.child(), c, x));
    case Expr::Kind::Binary:
        return apply(e.binary_op(), eval_point(e.lhs(), c, x), eval_point(e.rhs(), c, x));
    }
    return kNaN;
}

std::size_t max_variable(const Expr& e)
{
    switch (e.kind()) {
    case Expr::Kind::Variable: return e.index() + 1;
    case Expr::Kind::Unary: return max_variable(e.child());
    case Expr::Kind::Binary: return std::max(max_variable(e.lhs()), max_variable(e.rhs()));
    default: return 0;
    }
}

} // namespace

std::vector<double> evaluate(const Expr& e, std::span<const double> c, const Matrix& X)
{
    check_arity(e, c);
    return eval_rows(e, c, X);
}

double evaluate_point(const Expr& e, std::span<const double> c, std::span<const double> x)
{
    check_arity(e, c);
    if (max_variable(e) > x.size()) {
        throw DimError(fmt::format("expression uses more variables than the {} supplied", x.size()));
    }
    return eval_point(e, c, x);
}

// --- seeds -----------------------------------------------------------------

std::vector<Expr> complexity_three_shapes(std::size_t dim)
{
    static constexpr BinaryOp kBinary[] = {BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div, BinaryOp::Pow};
    static constexpr UnaryOp kUnary[] = {UnaryOp::Neg, UnaryOp::Sin, UnaryOp::Log, UnaryOp::Exp, UnaryOp::Abs};

    std::vector<Expr> out;
    for (BinaryOp op : kBinary) {
        for (std::size_t i = 0; i < dim; ++i) {
            for (std::size_t j = 0; j < dim; ++j) {
                out.push_back(Expr::binary(op, Expr::variable(i), Expr::variable(j)));
            }
            out.push_back(Expr::binary(op, Expr::constant(0), Expr::variable(i)));
            out.push_back(Expr::binary(op, Expr::variable(i), Expr::constant(0)));
        }
    }
    for (UnaryOp outer : kUnary) {
        for (UnaryOp inner : kUnary) {
            for (std::size_t i = 0; i < dim; ++i) {
                out.push_back(Expr::unary(outer, Expr::unary(inner, Expr::variable(i))));
            }
        }
    }
    return out;
}

Expr random_seed_expr(Rng& rng, std::size_t dim)
{
    assert(dim >= 1);
    const auto shapes = complexity_three_shapes(dim);
    std::uniform_int_distribution<std::size_t> pick(0, shapes.size() - 1);
    return shapes[pick(rng)];
}

} // namespace odesr
