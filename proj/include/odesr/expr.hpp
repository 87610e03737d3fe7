#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "odesr/matrix.hpp"

namespace odesr {

using Rng = std::mt19937_64;
using ConstVector = std::vector<double>;

enum class UnaryOp : std::uint8_t { Neg, Sin, Cos, Log, Exp, Abs, Sqrt, Sgn, Cot };
enum class BinaryOp : std::uint8_t { Add, Sub, Mul, Div, Pow };

// Discovery: operators the search may propose. Simulation: adds cos, sqrt,
// sgn, cot and numeric literals for ground-truth systems.
enum class Grammar : std::uint8_t { Discovery, Simulation };

class ExprError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class SyntaxError : public ExprError {
public:
    using ExprError::ExprError;
};
class UnknownSymbol : public ExprError {
public:
    using ExprError::ExprError;
};
class DimError : public ExprError {
public:
    using ExprError::ExprError;
};
class GrammarError : public ExprError {
public:
    using ExprError::ExprError;
};
class ArityError : public ExprError {
public:
    using ExprError::ExprError;
};

[[nodiscard]] bool allowed_in(UnaryOp op, Grammar g) noexcept;
[[nodiscard]] std::string_view name_of(UnaryOp op) noexcept;
[[nodiscard]] std::string_view symbol_of(BinaryOp op) noexcept;

// Domain-safe scalar kernels: any domain violation or non-finite result is NaN.
[[nodiscard]] double apply(UnaryOp op, double a) noexcept;
[[nodiscard]] double apply(BinaryOp op, double a, double b) noexcept;

/// Immutable expression tree. Copies share structure; safe to read from
/// any number of threads.
class Expr {
public:
    enum class Kind : std::uint8_t { Variable, Constant, Literal, Unary, Binary };

    static Expr variable(std::size_t index);
    static Expr constant(std::size_t slot);
    static Expr literal(double value);
    static Expr unary(UnaryOp op, Expr child);
    static Expr binary(BinaryOp op, Expr lhs, Expr rhs);

    [[nodiscard]] Kind kind() const noexcept;
    [[nodiscard]] std::size_t index() const noexcept; // Variable
    [[nodiscard]] std::size_t slot() const noexcept;  // Constant
    [[nodiscard]] double value() const noexcept;      // Literal
    [[nodiscard]] UnaryOp unary_op() const noexcept;
    [[nodiscard]] BinaryOp binary_op() const noexcept;
    [[nodiscard]] Expr child() const noexcept; // Unary
    [[nodiscard]] Expr lhs() const noexcept;   // Binary
    [[nodiscard]] Expr rhs() const noexcept;   // Binary

    [[nodiscard]] bool is_leaf() const noexcept { return kind() != Kind::Unary && kind() != Kind::Binary; }

private:
    struct Node;
    explicit Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
    std::shared_ptr<const Node> node_;
};

[[nodiscard]] bool structurally_equal(const Expr& a, const Expr& b) noexcept;

[[nodiscard]] std::size_t complexity(const Expr& e) noexcept;
[[nodiscard]] std::size_t constant_count(const Expr& e) noexcept;
[[nodiscard]] std::size_t depth(const Expr& e) noexcept;
[[nodiscard]] bool has_variable(const Expr& e) noexcept;
[[nodiscard]] bool has_literal(const Expr& e) noexcept;
[[nodiscard]] bool within_grammar(const Expr& e, Grammar g) noexcept;

// Renumbers placeholder slots 0..n-1 in left-to-right depth-first order.
[[nodiscard]] Expr renumber_constants(const Expr& e);

struct MaskedExpr {
    Expr expr;
    ConstVector init; // per slot: the replaced literal, or 1.0 for a bare C
};

// Replaces every Literal with a fresh placeholder, keeping the literal as
// the slot's initial value, and renumbers slots.
[[nodiscard]] MaskedExpr mask_literals(const Expr& e);

// Substitutes Literals for every placeholder.
[[nodiscard]] Expr inline_constants(const Expr& e, std::span<const double> c);

// Subtrees in depth-first pre-order; index 0 is the root.
[[nodiscard]] std::vector<Expr> subtrees(const Expr& e);
[[nodiscard]] Expr replace_subtree(const Expr& e, std::size_t preorder_index, const Expr& replacement);

struct ParsedExpr {
    Expr expr;
    ConstVector init;
};

/// Parses one infix equation. Variables are x_0..x_{dim-1}; C (either case)
/// is a constant placeholder; ** and ^ both denote power.
///
/// Under the discovery grammar a numeric literal becomes a placeholder whose
/// initial value is the literal; bare C placeholders start at 1.0.
[[nodiscard]] ParsedExpr parse_with_init(std::string_view text, std::size_t dim, Grammar grammar);
[[nodiscard]] Expr parse(std::string_view text, std::size_t dim, Grammar grammar);

// Canonical infix with every placeholder and literal printed as C.
[[nodiscard]] std::string to_masked_string(const Expr& e);
// Canonical infix with placeholders replaced by c at round-trip precision.
[[nodiscard]] std::string to_string(const Expr& e, std::span<const double> c = {});

[[nodiscard]] std::vector<double> evaluate(const Expr& e, std::span<const double> c, const Matrix& X);
[[nodiscard]] double evaluate_point(const Expr& e, std::span<const double> c, std::span<const double> x);

// All discovery-grammar trees of exactly three nodes containing a variable.
[[nodiscard]] std::vector<Expr> complexity_three_shapes(std::size_t dim);
[[nodiscard]] Expr random_seed_expr(Rng& rng, std::size_t dim);

} // namespace odesr
