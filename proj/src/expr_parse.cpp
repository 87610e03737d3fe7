#include <cctype>
#include <charconv>
#include <optional>

#include <fmt/format.h>

#include "odesr/expr.hpp"

namespace odesr {

namespace {

enum class Tok { Number, Ident, Plus, Minus, Star, Slash, Pow, LParen, RParen, End };

struct Token {
    Tok kind;
    std::string_view text;
    std::size_t pos;
    double number = 0.0;
};

class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    Token next()
    {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) {
            ++pos_;
        }
        const std::size_t start = pos_;
        if (pos_ >= src_.size()) {
            return {Tok::End, {}, start};
        }
        const char ch = src_[pos_];
        if (std::isdigit(static_cast<unsigned char>(ch)) || ch == '.') {
            return number(start);
        }
        if (std::isalpha(static_cast<unsigned char>(ch)) || ch == '_') {
            while (pos_ < src_.size()
                   && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
                ++pos_;
            }
            return {Tok::Ident, src_.substr(start, pos_ - start), start};
        }
        ++pos_;
        switch (ch) {
        case '+': return {Tok::Plus, src_.substr(start, 1), start};
        case '-': return {Tok::Minus, src_.substr(start, 1), start};
        case '/': return {Tok::Slash, src_.substr(start, 1), start};
        case '^': return {Tok::Pow, src_.substr(start, 1), start};
        case '(': return {Tok::LParen, src_.substr(start, 1), start};
        case ')': return {Tok::RParen, src_.substr(start, 1), start};
        case '*':
            if (pos_ < src_.size() && src_[pos_] == '*') {
                ++pos_;
                return {Tok::Pow, src_.substr(start, 2), start};
            }
            return {Tok::Star, src_.substr(start, 1), start};
        default:
            throw SyntaxError(fmt::format("unexpected character '{}' at position {}", ch, start));
        }
    }

private:
    Token number(std::size_t start)
    {
        auto digits = [&] {
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                ++pos_;
            }
        };
        digits();
        if (pos_ < src_.size() && src_[pos_] == '.') {
            ++pos_;
            digits();
        }
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            std::size_t save = pos_++;
            if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) {
                ++pos_;
            }
            if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                digits();
            } else {
                pos_ = save;
            }
        }
        const std::string_view text = src_.substr(start, pos_ - start);
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
        if (ec != std::errc{} || ptr != text.data() + text.size()) {
            throw SyntaxError(fmt::format("malformed number '{}' at position {}", text, start));
        }
        return {Tok::Number, text, start, value};
    }

    std::string_view src_;
    std::size_t pos_ = 0;
};

std::optional<UnaryOp> function_named(std::string_view name)
{
    std::string lower(name);
    for (char& ch : lower) {
        ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
    if (lower == "sin") return UnaryOp::Sin;
    if (lower == "cos") return UnaryOp::Cos;
    if (lower == "log") return UnaryOp::Log;
    if (lower == "exp") return UnaryOp::Exp;
    if (lower == "abs") return UnaryOp::Abs;
    if (lower == "sqrt") return UnaryOp::Sqrt;
    if (lower == "sgn" || lower == "sign") return UnaryOp::Sgn;
    if (lower == "cot") return UnaryOp::Cot;
    return std::nullopt;
}

// Recursive descent over
//   sum     := product (('+'|'-') product)*
//   product := unary (('*'|'/') unary)*
//   unary   := ('-'|'+') unary | power
//   power   := atom (('**'|'^') unary)?
//   atom    := number | C | x_i | func '(' sum ')' | '(' sum ')'
class Parser {
public:
    Parser(std::string_view text, std::size_t dim, Grammar grammar)
        : lexer_(text), dim_(dim), grammar_(grammar)
    {
        advance();
    }

    ParsedExpr run()
    {
        if (cur_.kind == Tok::End) {
            throw SyntaxError("empty expression");
        }
        Expr e = sum();
        if (cur_.kind != Tok::End) {
            throw SyntaxError(fmt::format("unexpected '{}' at position {}", cur_.text, cur_.pos));
        }
        return {std::move(e), std::move(init_)};
    }

private:
    void advance() { cur_ = lexer_.next(); }

    void expect(Tok kind, std::string_view what)
    {
        if (cur_.kind != kind) {
            throw SyntaxError(fmt::format("expected {} at position {}", what, cur_.pos));
        }
        advance();
    }

    Expr sum()
    {
        Expr lhs = product();
        while (cur_.kind == Tok::Plus || cur_.kind == Tok::Minus) {
            const BinaryOp op = cur_.kind == Tok::Plus ? BinaryOp::Add : BinaryOp::Sub;
            advance();
            lhs = Expr::binary(op, std::move(lhs), product());
        }
        return lhs;
    }

    Expr product()
    {
        Expr lhs = unary();
        while (cur_.kind == Tok::Star || cur_.kind == Tok::Slash) {
            const BinaryOp op = cur_.kind == Tok::Star ? BinaryOp::Mul : BinaryOp::Div;
            advance();
            lhs = Expr::binary(op, std::move(lhs), unary());
        }
        return lhs;
    }

    Expr unary()
    {
        if (cur_.kind == Tok::Minus) {
            advance();
            return Expr::unary(UnaryOp::Neg, unary());
        }
        if (cur_.kind == Tok::Plus) {
            advance();
            return unary();
        }
        return power();
    }

    Expr power()
    {
        Expr base = atom();
        if (cur_.kind == Tok::Pow) {
            advance();
            return Expr::binary(BinaryOp::Pow, std::move(base), unary());
        }
        return base;
    }

    Expr placeholder(double init)
    {
        init_.push_back(init);
        return Expr::constant(init_.size() - 1);
    }

    Expr atom()
    {
        const Token tok = cur_;
        switch (tok.kind) {
        case Tok::Number:
            advance();
            if (grammar_ == Grammar::Discovery) {
                return placeholder(tok.number);
            }
            return Expr::literal(tok.number);
        case Tok::LParen: {
            advance();
            Expr inner = sum();
            expect(Tok::RParen, "')'");
            return inner;
        }
        case Tok::Ident: return identifier(tok);
        case Tok::End: throw SyntaxError(fmt::format("unexpected end of expression at position {}", tok.pos));
        default: throw SyntaxError(fmt::format("unexpected '{}' at position {}", tok.text, tok.pos));
        }
    }

    Expr identifier(const Token& tok)
    {
        advance();
        const std::string_view name = tok.text;
        if (name == "C" || name == "c") {
            return placeholder(1.0);
        }
        if (name.size() > 2 && (name[0] == 'x' || name[0] == 'X') && name[1] == '_') {
            std::size_t index = 0;
            const std::string_view digits = name.substr(2);
            auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), index);
            if (ec == std::errc{} && ptr == digits.data() + digits.size()) {
                if (index >= dim_) {
                    throw DimError(fmt::format("variable {} out of range for dimension {}", name, dim_));
                }
                return Expr::variable(index);
            }
        }
        if (auto op = function_named(name)) {
            if (!allowed_in(*op, grammar_)) {
                throw GrammarError(fmt::format("operator '{}' is not available in the discovery grammar", name));
            }
            if (cur_.kind != Tok::LParen) {
                throw SyntaxError(fmt::format("expected '(' after '{}' at position {}", name, cur_.pos));
            }
            advance();
            Expr arg = sum();
            expect(Tok::RParen, "')'");
            return Expr::unary(*op, std::move(arg));
        }
        throw UnknownSymbol(fmt::format("unknown symbol '{}' at position {}", name, tok.pos));
    }

    Lexer lexer_;
    Token cur_{Tok::End, {}, 0};
    std::size_t dim_;
    Grammar grammar_;
    ConstVector init_;
};

} // namespace

ParsedExpr parse_with_init(std::string_view text, std::size_t dim, Grammar grammar)
{
    return Parser(text, dim, grammar).run();
}

Expr parse(std::string_view text, std::size_t dim, Grammar grammar)
{
    return parse_with_init(text, dim, grammar).expr;
}

} // namespace odesr
