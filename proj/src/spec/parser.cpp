// Copyright 2026 The Peak Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "peak/spec/parser.hpp"

#include <charconv>
#include <set>

#include <fmt/core.h>

#include "peak/spec/eval.hpp"
#include "peak/util/text.hpp"

namespace peak::spec {

SpecError::SpecError(std::string code, const std::string& message, SourcePos pos)
    : Error(std::move(code),
            pos.line > 0 ? fmt::format("{}:{}: {}", pos.line, pos.column, message) : message),
      pos_(pos) {}

namespace {

enum class Tok { ident, integer, real, punct, end };

struct Token {
  Tok kind;
  std::string text;
  SourcePos pos;
  std::int64_t int_value = 0;
  double real_value = 0;
};

bool is_ident_start(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

std::vector<Token> lex_line(std::string_view line, int line_no) {
  std::vector<Token> toks;
  std::size_t i = 0;
  auto pos_at = [&](std::size_t col) { return SourcePos{line_no, static_cast<int>(col) + 1}; };
  while (i < line.size()) {
    const char c = line[i];
    if (c == '#') break;
    if (c == ' ' || c == '\t' || c == '\r') {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (is_ident_start(c)) {
      while (i < line.size() && (is_ident_start(line[i]) || is_digit(line[i]))) ++i;
      toks.push_back({Tok::ident, std::string(line.substr(start, i - start)), pos_at(start)});
      continue;
    }
    if (is_digit(c)) {
      while (i < line.size() && is_digit(line[i])) ++i;
      bool real = false;
      if (i + 1 < line.size() && line[i] == '.' && is_digit(line[i + 1])) {
        real = true;
        ++i;
        while (i < line.size() && is_digit(line[i])) ++i;
      }
      if (i < line.size() && (line[i] == 'e' || line[i] == 'E')) {
        std::size_t j = i + 1;
        if (j < line.size() && (line[j] == '+' || line[j] == '-')) ++j;
        if (j < line.size() && is_digit(line[j])) {
          real = true;
          i = j;
          while (i < line.size() && is_digit(line[i])) ++i;
        }
      }
      Token t{real ? Tok::real : Tok::integer, std::string(line.substr(start, i - start)), pos_at(start)};
      const char* b = line.data() + start;
      const char* e = line.data() + i;
      if (real) {
        // std::from_chars for double is available in libstdc++ 11
        auto [p, ec] = std::from_chars(b, e, t.real_value);
        if (ec != std::errc() || p != e) throw SpecError("SyntaxError", "malformed number", t.pos);
      } else {
        auto [p, ec] = std::from_chars(b, e, t.int_value);
        if (ec != std::errc() || p != e) {
          throw SpecError("SyntaxError", fmt::format("integer literal '{}' out of range", t.text), t.pos);
        }
      }
      toks.push_back(std::move(t));
      continue;
    }
    static constexpr std::string_view kThree[] = {"..="};
    static constexpr std::string_view kTwo[] = {"<=", ">=", "==", "!=", "&&", "||"};
    bool matched = false;
    for (auto op : kThree) {
      if (line.substr(i, op.size()) == op) {
        toks.push_back({Tok::punct, std::string(op), pos_at(start)});
        i += op.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    for (auto op : kTwo) {
      if (line.substr(i, op.size()) == op) {
        toks.push_back({Tok::punct, std::string(op), pos_at(start)});
        i += op.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    if (std::string_view("{}(),:<>+-*/%!.").find(c) != std::string_view::npos) {
      toks.push_back({Tok::punct, std::string(1, c), pos_at(start)});
      ++i;
      continue;
    }
    throw SpecError("SyntaxError", fmt::format("unexpected character '{}'", c), pos_at(start));
  }
  toks.push_back({Tok::end, "", pos_at(line.size())});
  return toks;
}

class LineParser {
 public:
  explicit LineParser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  const Token& peek() const { return toks_[pos_]; }
  bool at_end() const { return peek().kind == Tok::end; }

  const Token& next() {
    const Token& t = toks_[pos_];
    if (t.kind != Tok::end) ++pos_;
    return t;
  }

  bool accept(std::string_view punct_or_kw) {
    const auto& t = peek();
    if ((t.kind == Tok::punct || t.kind == Tok::ident) && t.text == punct_or_kw) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(std::string_view what) {
    if (!accept(what)) fail(fmt::format("expected '{}'", what));
  }

  std::string expect_ident(std::string_view role) {
    const auto& t = peek();
    if (t.kind != Tok::ident) fail(fmt::format("expected {}", role));
    ++pos_;
    return t.text;
  }

  void expect_end() {
    if (!at_end()) fail(fmt::format("unexpected '{}'", peek().text));
  }

  [[noreturn]] void fail(const std::string& msg) const {
    const auto& t = peek();
    const std::string found = t.kind == Tok::end ? "end of line" : fmt::format("'{}'", t.text);
    throw SpecError("SyntaxError", fmt::format("{}, found {}", msg, found), t.pos);
  }

  ExprPtr expr() { return binary(0); }

  ValueSet value_set() {
    const auto& t = peek();
    if (accept("{")) {
      ExplicitSet set;
      if (peek().kind == Tok::punct && peek().text == "}") fail("empty value set");
      set.items.push_back(expr());
      while (accept(",")) set.items.push_back(expr());
      expect("}");
      return ValueSet{std::move(set)};
    }
    if (t.kind == Tok::ident && t.text == "range") {
      next();
      expect("(");
      RangeSet r;
      r.start = expr();
      expect(",");
      r.stop = expr();
      if (accept(",")) r.step = expr();
      expect(")");
      return ValueSet{std::move(r)};
    }
    if (t.kind == Tok::ident && t.text == "pow2") {
      next();
      expect("(");
      Pow2Set p;
      p.lo = expr();
      expect("..=");
      p.hi = expr();
      expect(")");
      return ValueSet{std::move(p)};
    }
    fail("expected a value set ('{...}', 'range(...)' or 'pow2(lo..=hi)')");
  }

 private:
  struct OpInfo {
    std::string_view text;
    BinaryOp op;
    int prec;
  };

  static const OpInfo* binary_op(const Token& t) {
    static constexpr OpInfo kOps[] = {
        {"||", BinaryOp::logical_or, 1}, {"&&", BinaryOp::logical_and, 2}, {"==", BinaryOp::eq, 3},
        {"!=", BinaryOp::ne, 3},         {"<", BinaryOp::lt, 4},           {"<=", BinaryOp::le, 4},
        {">", BinaryOp::gt, 4},          {">=", BinaryOp::ge, 4},          {"+", BinaryOp::add, 5},
        {"-", BinaryOp::sub, 5},         {"*", BinaryOp::mul, 6},          {"/", BinaryOp::div, 6},
        {"%", BinaryOp::mod, 6},
    };
    if (t.kind != Tok::punct) return nullptr;
    for (const auto& o : kOps) {
      if (o.text == t.text) return &o;
    }
    return nullptr;
  }

  ExprPtr binary(int min_prec) {
    ExprPtr lhs = unary();
    while (true) {
      const auto* op = binary_op(peek());
      if (!op || op->prec <= min_prec) break;
      const SourcePos pos = peek().pos;
      next();
      ExprPtr rhs = binary(op->prec);
      lhs = std::make_shared<const Expr>(Expr{Binary{op->op, std::move(lhs), std::move(rhs)}, pos});
    }
    return lhs;
  }

  ExprPtr unary() {
    const SourcePos pos = peek().pos;
    if (accept("-")) return std::make_shared<const Expr>(Expr{Unary{UnaryOp::neg, unary()}, pos});
    if (accept("!")) return std::make_shared<const Expr>(Expr{Unary{UnaryOp::logical_not, unary()}, pos});
    return primary();
  }

  ExprPtr primary() {
    const Token& t = peek();
    const SourcePos pos = t.pos;
    switch (t.kind) {
      case Tok::integer:
        next();
        return std::make_shared<const Expr>(Expr{IntLit{t.int_value}, pos});
      case Tok::real:
        next();
        return std::make_shared<const Expr>(Expr{FloatLit{t.real_value}, pos});
      case Tok::ident: {
        next();
        if (t.text == "true") return std::make_shared<const Expr>(Expr{BoolLit{true}, pos});
        if (t.text == "false") return std::make_shared<const Expr>(Expr{BoolLit{false}, pos});
        if (accept(".")) {
          const auto& attr = peek();
          if (attr.kind != Tok::ident || attr.text != "size") fail("expected 'size' after '.'");
          next();
          return std::make_shared<const Expr>(Expr{SizeRef{t.text}, pos});
        }
        return std::make_shared<const Expr>(Expr{NameRef{t.text}, pos});
      }
      case Tok::punct:
        if (t.text == "(") {
          next();
          ExprPtr e = expr();
          expect(")");
          return e;
        }
        break;
      case Tok::end:
        break;
    }
    fail("expected an expression");
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

bool is_tuning_name(std::string_view s) {
  if (s.empty() || !(s[0] >= 'A' && s[0] <= 'Z')) return false;
  for (char c : s) {
    if (!((c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_')) return false;
  }
  return true;
}

ArrayInit parse_init(LineParser& p) {
  const auto& t = p.peek();
  if (p.accept("zeros")) return {InitKind::zeros, 0};
  if (p.accept("ones")) return {InitKind::ones, 0};
  if (p.accept("random")) {
    p.expect("(");
    const auto& s = p.peek();
    if (s.kind != Tok::integer || s.int_value < 0) p.fail("expected a nonnegative integer seed");
    p.next();
    p.expect(")");
    return {InitKind::random, static_cast<std::uint64_t>(s.int_value)};
  }
  (void)t;
  p.fail("expected 'zeros', 'ones' or 'random(<seed>)'");
}

DType parse_dtype_token(LineParser& p) {
  const auto& t = p.peek();
  if (t.kind == Tok::ident) {
    if (auto d = parse_dtype(t.text)) {
      p.next();
      return *d;
    }
  }
  p.fail("expected a dtype (i32, f32, f16)");
}

// ---- semantic checks --------------------------------------------------

enum class Kind { integer, boolean, real };

struct Scope {
  // name -> (kind of reference allowed, dtype)
  const InputSpec* spec = nullptr;
  bool allow_scalars = false;
  bool allow_tuning = false;
  bool allow_sizes = false;
  int scalars_before_line = 0;  // 0 = any line
};

Kind check_expr(const Expr& e, const Scope& scope) {
  return std::visit(
      [&](const auto& n) -> Kind {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, IntLit>) {
          return Kind::integer;
        } else if constexpr (std::is_same_v<T, FloatLit>) {
          return Kind::real;
        } else if constexpr (std::is_same_v<T, BoolLit>) {
          return Kind::boolean;
        } else if constexpr (std::is_same_v<T, NameRef>) {
          const InputSpec& spec = *scope.spec;
          if (const auto* s = spec.find_scalar(n.name)) {
            if (!scope.allow_scalars) {
              throw SpecError("NameError", fmt::format("'{}' may not be referenced here", n.name), e.pos);
            }
            if (scope.scalars_before_line > 0 && s->pos.line >= scope.scalars_before_line) {
              throw SpecError("NameError", fmt::format("'{}' is declared after its use", n.name), e.pos);
            }
            if (s->dtype != DType::i32) {
              throw SpecError("TypeError",
                              fmt::format("'{}' has dtype {}; only i32 scalars may appear in expressions",
                                          n.name, to_string(s->dtype)),
                              e.pos);
            }
            return Kind::integer;
          }
          if (spec.find_tuning(n.name)) {
            if (!scope.allow_tuning) {
              throw SpecError("NameError",
                              fmt::format("tuning parameter '{}' may not be referenced here", n.name), e.pos);
            }
            return Kind::integer;
          }
          if (spec.find_array(n.name)) {
            throw SpecError("TypeError", fmt::format("array '{}' used as a value; did you mean '{}.size'?",
                                                     n.name, n.name),
                            e.pos);
          }
          throw SpecError("NameError", fmt::format("undeclared name '{}'", n.name), e.pos);
        } else if constexpr (std::is_same_v<T, SizeRef>) {
          if (!scope.spec->find_array(n.array)) {
            throw SpecError("NameError", fmt::format("undeclared array '{}'", n.array), e.pos);
          }
          if (!scope.allow_sizes) {
            throw SpecError("NameError", fmt::format("'{}.size' may not be referenced here", n.array), e.pos);
          }
          return Kind::integer;
        } else if constexpr (std::is_same_v<T, Unary>) {
          const Kind k = check_expr(*n.operand, scope);
          if (n.op == UnaryOp::neg) {
            if (k == Kind::boolean) throw SpecError("TypeError", "cannot negate a boolean", e.pos);
            return k;
          }
          if (k != Kind::boolean) throw SpecError("TypeError", "'!' expects a boolean operand", e.pos);
          return Kind::boolean;
        } else {
          const Kind l = check_expr(*n.lhs, scope);
          const Kind r = check_expr(*n.rhs, scope);
          switch (n.op) {
            case BinaryOp::logical_and:
            case BinaryOp::logical_or:
              if (l != Kind::boolean || r != Kind::boolean) {
                throw SpecError("TypeError", "logical operators expect boolean operands", e.pos);
              }
              return Kind::boolean;
            case BinaryOp::eq:
            case BinaryOp::ne:
              if ((l == Kind::boolean) != (r == Kind::boolean)) {
                throw SpecError("TypeError", "cannot compare a boolean with a number", e.pos);
              }
              if (l == Kind::real || r == Kind::real) {
                throw SpecError("TypeError", "floating-point values are not allowed in expressions", e.pos);
              }
              return Kind::boolean;
            case BinaryOp::lt:
            case BinaryOp::le:
            case BinaryOp::gt:
            case BinaryOp::ge:
              if (l != Kind::integer || r != Kind::integer) {
                throw SpecError("TypeError", "comparisons expect integer operands", e.pos);
              }
              return Kind::boolean;
            default:
              if (l != Kind::integer || r != Kind::integer) {
                throw SpecError("TypeError", "arithmetic expects integer operands", e.pos);
              }
              return Kind::integer;
          }
        }
      },
      e.node);
}

std::vector<const Expr*> set_exprs(const ValueSet& set) {
  std::vector<const Expr*> out;
  std::visit(
      [&](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, ExplicitSet>) {
          for (const auto& i : f.items) out.push_back(i.get());
        } else if constexpr (std::is_same_v<T, RangeSet>) {
          out.push_back(f.start.get());
          out.push_back(f.stop.get());
          if (f.step) out.push_back(f.step.get());
        } else {
          out.push_back(f.lo.get());
          out.push_back(f.hi.get());
        }
      },
      set.form);
  return out;
}

bool is_numeric_literal(const Expr& e) {
  if (std::holds_alternative<IntLit>(e.node) || std::holds_alternative<FloatLit>(e.node)) return true;
  if (const auto* u = std::get_if<Unary>(&e.node)) {
    return u->op == UnaryOp::neg && is_numeric_literal(*u->operand);
  }
  return false;
}

void check_integer_set(const ValueSet& set, const Scope& scope, SourcePos pos, std::string_view what) {
  for (const Expr* e : set_exprs(set)) {
    const Kind k = check_expr(*e, scope);
    if (k != Kind::integer) {
      throw SpecError("TypeError", fmt::format("{} values must be integers", what), e->pos.line ? e->pos : pos);
    }
  }
}

}  // namespace

void check_spec(const InputSpec& spec) {
  std::set<std::string, std::less<>> names;
  auto declare = [&](const std::string& name, SourcePos pos) {
    if (!names.insert(name).second) {
      throw SpecError("NameError", fmt::format("duplicate declaration of '{}'", name), pos);
    }
  };
  for (const auto& s : spec.scalars) declare(s.name, s.pos);
  for (const auto& a : spec.arrays) declare(a.name, a.pos);
  for (const auto& t : spec.tuning) {
    if (!is_tuning_name(t.name)) {
      throw SpecError("SyntaxError",
                      fmt::format("tuning parameter '{}' must match [A-Z][A-Z0-9_]*", t.name), t.pos);
    }
    declare(t.name, t.pos);
  }

  Scope constant{&spec};
  for (const auto& s : spec.scalars) {
    if (s.dtype == DType::i32) {
      check_integer_set(s.values, constant, s.pos, fmt::format("scalar '{}'", s.name));
    } else {
      const auto* explicit_set = std::get_if<ExplicitSet>(&s.values.form);
      if (!explicit_set) {
        throw SpecError("TypeError",
                        fmt::format("scalar '{}' of dtype {} needs an explicit value set", s.name,
                                    to_string(s.dtype)),
                        s.pos);
      }
      for (const auto& item : explicit_set->items) {
        if (!is_numeric_literal(*item)) {
          throw SpecError("TypeError", fmt::format("values of '{}' must be numeric literals", s.name),
                          item->pos);
        }
      }
    }
    (void)scalar_values(s);  // value errors (empty, duplicate, range) surface here
  }
  for (const auto& a : spec.arrays) {
    Scope sizes{&spec, true, false, false, a.pos.line};
    check_integer_set(a.sizes, sizes, a.pos, fmt::format("size of '{}'", a.name));
  }
  for (const auto& t : spec.tuning) {
    check_integer_set(t.values, constant, t.pos, fmt::format("tuning parameter '{}'", t.name));
    (void)tuning_values(t);
  }
  Scope constraints{&spec, true, true, true, 0};
  for (const auto& c : spec.constraints) {
    if (check_expr(*c.expr, constraints) != Kind::boolean) {
      throw SpecError("TypeError", "constraint must be a boolean expression", c.pos);
    }
  }
}

InputSpec parse_spec(std::string_view source) {
  InputSpec spec;
  const auto text = util::normalize_newlines(source);
  const auto lines = util::split_lines(text);
  bool any = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const int line_no = static_cast<int>(i) + 1;
    LineParser p(lex_line(lines[i], line_no));
    if (p.at_end()) continue;
    any = true;
    const SourcePos pos = p.peek().pos;
    const auto& head = p.peek();
    if (head.kind != Tok::ident) p.fail("expected a declaration");
    const std::string keyword = head.text;
    p.next();
    if (keyword == "input" || keyword == "output") {
      const std::string name = p.expect_ident("a name");
      p.expect(":");
      if (p.accept("array")) {
        ArrayDecl a;
        a.name = name;
        a.pos = pos;
        a.is_output = keyword == "output";
        p.expect("<");
        a.elem_dtype = parse_dtype_token(p);
        p.expect(">");
        p.expect("size");
        p.expect("in");
        a.sizes = p.value_set();
        p.expect("init");
        a.init = parse_init(p);
        p.expect_end();
        spec.arrays.push_back(std::move(a));
      } else {
        if (keyword == "output") p.fail("'output' declarations must be arrays");
        ScalarDecl s;
        s.name = name;
        s.pos = pos;
        s.dtype = parse_dtype_token(p);
        p.expect("in");
        s.values = p.value_set();
        p.expect_end();
        spec.scalars.push_back(std::move(s));
      }
    } else if (keyword == "tune") {
      TuningDecl t;
      t.name = p.expect_ident("a tuning parameter name");
      t.pos = pos;
      p.expect(":");
      if (!p.accept("i32")) p.fail("tuning parameters must have dtype i32");
      p.expect("in");
      t.values = p.value_set();
      p.expect_end();
      spec.tuning.push_back(std::move(t));
    } else if (keyword == "constraint") {
      ConstraintExpr c;
      c.pos = pos;
      c.expr = p.expr();
      p.expect_end();
      spec.constraints.push_back(std::move(c));
    } else {
      throw SpecError("SyntaxError", fmt::format("unknown declaration '{}'", keyword), pos);
    }
  }
  if (!any) throw SpecError("SyntaxError", "empty specification", SourcePos{1, 1});
  check_spec(spec);
  return spec;
}

ValueSet parse_value_set(std::string_view text) {
  LineParser p(lex_line(text, 1));
  ValueSet set = p.value_set();
  p.expect_end();
  return set;
}

ExprPtr parse_expr(std::string_view text) {
  LineParser p(lex_line(text, 1));
  ExprPtr e = p.expr();
  p.expect_end();
  return e;
}

}  // namespace peak::spec
