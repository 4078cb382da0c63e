#include "forelem/parse.hpp"

#include <cctype>
#include <cstdlib>
#include <map>
#include <set>

namespace forelem::ir {

namespace {

enum class Tok {
  Name,
  Number,
  LParen,
  RParen,
  LBracket,
  RBracket,
  LBrace,
  RBrace,
  Comma,
  Semi,
  Dot,
  DotDot,
  Assign,
  PlusAssign,
  Plus,
  Minus,
  Star,
  Slash,
  KwFor,
  KwForelem,
  KwReservoir,
  KwData,
  KwDense,
  KwDownto,
  KwIn,
  End,
};

struct Token {
  Tok kind;
  std::string text;
  double number = 0;
  int line = 1, col = 1;
};

class Lexer {
public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      skip_ws();
      Token t;
      t.line = line_;
      t.col = col_;
      if (at_end()) {
        t.kind = Tok::End;
        out.push_back(t);
        return out;
      }
      char c = peek();
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        std::string name;
        while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) ||
                             peek() == '_'))
          name += advance();
        t.text = name;
        if (name == "for")
          t.kind = Tok::KwFor;
        else if (name == "forelem")
          t.kind = Tok::KwForelem;
        else if (name == "reservoir")
          t.kind = Tok::KwReservoir;
        else if (name == "data")
          t.kind = Tok::KwData;
        else if (name == "dense")
          t.kind = Tok::KwDense;
        else if (name == "downto")
          t.kind = Tok::KwDownto;
        else if (name == "in")
          t.kind = Tok::KwIn;
        else
          t.kind = Tok::Name;
        out.push_back(t);
        continue;
      }
      if (std::isdigit(static_cast<unsigned char>(c))) {
        std::string digits;
        while (!at_end() && std::isdigit(static_cast<unsigned char>(peek())))
          digits += advance();
        // A '.' is part of the number only when not the start of "..".
        if (!at_end() && peek() == '.' && pos_ + 1 < src_.size() &&
            src_[pos_ + 1] != '.') {
          digits += advance();
          while (!at_end() && std::isdigit(static_cast<unsigned char>(peek())))
            digits += advance();
        }
        if (!at_end() && (peek() == 'e' || peek() == 'E')) {
          digits += advance();
          if (!at_end() && (peek() == '+' || peek() == '-'))
            digits += advance();
          while (!at_end() && std::isdigit(static_cast<unsigned char>(peek())))
            digits += advance();
        }
        t.kind = Tok::Number;
        t.number = std::strtod(digits.c_str(), nullptr);
        t.text = digits;
        out.push_back(t);
        continue;
      }
      advance();
      switch (c) {
      case '(':
        t.kind = Tok::LParen;
        break;
      case ')':
        t.kind = Tok::RParen;
        break;
      case '[':
        t.kind = Tok::LBracket;
        break;
      case ']':
        t.kind = Tok::RBracket;
        break;
      case '{':
        t.kind = Tok::LBrace;
        break;
      case '}':
        t.kind = Tok::RBrace;
        break;
      case ',':
        t.kind = Tok::Comma;
        break;
      case ';':
        t.kind = Tok::Semi;
        break;
      case '.':
        if (!at_end() && peek() == '.') {
          advance();
          t.kind = Tok::DotDot;
        } else {
          t.kind = Tok::Dot;
        }
        break;
      case '=':
        t.kind = Tok::Assign;
        break;
      case '+':
        if (!at_end() && peek() == '=') {
          advance();
          t.kind = Tok::PlusAssign;
        } else {
          t.kind = Tok::Plus;
        }
        break;
      case '-':
        t.kind = Tok::Minus;
        break;
      case '*':
        t.kind = Tok::Star;
        break;
      case '/':
        t.kind = Tok::Slash;
        break;
      default:
        throw ParseError(t.line, t.col,
                         std::string("unexpected character '") + c + "'");
      }
      out.push_back(t);
    }
  }

private:
  bool at_end() const { return pos_ >= src_.size(); }
  char peek() const { return src_[pos_]; }
  char advance() {
    char c = src_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }
  void skip_ws() {
    while (!at_end()) {
      char c = peek();
      if (c == '#') {
        while (!at_end() && peek() != '\n')
          advance();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else {
        return;
      }
    }
  }

  std::string_view src_;
  size_t pos_ = 0;
  int line_ = 1, col_ = 1;
};

class Parser {
public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  Program run() {
    while (cur().kind == Tok::KwReservoir || cur().kind == Tok::KwData ||
           cur().kind == Tok::KwDense)
      decl();
    while (cur().kind != Tok::End)
      prog_.body.stmts.push_back(stmt());
    return std::move(prog_);
  }

private:
  const Token& cur() const { return toks_[pos_]; }
  const Token& ahead(int n = 1) const {
    size_t i = pos_ + n;
    return toks_[i < toks_.size() ? i : toks_.size() - 1];
  }
  Token eat() { return toks_[pos_++]; }
  [[noreturn]] void fail(const Token& t, const std::string& msg) const {
    throw ParseError(t.line, t.col, msg);
  }
  Token expect(Tok k, const char* what) {
    if (cur().kind != k)
      fail(cur(), std::string("expected ") + what);
    return eat();
  }
  std::string expect_name(const char* what) {
    return expect(Tok::Name, what).text;
  }

  void decl() {
    Token kw = eat();
    if (kw.kind == Tok::KwReservoir) {
      ReservoirDecl r;
      r.name = expect_name("reservoir name");
      expect(Tok::LParen, "'('");
      r.schema.push_back(expect_name("field name"));
      while (cur().kind == Tok::Comma) {
        eat();
        r.schema.push_back(expect_name("field name"));
      }
      expect(Tok::RParen, "')'");
      expect(Tok::Semi, "';'");
      std::set<std::string> seen;
      for (auto& f : r.schema)
        if (!seen.insert(f).second)
          fail(kw, "duplicate field '" + f + "' in reservoir " + r.name);
      declare(kw, r.name);
      prog_.reservoirs.push_back(std::move(r));
    } else if (kw.kind == Tok::KwData) {
      DataDecl d;
      d.name = expect_name("data binding name");
      expect(Tok::LParen, "'('");
      d.reservoir = expect_name("reservoir name");
      expect(Tok::RParen, "')'");
      expect(Tok::Semi, "';'");
      if (!prog_.find_reservoir(d.reservoir))
        fail(kw, "unbound identifier '" + d.reservoir + "'");
      declare(kw, d.name);
      prog_.bindings.push_back(std::move(d));
    } else {
      DenseDecl d;
      d.name = expect_name("dense operand name");
      expect(Tok::LBracket, "'['");
      d.extents.push_back(dim());
      while (cur().kind == Tok::Comma) {
        eat();
        d.extents.push_back(dim());
      }
      expect(Tok::RBracket, "']'");
      expect(Tok::Semi, "';'");
      declare(kw, d.name);
      prog_.denses.push_back(std::move(d));
    }
  }

  void declare(const Token& at, const std::string& name) {
    if (!decl_names_.insert(name).second)
      fail(at, "duplicate declaration '" + name + "'");
    if (name == "inf")
      fail(at, "'inf' is reserved");
  }

  SymExtent dim() {
    if (cur().kind == Tok::Number) {
      Token t = eat();
      long v = static_cast<long>(t.number);
      if (v < 0 || t.number != static_cast<double>(v))
        fail(t, "dense extent must be a nonnegative integer");
      return SymExtent::constant(v);
    }
    std::string n = expect_name("extent");
    params_.insert(n);
    return SymExtent::param(n);
  }

  StmtPtr stmt() {
    if (cur().kind == Tok::KwFor)
      return for_stmt();
    if (cur().kind == Tok::KwForelem)
      return forelem_stmt();
    return assign_stmt();
  }

  Block block() {
    expect(Tok::LBrace, "'{'");
    Block b;
    while (cur().kind != Tok::RBrace) {
      if (cur().kind == Tok::End)
        fail(cur(), "unterminated block");
      b.stmts.push_back(stmt());
    }
    eat();
    return b;
  }

  StmtPtr for_stmt() {
    Token kw = eat();
    expect(Tok::LParen, "'('");
    std::string iter = expect_name("loop iterator");
    expect(Tok::Assign, "'='");
    ExprPtr first = expr();
    bool descending;
    if (cur().kind == Tok::DotDot) {
      descending = false;
    } else if (cur().kind == Tok::KwDownto) {
      descending = true;
    } else {
      fail(cur(), "expected '..' or 'downto'");
    }
    eat();
    ExprPtr second = expr();
    expect(Tok::RParen, "')'");
    ForStmt f;
    f.iter = iter;
    f.descending = descending;
    // 1-based inclusive bounds -> 0-based half-open [lo, hi).
    if (!descending) {
      f.lo = add_const(first, -1);
      f.hi = second;
    } else {
      f.hi = first;
      f.lo = add_const(second, -1);
    }
    bind_iter(kw, iter);
    f.body = block();
    unbind(iter);
    return make_stmt(Stmt{std::move(f)});
  }

  StmtPtr forelem_stmt() {
    Token kw = eat();
    expect(Tok::LParen, "'('");
    std::string var = expect_name("loop variable");
    expect(Tok::Semi, "';'");
    std::string var2 = expect_name("loop variable");
    if (var2 != var)
      fail(kw, "forelem variable mismatch: '" + var + "' vs '" + var2 + "'");
    expect(Tok::KwIn, "'in'");
    Token res_tok = cur();
    std::string res = expect_name("reservoir name");
    if (!prog_.find_reservoir(res))
      fail(res_tok, "unbound identifier '" + res + "'");
    const ReservoirDecl& decl = *prog_.find_reservoir(res);

    if (cur().kind == Tok::Dot) {
      eat();
      std::vector<FieldName> fields;
      if (cur().kind == Tok::LParen) {
        eat();
        fields.push_back(expect_name("field name"));
        while (cur().kind == Tok::Comma) {
          eat();
          fields.push_back(expect_name("field name"));
        }
        expect(Tok::RParen, "')'");
      } else {
        fields.push_back(expect_name("field name"));
      }
      for (auto& f : fields)
        if (std::find(decl.schema.begin(), decl.schema.end(), f) ==
            decl.schema.end())
          fail(res_tok, "field '" + f + "' not in schema of " + res);

      if (cur().kind != Tok::LBracket) {
        // Extension of the written grammar: a loop over all values of one
        // field, the orthogonalization outer-loop form.
        if (fields.size() != 1)
          fail(cur(), "expected '['");
        expect(Tok::RParen, "')'");
        ForelemIndexStmt fi;
        fi.iter = var;
        fi.domain = Domain{Domain::FieldValues{res, fields[0]}};
        bind_iter(kw, var);
        fi.body = block();
        unbind(var);
        return make_stmt(Stmt{std::move(fi)});
      }

      Token lb = eat();
      Condition cond;
      cond.fields = fields;
      cond.values = valtuple(fields.size());
      expect(Tok::RBracket, "']'");
      if (cond.values.size() != cond.fields.size())
        fail(lb, "condition arity mismatch: " +
                     std::to_string(cond.fields.size()) + " fields vs " +
                     std::to_string(cond.values.size()) + " values");
      expect(Tok::RParen, "')'");
      ForelemTupleStmt ft;
      ft.tuple_var = var;
      ft.reservoir = res;
      ft.cond = std::move(cond);
      bind_tuple(kw, var, res);
      ft.body = block();
      unbind(var);
      return make_stmt(Stmt{std::move(ft)});
    }

    expect(Tok::RParen, "')'");
    ForelemTupleStmt ft;
    ft.tuple_var = var;
    ft.reservoir = res;
    bind_tuple(kw, var, res);
    ft.body = block();
    unbind(var);
    return make_stmt(Stmt{std::move(ft)});
  }

  std::vector<ValueRef> valtuple(size_t arity) {
    std::vector<ValueRef> vals;
    if (arity > 1) {
      expect(Tok::LParen, "'('");
      vals.push_back(val());
      while (cur().kind == Tok::Comma) {
        eat();
        vals.push_back(val());
      }
      expect(Tok::RParen, "')'");
    } else {
      vals.push_back(val());
    }
    return vals;
  }

  // val := expr | "(" expr "," ("inf"|expr) ")", disambiguated by lookahead
  // with backtracking: a '(' opens an interval only if a comma follows the
  // first expression.
  ValueRef val() {
    if (cur().kind == Tok::LParen) {
      size_t saved = pos_;
      eat();
      ExprPtr lo = expr();
      if (cur().kind == Tok::Comma) {
        eat();
        Interval iv;
        iv.lo = lo;
        if (cur().kind == Tok::Name && cur().text == "inf") {
          eat();
        } else {
          iv.hi = expr();
        }
        expect(Tok::RParen, "')'");
        return ValueRef{std::move(iv)};
      }
      pos_ = saved;
    }
    return ValueRef{expr()};
  }

  StmtPtr assign_stmt() {
    Token at = cur();
    std::string name = expect_name("statement");
    LValue lhs;
    if (cur().kind == Tok::LBracket) {
      eat();
      std::vector<ExprPtr> idx;
      idx.push_back(expr());
      while (cur().kind == Tok::Comma) {
        eat();
        idx.push_back(expr());
      }
      expect(Tok::RBracket, "']'");
      const DenseDecl* d = prog_.find_dense(name);
      if (!d)
        fail(at, "unbound identifier '" + name + "'");
      if (d->extents.size() != idx.size())
        fail(at, "dense '" + name + "' indexed with wrong arity");
      lhs.v = LValue::Dense{name, std::move(idx)};
    } else if (cur().kind == Tok::LParen) {
      eat();
      Token vt = cur();
      std::string var = expect_name("tuple variable");
      expect(Tok::RParen, "')'");
      if (!prog_.find_binding(name))
        fail(at, "unbound identifier '" + name + "'");
      if (!tuples_.count(var))
        fail(vt, "unbound identifier '" + var + "'");
      lhs.v = LValue::BindingWrite{name, var};
    } else {
      if (decl_names_.count(name) || iters_.count(name) || tuples_.count(name))
        fail(at, "cannot assign to '" + name + "'");
      lhs.v = LValue::Scalar{name};
    }
    bool accumulate;
    if (cur().kind == Tok::Assign) {
      accumulate = false;
    } else if (cur().kind == Tok::PlusAssign) {
      accumulate = true;
    } else {
      fail(cur(), "expected '=' or '+='");
    }
    eat();
    ExprPtr rhs = expr();
    expect(Tok::Semi, "';'");
    if (auto* s = std::get_if<LValue::Scalar>(&lhs.v)) {
      if (accumulate && !scalars_.count(s->name))
        fail(at, "unbound identifier '" + s->name + "'");
      scalars_.insert(s->name);
    }
    return make_stmt(Stmt{AssignStmt{std::move(lhs), accumulate, rhs}});
  }

  ExprPtr expr() {
    ExprPtr lhs = term();
    while (cur().kind == Tok::Plus || cur().kind == Tok::Minus) {
      BinOp op = cur().kind == Tok::Plus ? BinOp::Add : BinOp::Sub;
      eat();
      lhs = binary(op, lhs, term());
    }
    return lhs;
  }

  ExprPtr term() {
    ExprPtr lhs = factor();
    while (cur().kind == Tok::Star || cur().kind == Tok::Slash) {
      BinOp op = cur().kind == Tok::Star ? BinOp::Mul : BinOp::Div;
      eat();
      lhs = binary(op, lhs, factor());
    }
    return lhs;
  }

  ExprPtr factor() {
    Token t = cur();
    if (t.kind == Tok::Number) {
      eat();
      return num(t.number);
    }
    if (t.kind == Tok::Minus) {
      eat();
      return binary(BinOp::Sub, num(0), factor());
    }
    if (t.kind == Tok::LParen) {
      eat();
      ExprPtr e = expr();
      expect(Tok::RParen, "')'");
      return e;
    }
    if (t.kind != Tok::Name)
      fail(t, "expected expression");
    std::string name = eat().text;
    if (cur().kind == Tok::Dot && ahead().kind == Tok::Name) {
      auto it = tuples_.find(name);
      if (it == tuples_.end())
        fail(t, "unbound identifier '" + name + "'");
      eat();
      std::string field = expect_name("field name");
      const ReservoirDecl* r = prog_.find_reservoir(it->second);
      if (std::find(r->schema.begin(), r->schema.end(), field) ==
          r->schema.end())
        fail(t, "field '" + field + "' not in schema of " + it->second);
      return tuple_field(name, field);
    }
    if (cur().kind == Tok::LParen) {
      if (!prog_.find_binding(name))
        fail(t, "unbound identifier '" + name + "'");
      eat();
      Token vt = cur();
      std::string var = expect_name("tuple variable");
      expect(Tok::RParen, "')'");
      auto it = tuples_.find(var);
      if (it == tuples_.end())
        fail(vt, "unbound identifier '" + var + "'");
      if (prog_.find_binding(name)->reservoir != it->second)
        fail(vt, "binding '" + name + "' is not over reservoir " + it->second);
      return binding_read(name, var);
    }
    if (cur().kind == Tok::LBracket) {
      if (!prog_.find_dense(name))
        fail(t, "unbound identifier '" + name + "'");
      eat();
      std::vector<ExprPtr> idx;
      idx.push_back(expr());
      while (cur().kind == Tok::Comma) {
        eat();
        idx.push_back(expr());
      }
      expect(Tok::RBracket, "']'");
      if (prog_.find_dense(name)->extents.size() != idx.size())
        fail(t, "dense '" + name + "' indexed with wrong arity");
      return dense_read(name, idx);
    }
    if (iters_.count(name))
      return iter_ref(name);
    if (tuples_.count(name))
      fail(t, "tuple variable '" + name + "' used as a value");
    if (!scalars_.count(name) && !params_.count(name))
      fail(t, "unbound identifier '" + name + "'");
    return scalar_ref(name);
  }

  void bind_iter(const Token& at, const std::string& n) {
    if (iters_.count(n) || tuples_.count(n) || decl_names_.count(n))
      fail(at, "rebinding of '" + n + "'");
    iters_.insert(n);
  }
  void bind_tuple(const Token& at, const std::string& n, const std::string& r) {
    if (iters_.count(n) || tuples_.count(n) || decl_names_.count(n))
      fail(at, "rebinding of '" + n + "'");
    tuples_[n] = r;
  }
  void unbind(const std::string& n) {
    iters_.erase(n);
    tuples_.erase(n);
  }

  std::vector<Token> toks_;
  size_t pos_ = 0;
  Program prog_;
  std::set<std::string> decl_names_;
  std::set<std::string> params_;
  std::set<std::string> scalars_;
  std::set<std::string> iters_;
  std::map<std::string, std::string> tuples_;
};

} // namespace

Program parse_program(std::string_view source) {
  Lexer lex(source);
  Parser parser(lex.run());
  Program p = parser.run();
  validate(p);
  return p;
}

namespace {

// Row-grouped encoding of the matrix-vector product with an explicit
// accumulator, as commonly written in sample programs.
const char* kGroupedSpmvText = R"(
reservoir T(row, col);
data A(T);
dense B[NC];
dense C[NR];
for (i = 1 .. NR) {
  sum = 0;
  forelem (t; t in T.row[i]) {
    sum += B[t.col] * A(t);
  }
  C[i] = sum;
}
)";

// Triangular solve with the update written against b[i]; the builtin kernel
// uses the b[t.row] form, but this spelling is recognized as well.
const char* kLiteralTrsvText = R"(
reservoir T(row, col);
data A(T);
dense b[NR];
dense x[NR];
for (i = NR downto 1) {
  forelem (t; t in T.(col,row)[(i, i)]) {
    x[i] = b[i] / A(t);
  }
  forelem (t; t in T.col[i]) {
    b[i] = b[t.row] - A(t) * x[i];
  }
}
)";

} // namespace

std::optional<KernelKind> recognize_kernel(const Program& p) {
  const std::string c = canonical(p);
  if (c == canonical(builtin_kernel(KernelKind::SpMV).program) ||
      c == canonical(parse_program(kGroupedSpmvText)))
    return KernelKind::SpMV;
  // SpMM for any k shares one canonical shape; probe with k = 1.
  if (c == canonical(builtin_kernel(KernelKind::SpMM, 1).program))
    return KernelKind::SpMM;
  if (c == canonical(builtin_kernel(KernelKind::TrSv).program) ||
      c == canonical(parse_program(kLiteralTrsvText)))
    return KernelKind::TrSv;
  return std::nullopt;
}

} // namespace forelem::ir
