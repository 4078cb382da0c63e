#include "forelem/ir.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace forelem {

std::string hex_id(uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

} // namespace forelem

namespace forelem::ir {

//===----------------------------------------------------------------------===//
// Expression builders
//===----------------------------------------------------------------------===//

ExprPtr num(double v) { return std::make_shared<Expr>(Expr{Expr::Num{v}}); }
ExprPtr scalar_ref(std::string name) {
  return std::make_shared<Expr>(Expr{Expr::ScalarRef{std::move(name)}});
}
ExprPtr iter_ref(std::string name) {
  return std::make_shared<Expr>(Expr{Expr::IterRef{std::move(name)}});
}
ExprPtr tuple_field(std::string tuple, FieldName field) {
  return std::make_shared<Expr>(
      Expr{Expr::TupleField{std::move(tuple), std::move(field)}});
}
ExprPtr binding_read(std::string binding, std::string tuple) {
  return std::make_shared<Expr>(
      Expr{Expr::BindingRead{std::move(binding), std::move(tuple)}});
}
ExprPtr dense_read(std::string name, std::vector<ExprPtr> idx) {
  return std::make_shared<Expr>(
      Expr{Expr::DenseRead{std::move(name), std::move(idx)}});
}
ExprPtr storage_field(std::string plan, std::string field,
                      std::vector<ExprPtr> idx, bool split) {
  return std::make_shared<Expr>(Expr{Expr::StorageField{
      std::move(plan), std::move(field), std::move(idx), split}});
}
ExprPtr binary(BinOp op, ExprPtr lhs, ExprPtr rhs) {
  return std::make_shared<Expr>(
      Expr{Expr::Binary{op, std::move(lhs), std::move(rhs)}});
}

ExprPtr add_const(const ExprPtr& e, long delta) {
  if (delta == 0)
    return e;
  if (auto* n = std::get_if<Expr::Num>(&e->node))
    return num(n->v + static_cast<double>(delta));
  if (auto* b = std::get_if<Expr::Binary>(&e->node)) {
    if (b->op == BinOp::Add || b->op == BinOp::Sub) {
      if (auto* rn = std::get_if<Expr::Num>(&b->rhs->node)) {
        long tail = (b->op == BinOp::Add ? 1 : -1) * static_cast<long>(rn->v);
        long folded = tail + delta;
        if (folded == 0)
          return b->lhs;
        return binary(folded > 0 ? BinOp::Add : BinOp::Sub, b->lhs,
                      num(static_cast<double>(folded > 0 ? folded : -folded)));
      }
    }
  }
  return binary(delta > 0 ? BinOp::Add : BinOp::Sub, e,
                num(static_cast<double>(delta > 0 ? delta : -delta)));
}

StmtPtr make_stmt(Stmt s) { return std::make_shared<Stmt>(std::move(s)); }

const ReservoirDecl* Program::find_reservoir(std::string_view name) const {
  for (auto& r : reservoirs)
    if (r.name == name)
      return &r;
  return nullptr;
}
const DataDecl* Program::find_binding(std::string_view name) const {
  for (auto& b : bindings)
    if (b.name == name)
      return &b;
  return nullptr;
}
const DenseDecl* Program::find_dense(std::string_view name) const {
  for (auto& d : denses)
    if (d.name == name)
      return &d;
  return nullptr;
}

//===----------------------------------------------------------------------===//
// Printing
//===----------------------------------------------------------------------===//

namespace {

// Optional rename table; canonical() feeds one to alpha-rename binders.
struct PrintCtx {
  const std::map<std::string, std::string>* rename = nullptr;
  std::string name(const std::string& n) const {
    if (rename) {
      auto it = rename->find(n);
      if (it != rename->end())
        return it->second;
    }
    return n;
  }
};

void print_expr(std::ostringstream& os, const Expr& e, const PrintCtx& ctx,
                int parent_prec);

std::string num_text(double v) {
  if (v == static_cast<long long>(v) && std::abs(v) < 1e15) {
    return std::to_string(static_cast<long long>(v));
  }
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

int prec_of(BinOp op) {
  return (op == BinOp::Mul || op == BinOp::Div) ? 2 : 1;
}

const char* op_text(BinOp op) {
  switch (op) {
  case BinOp::Add:
    return " + ";
  case BinOp::Sub:
    return " - ";
  case BinOp::Mul:
    return " * ";
  case BinOp::Div:
    return " / ";
  }
  return "?";
}

void print_idx(std::ostringstream& os, const std::vector<ExprPtr>& idx,
               const PrintCtx& ctx) {
  os << '[';
  for (size_t i = 0; i < idx.size(); ++i) {
    if (i)
      os << ", ";
    print_expr(os, *idx[i], ctx, 0);
  }
  os << ']';
}

void print_expr(std::ostringstream& os, const Expr& e, const PrintCtx& ctx,
                int parent_prec) {
  std::visit(
      [&](auto&& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Expr::Num>) {
          os << num_text(n.v);
        } else if constexpr (std::is_same_v<T, Expr::ScalarRef>) {
          os << n.name;
        } else if constexpr (std::is_same_v<T, Expr::IterRef>) {
          os << ctx.name(n.name);
        } else if constexpr (std::is_same_v<T, Expr::TupleField>) {
          os << ctx.name(n.tuple) << '.' << n.field;
        } else if constexpr (std::is_same_v<T, Expr::BindingRead>) {
          os << n.binding << '(' << ctx.name(n.tuple) << ')';
        } else if constexpr (std::is_same_v<T, Expr::DenseRead>) {
          os << n.name;
          print_idx(os, n.idx, ctx);
        } else if constexpr (std::is_same_v<T, Expr::StorageField>) {
          if (n.split) {
            os << n.plan << '.' << n.field;
            print_idx(os, n.idx, ctx);
          } else {
            os << n.plan;
            print_idx(os, n.idx, ctx);
            os << '.' << n.field;
          }
        } else if constexpr (std::is_same_v<T, Expr::Binary>) {
          int p = prec_of(n.op);
          bool paren = p < parent_prec;
          if (paren)
            os << '(';
          print_expr(os, *n.lhs, ctx, p);
          os << op_text(n.op);
          print_expr(os, *n.rhs, ctx, p + 1); // -, / are left associative
          if (paren)
            os << ')';
        }
      },
      e.node);
}

void print_extent(std::ostringstream& os, const SymExtent& e) {
  std::visit(
      [&](auto&& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, SymExtent::Const>) {
          os << n.v;
        } else if constexpr (std::is_same_v<T, SymExtent::Param>) {
          os << n.name;
        } else if constexpr (std::is_same_v<T, SymExtent::FieldExtent>) {
          os << "extent(" << n.reservoir << '.' << n.field << ')';
        } else if constexpr (std::is_same_v<T, SymExtent::LeafCount>) {
          os << "count(" << n.plan << ')';
        } else if constexpr (std::is_same_v<T, SymExtent::CeilDiv>) {
          os << "ceil(";
          print_extent(os, *n.total);
          os << " / " << n.divisor << ')';
        }
      },
      e.v);
}

void print_value_ref(std::ostringstream& os, const ValueRef& vr,
                     const PrintCtx& ctx) {
  if (auto* iv = std::get_if<Interval>(&vr.v)) {
    os << '(';
    print_expr(os, *iv->lo, ctx, 0);
    os << ", ";
    if (iv->hi)
      print_expr(os, **iv->hi, ctx, 0);
    else
      os << "inf";
    os << ')';
  } else {
    print_expr(os, *std::get<ExprPtr>(vr.v), ctx, 0);
  }
}

void print_condition(std::ostringstream& os, const Condition& c,
                     const PrintCtx& ctx) {
  os << '.';
  if (c.fields.size() == 1) {
    os << c.fields[0];
  } else {
    os << '(';
    for (size_t i = 0; i < c.fields.size(); ++i) {
      if (i)
        os << ',';
      os << c.fields[i];
    }
    os << ')';
  }
  os << '[';
  if (c.values.size() == 1) {
    print_value_ref(os, c.values[0], ctx);
  } else {
    os << '(';
    for (size_t i = 0; i < c.values.size(); ++i) {
      if (i)
        os << ", ";
      print_value_ref(os, c.values[i], ctx);
    }
    os << ')';
  }
  os << ']';
}

void print_domain(std::ostringstream& os, const Domain& d, const PrintCtx& ctx) {
  std::visit(
      [&](auto&& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Domain::FieldValues>) {
          os << n.reservoir << '.' << n.field;
        } else if constexpr (std::is_same_v<T, Domain::NatUpTo>) {
          os << "nat(";
          print_extent(os, n.extent);
          os << ')';
        } else if constexpr (std::is_same_v<T, Domain::BlockRange>) {
          os << "block(" << ctx.name(n.outer_iter) << ", " << n.size << ", ";
          print_extent(os, n.total);
          os << ')';
        } else if constexpr (std::is_same_v<T, Domain::NStar>) {
          os << "nstar(" << n.plan << ')';
        } else if constexpr (std::is_same_v<T, Domain::LenBound>) {
          os << "len(" << n.plan << ')';
        } else if constexpr (std::is_same_v<T, Domain::WidthBound>) {
          os << "width(" << n.plan << ')';
        } else if constexpr (std::is_same_v<T, Domain::PermSlice>) {
          os << "permslice(" << n.plan << ')';
        } else if constexpr (std::is_same_v<T, Domain::PtrRange>) {
          os << "ptrrange(" << n.plan << ')';
        } else if constexpr (std::is_same_v<T, Domain::PermutedNat>) {
          os << "perm(" << n.plan << ')';
        }
      },
      d.v);
}

struct Printer {
  std::ostringstream os;
  PrintCtx ctx;
  int depth = 0;

  void indent() {
    for (int i = 0; i < depth; ++i)
      os << "  ";
  }

  void block(const Block& b) {
    os << "{\n";
    ++depth;
    for (auto& s : b.stmts)
      stmt(*s);
    --depth;
    indent();
    os << "}\n";
  }

  void stmt(const Stmt& s) {
    indent();
    std::visit(
        [&](auto&& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, ForStmt>) {
            os << "for (" << ctx.name(n.iter) << " = ";
            if (!n.descending) {
              print_expr(os, *add_const(n.lo, 1), ctx, 0);
              os << " .. ";
              print_expr(os, *n.hi, ctx, 0);
            } else {
              print_expr(os, *n.hi, ctx, 0);
              os << " downto ";
              print_expr(os, *add_const(n.lo, 1), ctx, 0);
            }
            os << ") ";
            block(n.body);
          } else if constexpr (std::is_same_v<T, ForelemTupleStmt>) {
            os << "forelem (" << ctx.name(n.tuple_var) << "; "
               << ctx.name(n.tuple_var) << " in " << n.reservoir;
            if (n.cond)
              print_condition(os, *n.cond, ctx);
            os << ") ";
            block(n.body);
          } else if constexpr (std::is_same_v<T, ForelemIndexStmt>) {
            os << (n.ordered ? "for (" : "forelem (") << ctx.name(n.iter)
               << "; " << ctx.name(n.iter) << " in ";
            print_domain(os, n.domain, ctx);
            if (n.guarded)
              os << " ?";
            os << ") ";
            block(n.body);
          } else if constexpr (std::is_same_v<T, AssignStmt>) {
            std::visit(
                [&](auto&& lv) {
                  using L = std::decay_t<decltype(lv)>;
                  if constexpr (std::is_same_v<L, LValue::Scalar>) {
                    os << lv.name;
                  } else if constexpr (std::is_same_v<L, LValue::Dense>) {
                    os << lv.name;
                    print_idx(os, lv.idx, ctx);
                  } else {
                    os << lv.binding << '(' << ctx.name(lv.tuple) << ')';
                  }
                },
                n.lhs.v);
            os << (n.accumulate ? " += " : " = ");
            print_expr(os, *n.rhs, ctx, 0);
            os << ";\n";
          } else if constexpr (std::is_same_v<T, ReservoirUnionStmt>) {
            os << n.reservoir << " = " << n.reservoir << " + (";
            for (size_t i = 0; i < n.tuple.size(); ++i) {
              if (i)
                os << ", ";
              print_expr(os, *n.tuple[i], ctx, 0);
            }
            os << ");\n";
          }
        },
        s.node);
  }

  void program(const Program& p) {
    for (auto& r : p.reservoirs) {
      os << "reservoir " << r.name << '(';
      for (size_t i = 0; i < r.schema.size(); ++i) {
        if (i)
          os << ", ";
        os << r.schema[i];
      }
      os << ");";
      if (r.join)
        os << "  # join of " << r.join->left << '.' << r.join->left_field
           << " == " << r.join->right << '.' << r.join->right_field;
      os << '\n';
    }
    for (auto& b : p.bindings)
      os << "data " << b.name << '(' << b.reservoir << ");\n";
    for (auto& d : p.denses) {
      os << "dense " << d.name << '[';
      for (size_t i = 0; i < d.extents.size(); ++i) {
        if (i)
          os << ", ";
        print_extent(os, d.extents[i]);
      }
      os << "];\n";
    }
    for (auto& s : p.body.stmts)
      stmt(*s);
  }
};

// Collects binder names (loop iterators and tuple variables) in order of
// first appearance, for alpha renaming.
void collect_binders(const Block& b, std::vector<std::string>& out) {
  for (auto& sp : b.stmts) {
    std::visit(
        [&](auto&& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, ForStmt>) {
            out.push_back(n.iter);
            collect_binders(n.body, out);
          } else if constexpr (std::is_same_v<T, ForelemTupleStmt>) {
            out.push_back(n.tuple_var);
            collect_binders(n.body, out);
          } else if constexpr (std::is_same_v<T, ForelemIndexStmt>) {
            out.push_back(n.iter);
            collect_binders(n.body, out);
          }
        },
        sp->node);
  }
}

} // namespace

std::string pretty(const Program& p) {
  Printer pr;
  pr.program(p);
  return pr.os.str();
}

std::string pretty(const Expr& e) {
  std::ostringstream os;
  print_expr(os, e, PrintCtx{}, 0);
  return os.str();
}

std::string to_string(const SymExtent& e) {
  std::ostringstream os;
  print_extent(os, e);
  return os.str();
}

std::map<std::string, std::string> binder_renames(const Program& p) {
  std::vector<std::string> binders;
  collect_binders(p.body, binders);
  std::map<std::string, std::string> rename;
  int n = 0;
  for (auto& b : binders)
    if (!rename.count(b))
      rename[b] = "%" + std::to_string(n++);
  return rename;
}

std::string canonical(const Program& p) {
  auto rename = binder_renames(p);
  Printer pr;
  pr.ctx.rename = &rename;
  pr.program(p);
  return pr.os.str();
}

bool structurally_equal(const Program& a, const Program& b) {
  return pretty(a) == pretty(b);
}

//===----------------------------------------------------------------------===//
// Builtin kernels
//===----------------------------------------------------------------------===//

KernelKind kernel_kind_from_name(std::string_view name) {
  std::string low(name);
  std::transform(low.begin(), low.end(), low.begin(), ::tolower);
  if (low == "spmv")
    return KernelKind::SpMV;
  if (low == "spmm")
    return KernelKind::SpMM;
  if (low == "trsv")
    return KernelKind::TrSv;
  throw InputError("unknown kernel: " + std::string(name));
}

std::string to_string(KernelKind k) {
  switch (k) {
  case KernelKind::SpMV:
    return "spmv";
  case KernelKind::SpMM:
    return "spmm";
  case KernelKind::TrSv:
    return "trsv";
  }
  return "?";
}

KernelSpec builtin_kernel(KernelKind kind, int k) {
  KernelSpec spec;
  spec.kind = kind;
  spec.k = k;
  Program p;
  p.reservoirs.push_back({"T", {"row", "col"}, std::nullopt});
  p.bindings.push_back({"A", "T"});

  auto accum = [](std::string dense, std::vector<ExprPtr> idx, ExprPtr rhs) {
    return make_stmt(Stmt{AssignStmt{
        LValue{LValue::Dense{std::move(dense), std::move(idx)}}, true,
        std::move(rhs)}});
  };

  switch (kind) {
  case KernelKind::SpMV: {
    p.denses.push_back({"B", {SymExtent::param("NC")}});
    p.denses.push_back({"C", {SymExtent::param("NR")}});
    Block body;
    body.stmts.push_back(accum(
        "C", {tuple_field("t", "row")},
        binary(BinOp::Mul, dense_read("B", {tuple_field("t", "col")}),
               binding_read("A", "t"))));
    p.body.stmts.push_back(
        make_stmt(Stmt{ForelemTupleStmt{"t", "T", std::nullopt, body}}));
    spec.inputs = {"B"};
    spec.outputs = {"C"};
    break;
  }
  case KernelKind::SpMM: {
    if (k < 1)
      throw InputError("spmm requires k >= 1");
    p.denses.push_back({"B", {SymExtent::param("NC"), SymExtent::param("K")}});
    p.denses.push_back({"C", {SymExtent::param("NR"), SymExtent::param("K")}});
    Block inner;
    inner.stmts.push_back(accum(
        "C", {tuple_field("t", "row"), iter_ref("j")},
        binary(BinOp::Mul,
               dense_read("B", {tuple_field("t", "col"), iter_ref("j")}),
               binding_read("A", "t"))));
    Block body;
    body.stmts.push_back(make_stmt(
        Stmt{ForStmt{"j", num(0), scalar_ref("K"), false, inner}}));
    p.body.stmts.push_back(
        make_stmt(Stmt{ForelemTupleStmt{"t", "T", std::nullopt, body}}));
    spec.inputs = {"B"};
    spec.outputs = {"C"};
    break;
  }
  case KernelKind::TrSv: {
    p.denses.push_back({"b", {SymExtent::param("NR")}});
    p.denses.push_back({"x", {SymExtent::param("NR")}});
    // x[i] = b[i] / A(t) over the diagonal subset.
    Block diag;
    diag.stmts.push_back(make_stmt(Stmt{AssignStmt{
        LValue{LValue::Dense{"x", {iter_ref("i")}}}, false,
        binary(BinOp::Div, dense_read("b", {iter_ref("i")}),
               binding_read("A", "t"))}}));
    Condition diag_cond;
    diag_cond.fields = {"col", "row"};
    diag_cond.values = {ValueRef{iter_ref("i")}, ValueRef{iter_ref("i")}};
    // b[t.row] = b[t.row] - A(t) * x[i] over column i.
    Block subst;
    subst.stmts.push_back(make_stmt(Stmt{AssignStmt{
        LValue{LValue::Dense{"b", {tuple_field("t", "row")}}}, false,
        binary(BinOp::Sub, dense_read("b", {tuple_field("t", "row")}),
               binary(BinOp::Mul, binding_read("A", "t"),
                      dense_read("x", {iter_ref("i")})))}}));
    Condition col_cond;
    col_cond.fields = {"col"};
    col_cond.values = {ValueRef{iter_ref("i")}};
    Block outer;
    outer.stmts.push_back(
        make_stmt(Stmt{ForelemTupleStmt{"t", "T", diag_cond, diag}}));
    outer.stmts.push_back(
        make_stmt(Stmt{ForelemTupleStmt{"t", "T", col_cond, subst}}));
    p.body.stmts.push_back(make_stmt(
        Stmt{ForStmt{"i", num(0), scalar_ref("NR"), true, outer}}));
    spec.inputs = {"b"};
    spec.outputs = {"x"};
    break;
  }
  }
  // Parameter references in bounds are stored as ScalarRef by the parser; the
  // kernels above use the same convention so built and parsed ASTs agree.
  spec.program = std::move(p);
  validate(spec.program);
  return spec;
}

//===----------------------------------------------------------------------===//
// free_fields
//===----------------------------------------------------------------------===//

namespace {

struct FieldScan {
  const Program& p;
  const std::string& reservoir;
  std::set<FieldName> used;
  // tuple var -> reservoir
  std::map<std::string, std::string> tuples;

  void expr(const Expr& e) {
    std::visit(
        [&](auto&& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, Expr::TupleField>) {
            auto it = tuples.find(n.tuple);
            if (it != tuples.end() && it->second == reservoir)
              used.insert(n.field);
          } else if constexpr (std::is_same_v<T, Expr::DenseRead>) {
            for (auto& i : n.idx)
              expr(*i);
          } else if constexpr (std::is_same_v<T, Expr::StorageField>) {
            for (auto& i : n.idx)
              expr(*i);
          } else if constexpr (std::is_same_v<T, Expr::Binary>) {
            expr(*n.lhs);
            expr(*n.rhs);
          }
        },
        e.node);
  }

  void value_ref(const ValueRef& vr) {
    if (auto* iv = std::get_if<Interval>(&vr.v)) {
      expr(*iv->lo);
      if (iv->hi)
        expr(**iv->hi);
    } else {
      expr(*std::get<ExprPtr>(vr.v));
    }
  }

  void block(const Block& b) {
    for (auto& sp : b.stmts)
      stmt(*sp);
  }

  void stmt(const Stmt& s) {
    std::visit(
        [&](auto&& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, ForStmt>) {
            expr(*n.lo);
            expr(*n.hi);
            block(n.body);
          } else if constexpr (std::is_same_v<T, ForelemTupleStmt>) {
            if (n.cond) {
              if (n.reservoir == reservoir)
                for (auto& f : n.cond->fields)
                  used.insert(f);
              for (auto& v : n.cond->values)
                value_ref(v);
            }
            auto saved = tuples;
            tuples[n.tuple_var] = n.reservoir;
            block(n.body);
            tuples = saved;
          } else if constexpr (std::is_same_v<T, ForelemIndexStmt>) {
            block(n.body);
          } else if constexpr (std::is_same_v<T, AssignStmt>) {
            if (auto* d = std::get_if<LValue::Dense>(&n.lhs.v))
              for (auto& i : d->idx)
                expr(*i);
            expr(*n.rhs);
          } else if constexpr (std::is_same_v<T, ReservoirUnionStmt>) {
            for (auto& e : n.tuple)
              expr(*e);
          }
        },
        s.node);
  }
};

} // namespace

std::set<FieldName> free_fields(const Program& p, const std::string& reservoir) {
  if (!p.find_reservoir(reservoir))
    throw InputError("unknown reservoir: " + reservoir);
  FieldScan scan{p, reservoir};
  scan.block(p.body);
  return scan.used;
}

//===----------------------------------------------------------------------===//
// Validation
//===----------------------------------------------------------------------===//

namespace {

struct Validator {
  const Program& p;
  std::map<std::string, std::string> tuples; // tuple var -> reservoir
  std::set<std::string> iters;
  std::set<std::string> scalars; // assigned so far

  [[noreturn]] void fail(const std::string& msg) const {
    throw InternalError("scope violation: " + msg);
  }

  void check_name_free(const std::string& n) const {
    if (tuples.count(n) || iters.count(n))
      fail("rebinding of '" + n + "'");
    if (p.find_reservoir(n) || p.find_binding(n) || p.find_dense(n))
      fail("'" + n + "' shadows a declaration");
  }

  void expr(const Expr& e, bool index_context) {
    std::visit(
        [&](auto&& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, Expr::ScalarRef>) {
            // Bound-context references to declared extent parameters (N, K)
            // resolve at execution time; everything else must be assigned.
            if (!scalars.count(n.name) && !index_context)
              fail("scalar '" + n.name + "' read before assignment");
          } else if constexpr (std::is_same_v<T, Expr::IterRef>) {
            if (!iters.count(n.name))
              fail("unbound iterator '" + n.name + "'");
          } else if constexpr (std::is_same_v<T, Expr::TupleField>) {
            auto it = tuples.find(n.tuple);
            if (it == tuples.end())
              fail("unbound tuple variable '" + n.tuple + "'");
            auto* r = p.find_reservoir(it->second);
            if (!r ||
                std::find(r->schema.begin(), r->schema.end(), n.field) ==
                    r->schema.end())
              fail("field '" + n.field + "' not in schema of " + it->second);
          } else if constexpr (std::is_same_v<T, Expr::BindingRead>) {
            auto* b = p.find_binding(n.binding);
            if (!b)
              fail("unknown data binding '" + n.binding + "'");
            auto it = tuples.find(n.tuple);
            if (it == tuples.end())
              fail("unbound tuple variable '" + n.tuple + "'");
            if (b->reservoir != it->second)
              fail("binding '" + n.binding + "' is not over reservoir " +
                   it->second);
          } else if constexpr (std::is_same_v<T, Expr::DenseRead>) {
            auto* d = p.find_dense(n.name);
            if (!d)
              fail("unknown dense operand '" + n.name + "'");
            if (d->extents.size() != n.idx.size())
              fail("dense '" + n.name + "' indexed with wrong arity");
            for (auto& i : n.idx)
              expr(*i, true);
          } else if constexpr (std::is_same_v<T, Expr::StorageField>) {
            for (auto& i : n.idx)
              expr(*i, true);
          } else if constexpr (std::is_same_v<T, Expr::Binary>) {
            expr(*n.lhs, index_context);
            expr(*n.rhs, index_context);
          }
        },
        e.node);
  }

  void condition(const Condition& c, const std::string& reservoir) {
    auto* r = p.find_reservoir(reservoir);
    if (!r)
      fail("unknown reservoir '" + reservoir + "'");
    if (c.fields.size() != c.values.size())
      fail("condition arity mismatch on " + reservoir);
    for (auto& f : c.fields)
      if (std::find(r->schema.begin(), r->schema.end(), f) == r->schema.end())
        fail("condition field '" + f + "' not in schema of " + reservoir);
    for (auto& v : c.values) {
      if (auto* iv = std::get_if<Interval>(&v.v)) {
        expr(*iv->lo, true);
        if (iv->hi)
          expr(**iv->hi, true);
      } else {
        expr(*std::get<ExprPtr>(v.v), true);
      }
    }
  }

  void block(const Block& b) {
    for (auto& sp : b.stmts)
      stmt(*sp);
  }

  void stmt(const Stmt& s) {
    std::visit(
        [&](auto&& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, ForStmt>) {
            expr(*n.lo, true);
            expr(*n.hi, true);
            check_name_free(n.iter);
            iters.insert(n.iter);
            block(n.body);
            iters.erase(n.iter);
          } else if constexpr (std::is_same_v<T, ForelemTupleStmt>) {
            if (!p.find_reservoir(n.reservoir))
              fail("unknown reservoir '" + n.reservoir + "'");
            if (n.cond)
              condition(*n.cond, n.reservoir);
            check_name_free(n.tuple_var);
            tuples[n.tuple_var] = n.reservoir;
            block(n.body);
            tuples.erase(n.tuple_var);
          } else if constexpr (std::is_same_v<T, ForelemIndexStmt>) {
            if (auto* fv = std::get_if<Domain::FieldValues>(&n.domain.v)) {
              auto* r = p.find_reservoir(fv->reservoir);
              if (!r)
                fail("unknown reservoir '" + fv->reservoir + "'");
              if (std::find(r->schema.begin(), r->schema.end(), fv->field) ==
                  r->schema.end())
                fail("field '" + fv->field + "' not in schema of " +
                     fv->reservoir);
            } else if (auto* br = std::get_if<Domain::BlockRange>(&n.domain.v)) {
              if (!iters.count(br->outer_iter))
                fail("unbound block iterator '" + br->outer_iter + "'");
            }
            check_name_free(n.iter);
            iters.insert(n.iter);
            block(n.body);
            iters.erase(n.iter);
          } else if constexpr (std::is_same_v<T, AssignStmt>) {
            std::visit(
                [&](auto&& lv) {
                  using L = std::decay_t<decltype(lv)>;
                  if constexpr (std::is_same_v<L, LValue::Scalar>) {
                    if (n.accumulate && !scalars.count(lv.name))
                      fail("scalar '" + lv.name + "' accumulated before init");
                    scalars.insert(lv.name);
                  } else if constexpr (std::is_same_v<L, LValue::Dense>) {
                    auto* d = p.find_dense(lv.name);
                    if (!d)
                      fail("unknown dense operand '" + lv.name + "'");
                    if (d->extents.size() != lv.idx.size())
                      fail("dense '" + lv.name + "' indexed with wrong arity");
                    for (auto& i : lv.idx)
                      expr(*i, true);
                  } else {
                    if (!p.find_binding(lv.binding))
                      fail("unknown data binding '" + lv.binding + "'");
                    if (!tuples.count(lv.tuple))
                      fail("unbound tuple variable '" + lv.tuple + "'");
                  }
                },
                n.lhs.v);
            expr(*n.rhs, false);
          } else if constexpr (std::is_same_v<T, ReservoirUnionStmt>) {
            auto* r = p.find_reservoir(n.reservoir);
            if (!r)
              fail("unknown reservoir '" + n.reservoir + "'");
            if (r->schema.size() != n.tuple.size())
              fail("reservoir union arity mismatch on " + n.reservoir);
            for (auto& e : n.tuple)
              expr(*e, true);
          }
        },
        s.node);
  }

  void run() {
    std::set<std::string> decl_names;
    for (auto& r : p.reservoirs) {
      if (!decl_names.insert(r.name).second)
        fail("duplicate declaration '" + r.name + "'");
      if (r.schema.empty())
        fail("reservoir '" + r.name + "' has empty schema");
      std::set<FieldName> fields;
      for (auto& f : r.schema) {
        if (f.empty())
          fail("empty field name in " + r.name);
        if (!fields.insert(f).second)
          fail("duplicate field '" + f + "' in " + r.name);
      }
    }
    for (auto& b : p.bindings) {
      if (!decl_names.insert(b.name).second)
        fail("duplicate declaration '" + b.name + "'");
      if (!p.find_reservoir(b.reservoir))
        fail("binding '" + b.name + "' over unknown reservoir");
    }
    for (auto& d : p.denses)
      if (!decl_names.insert(d.name).second)
        fail("duplicate declaration '" + d.name + "'");
    block(p.body);
  }
};

} // namespace

void validate(const Program& p) {
  Validator v{p};
  v.run();
}

} // namespace forelem::ir
