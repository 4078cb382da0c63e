#include "forelem/transform.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace forelem::transform {

using namespace ir;

namespace {

//===----------------------------------------------------------------------===//
// Generic walking and rewriting
//===----------------------------------------------------------------------===//

using ExprFn = std::function<ExprPtr(const ExprPtr&)>;

ExprPtr rewrite_expr(const ExprPtr& e, const ExprFn& fn) {
  Expr copy = *e;
  std::visit(
      [&](auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Expr::DenseRead> ||
                      std::is_same_v<T, Expr::StorageField>) {
          for (auto& i : n.idx)
            i = rewrite_expr(i, fn);
        } else if constexpr (std::is_same_v<T, Expr::Binary>) {
          n.lhs = rewrite_expr(n.lhs, fn);
          n.rhs = rewrite_expr(n.rhs, fn);
        }
      },
      copy.node);
  ExprPtr rebuilt = std::make_shared<Expr>(std::move(copy));
  if (ExprPtr replaced = fn(rebuilt))
    return replaced;
  return rebuilt;
}

ValueRef rewrite_value_ref(const ValueRef& v, const ExprFn& fn) {
  if (auto* iv = std::get_if<Interval>(&v.v)) {
    Interval out;
    out.lo = rewrite_expr(iv->lo, fn);
    if (iv->hi)
      out.hi = rewrite_expr(*iv->hi, fn);
    return ValueRef{std::move(out)};
  }
  return ValueRef{rewrite_expr(std::get<ExprPtr>(v.v), fn)};
}

Block rewrite_exprs_in_block(const Block& b, const ExprFn& fn);

Stmt rewrite_exprs_in_stmt(const Stmt& s, const ExprFn& fn) {
  Stmt copy = s;
  std::visit(
      [&](auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, ForStmt>) {
          n.lo = rewrite_expr(n.lo, fn);
          n.hi = rewrite_expr(n.hi, fn);
          n.body = rewrite_exprs_in_block(n.body, fn);
        } else if constexpr (std::is_same_v<T, ForelemTupleStmt>) {
          if (n.cond)
            for (auto& v : n.cond->values)
              v = rewrite_value_ref(v, fn);
          n.body = rewrite_exprs_in_block(n.body, fn);
        } else if constexpr (std::is_same_v<T, ForelemIndexStmt>) {
          n.body = rewrite_exprs_in_block(n.body, fn);
        } else if constexpr (std::is_same_v<T, AssignStmt>) {
          if (auto* d = std::get_if<LValue::Dense>(&n.lhs.v))
            for (auto& i : d->idx)
              i = rewrite_expr(i, fn);
          n.rhs = rewrite_expr(n.rhs, fn);
        } else if constexpr (std::is_same_v<T, ReservoirUnionStmt>) {
          for (auto& e : n.tuple)
            e = rewrite_expr(e, fn);
        }
      },
      copy.node);
  return copy;
}

Block rewrite_exprs_in_block(const Block& b, const ExprFn& fn) {
  Block out;
  for (auto& sp : b.stmts)
    out.stmts.push_back(make_stmt(rewrite_exprs_in_stmt(*sp, fn)));
  return out;
}

// Substitutes iterator references by expressions.
ExprFn iter_subst(std::map<std::string, ExprPtr> map) {
  return [map = std::move(map)](const ExprPtr& e) -> ExprPtr {
    if (auto* r = std::get_if<Expr::IterRef>(&e->node)) {
      auto it = map.find(r->name);
      if (it != map.end())
        return it->second;
    }
    return nullptr;
  };
}

// Preorder statement walk with enclosing-loop context. `fn` returns true to
// stop the walk.
struct Enclosing {
  const Stmt* stmt;
  std::string iter; // loop iterator or tuple variable
};

bool walk_stmts(const Block& b, std::vector<Enclosing>& ctx,
                const std::function<bool(const Stmt&, const std::vector<Enclosing>&)>& fn) {
  for (auto& sp : b.stmts) {
    if (fn(*sp, ctx))
      return true;
    bool stop = false;
    std::visit(
        [&](auto&& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, ForStmt>) {
            ctx.push_back({sp.get(), n.iter});
            stop = walk_stmts(n.body, ctx, fn);
            ctx.pop_back();
          } else if constexpr (std::is_same_v<T, ForelemTupleStmt>) {
            ctx.push_back({sp.get(), n.tuple_var});
            stop = walk_stmts(n.body, ctx, fn);
            ctx.pop_back();
          } else if constexpr (std::is_same_v<T, ForelemIndexStmt>) {
            ctx.push_back({sp.get(), n.iter});
            stop = walk_stmts(n.body, ctx, fn);
            ctx.pop_back();
          }
        },
        sp->node);
    if (stop)
      return true;
  }
  return false;
}

bool walk_stmts(const Program& p,
                const std::function<bool(const Stmt&, const std::vector<Enclosing>&)>& fn) {
  std::vector<Enclosing> ctx;
  return walk_stmts(p.body, ctx, fn);
}

// Replaces the statement identified by pointer with the produced statements.
Block replace_stmt(const Block& b, const Stmt* target,
                   const std::function<std::vector<StmtPtr>(const Stmt&)>& make) {
  Block out;
  for (auto& sp : b.stmts) {
    if (sp.get() == target) {
      for (auto& r : make(*sp))
        out.stmts.push_back(r);
      continue;
    }
    Stmt copy = *sp;
    std::visit(
        [&](auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, ForStmt> ||
                        std::is_same_v<T, ForelemTupleStmt> ||
                        std::is_same_v<T, ForelemIndexStmt>)
            n.body = replace_stmt(n.body, target, make);
        },
        copy.node);
    out.stmts.push_back(make_stmt(std::move(copy)));
  }
  return out;
}

//===----------------------------------------------------------------------===//
// Name management
//===----------------------------------------------------------------------===//

void collect_expr_names(const Expr& e, std::set<std::string>& out) {
  std::visit(
      [&](auto&& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Expr::ScalarRef>) {
          out.insert(n.name);
        } else if constexpr (std::is_same_v<T, Expr::DenseRead> ||
                             std::is_same_v<T, Expr::StorageField>) {
          for (auto& i : n.idx)
            collect_expr_names(*i, out);
        } else if constexpr (std::is_same_v<T, Expr::Binary>) {
          collect_expr_names(*n.lhs, out);
          collect_expr_names(*n.rhs, out);
        }
      },
      e.node);
}

std::set<std::string> used_names(const TransformResult& in) {
  std::set<std::string> names;
  const Program& p = in.program;
  for (auto& r : p.reservoirs) {
    names.insert(r.name);
    for (auto& f : r.schema)
      names.insert(f);
  }
  for (auto& b : p.bindings)
    names.insert(b.name);
  for (auto& d : p.denses) {
    names.insert(d.name);
    for (auto& e : d.extents)
      if (auto* pa = std::get_if<SymExtent::Param>(&e.v))
        names.insert(pa->name);
  }
  for (auto& pl : in.plans)
    names.insert(pl.name);
  walk_stmts(p, [&](const Stmt& s, const std::vector<Enclosing>&) {
    std::visit(
        [&](auto&& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, ForStmt>) {
            names.insert(n.iter);
            collect_expr_names(*n.lo, names);
            collect_expr_names(*n.hi, names);
          } else if constexpr (std::is_same_v<T, ForelemTupleStmt>) {
            names.insert(n.tuple_var);
          } else if constexpr (std::is_same_v<T, ForelemIndexStmt>) {
            names.insert(n.iter);
          } else if constexpr (std::is_same_v<T, AssignStmt>) {
            if (auto* sc = std::get_if<LValue::Scalar>(&n.lhs.v))
              names.insert(sc->name);
            collect_expr_names(*n.rhs, names);
          }
        },
        s.node);
    return false;
  });
  return names;
}

std::string fresh_name(std::set<std::string>& used,
                       const std::vector<std::string>& prefs) {
  for (auto& c : prefs)
    if (!used.count(c)) {
      used.insert(c);
      return c;
    }
  const std::string& base = prefs.front();
  for (int n = 2;; ++n) {
    std::string c = base + std::to_string(n);
    if (!used.count(c)) {
      used.insert(c);
      return c;
    }
  }
}

//===----------------------------------------------------------------------===//
// Common queries
//===----------------------------------------------------------------------===//

bool program_is_transformable(const Program& p, std::string& why) {
  bool bad = false;
  walk_stmts(p, [&](const Stmt& s, const std::vector<Enclosing>&) {
    if (std::holds_alternative<ReservoirUnionStmt>(s.node)) {
      why = "program mutates a tuple reservoir";
      bad = true;
      return true;
    }
    if (auto* a = std::get_if<AssignStmt>(&s.node))
      if (std::holds_alternative<LValue::BindingWrite>(a->lhs.v)) {
        why = "program writes through an address function";
        bad = true;
        return true;
      }
    return false;
  });
  return !bad;
}

const StoragePlan* find_plan(const std::vector<StoragePlan>& plans,
                             const std::string& name) {
  for (auto& p : plans)
    if (p.name == name)
      return &p;
  return nullptr;
}

StoragePlan* find_plan(std::vector<StoragePlan>& plans, const std::string& name) {
  for (auto& p : plans)
    if (p.name == name)
      return &p;
  return nullptr;
}

// First reservoir loop in preorder, optionally with its enclosing loops.
struct LoopFind {
  const Stmt* stmt = nullptr;
  const ForelemTupleStmt* loop = nullptr;
  std::vector<Enclosing> ctx;
};

std::optional<LoopFind> find_tuple_loop(const Program& p) {
  std::optional<LoopFind> out;
  walk_stmts(p, [&](const Stmt& s, const std::vector<Enclosing>& ctx) {
    if (auto* t = std::get_if<ForelemTupleStmt>(&s.node)) {
      out = LoopFind{&s, t, ctx};
      return true;
    }
    return false;
  });
  return out;
}

bool expr_uses_iter(const Expr& e, const std::string& iter) {
  bool found = false;
  std::visit(
      [&](auto&& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Expr::IterRef>) {
          found = n.name == iter;
        } else if constexpr (std::is_same_v<T, Expr::DenseRead> ||
                             std::is_same_v<T, Expr::StorageField>) {
          for (auto& i : n.idx)
            found = found || expr_uses_iter(*i, iter);
        } else if constexpr (std::is_same_v<T, Expr::Binary>) {
          found = expr_uses_iter(*n.lhs, iter) || expr_uses_iter(*n.rhs, iter);
        }
      },
      e.node);
  return found;
}

bool value_ref_is_iter(const ValueRef& v, std::string& iter_out) {
  if (auto* e = std::get_if<ExprPtr>(&v.v))
    if (auto* r = std::get_if<Expr::IterRef>(&(*e)->node)) {
      iter_out = r->name;
      return true;
    }
  return false;
}

// Bindings read through `tuple_var` anywhere in the block.
void bindings_read(const Block& b, const std::string& tuple_var,
                   std::set<std::string>& out);

void bindings_read_expr(const Expr& e, const std::string& tuple_var,
                        std::set<std::string>& out) {
  std::visit(
      [&](auto&& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Expr::BindingRead>) {
          if (n.tuple == tuple_var)
            out.insert(n.binding);
        } else if constexpr (std::is_same_v<T, Expr::DenseRead> ||
                             std::is_same_v<T, Expr::StorageField>) {
          for (auto& i : n.idx)
            bindings_read_expr(*i, tuple_var, out);
        } else if constexpr (std::is_same_v<T, Expr::Binary>) {
          bindings_read_expr(*n.lhs, tuple_var, out);
          bindings_read_expr(*n.rhs, tuple_var, out);
        }
      },
      e.node);
}

void bindings_read(const Block& b, const std::string& tuple_var,
                   std::set<std::string>& out) {
  for (auto& sp : b.stmts) {
    std::visit(
        [&](auto&& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, ForStmt> ||
                        std::is_same_v<T, ForelemIndexStmt>) {
            bindings_read(n.body, tuple_var, out);
          } else if constexpr (std::is_same_v<T, ForelemTupleStmt>) {
            if (n.cond)
              for (auto& v : n.cond->values)
                if (auto* e = std::get_if<ExprPtr>(&v.v))
                  bindings_read_expr(**e, tuple_var, out);
            bindings_read(n.body, tuple_var, out);
          } else if constexpr (std::is_same_v<T, AssignStmt>) {
            if (auto* d = std::get_if<LValue::Dense>(&n.lhs.v))
              for (auto& i : d->idx)
                bindings_read_expr(*i, tuple_var, out);
            bindings_read_expr(*n.rhs, tuple_var, out);
          }
        },
        sp->node);
  }
}

std::string next_plan_name(const std::vector<StoragePlan>& plans) {
  if (plans.empty())
    return "PA";
  return "PA" + std::to_string(plans.size() + 1);
}

} // namespace

//===----------------------------------------------------------------------===//
// Pipeline text form
//===----------------------------------------------------------------------===//

std::string to_string(const Pass& p) {
  auto args = [](std::initializer_list<std::string> xs) {
    std::string s = "(";
    bool first = true;
    for (auto& x : xs) {
      if (!first)
        s += ",";
      s += x;
      first = false;
    }
    return s + ")";
  };
  switch (p.kind) {
  case PassKind::Orthogonalize: {
    std::string s = "orth(";
    for (size_t i = 0; i < p.fields.size(); ++i) {
      if (i)
        s += ",";
      s += p.fields[i];
    }
    return s + ")";
  }
  case PassKind::Encapsulate:
    return p.loop_a.empty() ? "encap" : "encap(" + p.loop_a + ")";
  case PassKind::UndoOrthogonalize:
    return "undo_orth(" + p.fields.at(0) + ")";
  case PassKind::MaterializeIndependent:
    return "matindep";
  case PassKind::MaterializeDependent:
    return "matdep";
  case PassKind::HorizontalReduce:
    return p.fields.empty() ? "hreduce" : "hreduce(" + p.fields[0] + ")";
  case PassKind::StructureSplit:
    return "split";
  case PassKind::NStarMaterialize:
    return p.mode == PadMode::Padded ? "nstar(padded)" : "nstar(compact)";
  case PassKind::NStarSort:
    return "nstarsort";
  case PassKind::DimReduce:
    return "dimreduce";
  case PassKind::LoopCollapse:
    return "collapse";
  case PassKind::LoopInterchange:
    if (p.loop_a.empty())
      return "interchange";
    return "interchange" + args({p.loop_a, p.loop_b});
  case PassKind::LoopBlock:
    if (p.loop_a.empty())
      return "block(" + std::to_string(p.block_size) + ")";
    return "block" + args({p.loop_a, std::to_string(p.block_size)});
  }
  return "?";
}

std::string to_string(const Pipeline& p) {
  std::string s;
  for (size_t i = 0; i < p.passes.size(); ++i) {
    if (i)
      s += ",";
    s += to_string(p.passes[i]);
  }
  return s;
}

Pipeline parse_pipeline(std::string_view text) {
  Pipeline out;
  size_t i = 0;
  auto skip_ws = [&] {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i])))
      ++i;
  };
  skip_ws();
  while (i < text.size()) {
    std::string name;
    while (i < text.size() &&
           (std::isalnum(static_cast<unsigned char>(text[i])) ||
            text[i] == '_'))
      name += text[i++];
    if (name.empty())
      throw InputError("bad pipeline text near position " + std::to_string(i));
    std::vector<std::string> args;
    skip_ws();
    if (i < text.size() && text[i] == '(') {
      ++i;
      std::string arg;
      while (i < text.size() && text[i] != ')') {
        if (text[i] == ',') {
          args.push_back(arg);
          arg.clear();
        } else if (!std::isspace(static_cast<unsigned char>(text[i]))) {
          arg += text[i];
        }
        ++i;
      }
      if (i == text.size())
        throw InputError("unterminated pass arguments in pipeline");
      ++i;
      args.push_back(arg);
    }
    Pass p;
    auto want = [&](size_t lo, size_t hi) {
      if (args.size() < lo || args.size() > hi)
        throw InputError("pass '" + name + "' given " +
                         std::to_string(args.size()) + " argument(s)");
    };
    if (name == "orth") {
      want(1, 8);
      p.kind = PassKind::Orthogonalize;
      p.fields = args;
    } else if (name == "encap") {
      want(0, 1);
      p.kind = PassKind::Encapsulate;
      if (!args.empty())
        p.loop_a = args[0];
    } else if (name == "undo_orth") {
      want(1, 1);
      p.kind = PassKind::UndoOrthogonalize;
      p.fields = args;
    } else if (name == "matindep") {
      want(0, 0);
      p.kind = PassKind::MaterializeIndependent;
    } else if (name == "matdep") {
      want(0, 0);
      p.kind = PassKind::MaterializeDependent;
    } else if (name == "hreduce") {
      want(0, 1);
      p.kind = PassKind::HorizontalReduce;
      p.fields = args;
    } else if (name == "split") {
      want(0, 0);
      p.kind = PassKind::StructureSplit;
    } else if (name == "nstar") {
      want(1, 1);
      p.kind = PassKind::NStarMaterialize;
      if (args[0] == "padded")
        p.mode = PadMode::Padded;
      else if (args[0] == "compact")
        p.mode = PadMode::Compact;
      else
        throw InputError("nstar mode must be 'padded' or 'compact'");
    } else if (name == "nstarsort") {
      want(0, 0);
      p.kind = PassKind::NStarSort;
    } else if (name == "dimreduce") {
      want(0, 0);
      p.kind = PassKind::DimReduce;
    } else if (name == "collapse") {
      want(0, 0);
      p.kind = PassKind::LoopCollapse;
    } else if (name == "interchange") {
      want(0, 2);
      p.kind = PassKind::LoopInterchange;
      if (args.size() == 1)
        throw InputError("interchange takes zero or two loop names");
      if (args.size() == 2) {
        p.loop_a = args[0];
        p.loop_b = args[1];
      }
    } else if (name == "block") {
      want(1, 2);
      p.kind = PassKind::LoopBlock;
      try {
        if (args.size() == 2) {
          p.loop_a = args[0];
          p.block_size = std::stol(args[1]);
        } else {
          p.block_size = std::stol(args[0]);
        }
      } catch (const std::exception&) {
        throw InputError("block size must be an integer");
      }
    } else {
      throw InputError("unknown pass '" + name + "'");
    }
    out.passes.push_back(std::move(p));
    skip_ws();
    if (i < text.size()) {
      if (text[i] != ',')
        throw InputError("expected ',' between passes");
      ++i;
      skip_ws();
    }
  }
  return out;
}

//===----------------------------------------------------------------------===//
// Plan canonical text
//===----------------------------------------------------------------------===//

std::string canonical(const StoragePlan& p) {
  std::ostringstream os;
  os << p.name << '|' << p.reservoir << '|';
  for (auto& l : p.levels) {
    switch (l.kind) {
    case GroupLevel::Kind::Value:
      os << 'v';
      break;
    case GroupLevel::Kind::BlockOuter:
      os << 'B';
      break;
    case GroupLevel::Kind::BlockLocal:
      os << 'b';
      break;
    }
    os << l.iter << ':';
    for (auto& f : l.fields)
      os << f << '.';
    if (l.block_size)
      os << '/' << l.block_size;
    os << ';';
  }
  os << '|';
  for (auto& f : p.leaf_fields)
    os << (f.is_binding ? '$' : '.') << f.name;
  os << '|';
  os << (p.nstar == StoragePlan::NStarState::Symbolic  ? 's'
         : p.nstar == StoragePlan::NStarState::Padded ? 'p'
                                                       : 'c');
  os << (p.split ? 'S' : '-') << (p.sorted ? 'P' : '-')
     << (p.position_major ? 'M' : '-') << (p.dim_reduced ? 'D' : '-');
  return os.str();
}

//===----------------------------------------------------------------------===//
// Passes
//===----------------------------------------------------------------------===//

PassOutcome orthogonalize(const TransformResult& in,
                          const std::vector<FieldName>& fields) {
  if (fields.empty())
    return PassOutcome::failure("orthogonalization needs at least one field");
  auto found = find_tuple_loop(in.program);
  if (!found)
    return PassOutcome::failure("no reservoir loop to orthogonalize");
  const ForelemTupleStmt& loop = *found->loop;
  const ReservoirDecl* res = in.program.find_reservoir(loop.reservoir);
  std::set<FieldName> listed;
  for (auto& f : fields) {
    if (std::find(res->schema.begin(), res->schema.end(), f) ==
        res->schema.end())
      return PassOutcome::failure("field '" + f + "' not in schema of " +
                                  loop.reservoir);
    if (!listed.insert(f).second)
      return PassOutcome::failure("field '" + f + "' listed twice");
  }
  if (loop.cond)
    for (auto& f : loop.cond->fields)
      if (listed.count(f))
        return PassOutcome::failure("loop already conditioned on field '" + f +
                                    "'");

  TransformResult out = in;
  std::set<std::string> names = used_names(in);
  std::vector<std::string> iters;
  for (size_t n = 0; n < fields.size(); ++n)
    iters.push_back(fresh_name(names, {"i", "j", "u", "v", "w"}));

  out.program.body = replace_stmt(
      in.program.body, found->stmt, [&](const Stmt& s) -> std::vector<StmtPtr> {
        ForelemTupleStmt inner = std::get<ForelemTupleStmt>(s.node);
        Condition cond = inner.cond ? *inner.cond : Condition{};
        for (size_t n = 0; n < fields.size(); ++n) {
          cond.fields.push_back(fields[n]);
          cond.values.push_back(ValueRef{iter_ref(iters[n])});
        }
        inner.cond = std::move(cond);
        StmtPtr nest = make_stmt(Stmt{std::move(inner)});
        for (size_t n = fields.size(); n-- > 0;) {
          ForelemIndexStmt wrap;
          wrap.iter = iters[n];
          wrap.domain = Domain{Domain::FieldValues{loop.reservoir, fields[n]}};
          wrap.body.stmts = {nest};
          nest = make_stmt(Stmt{std::move(wrap)});
        }
        return {nest};
      });
  return out;
}

PassOutcome encapsulate(const TransformResult& in, const std::string& loop) {
  const Stmt* target = nullptr;
  Domain::FieldValues fv;
  walk_stmts(in.program, [&](const Stmt& s, const std::vector<Enclosing>&) {
    if (auto* fi = std::get_if<ForelemIndexStmt>(&s.node))
      if (auto* d = std::get_if<Domain::FieldValues>(&fi->domain.v))
        if (loop.empty() || fi->iter == loop) {
          target = &s;
          fv = *d;
          return true;
        }
    return false;
  });
  if (!target)
    return PassOutcome::failure(
        loop.empty() ? "no field-value loop to encapsulate"
                     : "loop '" + loop + "' is not a field-value loop");
  TransformResult out = in;
  out.program.body =
      replace_stmt(in.program.body, target, [&](const Stmt& s) {
        ForelemIndexStmt fi = std::get<ForelemIndexStmt>(s.node);
        fi.domain =
            Domain{Domain::NatUpTo{SymExtent{SymExtent::FieldExtent{
                fv.reservoir, fv.field}}}};
        return std::vector<StmtPtr>{make_stmt(Stmt{std::move(fi)})};
      });
  return out;
}

PassOutcome undo_orthogonalize(const TransformResult& in,
                               const FieldName& field) {
  // Locate the condition entry field == iterator and the loop binding it.
  std::string iter;
  const Stmt* cond_stmt = nullptr;
  walk_stmts(in.program, [&](const Stmt& s, const std::vector<Enclosing>&) {
    if (auto* t = std::get_if<ForelemTupleStmt>(&s.node))
      if (t->cond)
        for (size_t n = 0; n < t->cond->fields.size(); ++n) {
          std::string it;
          if (t->cond->fields[n] == field &&
              value_ref_is_iter(t->cond->values[n], it)) {
            iter = it;
            cond_stmt = &s;
            return true;
          }
        }
    return false;
  });
  if (!cond_stmt)
    return PassOutcome::failure("field '" + field + "' is not orthogonalized");

  const Stmt* orth_loop = nullptr;
  bool eligible = false;
  walk_stmts(in.program, [&](const Stmt& s, const std::vector<Enclosing>&) {
    if (auto* fi = std::get_if<ForelemIndexStmt>(&s.node))
      if (fi->iter == iter) {
        orth_loop = &s;
        if (auto* fv = std::get_if<Domain::FieldValues>(&fi->domain.v))
          eligible = fv->field == field;
        else if (auto* nu = std::get_if<Domain::NatUpTo>(&fi->domain.v))
          if (auto* fe = std::get_if<SymExtent::FieldExtent>(&nu->extent.v))
            eligible = fe->field == field;
        return true;
      }
    return false;
  });
  if (!orth_loop || !eligible)
    return PassOutcome::failure("iterator '" + iter +
                                "' is not an orthogonalization loop over '" +
                                field + "'");

  // The iterator must have no other use.
  int uses = 0;
  walk_stmts(in.program, [&](const Stmt& s, const std::vector<Enclosing>&) {
    std::visit(
        [&](auto&& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, ForStmt>) {
            uses += expr_uses_iter(*n.lo, iter) + expr_uses_iter(*n.hi, iter);
          } else if constexpr (std::is_same_v<T, ForelemTupleStmt>) {
            if (n.cond)
              for (auto& v : n.cond->values) {
                if (auto* e = std::get_if<ExprPtr>(&v.v))
                  uses += expr_uses_iter(**e, iter);
                else {
                  auto& iv = std::get<Interval>(v.v);
                  uses += expr_uses_iter(*iv.lo, iter);
                  if (iv.hi)
                    uses += expr_uses_iter(**iv.hi, iter);
                }
              }
          } else if constexpr (std::is_same_v<T, ForelemIndexStmt>) {
            if (auto* br = std::get_if<Domain::BlockRange>(&n.domain.v))
              uses += br->outer_iter == iter;
          } else if constexpr (std::is_same_v<T, AssignStmt>) {
            if (auto* d = std::get_if<LValue::Dense>(&n.lhs.v))
              for (auto& i : d->idx)
                uses += expr_uses_iter(*i, iter);
            uses += expr_uses_iter(*n.rhs, iter);
          }
        },
        s.node);
    return false;
  });
  if (uses != 1)
    return PassOutcome::failure("iterator '" + iter +
                                "' is used beyond the subset condition");

  TransformResult out = in;
  // Drop the condition entry, then splice the loop away.
  out.program.body =
      replace_stmt(in.program.body, cond_stmt, [&](const Stmt& s) {
        ForelemTupleStmt t = std::get<ForelemTupleStmt>(s.node);
        Condition c = *t.cond;
        Condition kept;
        for (size_t n = 0; n < c.fields.size(); ++n) {
          std::string it;
          if (c.fields[n] == field && value_ref_is_iter(c.values[n], it) &&
              it == iter)
            continue;
          kept.fields.push_back(c.fields[n]);
          kept.values.push_back(c.values[n]);
        }
        if (kept.fields.empty())
          t.cond.reset();
        else
          t.cond = std::move(kept);
        return std::vector<StmtPtr>{make_stmt(Stmt{std::move(t)})};
      });
  // Re-locate the orthogonalization loop in the rebuilt tree by iterator.
  const Stmt* rebuilt = nullptr;
  walk_stmts(out.program, [&](const Stmt& s, const std::vector<Enclosing>&) {
    if (auto* fi = std::get_if<ForelemIndexStmt>(&s.node))
      if (fi->iter == iter) {
        rebuilt = &s;
        return true;
      }
    return false;
  });
  out.program.body = replace_stmt(out.program.body, rebuilt, [&](const Stmt& s) {
    return std::get<ForelemIndexStmt>(s.node).body.stmts;
  });
  return out;
}

PassOutcome materialize_independent(const TransformResult& in) {
  auto found = find_tuple_loop(in.program);
  if (!found)
    return PassOutcome::failure("no reservoir loop to materialize");
  const ForelemTupleStmt& loop = *found->loop;
  if (loop.cond) {
    for (auto& v : loop.cond->values) {
      if (v.is_interval())
        return PassOutcome::failure("interval conditions are not materializable");
      auto& e = std::get<ExprPtr>(v.v);
      if (!std::holds_alternative<Expr::Num>(e->node))
        return PassOutcome::failure(
            "loop-dependent condition present (use matdep)");
    }
  }
  const ReservoirDecl* res = in.program.find_reservoir(loop.reservoir);

  TransformResult out = in;
  StoragePlan plan;
  plan.name = next_plan_name(in.plans);
  plan.reservoir = loop.reservoir;
  plan.base_condition = loop.cond;
  for (auto& f : res->schema)
    plan.leaf_fields.push_back({f, false});
  std::set<std::string> reads;
  bindings_read(loop.body, loop.tuple_var, reads);
  for (auto& b : reads)
    plan.leaf_fields.push_back({b, true});
  std::set<std::string> names = used_names(in);
  plan.leaf_iter = fresh_name(names, {"k", "p", "q"});

  std::string plan_name = plan.name;
  std::string leaf_iter = plan.leaf_iter;
  std::string var = loop.tuple_var;
  out.program.body =
      replace_stmt(in.program.body, found->stmt, [&](const Stmt& s) {
        const ForelemTupleStmt& t = std::get<ForelemTupleStmt>(s.node);
        ExprFn fn = [&](const ExprPtr& e) -> ExprPtr {
          if (auto* tf = std::get_if<Expr::TupleField>(&e->node)) {
            if (tf->tuple == var)
              return storage_field(plan_name, tf->field, {iter_ref(leaf_iter)});
          } else if (auto* br = std::get_if<Expr::BindingRead>(&e->node)) {
            if (br->tuple == var)
              return storage_field(plan_name, br->binding,
                                   {iter_ref(leaf_iter)});
          }
          return nullptr;
        };
        ForelemIndexStmt fi;
        fi.iter = leaf_iter;
        fi.domain = Domain{Domain::NStar{plan_name}};
        fi.body = rewrite_exprs_in_block(t.body, fn);
        return std::vector<StmtPtr>{make_stmt(Stmt{std::move(fi)})};
      });
  out.plans.push_back(std::move(plan));
  return out;
}

PassOutcome materialize_dependent(const TransformResult& in) {
  auto found = find_tuple_loop(in.program);
  if (!found)
    return PassOutcome::failure("no reservoir loop to materialize");
  const ForelemTupleStmt& loop = *found->loop;
  if (!loop.cond)
    return PassOutcome::failure("condition-free loop (use matindep)");

  // Classify condition entries.
  std::map<std::string, std::vector<FieldName>> by_iter;
  std::vector<std::pair<FieldName, std::string>> equated; // field -> iter
  for (size_t n = 0; n < loop.cond->fields.size(); ++n) {
    const ValueRef& v = loop.cond->values[n];
    if (v.is_interval())
      return PassOutcome::failure("interval conditions are not materializable");
    std::string it;
    if (!value_ref_is_iter(v, it)) {
      auto& e = std::get<ExprPtr>(v.v);
      if (std::holds_alternative<Expr::TupleField>(e->node))
        return PassOutcome::failure(
            "condition references an outer tuple field (use collapse)");
      return PassOutcome::failure(
          "mixed constant and iterator conditions are not materializable");
    }
    by_iter[it].push_back(loop.cond->fields[n]);
    equated.push_back({loop.cond->fields[n], it});
  }
  if (by_iter.empty())
    return PassOutcome::failure("no loop-dependent condition (use matindep)");

  // Resolve each dependent iterator against its enclosing loop, in loop
  // order; a blocked iterator pulls its partition loop in as well.
  struct LevelPlan {
    GroupLevel level;
    const Stmt* block_local_stmt = nullptr; // loop to localize
    std::string outer_iter;                 // BlockLocal: partition iterator
  };
  std::vector<LevelPlan> levels;
  std::set<std::string> involved;
  for (auto& [it, fs] : by_iter)
    involved.insert(it);
  // Mark partition loops of blocked dependent iterators.
  std::map<std::string, std::string> block_outer_of;
  for (auto& enc : found->ctx) {
    if (auto* fi = std::get_if<ForelemIndexStmt>(&enc.stmt->node))
      if (involved.count(fi->iter))
        if (auto* br = std::get_if<Domain::BlockRange>(&fi->domain.v)) {
          block_outer_of[fi->iter] = br->outer_iter;
          involved.insert(br->outer_iter);
        }
  }
  for (auto& enc : found->ctx) {
    std::string it = enc.iter;
    if (!involved.count(it))
      continue;
    LevelPlan lp;
    lp.level.iter = it;
    if (auto* fi = std::get_if<ForelemIndexStmt>(&enc.stmt->node)) {
      if (auto* nu = std::get_if<Domain::NatUpTo>(&fi->domain.v)) {
        bool is_block_outer = false;
        for (auto& [blocked, outer] : block_outer_of)
          if (outer == it) {
            lp.level.kind = GroupLevel::Kind::BlockOuter;
            lp.level.fields = by_iter[blocked];
            if (auto* inner_fi = [&]() -> const ForelemIndexStmt* {
                  for (auto& e2 : found->ctx)
                    if (auto* f2 = std::get_if<ForelemIndexStmt>(&e2.stmt->node))
                      if (f2->iter == blocked)
                        return f2;
                  return nullptr;
                }()) {
              auto& br = std::get<Domain::BlockRange>(inner_fi->domain.v);
              lp.level.block_size = br.size;
            }
            lp.level.extent = nu->extent;
            is_block_outer = true;
            break;
          }
        if (!is_block_outer) {
          if (!by_iter.count(it))
            continue;
          lp.level.kind = GroupLevel::Kind::Value;
          lp.level.fields = by_iter[it];
          lp.level.extent = nu->extent;
        }
      } else if (auto* br = std::get_if<Domain::BlockRange>(&fi->domain.v)) {
        if (!by_iter.count(it))
          return PassOutcome::failure("blocked loop '" + it +
                                      "' is not a condition iterator");
        lp.level.kind = GroupLevel::Kind::BlockLocal;
        lp.level.fields = by_iter[it];
        lp.level.block_size = br->size;
        lp.level.extent = SymExtent::constant(br->size);
        lp.block_local_stmt = enc.stmt;
        lp.outer_iter = br->outer_iter;
      } else if (std::holds_alternative<Domain::FieldValues>(fi->domain.v)) {
        return PassOutcome::failure("dependent iterator '" + it +
                                    "' is not encapsulated");
      } else {
        return PassOutcome::failure("dependent iterator '" + it +
                                    "' has an unsupported domain");
      }
    } else if (auto* fs = std::get_if<ForStmt>(&enc.stmt->node)) {
      if (!by_iter.count(it))
        continue;
      auto* lo = std::get_if<Expr::Num>(&fs->lo->node);
      if (!lo || lo->v != 0)
        return PassOutcome::failure("ordered loop '" + it +
                                    "' does not start at the first index");
      lp.level.kind = GroupLevel::Kind::Value;
      lp.level.fields = by_iter[it];
      if (auto* n = std::get_if<Expr::Num>(&fs->hi->node))
        lp.level.extent = SymExtent::constant(static_cast<long>(n->v));
      else if (auto* sr = std::get_if<Expr::ScalarRef>(&fs->hi->node))
        lp.level.extent = SymExtent::param(sr->name);
      else
        return PassOutcome::failure("loop bound of '" + it +
                                    "' too complex to materialize");
    } else {
      continue;
    }
    levels.push_back(std::move(lp));
  }
  // Every dependent iterator must have produced a level.
  for (auto& [it, fs] : by_iter) {
    bool have = false;
    for (auto& lp : levels)
      have |= lp.level.iter == it ||
              (lp.level.kind == GroupLevel::Kind::BlockLocal &&
               lp.level.iter == it);
    if (!have)
      return PassOutcome::failure("condition iterator '" + it +
                                  "' is not bound by an enclosing loop");
  }

  TransformResult out = in;
  StoragePlan plan;
  plan.name = next_plan_name(in.plans);
  plan.reservoir = loop.reservoir;
  const ReservoirDecl* res = in.program.find_reservoir(loop.reservoir);
  std::set<FieldName> consumed;
  for (auto& [f, it] : equated)
    consumed.insert(f);
  for (auto& f : res->schema)
    if (!consumed.count(f))
      plan.leaf_fields.push_back({f, false});
  std::set<std::string> reads;
  bindings_read(loop.body, loop.tuple_var, reads);
  for (auto& b : reads)
    plan.leaf_fields.push_back({b, true});

  std::set<std::string> names = used_names(in);
  plan.leaf_iter = fresh_name(names, {"k", "p", "q"});

  // Localize blocked dependent loops: fresh local iterator, [0, size) domain,
  // and a global-reconstruction substitution for stale references.
  std::map<std::string, ExprPtr> subst; // old iter -> global expr
  std::map<std::string, std::string> local_name;
  for (auto& lp : levels) {
    if (lp.level.kind != GroupLevel::Kind::BlockLocal)
      continue;
    std::string il = fresh_name(names, {lp.level.iter + "l", "il"});
    local_name[lp.level.iter] = il;
    subst[lp.level.iter] =
        binary(BinOp::Add,
               binary(BinOp::Mul, iter_ref(lp.outer_iter),
                      num(static_cast<double>(lp.level.block_size))),
               iter_ref(il));
  }
  for (auto& lp : levels)
    if (local_name.count(lp.level.iter))
      lp.level.iter = local_name[lp.level.iter];

  for (auto& lp : levels)
    plan.levels.push_back(lp.level);
  plan.group_iter = plan.levels.back().iter;

  // Group value expression per equated field (for body reconstruction).
  std::map<FieldName, ExprPtr> field_value;
  for (auto& lp : levels) {
    ExprPtr value;
    if (lp.level.kind == GroupLevel::Kind::BlockLocal) {
      value = binary(BinOp::Add,
                     binary(BinOp::Mul, iter_ref(lp.outer_iter),
                            num(static_cast<double>(lp.level.block_size))),
                     iter_ref(lp.level.iter));
    } else if (lp.level.kind == GroupLevel::Kind::Value) {
      value = iter_ref(lp.level.iter);
    } else {
      continue; // BlockOuter holds no full value
    }
    for (auto& f : lp.level.fields)
      field_value[f] = value;
  }

  std::vector<ExprPtr> chain;
  for (auto& l : plan.levels)
    chain.push_back(iter_ref(l.iter));
  chain.push_back(iter_ref(plan.leaf_iter));

  std::string plan_name = plan.name;
  std::string var = loop.tuple_var;
  std::string leaf_iter = plan.leaf_iter;
  auto leaf_rewrite = [&, chain](const ExprPtr& e) -> ExprPtr {
    if (auto* tf = std::get_if<Expr::TupleField>(&e->node)) {
      if (tf->tuple == var) {
        auto it = field_value.find(tf->field);
        if (it != field_value.end())
          return it->second;
        return storage_field(plan_name, tf->field, chain);
      }
    } else if (auto* br = std::get_if<Expr::BindingRead>(&e->node)) {
      if (br->tuple == var)
        return storage_field(plan_name, br->binding, chain);
    }
    return nullptr;
  };

  // Rebuild: localize blocked loops on the path, substitute stale global
  // references, then swap the reservoir loop for the leaf loop.
  std::function<Block(const Block&)> rebuild_block =
      [&](const Block& b) -> Block {
    Block outb;
    for (auto& sp : b.stmts) {
      if (sp.get() == found->stmt) {
        const ForelemTupleStmt& t = std::get<ForelemTupleStmt>(sp->node);
        ForelemIndexStmt fi;
        fi.iter = leaf_iter;
        fi.domain = Domain{Domain::NStar{plan_name}};
        Block body = rewrite_exprs_in_block(t.body, leaf_rewrite);
        fi.body = rewrite_exprs_in_block(body, iter_subst(subst));
        outb.stmts.push_back(make_stmt(Stmt{std::move(fi)}));
        continue;
      }
      Stmt copy = *sp;
      const LevelPlan* localize = nullptr;
      for (auto& lp : levels)
        if (lp.block_local_stmt == sp.get())
          localize = &lp;
      std::visit(
          [&](auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, ForStmt>) {
              n.body = rebuild_block(n.body);
            } else if constexpr (std::is_same_v<T, ForelemTupleStmt>) {
              n.body = rebuild_block(n.body);
            } else if constexpr (std::is_same_v<T, ForelemIndexStmt>) {
              if (localize) {
                n.iter = localize->level.iter;
                n.domain = Domain{Domain::NatUpTo{localize->level.extent}};
              }
              n.body = rebuild_block(n.body);
            } else if constexpr (std::is_same_v<T, AssignStmt> ||
                                 std::is_same_v<T, ReservoirUnionStmt>) {
              Stmt rewritten = rewrite_exprs_in_stmt(copy, iter_subst(subst));
              copy = rewritten;
            }
          },
          copy.node);
      outb.stmts.push_back(make_stmt(std::move(copy)));
    }
    return outb;
  };
  out.program.body = rebuild_block(in.program.body);
  out.plans.push_back(std::move(plan));
  return out;
}

PassOutcome horizontal_reduce(const TransformResult& in,
                              const std::string& reservoir) {
  std::string res = reservoir;
  if (res.empty()) {
    auto found = find_tuple_loop(in.program);
    if (!found)
      return PassOutcome::failure("no reservoir loop");
    res = found->loop->reservoir;
  }
  const ReservoirDecl* decl = in.program.find_reservoir(res);
  if (!decl)
    return PassOutcome::failure("unknown reservoir '" + res + "'");
  std::set<FieldName> used = free_fields(in.program, res);
  if (used.size() >= decl->schema.size())
    return PassOutcome::failure("all fields of '" + res + "' are used");
  if (used.empty())
    return PassOutcome::failure("no field of '" + res + "' is used");
  for (auto& pl : in.plans)
    if (pl.reservoir == res)
      return PassOutcome::failure("reservoir '" + res +
                                  "' is already materialized");

  TransformResult out = in;
  std::set<std::string> names = used_names(in);
  std::string pname = fresh_name(names, {res + "_r"});
  ReservoirDecl proj;
  proj.name = pname;
  for (auto& f : decl->schema)
    if (used.count(f))
      proj.schema.push_back(f);
  proj.projection = ProjectionInfo{res, proj.schema};
  out.program.reservoirs.push_back(proj);
  for (auto& b : out.program.bindings)
    if (b.reservoir == res) {
      if (b.origin.empty())
        b.origin = res;
      b.reservoir = pname;
    }

  // Re-point every loop over the reservoir.
  std::function<Block(const Block&)> repoint = [&](const Block& b) -> Block {
    Block outb;
    for (auto& sp : b.stmts) {
      Stmt copy = *sp;
      std::visit(
          [&](auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, ForStmt>) {
              n.body = repoint(n.body);
            } else if constexpr (std::is_same_v<T, ForelemTupleStmt>) {
              if (n.reservoir == res)
                n.reservoir = pname;
              n.body = repoint(n.body);
            } else if constexpr (std::is_same_v<T, ForelemIndexStmt>) {
              if (auto* fv = std::get_if<Domain::FieldValues>(&n.domain.v))
                if (fv->reservoir == res)
                  fv->reservoir = pname;
              if (auto* nu = std::get_if<Domain::NatUpTo>(&n.domain.v))
                if (auto* fe = std::get_if<SymExtent::FieldExtent>(&nu->extent.v))
                  if (fe->reservoir == res)
                    fe->reservoir = pname;
              n.body = repoint(n.body);
            }
          },
          copy.node);
      outb.stmts.push_back(make_stmt(std::move(copy)));
    }
    return outb;
  };
  out.program.body = repoint(in.program.body);
  return out;
}

PassOutcome structure_split(const TransformResult& in) {
  if (in.plans.empty())
    return PassOutcome::failure("no materialized storage to split");
  bool any = false;
  for (auto& p : in.plans)
    any |= !p.split;
  if (!any)
    return PassOutcome::failure("storage is already split");
  TransformResult out = in;
  std::set<std::string> targets;
  for (auto& p : out.plans)
    if (!p.split) {
      p.split = true;
      targets.insert(p.name);
    }
  out.program.body =
      rewrite_exprs_in_block(in.program.body, [&](const ExprPtr& e) -> ExprPtr {
        if (auto* sf = std::get_if<Expr::StorageField>(&e->node))
          if (targets.count(sf->plan) && !sf->split)
            return storage_field(sf->plan, sf->field, sf->idx, true);
        return nullptr;
      });
  return out;
}

namespace {

// Finds the loop with the given iterator name.
const Stmt* find_index_loop(const Program& p, const std::string& iter) {
  const Stmt* out = nullptr;
  walk_stmts(p, [&](const Stmt& s, const std::vector<Enclosing>&) {
    if (auto* fi = std::get_if<ForelemIndexStmt>(&s.node))
      if (fi->iter == iter) {
        out = &s;
        return true;
      }
    return false;
  });
  return out;
}

bool loop_is_ordered_for(const Program& p, const std::string& iter) {
  bool ordered = false;
  walk_stmts(p, [&](const Stmt& s, const std::vector<Enclosing>&) {
    if (auto* fs = std::get_if<ForStmt>(&s.node))
      if (fs->iter == iter) {
        ordered = true;
        return true;
      }
    return false;
  });
  return ordered;
}

} // namespace

PassOutcome nstar_materialize(const TransformResult& in, PadMode mode) {
  bool any = false;
  for (auto& p : in.plans)
    any |= p.nstar == StoragePlan::NStarState::Symbolic;
  if (in.plans.empty())
    return PassOutcome::failure("no materialized storage");
  if (!any)
    return PassOutcome::failure("N* already materialized");

  TransformResult out = in;
  for (auto& plan : out.plans) {
    if (plan.nstar != StoragePlan::NStarState::Symbolic)
      continue;
    if (plan.position_major && mode == PadMode::Compact && !plan.sorted)
      return PassOutcome::failure(
          "compact N* on position-major storage requires sorted groups");
    plan.nstar = mode == PadMode::Padded ? StoragePlan::NStarState::Padded
                                         : StoragePlan::NStarState::Compact;
    // Rewrite the symbolic leaf-set loop and, for position-major plans,
    // adjust the inner group loop.
    std::function<Block(const Block&)> fix = [&](const Block& b) -> Block {
      Block outb;
      for (auto& sp : b.stmts) {
        Stmt copy = *sp;
        std::visit(
            [&](auto& n) {
              using T = std::decay_t<decltype(n)>;
              if constexpr (std::is_same_v<T, ForStmt>) {
                n.body = fix(n.body);
              } else if constexpr (std::is_same_v<T, ForelemTupleStmt>) {
                n.body = fix(n.body);
              } else if constexpr (std::is_same_v<T, ForelemIndexStmt>) {
                if (auto* ns = std::get_if<Domain::NStar>(&n.domain.v);
                    ns && ns->plan == plan.name) {
                  if (plan.position_major)
                    n.domain = Domain{Domain::WidthBound{plan.name}};
                  else
                    n.domain = Domain{Domain::LenBound{plan.name}};
                }
                if (plan.position_major && n.iter == plan.group_iter &&
                    n.guarded) {
                  if (mode == PadMode::Padded) {
                    n.guarded = false; // pads complete the rectangle
                  } else {
                    n.domain = Domain{Domain::PermSlice{plan.name}};
                    n.guarded = false;
                  }
                }
                n.body = fix(n.body);
              }
            },
            copy.node);
        outb.stmts.push_back(make_stmt(std::move(copy)));
      }
      return outb;
    };
    out.program.body = fix(out.program.body);
  }
  return out;
}

PassOutcome nstar_sort(const TransformResult& in) {
  const StoragePlan* target = nullptr;
  for (auto& p : in.plans)
    if (!p.sorted && !p.flat() && !p.position_major)
      target = target ? target : &p;
  if (in.plans.empty())
    return PassOutcome::failure("no materialized storage");
  if (!target)
    return PassOutcome::failure("no sortable group domain");
  if (target->levels.size() != 1)
    return PassOutcome::failure("sorting needs a single group level");
  if (loop_is_ordered_for(in.program, target->group_iter))
    return PassOutcome::failure(
        "group loop is ordered; sorting would reorder a dependent loop");
  const Stmt* loop = find_index_loop(in.program, target->group_iter);
  if (!loop)
    return PassOutcome::failure("group loop not found");
  TransformResult out = in;
  StoragePlan* plan = find_plan(out.plans, target->name);
  plan->sorted = true;
  out.program.body = replace_stmt(in.program.body, loop, [&](const Stmt& s) {
    ForelemIndexStmt fi = std::get<ForelemIndexStmt>(s.node);
    fi.domain = Domain{Domain::PermutedNat{plan->name}};
    return std::vector<StmtPtr>{make_stmt(Stmt{std::move(fi)})};
  });
  return out;
}

PassOutcome dim_reduce(const TransformResult& in) {
  bool any = false, padded = false, symbolic = false;
  for (auto& p : in.plans) {
    if (p.dim_reduced)
      continue;
    if (p.flat())
      continue;
    if (p.nstar == StoragePlan::NStarState::Padded)
      padded = true;
    else if (p.nstar == StoragePlan::NStarState::Symbolic)
      symbolic = true;
    else
      any = true;
  }
  if (in.plans.empty())
    return PassOutcome::failure("no materialized storage");
  if (!any) {
    if (padded)
      return PassOutcome::failure(
          "padded storage cannot be stored back to back");
    if (symbolic)
      return PassOutcome::failure("N* must be materialized first");
    return PassOutcome::failure("storage already dimensionality-reduced");
  }
  TransformResult out = in;
  for (auto& plan : out.plans) {
    if (plan.flat() || plan.dim_reduced ||
        plan.nstar != StoragePlan::NStarState::Compact)
      continue;
    plan.dim_reduced = true;
    if (!plan.position_major) {
      // Leaf loop iterates global offsets; leaf accesses flatten.
      const Stmt* leaf = find_index_loop(out.program, plan.leaf_iter);
      if (!leaf)
        return PassOutcome::failure("leaf loop not found");
      out.program.body =
          replace_stmt(out.program.body, leaf, [&](const Stmt& s) {
            ForelemIndexStmt fi = std::get<ForelemIndexStmt>(s.node);
            fi.domain = Domain{Domain::PtrRange{plan.name}};
            return std::vector<StmtPtr>{make_stmt(Stmt{std::move(fi)})};
          });
      std::string pname = plan.name;
      std::string leaf_iter = plan.leaf_iter;
      bool split = plan.split;
      out.program.body = rewrite_exprs_in_block(
          out.program.body, [&](const ExprPtr& e) -> ExprPtr {
            if (auto* sf = std::get_if<Expr::StorageField>(&e->node))
              if (sf->plan == pname && sf->idx.size() > 1)
                return storage_field(pname, sf->field, {iter_ref(leaf_iter)},
                                     split);
            return nullptr;
          });
    }
    // Position-major plans keep their loop structure; the offsets only
    // change the physical layout (slices stored back to back).
  }
  return out;
}

PassOutcome loop_collapse(const TransformResult& in) {
  if (!in.plans.empty())
    return PassOutcome::failure("collapse applies before materialization");
  // Locate outer/inner reservoir loop pair.
  const Stmt* outer_stmt = nullptr;
  const ForelemTupleStmt* outer = nullptr;
  const ForelemTupleStmt* inner = nullptr;
  walk_stmts(in.program, [&](const Stmt& s, const std::vector<Enclosing>&) {
    if (auto* t = std::get_if<ForelemTupleStmt>(&s.node)) {
      if (t->body.stmts.size() == 1)
        if (auto* ti =
                std::get_if<ForelemTupleStmt>(&t->body.stmts[0]->node)) {
          outer_stmt = &s;
          outer = t;
          inner = ti;
          return true;
        }
    }
    return false;
  });
  if (!outer)
    return PassOutcome::failure("no nested reservoir loop pair");
  if (outer->cond)
    return PassOutcome::failure("outer loop carries a subset condition");
  if (!inner->cond || inner->cond->fields.size() != 1)
    return PassOutcome::failure("condition not of equi-join shape");
  auto& v = inner->cond->values[0];
  const Expr::TupleField* tf = nullptr;
  if (auto* e = std::get_if<ExprPtr>(&v.v))
    tf = std::get_if<Expr::TupleField>(&(*e)->node);
  if (!tf || tf->tuple != outer->tuple_var)
    return PassOutcome::failure("condition not of equi-join shape");
  if (outer->reservoir == inner->reservoir)
    return PassOutcome::failure("self joins are not supported");

  // The two reservoirs may not be used anywhere else.
  int uses = 0;
  walk_stmts(in.program, [&](const Stmt& s, const std::vector<Enclosing>&) {
    if (auto* t = std::get_if<ForelemTupleStmt>(&s.node))
      if (t->reservoir == outer->reservoir || t->reservoir == inner->reservoir)
        ++uses;
    return false;
  });
  if (uses != 2)
    return PassOutcome::failure("reservoirs are used outside the pair");

  const ReservoirDecl* left = in.program.find_reservoir(outer->reservoir);
  const ReservoirDecl* right = in.program.find_reservoir(inner->reservoir);
  std::set<FieldName> clash(left->schema.begin(), left->schema.end());
  for (auto& f : right->schema)
    if (clash.count(f))
      return PassOutcome::failure("schemas share field '" + f + "'");

  TransformResult out = in;
  ReservoirDecl join;
  join.name = left->name + "x" + right->name;
  if (in.program.find_reservoir(join.name))
    return PassOutcome::failure("name '" + join.name + "' already in use");
  join.schema = left->schema;
  join.schema.insert(join.schema.end(), right->schema.begin(),
                     right->schema.end());
  join.join = JoinInfo{left->name, right->name, tf->field,
                       inner->cond->fields[0]};
  out.program.reservoirs.push_back(join);
  for (auto& b : out.program.bindings)
    if (b.reservoir == left->name || b.reservoir == right->name) {
      if (b.origin.empty())
        b.origin = b.reservoir;
      b.reservoir = join.name;
    }

  std::string ovar = outer->tuple_var, ivar = inner->tuple_var;
  std::string jname = join.name;
  out.program.body =
      replace_stmt(in.program.body, outer_stmt, [&](const Stmt& s) {
        const ForelemTupleStmt& o = std::get<ForelemTupleStmt>(s.node);
        const ForelemTupleStmt& i2 =
            std::get<ForelemTupleStmt>(o.body.stmts[0]->node);
        ForelemTupleStmt merged;
        merged.tuple_var = ovar;
        merged.reservoir = jname;
        merged.body = rewrite_exprs_in_block(
            i2.body, [&](const ExprPtr& e) -> ExprPtr {
              if (auto* tf2 = std::get_if<Expr::TupleField>(&e->node)) {
                if (tf2->tuple == ivar)
                  return tuple_field(ovar, tf2->field);
              } else if (auto* br = std::get_if<Expr::BindingRead>(&e->node)) {
                if (br->tuple == ivar)
                  return binding_read(br->binding, ovar);
              }
              return nullptr;
            });
        return std::vector<StmtPtr>{make_stmt(Stmt{std::move(merged)})};
      });
  return out;
}

namespace {

struct DensePattern {
  std::vector<std::string> writes; // printed index tuples
  std::vector<std::string> reads;
  bool scalar_write = false;
};

void scan_dense(const Block& b, std::map<std::string, DensePattern>& out,
                bool& scalar_write);

void scan_dense_expr(const Expr& e, std::map<std::string, DensePattern>& out) {
  std::visit(
      [&](auto&& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Expr::DenseRead>) {
          std::string key;
          for (auto& i : n.idx)
            key += pretty(*i) + ",";
          out[n.name].reads.push_back(key);
          for (auto& i : n.idx)
            scan_dense_expr(*i, out);
        } else if constexpr (std::is_same_v<T, Expr::StorageField>) {
          for (auto& i : n.idx)
            scan_dense_expr(*i, out);
        } else if constexpr (std::is_same_v<T, Expr::Binary>) {
          scan_dense_expr(*n.lhs, out);
          scan_dense_expr(*n.rhs, out);
        }
      },
      e.node);
}

void scan_dense(const Block& b, std::map<std::string, DensePattern>& out,
                bool& scalar_write) {
  for (auto& sp : b.stmts) {
    std::visit(
        [&](auto&& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, ForStmt> ||
                        std::is_same_v<T, ForelemIndexStmt> ||
                        std::is_same_v<T, ForelemTupleStmt>) {
            scan_dense(n.body, out, scalar_write);
          } else if constexpr (std::is_same_v<T, AssignStmt>) {
            if (auto* d = std::get_if<LValue::Dense>(&n.lhs.v)) {
              std::string key;
              for (auto& i : d->idx)
                key += pretty(*i) + ",";
              out[d->name].writes.push_back(key);
              for (auto& i : d->idx)
                scan_dense_expr(*i, out);
            } else if (std::holds_alternative<LValue::Scalar>(n.lhs.v)) {
              scalar_write = true;
            }
            scan_dense_expr(*n.rhs, out);
            // An accumulating dense write reads its own cell; that read is
            // at the same index and is not a dependence across iterations
            // of an interchanged pair.
          }
        },
        sp->node);
  }
}

// Conservative dependence test for interchanges involving an ordered loop:
// refuse when a dense operand is written and also read at a different index.
bool ordered_interchange_safe(const Block& body, std::string& why) {
  std::map<std::string, DensePattern> pat;
  bool scalar_write = false;
  scan_dense(body, pat, scalar_write);
  if (scalar_write) {
    why = "scalar accumulation across an ordered loop";
    return false;
  }
  for (auto& [name, p] : pat) {
    if (p.writes.empty())
      continue;
    for (auto& r : p.reads)
      for (auto& w : p.writes)
        if (r != w) {
          why = "dense operand '" + name + "' written and read at different "
                "indices";
          return false;
        }
  }
  return true;
}

} // namespace

PassOutcome loop_interchange(const TransformResult& in, const std::string& a,
                             const std::string& b) {
  // Locate a perfectly nested loop pair (outer body is exactly the inner
  // loop); both index loops, or an index loop over an ordered for.
  const Stmt* outer_stmt = nullptr;
  const Stmt* inner_stmt = nullptr;
  walk_stmts(in.program, [&](const Stmt& s, const std::vector<Enclosing>&) {
    const Block* body = nullptr;
    std::string oiter;
    if (auto* fi = std::get_if<ForelemIndexStmt>(&s.node)) {
      body = &fi->body;
      oiter = fi->iter;
    } else if (auto* fs = std::get_if<ForStmt>(&s.node)) {
      body = &fs->body;
      oiter = fs->iter;
    } else {
      return false;
    }
    if (body->stmts.size() != 1)
      return false;
    const Stmt& cand = *body->stmts[0];
    std::string iiter;
    if (auto* fi = std::get_if<ForelemIndexStmt>(&cand.node))
      iiter = fi->iter;
    else if (auto* fs = std::get_if<ForStmt>(&cand.node))
      iiter = fs->iter;
    else
      return false;
    if (!a.empty() && (oiter != a || iiter != b))
      return false;
    outer_stmt = &s;
    inner_stmt = &cand;
    return true;
  });
  if (!outer_stmt)
    return PassOutcome::failure(a.empty()
                                    ? "no perfectly nested loop pair"
                                    : "loops '" + a + "', '" + b +
                                          "' are not perfectly nested");

  bool outer_for = std::holds_alternative<ForStmt>(outer_stmt->node);
  bool inner_for = std::holds_alternative<ForStmt>(inner_stmt->node);
  const Block& inner_body =
      inner_for ? std::get<ForStmt>(inner_stmt->node).body
                : std::get<ForelemIndexStmt>(inner_stmt->node).body;

  if (outer_for || inner_for) {
    std::string why;
    if (!ordered_interchange_safe(inner_body, why))
      return PassOutcome::failure("dependence violation: " + why);
  }

  TransformResult out = in;

  // Materialized pair? (group loop around its plan's leaf-set loop, or the
  // reverse once position-major.)
  if (!outer_for && !inner_for) {
    auto& ofi = std::get<ForelemIndexStmt>(outer_stmt->node);
    auto& ifi = std::get<ForelemIndexStmt>(inner_stmt->node);
    auto domain_plan = [](const ForelemIndexStmt& f) -> std::string {
      if (auto* d = std::get_if<Domain::NStar>(&f.domain.v))
        return d->plan;
      if (auto* d = std::get_if<Domain::LenBound>(&f.domain.v))
        return d->plan;
      if (auto* d = std::get_if<Domain::WidthBound>(&f.domain.v))
        return d->plan;
      if (auto* d = std::get_if<Domain::PtrRange>(&f.domain.v))
        return d->plan;
      return "";
    };
    std::string leaf_plan = domain_plan(ifi);
    const StoragePlan* plan =
        leaf_plan.empty() ? nullptr : find_plan(in.plans, leaf_plan);
    if (plan && !plan->position_major && ofi.iter == plan->group_iter) {
      // Turn position-major on.
      if (plan->dim_reduced)
        return PassOutcome::failure(
            "storage already reduced to offsets; interchange earlier");
      if (plan->nstar == StoragePlan::NStarState::Compact)
        return PassOutcome::failure(
            "interchange after compact N* materialization is not supported");
      if (plan->levels.size() != 1)
        return PassOutcome::failure(
            "position-major iteration needs a single group level");
      StoragePlan* mp = find_plan(out.plans, plan->name);
      mp->position_major = true;
      bool padded = plan->nstar == StoragePlan::NStarState::Padded;
      out.program.body =
          replace_stmt(in.program.body, outer_stmt, [&](const Stmt& s) {
            ForelemIndexStmt group = std::get<ForelemIndexStmt>(s.node);
            ForelemIndexStmt leaf =
                std::get<ForelemIndexStmt>(group.body.stmts[0]->node);
            group.body = leaf.body;
            group.guarded = !padded;
            if (padded)
              leaf.domain = Domain{Domain::WidthBound{mp->name}};
            leaf.body.stmts = {make_stmt(Stmt{std::move(group)})};
            return std::vector<StmtPtr>{make_stmt(Stmt{std::move(leaf)})};
          });
      return out;
    }
    std::string outer_plan = domain_plan(ofi);
    const StoragePlan* rplan =
        outer_plan.empty() ? nullptr : find_plan(in.plans, outer_plan);
    if (rplan && rplan->position_major && ifi.iter == rplan->group_iter) {
      // Undo position-major (inverse of the above).
      if (rplan->nstar == StoragePlan::NStarState::Compact)
        return PassOutcome::failure(
            "interchange of a compact position-major nest is not supported");
      StoragePlan* mp = find_plan(out.plans, rplan->name);
      mp->position_major = false;
      bool padded = rplan->nstar == StoragePlan::NStarState::Padded;
      out.program.body =
          replace_stmt(in.program.body, outer_stmt, [&](const Stmt& s) {
            ForelemIndexStmt leaf = std::get<ForelemIndexStmt>(s.node);
            ForelemIndexStmt group =
                std::get<ForelemIndexStmt>(leaf.body.stmts[0]->node);
            leaf.body = group.body;
            group.guarded = false;
            if (padded)
              leaf.domain = Domain{Domain::LenBound{mp->name}};
            group.body.stmts = {make_stmt(Stmt{std::move(leaf)})};
            return std::vector<StmtPtr>{make_stmt(Stmt{std::move(group)})};
          });
      return out;
    }
    // Plain swap of independent index loops.
    if (ifi.guarded || ofi.guarded)
      return PassOutcome::failure("guarded loops cannot be interchanged alone");
    if (auto* br = std::get_if<Domain::BlockRange>(&ifi.domain.v))
      if (br->outer_iter == ofi.iter)
        return PassOutcome::failure("inner domain depends on the outer loop");
    if (auto* lb = std::get_if<Domain::LenBound>(&ifi.domain.v)) {
      const StoragePlan* p2 = find_plan(in.plans, lb->plan);
      if (p2 && p2->nstar == StoragePlan::NStarState::Compact)
        return PassOutcome::failure(
            "inner compact bound depends on the outer group");
    }
    if (std::holds_alternative<Domain::PtrRange>(ifi.domain.v) ||
        std::holds_alternative<Domain::PermSlice>(ifi.domain.v))
      return PassOutcome::failure("inner domain depends on the outer loop");
  }

  // Generic swap (covers index/for mixes that passed the dependence test).
  out.program.body =
      replace_stmt(in.program.body, outer_stmt, [&](const Stmt& s) {
        Stmt outer_copy = s;
        Stmt inner_copy = *inner_stmt;
        Block grand;
        std::visit(
            [&](auto& n) {
              using T = std::decay_t<decltype(n)>;
              if constexpr (std::is_same_v<T, ForStmt> ||
                            std::is_same_v<T, ForelemIndexStmt>)
                grand = n.body;
            },
            inner_copy.node);
        std::visit(
            [&](auto& n) {
              using T = std::decay_t<decltype(n)>;
              if constexpr (std::is_same_v<T, ForStmt> ||
                            std::is_same_v<T, ForelemIndexStmt>)
                n.body = grand;
            },
            outer_copy.node);
        std::visit(
            [&](auto& n) {
              using T = std::decay_t<decltype(n)>;
              if constexpr (std::is_same_v<T, ForStmt> ||
                            std::is_same_v<T, ForelemIndexStmt>)
                n.body.stmts = {make_stmt(std::move(outer_copy))};
            },
            inner_copy.node);
        return std::vector<StmtPtr>{make_stmt(std::move(inner_copy))};
      });
  return out;
}

PassOutcome loop_block(const TransformResult& in, const std::string& loop,
                       long x) {
  if (x <= 0)
    return PassOutcome::failure("block size must be positive");
  const Stmt* target = nullptr;
  SymExtent total;
  std::string flat_plan;
  walk_stmts(in.program, [&](const Stmt& s, const std::vector<Enclosing>&) {
    auto* fi = std::get_if<ForelemIndexStmt>(&s.node);
    if (!fi || (!loop.empty() && fi->iter != loop))
      return false;
    if (auto* nu = std::get_if<Domain::NatUpTo>(&fi->domain.v)) {
      target = &s;
      total = nu->extent;
      return true;
    }
    if (auto* ns = std::get_if<Domain::NStar>(&fi->domain.v)) {
      const StoragePlan* p = find_plan(in.plans, ns->plan);
      if (p && p->flat()) {
        target = &s;
        total = SymExtent{SymExtent::LeafCount{ns->plan}};
        flat_plan = ns->plan;
        return true;
      }
    }
    if (auto* lb = std::get_if<Domain::LenBound>(&fi->domain.v)) {
      const StoragePlan* p = find_plan(in.plans, lb->plan);
      if (p && p->flat()) {
        target = &s;
        total = SymExtent{SymExtent::LeafCount{lb->plan}};
        return true;
      }
    }
    return false;
  });
  if (!target)
    return PassOutcome::failure(
        loop.empty() ? "no encapsulated index loop to block"
                     : "loop '" + loop + "' is not an encapsulated index loop");

  TransformResult out = in;
  std::set<std::string> names = used_names(in);
  auto& fi = std::get<ForelemIndexStmt>(target->node);
  std::string ii = fresh_name(names, {fi.iter + fi.iter, "ii", "jj", "kk"});
  out.program.body = replace_stmt(in.program.body, target, [&](const Stmt& s) {
    ForelemIndexStmt inner = std::get<ForelemIndexStmt>(s.node);
    inner.domain = Domain{Domain::BlockRange{ii, x, total}};
    ForelemIndexStmt outer;
    outer.iter = ii;
    outer.domain = Domain{Domain::NatUpTo{
        SymExtent{SymExtent::CeilDiv{std::make_shared<SymExtent>(total), x}}}};
    outer.body.stmts = {make_stmt(Stmt{std::move(inner)})};
    return std::vector<StmtPtr>{make_stmt(Stmt{std::move(outer)})};
  });
  if (!flat_plan.empty())
    find_plan(out.plans, flat_plan)->nstar = StoragePlan::NStarState::Compact;
  return out;
}

//===----------------------------------------------------------------------===//
// Dispatch
//===----------------------------------------------------------------------===//

PassOutcome apply_pass(const TransformResult& in, const Pass& pass) {
  std::string why;
  if (!program_is_transformable(in.program, why))
    return PassOutcome::failure(why);
  PassOutcome out = [&]() -> PassOutcome {
    switch (pass.kind) {
    case PassKind::Orthogonalize:
      return orthogonalize(in, pass.fields);
    case PassKind::Encapsulate:
      return encapsulate(in, pass.loop_a);
    case PassKind::UndoOrthogonalize:
      return undo_orthogonalize(in, pass.fields.at(0));
    case PassKind::MaterializeIndependent:
      return materialize_independent(in);
    case PassKind::MaterializeDependent:
      return materialize_dependent(in);
    case PassKind::HorizontalReduce:
      return horizontal_reduce(in, pass.fields.empty() ? "" : pass.fields[0]);
    case PassKind::StructureSplit:
      return structure_split(in);
    case PassKind::NStarMaterialize:
      return nstar_materialize(in, pass.mode);
    case PassKind::NStarSort:
      return nstar_sort(in);
    case PassKind::DimReduce:
      return dim_reduce(in);
    case PassKind::LoopCollapse:
      return loop_collapse(in);
    case PassKind::LoopInterchange:
      return loop_interchange(in, pass.loop_a, pass.loop_b);
    case PassKind::LoopBlock:
      return loop_block(in, pass.loop_a, pass.block_size);
    }
    return PassOutcome::failure("unknown pass");
  }();
  if (out)
    ir::validate(out->program); // throws InternalError on a pass bug
  return out;
}

Expected<TransformResult> apply_pipeline(const ir::Program& root,
                                         const Pipeline& pipeline) {
  TransformResult cur{root, {}};
  for (size_t i = 0; i < pipeline.passes.size(); ++i) {
    PassOutcome next = apply_pass(cur, pipeline.passes[i]);
    if (!next)
      return Expected<TransformResult>::failure(
          "pass " + std::to_string(i + 1) + " (" +
          to_string(pipeline.passes[i]) + "): " + next.error());
    cur = std::move(*next);
  }
  return cur;
}

//===----------------------------------------------------------------------===//
// Enumeration support
//===----------------------------------------------------------------------===//

std::vector<Pass> applicable_passes(const TransformResult& in,
                                    const std::vector<long>& block_sizes) {
  std::vector<Pass> candidates;
  auto add = [&](Pass p) { candidates.push_back(std::move(p)); };

  if (auto found = find_tuple_loop(in.program)) {
    const ReservoirDecl* res = in.program.find_reservoir(found->loop->reservoir);
    for (auto& f : res->schema)
      add(Pass{PassKind::Orthogonalize, {f}});
    for (auto& f : res->schema)
      for (auto& g : res->schema)
        if (f != g)
          add(Pass{PassKind::Orthogonalize, {f, g}});
  }
  // encap per field-value loop
  walk_stmts(in.program, [&](const Stmt& s, const std::vector<Enclosing>&) {
    if (auto* fi = std::get_if<ForelemIndexStmt>(&s.node))
      if (std::holds_alternative<Domain::FieldValues>(fi->domain.v)) {
        Pass p{PassKind::Encapsulate};
        p.loop_a = fi->iter;
        add(p);
      }
    return false;
  });
  // undo_orth per equated field
  {
    std::set<FieldName> fields;
    walk_stmts(in.program, [&](const Stmt& s, const std::vector<Enclosing>&) {
      if (auto* t = std::get_if<ForelemTupleStmt>(&s.node))
        if (t->cond)
          for (size_t n = 0; n < t->cond->fields.size(); ++n) {
            std::string it;
            if (value_ref_is_iter(t->cond->values[n], it))
              fields.insert(t->cond->fields[n]);
          }
      return false;
    });
    for (auto& f : fields)
      add(Pass{PassKind::UndoOrthogonalize, {f}});
  }
  add(Pass{PassKind::MaterializeIndependent});
  add(Pass{PassKind::MaterializeDependent});
  add(Pass{PassKind::HorizontalReduce});
  add(Pass{PassKind::LoopCollapse});
  add(Pass{PassKind::StructureSplit});
  {
    Pass p{PassKind::NStarMaterialize};
    p.mode = PadMode::Padded;
    add(p);
    p.mode = PadMode::Compact;
    add(p);
  }
  add(Pass{PassKind::NStarSort});
  add(Pass{PassKind::DimReduce});
  // interchange per perfectly nested pair
  walk_stmts(in.program, [&](const Stmt& s, const std::vector<Enclosing>&) {
    const Block* body = nullptr;
    std::string oiter;
    if (auto* fi = std::get_if<ForelemIndexStmt>(&s.node)) {
      body = &fi->body;
      oiter = fi->iter;
    } else if (auto* fs = std::get_if<ForStmt>(&s.node)) {
      body = &fs->body;
      oiter = fs->iter;
    } else {
      return false;
    }
    if (body->stmts.size() != 1)
      return false;
    std::string iiter;
    if (auto* fi = std::get_if<ForelemIndexStmt>(&body->stmts[0]->node))
      iiter = fi->iter;
    else if (auto* fs = std::get_if<ForStmt>(&body->stmts[0]->node))
      iiter = fs->iter;
    else
      return false;
    Pass p{PassKind::LoopInterchange};
    p.loop_a = oiter;
    p.loop_b = iiter;
    add(p);
    return false;
  });
  // block per encapsulated loop and size
  walk_stmts(in.program, [&](const Stmt& s, const std::vector<Enclosing>&) {
    if (auto* fi = std::get_if<ForelemIndexStmt>(&s.node)) {
      bool blockable = std::holds_alternative<Domain::NatUpTo>(fi->domain.v);
      if (auto* ns = std::get_if<Domain::NStar>(&fi->domain.v)) {
        const StoragePlan* p = find_plan(in.plans, ns->plan);
        blockable = p && p->flat();
      }
      if (auto* lb = std::get_if<Domain::LenBound>(&fi->domain.v)) {
        const StoragePlan* p = find_plan(in.plans, lb->plan);
        blockable = p && p->flat();
      }
      if (blockable)
        for (long x : block_sizes) {
          Pass p{PassKind::LoopBlock};
          p.loop_a = fi->iter;
          p.block_size = x;
          add(p);
        }
    }
    return false;
  });

  std::vector<Pass> out;
  for (auto& c : candidates)
    if (apply_pass(in, c))
      out.push_back(c);
  return out;
}

Pipeline named_format_pipeline(const std::string& key) {
  if (key == "coo")
    return parse_pipeline("matindep,split");
  if (key == "csr")
    return parse_pipeline("orth(row),encap,matdep,split,nstar(compact),dimreduce");
  if (key == "ccs")
    return parse_pipeline("orth(col),encap,matdep,split,nstar(compact),dimreduce");
  if (key == "itpack")
    return parse_pipeline("orth(row),encap,matdep,split,nstar(padded),interchange");
  if (key == "jds")
    return parse_pipeline(
        "orth(row),encap,matdep,split,nstarsort,interchange,nstar(compact),dimreduce");
  throw InputError("unknown named format pipeline '" + key + "'");
}

} // namespace forelem::transform
