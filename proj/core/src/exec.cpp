#include "forelem/exec.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

namespace forelem::exec {

using namespace ir;
using storage::PhysicalStorage;
using transform::StoragePlan;

namespace {

//===----------------------------------------------------------------------===//
// Interpreter
//===----------------------------------------------------------------------===//

struct IterState {
  long value = 0;
  long rank = 0;
};

class Interp {
public:
  Interp(const Program& prog, const std::vector<StoragePlan>& plans,
         DataEnv& data, Env& env,
         const std::map<std::string, const PhysicalStorage*>& storages)
      : prog_(prog), plans_(plans), data_(data), env_(env), storages_(storages) {
    for (auto& p : plans_) {
      visit_loop_[p.position_major ? p.group_iter : p.leaf_iter] = &p;
      by_name_[p.name] = &p;
    }
  }

  void run() { block(prog_.body); }

private:
  const Program& prog_;
  const std::vector<StoragePlan>& plans_;
  DataEnv& data_;
  Env& env_;
  const std::map<std::string, const PhysicalStorage*>& storages_;
  std::map<std::string, IterState> iters_;
  std::map<std::string, std::pair<const ReservoirData*, size_t>> tuples_;
  std::map<std::string, const StoragePlan*> visit_loop_;
  std::map<std::string, const StoragePlan*> by_name_;

  const PhysicalStorage& inst(const std::string& plan) const {
    auto it = storages_.find(plan);
    if (it == storages_.end())
      throw InternalError("no storage instance for plan '" + plan + "'");
    return *it->second;
  }
  const StoragePlan& plan(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end())
      throw InternalError("unknown storage plan '" + name + "'");
    return *it->second;
  }

  long eval_extent(const SymExtent& e) {
    return std::visit(
        [&](auto&& n) -> long {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, SymExtent::Const>) {
            return n.v;
          } else if constexpr (std::is_same_v<T, SymExtent::Param>) {
            auto it = env_.params.find(n.name);
            if (it == env_.params.end())
              throw InputError("unbound extent parameter '" + n.name + "'");
            return it->second;
          } else if constexpr (std::is_same_v<T, SymExtent::FieldExtent>) {
            const ReservoirData& d = data_.resolve(n.reservoir);
            size_t fi = field_pos(d, n.field);
            long mx = -1;
            for (auto& t : d.tuples)
              mx = std::max(mx, t[fi]);
            return mx + 1;
          } else if constexpr (std::is_same_v<T, SymExtent::LeafCount>) {
            return inst(n.plan).leaf_count;
          } else if constexpr (std::is_same_v<T, SymExtent::CeilDiv>) {
            long tot = eval_extent(*n.total);
            return (tot + n.divisor - 1) / n.divisor;
          }
          return 0;
        },
        e.v);
  }

  static size_t field_pos(const ReservoirData& d, const FieldName& f) {
    auto it = std::find(d.schema.begin(), d.schema.end(), f);
    if (it == d.schema.end())
      throw InternalError("field '" + f + "' missing from reservoir data");
    return static_cast<size_t>(it - d.schema.begin());
  }

  std::vector<long> group_chain(const StoragePlan& p) {
    std::vector<long> chain;
    for (auto& l : p.levels) {
      auto it = iters_.find(l.iter);
      if (it == iters_.end())
        throw InternalError("group iterator '" + l.iter + "' not active");
      chain.push_back(it->second.value);
    }
    return chain;
  }

  double eval(const Expr& e) {
    return std::visit(
        [&](auto&& n) -> double {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, Expr::Num>) {
            return n.v;
          } else if constexpr (std::is_same_v<T, Expr::ScalarRef>) {
            auto pit = env_.params.find(n.name);
            if (pit != env_.params.end())
              return static_cast<double>(pit->second);
            auto sit = env_.scalars.find(n.name);
            if (sit == env_.scalars.end())
              throw InternalError("scalar '" + n.name + "' read before set");
            return sit->second;
          } else if constexpr (std::is_same_v<T, Expr::IterRef>) {
            auto it = iters_.find(n.name);
            if (it == iters_.end())
              throw InternalError("iterator '" + n.name + "' not active");
            return static_cast<double>(it->second.value);
          } else if constexpr (std::is_same_v<T, Expr::TupleField>) {
            auto it = tuples_.find(n.tuple);
            if (it == tuples_.end())
              throw InternalError("tuple variable '" + n.tuple + "' not bound");
            const ReservoirData& d = *it->second.first;
            return static_cast<double>(
                d.tuples[it->second.second][field_pos(d, n.field)]);
          } else if constexpr (std::is_same_v<T, Expr::BindingRead>) {
            auto it = tuples_.find(n.tuple);
            if (it == tuples_.end())
              throw InternalError("tuple variable '" + n.tuple + "' not bound");
            const ReservoirData& d = *it->second.first;
            auto bit = d.bindings.find(n.binding);
            if (bit == d.bindings.end())
              throw InputError("binding '" + n.binding + "' not bound");
            return bit->second[it->second.second];
          } else if constexpr (std::is_same_v<T, Expr::DenseRead>) {
            return dense(n.name).at(eval_idx(n.idx));
          } else if constexpr (std::is_same_v<T, Expr::StorageField>) {
            return storage_value(n);
          } else if constexpr (std::is_same_v<T, Expr::Binary>) {
            double l = eval(*n.lhs), r = eval(*n.rhs);
            switch (n.op) {
            case BinOp::Add:
              return l + r;
            case BinOp::Sub:
              return l - r;
            case BinOp::Mul:
              return l * r;
            case BinOp::Div:
              return l / r;
            }
          }
          return 0;
        },
        e.node);
  }

  long eval_int(const Expr& e) {
    double v = eval(e);
    long r = std::lround(v);
    if (std::abs(v - static_cast<double>(r)) > 1e-9)
      throw InternalError("non-integer index value " + std::to_string(v));
    return r;
  }

  std::vector<long> eval_idx(const std::vector<ExprPtr>& idx) {
    std::vector<long> out;
    for (auto& e : idx)
      out.push_back(eval_int(*e));
    return out;
  }

  DenseOperand& dense(const std::string& name) {
    auto it = env_.dense.find(name);
    if (it == env_.dense.end())
      throw InputError("dense operand '" + name + "' not bound");
    return it->second;
  }

  // Internal leaf offset for a storage access; -1 denotes a padding leaf.
  long storage_leaf(const Expr::StorageField& sf) {
    const StoragePlan& p = plan(sf.plan);
    const PhysicalStorage& s = inst(sf.plan);
    std::vector<long> idx = eval_idx(sf.idx);
    if (p.flat())
      return idx.size() == 1 ? s.leaf_index({}, idx[0]) : -1;
    if (p.dim_reduced && !p.position_major) {
      if (idx.size() != 1)
        throw InternalError("flattened access expects one subscript");
      return idx[0] >= 0 && idx[0] < s.leaf_count ? idx[0] : -1;
    }
    long k = idx.back();
    idx.pop_back();
    return s.leaf_index(idx, k);
  }

  double storage_value(const Expr::StorageField& sf) {
    const PhysicalStorage& s = inst(sf.plan);
    long leaf = storage_leaf(sf);
    auto vit = s.value_fields.find(sf.field);
    if (vit != s.value_fields.end())
      return leaf < 0 ? 0.0 : vit->second[static_cast<size_t>(leaf)];
    auto iit = s.int_fields.find(sf.field);
    if (iit != s.int_fields.end())
      return leaf < 0 ? 0.0
                      : static_cast<double>(iit->second[static_cast<size_t>(leaf)]);
    throw InternalError("leaf field '" + sf.field + "' missing from plan " +
                        sf.plan);
  }

  void record_reservoir_visit(const ReservoirData& d, size_t i) {
    if (!env_.instr)
      return;
    Instrumentation::Visit v;
    v.tuple = d.tuples[i];
    for (auto& [name, vals] : d.bindings)
      v.data.push_back(vals[i]);
    env_.instr->visits.push_back(std::move(v));
  }

  void record_leaf_visit(const StoragePlan& p) {
    if (!env_.instr)
      return;
    const PhysicalStorage& s = inst(p.name);
    long leaf;
    if (p.flat()) {
      leaf = iters_.at(p.leaf_iter).value;
    } else if (p.dim_reduced && !p.position_major) {
      leaf = iters_.at(p.leaf_iter).value;
    } else {
      std::vector<long> chain = group_chain(p);
      long k = iters_.at(p.leaf_iter).value;
      leaf = s.leaf_index(chain, k);
    }
    if (leaf < 0) {
      ++env_.instr->pad_visits;
      return;
    }
    Instrumentation::Visit v;
    v.tuple = s.leaf_tuples[static_cast<size_t>(leaf)];
    for (auto& [name, vals] : s.value_fields)
      v.data.push_back(vals[static_cast<size_t>(leaf)]);
    env_.instr->visits.push_back(std::move(v));
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
            long lo = eval_int(*n.lo), hi = eval_int(*n.hi);
            if (!n.descending) {
              for (long v = lo; v < hi; ++v)
                run_loop_body(n.iter, v, v, n.body);
            } else {
              for (long v = hi - 1; v >= lo; --v)
                run_loop_body(n.iter, v, v, n.body);
            }
            iters_.erase(n.iter);
          } else if constexpr (std::is_same_v<T, ForelemTupleStmt>) {
            tuple_loop(n);
          } else if constexpr (std::is_same_v<T, ForelemIndexStmt>) {
            index_loop(n);
          } else if constexpr (std::is_same_v<T, AssignStmt>) {
            assign(n);
          } else if constexpr (std::is_same_v<T, ReservoirUnionStmt>) {
            throw InputError("reservoir mutation is not executable");
          }
        },
        s.node);
  }

  void run_loop_body(const std::string& iter, long value, long rank,
                     const Block& body) {
    iters_[iter] = {value, rank};
    auto vit = visit_loop_.find(iter);
    if (vit != visit_loop_.end())
      record_leaf_visit(*vit->second);
    block(body);
  }

  void tuple_loop(const ForelemTupleStmt& n) {
    const ReservoirData& d = data_.resolve(n.reservoir);
    long matched = 0;
    for (size_t i = 0; i < d.tuples.size(); ++i) {
      if (n.cond && !condition_holds(*n.cond, d, i))
        continue;
      ++matched;
      tuples_[n.tuple_var] = {&d, i};
      record_reservoir_visit(d, i);
      block(n.body);
    }
    tuples_.erase(n.tuple_var);
    if (env_.instr && matched == 0)
      ++env_.instr->empty_subset_iterations;
  }

  bool condition_holds(const Condition& c, const ReservoirData& d, size_t i) {
    for (size_t f = 0; f < c.fields.size(); ++f) {
      long have = d.tuples[i][field_pos(d, c.fields[f])];
      const ValueRef& v = c.values[f];
      if (auto* iv = std::get_if<Interval>(&v.v)) {
        // Open endpoints; a missing upper bound is +inf.
        if (!(static_cast<double>(have) > eval(*iv->lo)))
          return false;
        if (iv->hi && !(static_cast<double>(have) < eval(**iv->hi)))
          return false;
      } else {
        if (have != eval_int(*std::get<ExprPtr>(v.v)))
          return false;
      }
    }
    return true;
  }

  void index_loop(const ForelemIndexStmt& n) {
    auto guard_plan = [&]() -> const StoragePlan* {
      if (!n.guarded)
        return nullptr;
      for (auto& p : plans_)
        if (p.group_iter == n.iter)
          return &p;
      throw InternalError("guarded loop '" + n.iter + "' has no plan");
    };
    const StoragePlan* gp = guard_plan();
    auto visit = [&](long value, long rank) {
      if (gp) {
        const PhysicalStorage& s = inst(gp->name);
        long k = iters_.at(gp->leaf_iter).value;
        std::vector<long> chain = {value};
        if (s.leaf_index(chain, k) < 0)
          return; // leaf (group, position) does not exist
      }
      run_loop_body(n.iter, value, rank, n.body);
    };

    std::visit(
        [&](auto&& d) {
          using D = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<D, Domain::FieldValues>) {
            const ReservoirData& rd = data_.resolve(d.reservoir);
            size_t fp = field_pos(rd, d.field);
            std::vector<long> values;
            for (auto& t : rd.tuples)
              values.push_back(t[fp]);
            std::sort(values.begin(), values.end());
            values.erase(std::unique(values.begin(), values.end()),
                         values.end());
            long rank = 0;
            for (long v : values)
              visit(v, rank++);
          } else if constexpr (std::is_same_v<D, Domain::NatUpTo>) {
            long hi = eval_extent(d.extent);
            for (long v = 0; v < hi; ++v)
              visit(v, v);
          } else if constexpr (std::is_same_v<D, Domain::BlockRange>) {
            long outer = iters_.at(d.outer_iter).value;
            long total = eval_extent(d.total);
            long lo = outer * d.size;
            long hi = std::min((outer + 1) * d.size, total);
            for (long v = lo; v < hi; ++v)
              visit(v, v - lo);
          } else if constexpr (std::is_same_v<D, Domain::NStar>) {
            const StoragePlan& p = plan(d.plan);
            const PhysicalStorage& s = inst(d.plan);
            long hi;
            if (p.flat())
              hi = s.leaf_count;
            else if (p.position_major && n.iter == p.leaf_iter)
              hi = s.width;
            else
              hi = s.len_of_group(s.group_index(group_chain(p)));
            for (long v = 0; v < hi; ++v)
              visit(v, v);
          } else if constexpr (std::is_same_v<D, Domain::LenBound>) {
            const StoragePlan& p = plan(d.plan);
            const PhysicalStorage& s = inst(d.plan);
            long hi;
            if (p.flat())
              hi = s.leaf_count;
            else if (p.nstar == StoragePlan::NStarState::Padded)
              hi = s.width;
            else
              hi = s.len_of_group(s.group_index(group_chain(p)));
            for (long v = 0; v < hi; ++v)
              visit(v, v);
          } else if constexpr (std::is_same_v<D, Domain::WidthBound>) {
            long hi = inst(d.plan).width;
            for (long v = 0; v < hi; ++v)
              visit(v, v);
          } else if constexpr (std::is_same_v<D, Domain::PermSlice>) {
            const StoragePlan& p = plan(d.plan);
            const PhysicalStorage& s = inst(d.plan);
            long k = iters_.at(p.leaf_iter).value;
            long hi = s.slice_len(k);
            for (long q = 0; q < hi; ++q)
              visit(s.perm.empty() ? q : s.perm[static_cast<size_t>(q)], q);
          } else if constexpr (std::is_same_v<D, Domain::PtrRange>) {
            const StoragePlan& p = plan(d.plan);
            const PhysicalStorage& s = inst(d.plan);
            // Rank of the flattened group; sorted plans iterate by rank, so
            // the sorted group loop's own rank short-circuits the inverse
            // permutation lookup.
            long r;
            if (p.levels.size() == 1 && p.sorted)
              r = iters_.at(p.group_iter).rank;
            else
              r = s.rank_of_group(s.group_index(group_chain(p)));
            if (r < 0)
              return;
            long lo = s.start_by_rank[static_cast<size_t>(r)];
            long hi = lo + s.len[static_cast<size_t>(r)];
            for (long v = lo; v < hi; ++v)
              visit(v, v - lo);
          } else if constexpr (std::is_same_v<D, Domain::PermutedNat>) {
            const PhysicalStorage& s = inst(d.plan);
            for (long q = 0; q < s.group_count; ++q)
              visit(s.perm.empty() ? q : s.perm[static_cast<size_t>(q)], q);
          }
        },
        n.domain.v);
    iters_.erase(n.iter);
  }

  void assign(const AssignStmt& n) {
    double rhs = eval(*n.rhs);
    std::visit(
        [&](auto&& lv) {
          using L = std::decay_t<decltype(lv)>;
          if constexpr (std::is_same_v<L, LValue::Scalar>) {
            if (n.accumulate)
              env_.scalars[lv.name] += rhs;
            else
              env_.scalars[lv.name] = rhs;
          } else if constexpr (std::is_same_v<L, LValue::Dense>) {
            double& cell = dense(lv.name).at(eval_idx(lv.idx));
            if (n.accumulate)
              cell += rhs;
            else
              cell = rhs;
          } else {
            throw InputError("address-function writes are not executable");
          }
        },
        n.lhs.v);
  }
};

std::map<std::string, long> kernel_params(const ir::KernelSpec& kernel,
                                          const SparseOperand& m) {
  return {{"NR", m.n_rows}, {"NC", m.n_cols}, {"K", kernel.k}};
}

void bind_kernel_dense(Env& env, const ir::KernelSpec& kernel,
                       const SparseOperand& m,
                       const std::vector<DenseOperand>& inputs) {
  if (inputs.size() != kernel.inputs.size())
    throw InputError("expected " + std::to_string(kernel.inputs.size()) +
                     " dense input(s)");
  for (size_t i = 0; i < inputs.size(); ++i)
    env.dense[kernel.inputs[i]] = inputs[i];
  for (auto& out : kernel.outputs) {
    std::vector<long> extents;
    switch (kernel.kind) {
    case KernelKind::SpMV:
      extents = {m.n_rows};
      break;
    case KernelKind::SpMM:
      extents = {m.n_rows, kernel.k};
      break;
    case KernelKind::TrSv:
      extents = {m.n_rows};
      break;
    }
    env.dense[out] = DenseOperand::zeros(extents);
  }
}

void check_kernel_operands(const ir::KernelSpec& kernel, const SparseOperand& m,
                           const std::vector<DenseOperand>& inputs) {
  if (inputs.size() != kernel.inputs.size())
    throw InputError("wrong number of dense inputs");
  const DenseOperand& in0 = inputs.at(0);
  switch (kernel.kind) {
  case KernelKind::SpMV:
    if (in0.extents != std::vector<long>{m.n_cols})
      throw InputError("input vector extent does not match the matrix");
    break;
  case KernelKind::SpMM:
    if (in0.extents != std::vector<long>{m.n_cols, kernel.k})
      throw InputError("input matrix extents do not match");
    break;
  case KernelKind::TrSv:
    if (m.n_rows != m.n_cols)
      throw InputError("triangular solve needs a square matrix");
    if (in0.extents != std::vector<long>{m.n_rows})
      throw InputError("right-hand side extent does not match the matrix");
    if (!m.has_full_nonzero_diagonal())
      throw InputError("triangular solve needs every diagonal entry present "
                       "and nonzero");
    break;
  }
}

ir::KernelSpec variant_kernel(const storage::ConcreteVariant& v) {
  if (!v.kind)
    throw InputError("variant carries no kernel role information");
  return ir::builtin_kernel(*v.kind, v.k);
}

} // namespace

void interpret(const ir::Program& program,
               const std::vector<StoragePlan>& plans, DataEnv& data, Env& env) {
  std::map<std::string, PhysicalStorage> built;
  for (auto& p : plans)
    built.emplace(p.name,
                  storage::build_storage(p, data.resolve(p.reservoir),
                                         env.params));
  std::map<std::string, const PhysicalStorage*> refs;
  for (auto& [name, s] : built)
    refs[name] = &s;
  Interp interp(program, plans, data, env, refs);
  interp.run();
}

std::vector<DenseOperand> run_program(const ir::Program& program,
                                      const std::vector<StoragePlan>& plans,
                                      const ir::KernelSpec& kernel,
                                      const SparseOperand& m,
                                      const std::vector<DenseOperand>& inputs,
                                      Instrumentation* instr) {
  check_kernel_operands(kernel, m, inputs);
  DataEnv data(program);
  // The matrix reservoir may have been replaced by a projection; bind the
  // base one.
  std::string base = kernel.matrix_reservoir;
  if (!program.find_reservoir(base)) {
    for (auto& r : program.reservoirs)
      if (!r.join && !r.projection)
        base = r.name;
  }
  data.bind_matrix(base, kernel.matrix_binding, m);
  Env env;
  env.params = kernel_params(kernel, m);
  env.instr = instr;
  bind_kernel_dense(env, kernel, m, inputs);
  interpret(program, plans, data, env);
  std::vector<DenseOperand> out;
  for (auto& name : kernel.outputs)
    out.push_back(env.dense.at(name));
  return out;
}

RunResult run_variant(const storage::ConcreteVariant& v, const SparseOperand& m,
                      const std::vector<DenseOperand>& inputs,
                      const RunOptions& opt) {
  ir::KernelSpec kernel = variant_kernel(v);
  check_kernel_operands(kernel, m, inputs);

  storage::BuiltVariant built = storage::build_variant_storage(v, m);

  auto run_once = [&](std::vector<DenseOperand>& outputs) {
    Env env;
    env.params = kernel_params(kernel, m);
    bind_kernel_dense(env, kernel, m, inputs);
    if (v.blocks.empty()) {
      DataEnv data(v.program);
      auto [reservoir, binding] =
          std::pair<std::string, std::string>{kernel.matrix_reservoir,
                                              kernel.matrix_binding};
      std::string base = reservoir;
      if (!v.program.find_reservoir(base))
        for (auto& r : v.program.reservoirs)
          if (!r.join && !r.projection)
            base = r.name;
      data.bind_matrix(base, binding, m);
      std::map<std::string, const PhysicalStorage*> refs;
      for (auto& [name, s] : built.by_plan)
        refs[name] = &s;
      Interp interp(v.program, v.plans, data, env, refs);
      interp.run();
    } else {
      // Hybrid: blocks in ascending (bi, bj) order, each with its own
      // storage but the shared dense operands.
      for (auto& blk : built.blocks) {
        DataEnv data(blk.variant->program);
        std::string base = kernel.matrix_reservoir;
        if (!blk.variant->program.find_reservoir(base))
          for (auto& r : blk.variant->program.reservoirs)
            if (!r.join && !r.projection)
              base = r.name;
        data.bind_matrix(base, kernel.matrix_binding, blk.sub);
        std::map<std::string, const PhysicalStorage*> refs;
        for (auto& [name, s] : blk.by_plan)
          refs[name] = &s;
        Interp interp(blk.variant->program, blk.variant->plans, data, env,
                      refs);
        interp.run();
      }
    }
    outputs.clear();
    for (auto& name : kernel.outputs)
      outputs.push_back(env.dense.at(name));
  };

  RunResult result;
  result.repeats = std::max(1, opt.repeats);
  std::vector<DenseOperand> outputs;
  run_once(outputs); // warmup; also the returned outputs
  result.outputs = outputs;
  if (opt.timed) {
    std::vector<double> times;
    for (int r = 0; r < result.repeats; ++r) {
      auto t0 = std::chrono::steady_clock::now();
      run_once(outputs);
      auto t1 = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    size_t n = times.size();
    double med = n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
    result.wall_time = std::max(med, 1e-9);
  } else {
    result.wall_time = 1e-9;
  }
  for (auto& o : result.outputs)
    for (double x : o.values)
      result.checksum += x;
  return result;
}

std::vector<DenseOperand> reference_oracle(ir::KernelKind kind, int k,
                                           const SparseOperand& m,
                                           const std::vector<DenseOperand>& inputs) {
  if (m.n_rows > 4096 || m.n_cols > 4096)
    throw InputError("matrix too large for dense expansion");
  ir::KernelSpec spec = ir::builtin_kernel(kind, kind == KernelKind::SpMM ? k : 1);
  check_kernel_operands(spec, m, inputs);
  std::vector<std::vector<double>> dense(
      static_cast<size_t>(m.n_rows),
      std::vector<double>(static_cast<size_t>(m.n_cols), 0.0));
  for (auto& e : m.entries)
    dense[static_cast<size_t>(e.row)][static_cast<size_t>(e.col)] = e.value;

  switch (kind) {
  case KernelKind::SpMV: {
    DenseOperand y = DenseOperand::zeros({m.n_rows});
    for (long r = 0; r < m.n_rows; ++r) {
      double sum = 0;
      for (long c = 0; c < m.n_cols; ++c)
        sum += dense[static_cast<size_t>(r)][static_cast<size_t>(c)] *
               inputs[0].values[static_cast<size_t>(c)];
      y.values[static_cast<size_t>(r)] = sum;
    }
    return {y};
  }
  case KernelKind::SpMM: {
    DenseOperand c = DenseOperand::zeros({m.n_rows, static_cast<long>(k)});
    for (long r = 0; r < m.n_rows; ++r)
      for (long j = 0; j < k; ++j) {
        double sum = 0;
        for (long cc = 0; cc < m.n_cols; ++cc)
          sum += dense[static_cast<size_t>(r)][static_cast<size_t>(cc)] *
                 inputs[0].at({cc, j});
        c.at({r, j}) = sum;
      }
    return {c};
  }
  case KernelKind::TrSv: {
    // Back substitution over the diagonal and superdiagonal part.
    long n = m.n_rows;
    DenseOperand x = DenseOperand::zeros({n});
    for (long i = n - 1; i >= 0; --i) {
      double sum = inputs[0].values[static_cast<size_t>(i)];
      for (long j = i + 1; j < n; ++j)
        sum -= dense[static_cast<size_t>(i)][static_cast<size_t>(j)] *
               x.values[static_cast<size_t>(j)];
      double diag = dense[static_cast<size_t>(i)][static_cast<size_t>(i)];
      if (diag == 0.0)
        throw InputError("zero diagonal entry in triangular solve");
      x.values[static_cast<size_t>(i)] = sum / diag;
    }
    return {x};
  }
  }
  throw InternalError("unknown kernel kind");
}

double build_time(const storage::ConcreteVariant& v, const SparseOperand& m) {
  auto t0 = std::chrono::steady_clock::now();
  storage::BuiltVariant built = storage::build_variant_storage(v, m);
  auto t1 = std::chrono::steady_clock::now();
  (void)built;
  return std::max(std::chrono::duration<double>(t1 - t0).count(), 1e-9);
}

std::vector<DenseOperand> default_inputs(ir::KernelKind kind, int k,
                                         const SparseOperand& m,
                                         uint64_t seed) {
  // splitmix64 stream; values in [0.5, 1.5).
  auto next = [state = seed + 0x9e3779b97f4a7c15ULL]() mutable {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z = z ^ (z >> 31);
    return 0.5 + static_cast<double>(z >> 11) * 0x1.0p-53;
  };
  switch (kind) {
  case KernelKind::SpMV: {
    DenseOperand b = DenseOperand::zeros({m.n_cols});
    for (auto& v : b.values)
      v = next();
    return {b};
  }
  case KernelKind::SpMM: {
    DenseOperand b = DenseOperand::zeros({m.n_cols, static_cast<long>(k)});
    for (auto& v : b.values)
      v = next();
    return {b};
  }
  case KernelKind::TrSv: {
    DenseOperand b = DenseOperand::zeros({m.n_rows});
    for (auto& v : b.values)
      v = next();
    return {b};
  }
  }
  throw InternalError("unknown kernel kind");
}

double max_rel_err(const std::vector<DenseOperand>& got,
                   const std::vector<DenseOperand>& want) {
  if (got.size() != want.size())
    throw InputError("output arity mismatch");
  double worst = 0;
  for (size_t i = 0; i < got.size(); ++i) {
    if (got[i].values.size() != want[i].values.size())
      throw InputError("output extent mismatch");
    for (size_t j = 0; j < got[i].values.size(); ++j) {
      double denom = std::max(1.0, std::abs(want[i].values[j]));
      worst = std::max(worst,
                       std::abs(got[i].values[j] - want[i].values[j]) / denom);
    }
  }
  return worst;
}

} // namespace forelem::exec
