//===- ir.hpp - forelem intermediate representation -----------------------===//
//
// Tuple reservoirs, loop nests and the expression language shared by the
// whole toolkit. Programs are immutable values: every pass builds a new one.
//
//===----------------------------------------------------------------------===//

#ifndef FORELEM_IR_HPP
#define FORELEM_IR_HPP

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "forelem/common.hpp"

namespace forelem::ir {

using FieldName = std::string;

//===----------------------------------------------------------------------===//
// Symbolic extents
//===----------------------------------------------------------------------===//

// A loop bound or dense extent that may only be resolvable once operand data
// is bound (e.g. "largest row value + 1" after encapsulation).
struct SymExtent {
  struct Const {
    long v;
  };
  struct Param {
    std::string name; // declared dense-extent parameter (N, K, ...)
  };
  struct FieldExtent {
    std::string reservoir; // max field value + 1 over the reservoir data
    FieldName field;
  };
  struct LeafCount {
    std::string plan; // |PA| of a flat materialized sequence
  };
  struct CeilDiv {
    std::shared_ptr<SymExtent> total;
    long divisor;
  };
  std::variant<Const, Param, FieldExtent, LeafCount, CeilDiv> v;

  static SymExtent constant(long c) { return {Const{c}}; }
  static SymExtent param(std::string n) { return {Param{std::move(n)}}; }
};

//===----------------------------------------------------------------------===//
// Expressions
//===----------------------------------------------------------------------===//

enum class BinOp { Add, Sub, Mul, Div };

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
  struct Num {
    double v;
  };
  struct ScalarRef {
    std::string name;
  };
  struct IterRef {
    std::string name;
  };
  struct TupleField {
    std::string tuple;
    FieldName field;
  };
  // Address-function read A(t).
  struct BindingRead {
    std::string binding;
    std::string tuple;
  };
  struct DenseRead {
    std::string name;
    std::vector<ExprPtr> idx;
  };
  // Leaf-record field of a materialized sequence: PA[i][k].f, or PA.f[i][k]
  // once the plan is split. `field` may name a tuple field or a binding.
  struct StorageField {
    std::string plan;
    std::string field;
    std::vector<ExprPtr> idx;
    bool split = false;
  };
  struct Binary {
    BinOp op;
    ExprPtr lhs, rhs;
  };

  std::variant<Num, ScalarRef, IterRef, TupleField, BindingRead, DenseRead,
               StorageField, Binary>
      node;
};

ExprPtr num(double v);
ExprPtr scalar_ref(std::string name);
ExprPtr iter_ref(std::string name);
ExprPtr tuple_field(std::string tuple, FieldName field);
ExprPtr binding_read(std::string binding, std::string tuple);
ExprPtr dense_read(std::string name, std::vector<ExprPtr> idx);
ExprPtr storage_field(std::string plan, std::string field,
                      std::vector<ExprPtr> idx, bool split = false);
ExprPtr binary(BinOp op, ExprPtr lhs, ExprPtr rhs);

// Adds a small integer to an expression, folding literal +/- tails so that
// 1-based <-> 0-based bound conversion round-trips structurally.
ExprPtr add_const(const ExprPtr& e, long delta);

//===----------------------------------------------------------------------===//
// Reservoir subset conditions
//===----------------------------------------------------------------------===//

// Value side of one field constraint: an expression (constant, iterator,
// outer tuple field) or an open interval (lo, hi) with optional +inf.
struct Interval {
  ExprPtr lo;
  std::optional<ExprPtr> hi; // nullopt = inf
};

struct ValueRef {
  std::variant<ExprPtr, Interval> v;
  bool is_interval() const { return std::holds_alternative<Interval>(v); }
};

struct Condition {
  std::vector<FieldName> fields;
  std::vector<ValueRef> values; // |fields| == |values|
};

//===----------------------------------------------------------------------===//
// Statements
//===----------------------------------------------------------------------===//

struct Stmt;
using StmtPtr = std::shared_ptr<const Stmt>;

struct Block {
  std::vector<StmtPtr> stmts;
};

// Ordered loop, half-open [lo, hi); descending variants run hi-1 .. lo.
struct ForStmt {
  std::string iter;
  ExprPtr lo, hi;
  bool descending = false;
  Block body;
};

// Unordered loop over a (subset of a) tuple reservoir.
struct ForelemTupleStmt {
  std::string tuple_var;
  std::string reservoir;
  std::optional<Condition> cond;
  Block body;
};

// Index domains for forelem loops that no longer name a reservoir directly.
struct Domain {
  // All values of one tuple field (orthogonalization outer loop).
  struct FieldValues {
    std::string reservoir;
    FieldName field;
  };
  // Encapsulated [0, extent).
  struct NatUpTo {
    SymExtent extent;
  };
  // One blocking partition: [outer*size, min((outer+1)*size, total)).
  struct BlockRange {
    std::string outer_iter;
    long size;
    SymExtent total;
  };
  // Symbolic leaf index set of a materialized sequence.
  struct NStar {
    std::string plan;
  };
  // [0, PA_len[...]) after N* materialization: per-group leaf counts, all
  // equal to the padded width when the plan is padded.
  struct LenBound {
    std::string plan;
  };
  // Position loop of a position-major plan: [0, max group length).
  struct WidthBound {
    std::string plan;
  };
  // Group loop of a sorted position-major plan after compact N*
  // materialization: the variable takes perm[q] for q = 0..slice_len-1,
  // where the slice is selected by the enclosing position iterator.
  struct PermSlice {
    std::string plan;
  };
  // [PA_ptr[g], PA_ptr[g+1]) after dimensionality reduction; g is the rank
  // of the enclosing group (or position) loop.
  struct PtrRange {
    std::string plan;
  };
  // Iterates perm(N_m): the loop variable takes perm[q] for q = 0..m-1.
  struct PermutedNat {
    std::string plan;
  };
  std::variant<FieldValues, NatUpTo, BlockRange, NStar, LenBound, WidthBound,
               PermSlice, PtrRange, PermutedNat>
      v;
};

struct ForelemIndexStmt {
  std::string iter;
  Domain domain;
  Block body;
  // Set on the inner loop of a position-major materialized pair before the
  // compact N* set is made explicit: visit only if leaf (group, pos) exists.
  bool guarded = false;
  // Concretization fixes ascending iteration order; lowered nests consist of
  // ordered loops only.
  bool ordered = false;
};

struct LValue {
  struct Scalar {
    std::string name;
  };
  struct Dense {
    std::string name;
    std::vector<ExprPtr> idx;
  };
  // Address-function write A(t); parseable, rejected by transform and exec.
  struct BindingWrite {
    std::string binding;
    std::string tuple;
  };
  std::variant<Scalar, Dense, BindingWrite> v;
};

struct AssignStmt {
  LValue lhs;
  bool accumulate = false; // +=
  ExprPtr rhs;
};

// Reservoir mutation T = T u {tuple}. Expressible in the IR so fill-in style
// programs can be represented, but no pass or executor accepts it.
struct ReservoirUnionStmt {
  std::string reservoir;
  std::vector<ExprPtr> tuple;
};

struct Stmt {
  std::variant<ForStmt, ForelemTupleStmt, ForelemIndexStmt, AssignStmt,
               ReservoirUnionStmt>
      node;
};

StmtPtr make_stmt(Stmt s);

//===----------------------------------------------------------------------===//
// Declarations and programs
//===----------------------------------------------------------------------===//

// Reservoirs created by loop collapse carry the defining equi-join.
struct JoinInfo {
  std::string left, right;
  FieldName left_field, right_field; // left.left_field == right.right_field
};

// Reservoirs created by horizontal iteration-space reduction are projections
// of their source; tuple data derives from it when operands are bound.
struct ProjectionInfo {
  std::string source;
  std::vector<FieldName> kept;
};

struct ReservoirDecl {
  std::string name;
  std::vector<FieldName> schema;
  std::optional<JoinInfo> join;
  std::optional<ProjectionInfo> projection;
};

struct DataDecl {
  std::string name;
  std::string reservoir;
  // Reservoir the binding was originally declared over, when `reservoir` is
  // a derived (joined/projected) one. Empty for primitive bindings.
  std::string origin;
};

struct DenseDecl {
  std::string name;
  std::vector<SymExtent> extents;
};

struct Program {
  std::vector<ReservoirDecl> reservoirs;
  std::vector<DataDecl> bindings;
  std::vector<DenseDecl> denses;
  Block body;

  const ReservoirDecl* find_reservoir(std::string_view name) const;
  const DataDecl* find_binding(std::string_view name) const;
  const DenseDecl* find_dense(std::string_view name) const;
};

//===----------------------------------------------------------------------===//
// Kernels
//===----------------------------------------------------------------------===//

enum class KernelKind { SpMV, SpMM, TrSv };

struct KernelSpec {
  KernelKind kind;
  int k = 1; // dense column count (SpMM)
  Program program;
  // Operand roles.
  std::string matrix_reservoir = "T";
  std::string matrix_binding = "A";
  std::vector<std::string> inputs;  // dense operands read
  std::vector<std::string> outputs; // dense operands written
  std::string rows_param = "NR", cols_param = "NC", k_param = "K";
};

KernelKind kernel_kind_from_name(std::string_view name);
std::string to_string(KernelKind k);

// Canonical untransformed IR for a kernel: the root every transformation
// pipeline starts from.
KernelSpec builtin_kernel(KernelKind kind, int k = 1);

//===----------------------------------------------------------------------===//
// Queries and validation
//===----------------------------------------------------------------------===//

// Fields of `reservoir` read anywhere in the program (conditions or body).
std::set<FieldName> free_fields(const Program& p, const std::string& reservoir);

// Scope soundness: every iterator/tuple variable/name used is bound.
// Throws InternalError on violation; run after parsing and after every pass.
void validate(const Program& p);

std::string pretty(const Program& p);
std::string pretty(const Expr& e);
std::string to_string(const SymExtent& e);

// Canonical form: pretty text with iterators/tuple variables renamed in order
// of appearance. Used for structural equality and dedup hashes.
std::string canonical(const Program& p);

// The rename table canonical() applies (binder -> %n), exposed so storage
// plans can be canonicalized consistently with their program.
std::map<std::string, std::string> binder_renames(const Program& p);

bool structurally_equal(const Program& a, const Program& b);

} // namespace forelem::ir

#endif // FORELEM_IR_HPP
