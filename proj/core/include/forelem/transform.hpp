//===- transform.hpp - rewrite passes and storage plans --------------------===//
//
// Every pass is a pure function from (program, storage plans) to a new pair.
// Inapplicable passes refuse with a reason instead of mangling the input.
//
//===----------------------------------------------------------------------===//

#ifndef FORELEM_TRANSFORM_HPP
#define FORELEM_TRANSFORM_HPP

#include <string>
#include <vector>

#include "forelem/ir.hpp"

namespace forelem::transform {

enum class PadMode { Padded, Compact };

enum class PassKind {
  Orthogonalize,        // orth(f1[,f2])
  Encapsulate,          // encap[(iter)]
  UndoOrthogonalize,    // undo_orth(field)
  MaterializeIndependent, // matindep
  MaterializeDependent, // matdep
  HorizontalReduce,     // hreduce[(reservoir)]
  StructureSplit,       // split
  NStarMaterialize,     // nstar(padded|compact)
  NStarSort,            // nstarsort
  DimReduce,            // dimreduce
  LoopCollapse,         // collapse
  LoopInterchange,      // interchange[(i,j)]
  LoopBlock,            // block(x) | block(iter,x)
};

struct Pass {
  PassKind kind;
  std::vector<std::string> fields; // orth / undo_orth / hreduce argument
  std::string loop_a, loop_b;      // encap / interchange / block targets
  PadMode mode = PadMode::Compact; // nstar
  long block_size = 0;             // block
};

struct Pipeline {
  std::vector<Pass> passes;
  std::string provenance; // originating tree path label, free-form
};

Pipeline parse_pipeline(std::string_view text);
std::string to_string(const Pass& p);
std::string to_string(const Pipeline& p);

//===----------------------------------------------------------------------===//
// Materialized storage plans
//===----------------------------------------------------------------------===//

// One nesting level of a materialized sequence. Tuples fall into the group
// whose index matches all listed fields (two fields give diagonal-style
// subsets); blocked levels derive the index from field / size and
// field % size respectively.
struct GroupLevel {
  enum class Kind { Value, BlockOuter, BlockLocal };
  Kind kind = Kind::Value;
  std::string iter;                 // loop iterator owning the level
  std::vector<ir::FieldName> fields;
  long block_size = 0;              // BlockOuter / BlockLocal
  ir::SymExtent extent;             // group count at this level
};

struct StoragePlan {
  std::string name; // PA, PA2, ...
  std::string reservoir;
  // Constant-valued subset conditions captured by loop-independent
  // materialization; evaluated when data is bound.
  std::optional<ir::Condition> base_condition;
  std::vector<GroupLevel> levels; // empty = flat sequence
  struct LeafField {
    std::string name;
    bool is_binding = false;
  };
  std::vector<LeafField> leaf_fields;

  enum class NStarState { Symbolic, Padded, Compact };
  NStarState nstar = NStarState::Symbolic;
  bool split = false;
  bool sorted = false;         // perm over the group domain, by length
  bool position_major = false; // group/position loops interchanged
  bool dim_reduced = false;    // leaves back to back, offsets present

  std::string group_iter; // innermost group-level iterator
  std::string leaf_iter;

  bool flat() const { return levels.empty(); }
};

std::string canonical(const StoragePlan& p);

struct TransformResult {
  ir::Program program;
  std::vector<StoragePlan> plans;
};

using PassOutcome = Expected<TransformResult>;

// Applies one pass; refusal carries the reason.
PassOutcome apply_pass(const TransformResult& in, const Pass& pass);

struct PipelineError {
  size_t index;
  std::string reason;
};

// Left fold of the pipeline over the root; the scope validator runs after
// every step. On failure reports the first inapplicable pass.
Expected<TransformResult> apply_pipeline(const ir::Program& root,
                                         const Pipeline& pipeline);

//===----------------------------------------------------------------------===//
// Individual passes (thin wrappers over apply_pass)
//===----------------------------------------------------------------------===//

PassOutcome orthogonalize(const TransformResult& in,
                          const std::vector<ir::FieldName>& fields);
PassOutcome encapsulate(const TransformResult& in, const std::string& loop = "");
PassOutcome undo_orthogonalize(const TransformResult& in,
                               const ir::FieldName& field);
PassOutcome materialize_independent(const TransformResult& in);
PassOutcome materialize_dependent(const TransformResult& in);
PassOutcome horizontal_reduce(const TransformResult& in,
                              const std::string& reservoir = "");
PassOutcome structure_split(const TransformResult& in);
PassOutcome nstar_materialize(const TransformResult& in, PadMode mode);
PassOutcome nstar_sort(const TransformResult& in);
PassOutcome dim_reduce(const TransformResult& in);
PassOutcome loop_collapse(const TransformResult& in);
PassOutcome loop_interchange(const TransformResult& in,
                             const std::string& a = "",
                             const std::string& b = "");
PassOutcome loop_block(const TransformResult& in, const std::string& loop,
                       long x);

// All pass instantiations applicable to `in`, in a fixed canonical order;
// the search-tree enumerator expands nodes with this.
std::vector<Pass> applicable_passes(const TransformResult& in,
                                    const std::vector<long>& block_sizes);

// Names of the five pipelines that derive the classically named formats.
// Keys: coo, csr, ccs, itpack, jds.
Pipeline named_format_pipeline(const std::string& key);

} // namespace forelem::transform

#endif // FORELEM_TRANSFORM_HPP
