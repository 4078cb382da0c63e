//===- concretize.hpp - physical layouts and format recognition -----------===//

#ifndef FORELEM_CONCRETIZE_HPP
#define FORELEM_CONCRETIZE_HPP

#include "forelem/data.hpp"
#include "forelem/transform.hpp"

namespace forelem::storage {

enum class ComponentKind {
  Value,
  RowIndex,
  ColumnIndex,
  FieldIndex,
  Length,
  Offset,
  Permutation,
  Record,
};

enum class Layout { None, RowMajor, ColMajor };

struct Component {
  std::string name;
  ComponentKind kind;
  std::vector<std::string> extents; // symbolic, e.g. "nnz", "m+1", "width"
  Layout layout = Layout::None;
};

struct StorageDescriptor {
  std::vector<Component> components;
  // Shape flags recognition runs on.
  bool flat = true;
  std::string grouping; // field of the single group level ("row", "col", ...)
  bool split = false;
  bool padded = false;
  bool permuted = false;
  bool position_major = false;
  bool offsets = false;
  std::pair<long, long> block_geometry{0, 0}; // (x, y); (0,0) = unblocked
  std::vector<StorageDescriptor> sub;          // hybrid sub-descriptors

  bool blocked() const { return block_geometry.first > 0 || !sub.empty(); }
  std::string shape_key() const;
  std::string to_json(int indent = 0) const;
};

enum class FormatName { COO, CSR, CCS, EllpackItpack, JDS, BlockedHybrid, Unnamed };
std::string to_string(FormatName f);

// Shape matching over the descriptor; UNNAMED is the fallback.
FormatName recognize_format(const StorageDescriptor& d);

struct ConcreteVariant {
  std::string id; // hash of the canonical pipeline text
  transform::Pipeline pipeline;
  ir::Program program; // lowered: ordered loops, no reservoirs, no symbolic N*
  std::vector<transform::StoragePlan> plans;
  StorageDescriptor storage;
  FormatName format = FormatName::Unnamed;
  std::optional<ir::KernelKind> kind;
  int k = 1;
  // Hybrid blocked variants: sub-variants cycled over the matrix blocks.
  std::vector<ConcreteVariant> blocks;

  std::string to_json() const;
};

// Lowers a transformed program to a concrete variant: every remaining
// forelem loop over an index set becomes an ascending ordered loop, and the
// storage plans map onto a physical layout descriptor.
Expected<ConcreteVariant> concretize(const transform::TransformResult& tr,
                                     const transform::Pipeline& pipeline,
                                     const ir::KernelSpec* kernel = nullptr);

// Hybrid formats: a blocked (1-D or 2-D, pre-materialization) program whose
// blocks each get their own sub-pipeline, cycled when the matrix has more
// blocks than pipelines.
Expected<ConcreteVariant>
blocked_concretize(const ir::KernelSpec& kernel,
                   const transform::TransformResult& blocked,
                   const std::vector<transform::Pipeline>& per_block);

//===----------------------------------------------------------------------===//
// Physical instances
//===----------------------------------------------------------------------===//

// One built storage plan for one operand. Leaves are held group-major in
// canonical order; iteration-order views (permutations, padded rectangles,
// jagged slices) are resolved through the lookup helpers.
struct PhysicalStorage {
  std::vector<long> level_extents;
  long group_count = 0; // flattened groups (0 for flat plans)
  long width = 0;       // max group length
  long leaf_count = 0;  // excluding padding

  std::vector<long> len;  // per group, iteration (rank) order
  std::vector<long> ptr;  // offsets when dimensionality-reduced
  std::vector<long> perm; // rank -> group index, when sorted
  std::vector<long> inv_perm;

  std::vector<long> start_by_rank; // leaf start per rank (group-major)
  std::map<std::string, std::vector<long>> int_fields;
  std::map<std::string, std::vector<double>> value_fields;
  std::vector<std::vector<long>> leaf_tuples; // original tuples per leaf

  // Flat leaf index for (group chain indices, position); -1 = padding.
  long leaf_index(const std::vector<long>& chain, long k) const;
  long group_index(const std::vector<long>& chain) const;
  long rank_of_group(long g) const;
  long len_of_group(long g) const;
  long slice_len(long k) const; // #groups with more than k leaves (sorted)

  // Iteration-order views used by descriptor dumps and golden tests.
  std::vector<double> physical_values(const std::string& field,
                                      const transform::StoragePlan& plan) const;
  std::vector<long> physical_indices(const std::string& field,
                                     const transform::StoragePlan& plan) const;
  long pad_count() const;
};

// Fills a physical instance from reservoir data in canonical leaf order:
// ascending lexicographic on the original tuple fields. Extent parameters
// (declared dense extents) resolve level extents such as ordered loop bounds.
PhysicalStorage build_storage(const transform::StoragePlan& plan,
                              const ReservoirData& data,
                              const std::map<std::string, long>& params = {});

// All plans of a variant built against one matrix; hybrid variants build one
// entry per matrix block.
struct BuiltVariant {
  std::map<std::string, PhysicalStorage> by_plan;
  struct BlockInstance {
    long bi, bj;
    const ConcreteVariant* variant;
    SparseOperand sub;
    std::map<std::string, PhysicalStorage> by_plan;
  };
  std::vector<BlockInstance> blocks;
};

BuiltVariant build_variant_storage(const ConcreteVariant& v,
                                   const SparseOperand& m);

// Instance dump: descriptor with component values (golden-test surface).
std::string instance_json(const ConcreteVariant& v, const BuiltVariant& built);

} // namespace forelem::storage

#endif // FORELEM_CONCRETIZE_HPP
