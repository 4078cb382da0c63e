//===- exec.hpp - interpreter, reference oracles and timing ----------------===//

#ifndef FORELEM_EXEC_HPP
#define FORELEM_EXEC_HPP

#include "forelem/concretize.hpp"

namespace forelem::exec {

struct RunResult {
  std::vector<DenseOperand> outputs;
  double wall_time = 0; // seconds, median over repeats
  int repeats = 1;
  double checksum = 0; // index-order sum over outputs
};

// Leaf-visit trace for the multiset-preservation property: one record per
// tuple actually processed, padding visits counted separately.
struct Instrumentation {
  struct Visit {
    std::vector<long> tuple;
    std::vector<double> data;
    friend bool operator<(const Visit& a, const Visit& b) {
      return a.tuple != b.tuple ? a.tuple < b.tuple : a.data < b.data;
    }
    friend bool operator==(const Visit& a, const Visit& b) {
      return a.tuple == b.tuple && a.data == b.data;
    }
  };
  std::vector<Visit> visits;
  long pad_visits = 0;
  long empty_subset_iterations = 0; // loop entries that matched no tuple
};

// Execution environment for a program at any transformation stage.
struct Env {
  std::map<std::string, DenseOperand> dense;
  std::map<std::string, long> params;
  std::map<std::string, double> scalars;
  Instrumentation* instr = nullptr;
};

// Interprets `program` against the bound data. Storage instances for the
// plans are built internally from `matrix_data` (the DataEnv supplies the
// reservoirs). Mutates env.dense in place.
void interpret(const ir::Program& program,
               const std::vector<transform::StoragePlan>& plans, DataEnv& data,
               Env& env);

struct RunOptions {
  int repeats = 10; // timed runs after one warmup
  bool timed = true;
};

// Executes a concrete variant: builds physical storage (excluded from the
// timing), zero-fills the outputs and interprets the lowered nest. TrSv
// requires every diagonal entry present and nonzero.
RunResult run_variant(const storage::ConcreteVariant& v, const SparseOperand& m,
                      const std::vector<DenseOperand>& inputs,
                      const RunOptions& opt = {});

// O(n^2) dense expansion plus a textbook kernel; the independent baseline.
// TrSv solves the upper-triangular system formed by the diagonal and
// superdiagonal entries via back substitution.
std::vector<DenseOperand> reference_oracle(ir::KernelKind kind, int k,
                                           const SparseOperand& m,
                                           const std::vector<DenseOperand>& inputs);

// Wall time of building the variant's physical storage.
double build_time(const storage::ConcreteVariant& v, const SparseOperand& m);

// Deterministic input operands for a kernel run (seeded).
std::vector<DenseOperand> default_inputs(ir::KernelKind kind, int k,
                                         const SparseOperand& m, uint64_t seed);

double max_rel_err(const std::vector<DenseOperand>& got,
                   const std::vector<DenseOperand>& want);

// Runs the untransformed (or any intermediate) kernel program directly.
std::vector<DenseOperand> run_program(const ir::Program& program,
                                      const std::vector<transform::StoragePlan>& plans,
                                      const ir::KernelSpec& kernel,
                                      const SparseOperand& m,
                                      const std::vector<DenseOperand>& inputs,
                                      Instrumentation* instr = nullptr);

} // namespace forelem::exec

#endif // FORELEM_EXEC_HPP
