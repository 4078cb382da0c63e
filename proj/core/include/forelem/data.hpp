#ifndef FORELEM_DATA_HPP
#define FORELEM_DATA_HPP

#include <map>
#include <string>
#include <vector>

#include "forelem/ir.hpp"

namespace forelem {

/// A sparse matrix operand: a set of (row, col, value) entries.
struct SparseOperand {
  long n_rows = 0, n_cols = 0;
  struct Entry {
    long row, col;
    double value;
    friend bool operator<(const Entry& a, const Entry& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    }
    friend bool operator==(const Entry& a, const Entry& b) {
      return a.row == b.row && a.col == b.col && a.value == b.value;
    }
  };
  std::vector<Entry> entries; // kept sorted by (row, col), unique

  // Sorts entries and enforces the invariants: indices in range, no
  // duplicate (row, col). Throws InputError on violation.
  void normalize();
  bool has_full_nonzero_diagonal() const;
};

SparseOperand upper_triangle(const SparseOperand& m, bool keep_diagonal = true);
SparseOperand lower_triangle(const SparseOperand& m, bool keep_diagonal = true);
// Inserts value-1 entries on every absent diagonal position.
SparseOperand with_unit_diagonal(const SparseOperand& m);

struct DenseOperand {
  std::vector<long> extents;
  std::vector<double> values; // row-major

  static DenseOperand zeros(std::vector<long> extents);
  long size() const;
  double& at(const std::vector<long>& idx);
  double at(const std::vector<long>& idx) const;
};

/// Tuple data for one reservoir: the concrete counterpart of the symbolic
/// reservoir declaration, with address-function values per tuple.
struct ReservoirData {
  std::vector<ir::FieldName> schema;
  std::vector<std::vector<long>> tuples; // sorted lexicographically, unique
  std::map<std::string, std::vector<double>> bindings; // per-tuple values

  void normalize(); // sort, check set semantics and nonnegative components
};

/// Resolves reservoir data for a program: base reservoirs are bound by the
/// caller; projections and joins derive from their sources on demand.
class DataEnv {
public:
  explicit DataEnv(const ir::Program& program) : program_(&program) {}

  void bind(const std::string& reservoir, ReservoirData data);
  // Binds a sparse matrix to a (row, col) reservoir with one value binding.
  void bind_matrix(const std::string& reservoir, const std::string& binding,
                   const SparseOperand& m);

  // Returns the data for any declared reservoir, deriving it if necessary.
  // Throws InputError if a projection would merge distinct tuples.
  const ReservoirData& resolve(const std::string& reservoir);

private:
  const ir::Program* program_;
  std::map<std::string, ReservoirData> data_;
};

ReservoirData reservoir_from_matrix(const std::vector<ir::FieldName>& schema,
                                    const std::string& binding,
                                    const SparseOperand& m);

} // namespace forelem

#endif // FORELEM_DATA_HPP
