#ifndef FORELEM_TEST_SUPPORT_HPP
#define FORELEM_TEST_SUPPORT_HPP

#include <fstream>
#include <sstream>
#include <string>

#include "forelem/exec.hpp"
#include "forelem/ingest.hpp"

namespace testsup {

inline std::string fixture_path(const std::string& name) {
  return std::string(FORELEM_FIXTURE_DIR) + "/" + name;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// The worked 3x3 example matrix: (0,0)=4, (0,2)=1, (1,1)=5, (2,0)=2, (2,2)=3.
inline forelem::SparseOperand m3() {
  forelem::SparseOperand m;
  m.n_rows = m.n_cols = 3;
  m.entries = {{0, 0, 4}, {0, 2, 1}, {1, 1, 5}, {2, 0, 2}, {2, 2, 3}};
  m.normalize();
  return m;
}

inline forelem::SparseOperand from_entries(long n,
                                           std::vector<forelem::SparseOperand::Entry> es) {
  forelem::SparseOperand m;
  m.n_rows = m.n_cols = n;
  m.entries = std::move(es);
  m.normalize();
  return m;
}

inline forelem::DenseOperand vec(std::vector<double> values) {
  forelem::DenseOperand d;
  d.extents = {static_cast<long>(values.size())};
  d.values = std::move(values);
  return d;
}

// Upper-triangular strongly diagonal matrix derived from a seed matrix, a
// well-posed triangular-solve input.
inline forelem::SparseOperand trsv_input(const forelem::SparseOperand& m) {
  forelem::SparseOperand u = forelem::upper_triangle(m);
  u = forelem::with_unit_diagonal(u);
  for (auto& e : u.entries)
    if (e.row == e.col)
      e.value += 4.0; // keep divisions well conditioned
  return u;
}

} // namespace testsup

#endif
