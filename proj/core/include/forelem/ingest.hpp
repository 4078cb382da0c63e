#ifndef FORELEM_INGEST_HPP
#define FORELEM_INGEST_HPP

#include <iosfwd>
#include <string>

#include "forelem/data.hpp"

namespace forelem::ingest {

// Matrix Market coordinate reader: real/integer/pattern bodies, general or
// symmetric. 1-based indices become 0-based; symmetric off-diagonal entries
// expand to both triangles; pattern entries get value 1. Duplicate (row,col)
// entries are an error unless sum_duplicates is set.
SparseOperand read_matrix_market(std::istream& in, bool sum_duplicates = false);
SparseOperand read_matrix_market_file(const std::string& path,
                                      bool sum_duplicates = false);

void write_matrix_market(std::ostream& out, const SparseOperand& m);
void write_matrix_market_file(const std::string& path, const SparseOperand& m);

enum class SynthDistribution { Uniform, Banded, SkewedRows };

struct SynthSpec {
  long n = 16;
  long nnz = 64;
  SynthDistribution distribution = SynthDistribution::Uniform;
  long band_width = 0;   // Banded: |row - col| <= band_width
  double zipf_s = 1.2;   // SkewedRows: row weight (r+1)^-s
  uint64_t seed = 0;
};

// Deterministic for a fixed spec; exactly nnz distinct positions.
SparseOperand synth_matrix(const SynthSpec& spec);

} // namespace forelem::ingest

#endif // FORELEM_INGEST_HPP
