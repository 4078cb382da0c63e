#include "forelem/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace forelem::ingest {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

// splitmix64; all synthetic randomness flows through this so results are
// identical across platforms.
struct Rng {
  uint64_t state;
  explicit Rng(uint64_t seed) : state(seed + 0x9e3779b97f4a7c15ULL) {}
  uint64_t next() {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  // Unbiased bounded draw.
  uint64_t below(uint64_t n) {
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % n;
  }
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
};

} // namespace

SparseOperand read_matrix_market(std::istream& in, bool sum_duplicates) {
  std::string header;
  if (!std::getline(in, header))
    throw InputError("empty Matrix Market stream");
  std::istringstream hs(header);
  std::string banner, object, format, field, symmetry;
  hs >> banner >> object >> format >> field >> symmetry;
  if (banner != "%%MatrixMarket")
    throw InputError("missing %%MatrixMarket banner");
  if (lower(object) != "matrix")
    throw InputError("unsupported Matrix Market object '" + object + "'");
  if (lower(format) != "coordinate")
    throw InputError("only coordinate bodies are supported");
  field = lower(field);
  symmetry = lower(symmetry);
  if (field != "real" && field != "integer" && field != "pattern")
    throw InputError("unsupported field qualifier '" + field + "'");
  if (symmetry != "general" && symmetry != "symmetric")
    throw InputError("unsupported symmetry qualifier '" + symmetry + "'");
  bool pattern = field == "pattern";
  bool symmetric = symmetry == "symmetric";

  std::string line;
  long rows = -1, cols = -1, nnz = -1;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '%')
      continue;
    std::istringstream ls(line);
    if (!(ls >> rows >> cols >> nnz))
      throw InputError("malformed size line: " + line);
    break;
  }
  if (rows < 0)
    throw InputError("missing size line");

  SparseOperand m;
  m.n_rows = rows;
  m.n_cols = cols;
  std::map<std::pair<long, long>, double> cells;
  auto add = [&](long r, long c, double v) {
    auto [it, fresh] = cells.emplace(std::make_pair(r, c), v);
    if (!fresh) {
      if (!sum_duplicates)
        throw InputError("duplicate entry at (" + std::to_string(r + 1) + ", " +
                         std::to_string(c + 1) + ")");
      it->second += v;
    }
  };
  long seen = 0;
  while (seen < nnz && std::getline(in, line)) {
    if (line.empty() || line[0] == '%')
      continue;
    std::istringstream ls(line);
    long r, c;
    double v = 1.0;
    if (!(ls >> r >> c))
      throw InputError("malformed entry line: " + line);
    if (!pattern && !(ls >> v))
      throw InputError("missing value on entry line: " + line);
    --r;
    --c;
    if (r < 0 || r >= rows || c < 0 || c >= cols)
      throw InputError("entry (" + std::to_string(r + 1) + ", " +
                       std::to_string(c + 1) + ") outside declared extents");
    add(r, c, v);
    if (symmetric && r != c)
      add(c, r, v);
    ++seen;
  }
  if (seen != nnz)
    throw InputError("expected " + std::to_string(nnz) + " entries, found " +
                     std::to_string(seen));
  for (auto& [rc, v] : cells)
    m.entries.push_back({rc.first, rc.second, v});
  m.normalize();
  return m;
}

SparseOperand read_matrix_market_file(const std::string& path,
                                      bool sum_duplicates) {
  std::ifstream in(path);
  if (!in)
    throw InputError("cannot open '" + path + "'");
  try {
    return read_matrix_market(in, sum_duplicates);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

void write_matrix_market(std::ostream& out, const SparseOperand& m) {
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << m.n_rows << ' ' << m.n_cols << ' ' << m.entries.size() << '\n';
  out.precision(17);
  for (auto& e : m.entries)
    out << e.row + 1 << ' ' << e.col + 1 << ' ' << e.value << '\n';
}

void write_matrix_market_file(const std::string& path, const SparseOperand& m) {
  std::ofstream out(path);
  if (!out)
    throw InputError("cannot open '" + path + "' for writing");
  write_matrix_market(out, m);
}

SparseOperand synth_matrix(const SynthSpec& spec) {
  if (spec.n <= 0)
    throw InputError("matrix order must be positive");
  Rng rng(spec.seed * 0x2545f4914f6cdd1dULL + spec.n * 0x100000001b3ULL +
          spec.nnz);
  SparseOperand m;
  m.n_rows = m.n_cols = spec.n;
  long n = spec.n;

  std::vector<std::pair<long, long>> positions;
  switch (spec.distribution) {
  case SynthDistribution::Uniform: {
    if (spec.nnz > n * n)
      throw InputError("requested more entries than the matrix holds");
    // Floyd's sampling over the n*n cell space.
    std::set<long> chosen;
    for (long j = n * n - spec.nnz; j < n * n; ++j) {
      long t = static_cast<long>(rng.below(static_cast<uint64_t>(j) + 1));
      if (!chosen.insert(t).second)
        chosen.insert(j);
    }
    for (long cell : chosen)
      positions.push_back({cell / n, cell % n});
    break;
  }
  case SynthDistribution::Banded: {
    std::vector<std::pair<long, long>> candidates;
    for (long r = 0; r < n; ++r)
      for (long c = std::max<long>(0, r - spec.band_width);
           c <= std::min<long>(n - 1, r + spec.band_width); ++c)
        candidates.push_back({r, c});
    if (spec.nnz > static_cast<long>(candidates.size()))
      throw InputError("band holds only " +
                       std::to_string(candidates.size()) + " positions");
    for (long i = 0; i < spec.nnz; ++i) {
      size_t j = static_cast<size_t>(i) +
                 rng.below(candidates.size() - static_cast<size_t>(i));
      std::swap(candidates[static_cast<size_t>(i)], candidates[j]);
      positions.push_back(candidates[static_cast<size_t>(i)]);
    }
    break;
  }
  case SynthDistribution::SkewedRows: {
    if (spec.nnz > n * n)
      throw InputError("requested more entries than the matrix holds");
    std::vector<double> cum(static_cast<size_t>(n));
    double acc = 0;
    for (long r = 0; r < n; ++r) {
      acc += std::pow(static_cast<double>(r + 1), -spec.zipf_s);
      cum[static_cast<size_t>(r)] = acc;
    }
    std::set<std::pair<long, long>> chosen;
    long misses = 0;
    while (static_cast<long>(chosen.size()) < spec.nnz) {
      if (misses > 64 * spec.nnz + 1024) {
        // Degenerate tail: fill deterministically from the top rows.
        for (long r = 0; r < n && static_cast<long>(chosen.size()) < spec.nnz;
             ++r)
          for (long c = 0; c < n && static_cast<long>(chosen.size()) < spec.nnz;
               ++c)
            chosen.insert({r, c});
        break;
      }
      double u = rng.unit() * acc;
      long r = static_cast<long>(
          std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
      r = std::min(r, n - 1);
      long c = static_cast<long>(rng.below(static_cast<uint64_t>(n)));
      if (!chosen.insert({r, c}).second)
        ++misses;
    }
    positions.assign(chosen.begin(), chosen.end());
    break;
  }
  }
  for (auto& [r, c] : positions)
    m.entries.push_back({r, c, 0.5 + rng.unit()});
  m.normalize();
  return m;
}

} // namespace forelem::ingest
