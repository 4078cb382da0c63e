//===- search.hpp - variant enumeration and coverage analytics -------------===//

#ifndef FORELEM_SEARCH_HPP
#define FORELEM_SEARCH_HPP

#include <iosfwd>
#include <set>

#include "forelem/exec.hpp"

namespace forelem::search {

struct VariantNode {
  std::string id; // empty for non-executable (tmp) nodes
  transform::Pipeline pipeline;
  int depth = 0;
  bool executable = false;
  storage::FormatName format = storage::FormatName::Unnamed;
  std::string shape_key; // descriptor shape, for richness counts
  std::string refusal;   // why concretization refused, when not executable
};

struct VariantTree {
  ir::KernelSpec kernel;
  std::vector<VariantNode> nodes; // breadth-first discovery order

  size_t executable_count() const;
  std::set<std::string> distinct_shapes() const;
  std::set<storage::FormatName> formats() const;
  const VariantNode* find(const std::string& id) const;
};

// Breadth-first closure over applicable passes up to `depth`, deduplicated
// by the canonical form of (program, storage plans). Nodes whose storage
// concretizes are flagged executable.
VariantTree enumerate_variants(const ir::KernelSpec& kernel, int depth,
                               const std::vector<long>& block_sizes);

// Rebuilds the concrete variant for a tree node.
Expected<storage::ConcreteVariant> realize(const VariantTree& tree,
                                           const VariantNode& node);

void write_tree_csv(std::ostream& out, const VariantTree& tree);
void write_tree_json(std::ostream& out, const VariantTree& tree);

//===----------------------------------------------------------------------===//
// Coverage analytics
//===----------------------------------------------------------------------===//

struct TimingTable {
  std::vector<std::string> routines;
  std::vector<std::string> matrices;
  std::map<std::pair<std::string, std::string>, double> seconds; // (r, m)

  double exec(const std::string& r, const std::string& m) const;
  void validate() const; // complete over routines x matrices, positive
};

TimingTable read_timing_csv(std::istream& in); // routine,matrix,seconds
void write_timing_csv(std::ostream& out, const TimingTable& t);

// Routines within t% of the per-matrix best:
// T(m) = { r | exec(r, m) <= (1 + t/100) * exec(b, m) }.
std::set<std::string> top_group(const TimingTable& t, const std::string& m,
                                double t_percent);

struct CoverageReport {
  double t_percent = 0;
  std::map<std::string, std::string> best;                 // b(m)
  std::map<std::string, std::set<std::string>> top_groups; // T(m)
  std::map<std::string, long> weights;
  long coverage = 0;
  std::vector<std::string> argmax; // all routines attaining the coverage
};

CoverageReport coverage(const TimingTable& t, double t_percent);

// Sample k matrices (seeded, without replacement) and return the routines
// with weight == k over the sample; empty means no single routine is within
// t% on all k.
std::vector<std::string> select_kernel(const TimingTable& t, long k,
                                       double t_percent, uint64_t seed);

std::vector<std::pair<double, CoverageReport>>
coverage_curve(const TimingTable& t, const std::vector<double>& t_grid);

void write_coverage_csv(std::ostream& out,
                        const std::vector<std::pair<double, CoverageReport>>& curve);

} // namespace forelem::search

#endif // FORELEM_SEARCH_HPP
