#include "forelem/search.hpp"

#include <algorithm>
#include <deque>
#include <ostream>
#include <sstream>

namespace forelem::search {

using transform::Pipeline;
using transform::StoragePlan;
using transform::TransformResult;

namespace {

// Dedup key: alpha-renamed program text plus the storage plan states, with
// plan iterators renamed consistently.
std::string canonical_key(const TransformResult& tr) {
  std::string key = ir::canonical(tr.program);
  auto renames = ir::binder_renames(tr.program);
  auto ren = [&](const std::string& n) {
    auto it = renames.find(n);
    return it == renames.end() ? n : it->second;
  };
  for (auto& p : tr.plans) {
    key += "\n#" + p.name + '|' + p.reservoir + '|';
    for (auto& l : p.levels) {
      key += l.kind == transform::GroupLevel::Kind::Value        ? 'v'
             : l.kind == transform::GroupLevel::Kind::BlockOuter ? 'B'
                                                                 : 'b';
      key += ren(l.iter) + ':';
      for (auto& f : l.fields)
        key += f + '.';
      if (l.block_size)
        key += '/' + std::to_string(l.block_size);
      key += ';';
    }
    key += '|';
    for (auto& f : p.leaf_fields)
      key += (f.is_binding ? '$' : '.') + f.name;
    key += '|';
    key += p.nstar == StoragePlan::NStarState::Symbolic  ? 's'
           : p.nstar == StoragePlan::NStarState::Padded ? 'p'
                                                         : 'c';
    key += p.split ? 'S' : '-';
    key += p.sorted ? 'P' : '-';
    key += p.position_major ? 'M' : '-';
    key += p.dim_reduced ? 'D' : '-';
  }
  return key;
}

} // namespace

size_t VariantTree::executable_count() const {
  size_t n = 0;
  for (auto& node : nodes)
    n += node.executable;
  return n;
}

std::set<std::string> VariantTree::distinct_shapes() const {
  std::set<std::string> shapes;
  for (auto& node : nodes)
    if (node.executable)
      shapes.insert(node.shape_key);
  return shapes;
}

std::set<storage::FormatName> VariantTree::formats() const {
  std::set<storage::FormatName> out;
  for (auto& node : nodes)
    if (node.executable)
      out.insert(node.format);
  return out;
}

const VariantNode* VariantTree::find(const std::string& id) const {
  for (auto& node : nodes)
    if (node.executable && node.id == id)
      return &node;
  return nullptr;
}

VariantTree enumerate_variants(const ir::KernelSpec& kernel, int depth,
                               const std::vector<long>& block_sizes) {
  if (depth < 1)
    throw InputError("enumeration depth must be at least 1");
  VariantTree tree;
  tree.kernel = kernel;

  struct Item {
    TransformResult tr;
    Pipeline pipeline;
    int depth;
  };
  std::deque<Item> queue;
  std::set<std::string> visited;
  std::set<std::string> used_ids;

  auto push_node = [&](const TransformResult& tr, const Pipeline& pipeline,
                       int d) {
    std::string key = canonical_key(tr);
    if (!visited.insert(key).second)
      return;
    VariantNode node;
    node.pipeline = pipeline;
    node.depth = d;
    auto cv = storage::concretize(tr, pipeline, &kernel);
    if (cv) {
      node.executable = true;
      node.id = cv->id;
      // Two pipelines can hash alike only by collision; disambiguate.
      while (!used_ids.insert(node.id).second)
        node.id = hex_id(fnv1a64(node.id));
      node.format = cv->format;
      node.shape_key = cv->storage.shape_key();
    } else {
      node.refusal = cv.error();
    }
    tree.nodes.push_back(node);
    queue.push_back({tr, pipeline, d});
  };

  push_node(TransformResult{kernel.program, {}}, Pipeline{}, 0);
  while (!queue.empty()) {
    Item item = std::move(queue.front());
    queue.pop_front();
    if (item.depth >= depth)
      continue;
    for (auto& pass : transform::applicable_passes(item.tr, block_sizes)) {
      auto next = transform::apply_pass(item.tr, pass);
      if (!next)
        continue;
      Pipeline pipeline = item.pipeline;
      pipeline.passes.push_back(pass);
      pipeline.provenance =
          item.pipeline.provenance.empty()
              ? transform::to_string(pass)
              : item.pipeline.provenance + ">" + transform::to_string(pass);
      push_node(*next, pipeline, item.depth + 1);
    }
  }
  return tree;
}

Expected<storage::ConcreteVariant> realize(const VariantTree& tree,
                                           const VariantNode& node) {
  auto tr = transform::apply_pipeline(tree.kernel.program, node.pipeline);
  if (!tr)
    return Expected<storage::ConcreteVariant>::failure(tr.error());
  auto cv = storage::concretize(*tr, node.pipeline, &tree.kernel);
  if (cv)
    cv->id = node.id; // collision-adjusted id from the tree
  return cv;
}

void write_tree_csv(std::ostream& out, const VariantTree& tree) {
  out << "id,depth,executable,format,pipeline\n";
  for (auto& n : tree.nodes) {
    out << (n.executable ? n.id : std::string("tmp")) << ',' << n.depth << ','
        << (n.executable ? "yes" : "no") << ','
        << (n.executable ? storage::to_string(n.format) : std::string("-"))
        << ",\"" << transform::to_string(n.pipeline) << "\"\n";
  }
}

void write_tree_json(std::ostream& out, const VariantTree& tree) {
  out << "{\n  \"kernel\": \"" << ir::to_string(tree.kernel.kind)
      << "\",\n  \"nodes\": [";
  for (size_t i = 0; i < tree.nodes.size(); ++i) {
    auto& n = tree.nodes[i];
    out << (i ? "," : "") << "\n    {\"id\": \""
        << (n.executable ? n.id : "tmp") << "\", \"depth\": " << n.depth
        << ", \"executable\": " << (n.executable ? "true" : "false")
        << ", \"format\": \""
        << (n.executable ? storage::to_string(n.format) : "-")
        << "\", \"pipeline\": \"" << transform::to_string(n.pipeline)
        << "\"}";
  }
  out << "\n  ]\n}\n";
}

//===----------------------------------------------------------------------===//
// Coverage analytics
//===----------------------------------------------------------------------===//

double TimingTable::exec(const std::string& r, const std::string& m) const {
  auto it = seconds.find({r, m});
  if (it == seconds.end())
    throw InputError("timing table has no entry for (" + r + ", " + m + ")");
  return it->second;
}

void TimingTable::validate() const {
  if (routines.empty())
    throw InputError("timing table has no routines");
  if (matrices.empty())
    throw InputError("timing table has no matrices");
  for (auto& r : routines)
    for (auto& m : matrices) {
      double v = exec(r, m);
      if (!(v > 0))
        throw InputError("timing for (" + r + ", " + m + ") is not positive");
    }
}

TimingTable read_timing_csv(std::istream& in) {
  TimingTable t;
  std::set<std::string> rset, mset;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    std::istringstream ls(line);
    std::string r, m, s;
    if (!std::getline(ls, r, ',') || !std::getline(ls, m, ',') ||
        !std::getline(ls, s))
      throw InputError("malformed timing row: " + line);
    if (first && s == "seconds" && r == "routine") {
      first = false;
      continue;
    }
    first = false;
    double v;
    try {
      v = std::stod(s);
    } catch (const std::exception&) {
      throw InputError("bad seconds value in row: " + line);
    }
    if (!t.seconds.emplace(std::make_pair(r, m), v).second)
      throw InputError("duplicate timing for (" + r + ", " + m + ")");
    if (rset.insert(r).second)
      t.routines.push_back(r);
    if (mset.insert(m).second)
      t.matrices.push_back(m);
  }
  t.validate();
  return t;
}

void write_timing_csv(std::ostream& out, const TimingTable& t) {
  out << "routine,matrix,seconds\n";
  out.precision(17);
  for (auto& r : t.routines)
    for (auto& m : t.matrices)
      out << r << ',' << m << ',' << t.exec(r, m) << '\n';
}

std::set<std::string> top_group(const TimingTable& t, const std::string& m,
                                double t_percent) {
  if (t.routines.empty())
    throw InputError("timing table has no routines");
  double best = t.exec(t.routines.front(), m);
  for (auto& r : t.routines)
    best = std::min(best, t.exec(r, m));
  double cutoff = (1.0 + t_percent / 100.0) * best;
  std::set<std::string> group;
  for (auto& r : t.routines)
    if (t.exec(r, m) <= cutoff)
      group.insert(r);
  return group;
}

CoverageReport coverage(const TimingTable& t, double t_percent) {
  t.validate();
  CoverageReport rep;
  rep.t_percent = t_percent;
  for (auto& r : t.routines)
    rep.weights[r] = 0;
  for (auto& m : t.matrices) {
    std::string b = t.routines.front();
    for (auto& r : t.routines)
      if (t.exec(r, m) < t.exec(b, m))
        b = r;
    rep.best[m] = b;
    rep.top_groups[m] = top_group(t, m, t_percent);
    for (auto& r : rep.top_groups[m])
      ++rep.weights[r];
  }
  rep.coverage = 0;
  for (auto& [r, w] : rep.weights)
    rep.coverage = std::max(rep.coverage, w);
  for (auto& r : t.routines)
    if (rep.weights[r] == rep.coverage)
      rep.argmax.push_back(r);
  return rep;
}

std::vector<std::string> select_kernel(const TimingTable& t, long k,
                                       double t_percent, uint64_t seed) {
  t.validate();
  if (k < 1 || k > static_cast<long>(t.matrices.size()))
    throw InputError("sample size must be between 1 and the matrix count");
  std::vector<std::string> pool = t.matrices;
  std::sort(pool.begin(), pool.end());
  // Seeded Fisher-Yates prefix (splitmix64).
  uint64_t state = seed + 0x9e3779b97f4a7c15ULL;
  auto next = [&]() {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  for (long i = 0; i < k; ++i) {
    size_t j = static_cast<size_t>(i) +
               static_cast<size_t>(next() % (pool.size() - static_cast<size_t>(i)));
    std::swap(pool[static_cast<size_t>(i)], pool[j]);
  }
  pool.resize(static_cast<size_t>(k));

  std::vector<std::string> out;
  for (auto& r : t.routines) {
    bool everywhere = true;
    for (auto& m : pool)
      everywhere &= top_group(t, m, t_percent).count(r) > 0;
    if (everywhere)
      out.push_back(r);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::pair<double, CoverageReport>>
coverage_curve(const TimingTable& t, const std::vector<double>& t_grid) {
  if (!std::is_sorted(t_grid.begin(), t_grid.end()))
    throw InputError("the t%% grid must be sorted ascending");
  std::vector<std::pair<double, CoverageReport>> out;
  for (double tp : t_grid)
    out.push_back({tp, coverage(t, tp)});
  return out;
}

void write_coverage_csv(std::ostream& out,
                        const std::vector<std::pair<double, CoverageReport>>& curve) {
  out << "t_percent,coverage,argmax_routines\n";
  for (auto& [tp, rep] : curve) {
    out << tp << ',' << rep.coverage << ',';
    for (size_t i = 0; i < rep.argmax.size(); ++i)
      out << (i ? ";" : "") << rep.argmax[i];
    out << '\n';
  }
}

} // namespace forelem::search
