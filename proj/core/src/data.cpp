#include "forelem/data.hpp"

#include <algorithm>
#include <numeric>

namespace forelem {

void SparseOperand::normalize() {
  std::sort(entries.begin(), entries.end());
  for (size_t i = 0; i < entries.size(); ++i) {
    const Entry& e = entries[i];
    if (e.row < 0 || e.row >= n_rows || e.col < 0 || e.col >= n_cols)
      throw InputError("entry (" + std::to_string(e.row) + ", " +
                       std::to_string(e.col) + ") outside declared extents");
    if (i > 0 && entries[i - 1].row == e.row && entries[i - 1].col == e.col)
      throw InputError("duplicate entry at (" + std::to_string(e.row) + ", " +
                       std::to_string(e.col) + ")");
  }
}

bool SparseOperand::has_full_nonzero_diagonal() const {
  if (n_rows != n_cols)
    return false;
  long seen = 0;
  for (auto& e : entries)
    if (e.row == e.col && e.value != 0.0)
      ++seen;
  return seen == n_rows;
}

SparseOperand upper_triangle(const SparseOperand& m, bool keep_diagonal) {
  SparseOperand out;
  out.n_rows = m.n_rows;
  out.n_cols = m.n_cols;
  for (auto& e : m.entries)
    if (e.col > e.row || (keep_diagonal && e.col == e.row))
      out.entries.push_back(e);
  return out;
}

SparseOperand lower_triangle(const SparseOperand& m, bool keep_diagonal) {
  SparseOperand out;
  out.n_rows = m.n_rows;
  out.n_cols = m.n_cols;
  for (auto& e : m.entries)
    if (e.col < e.row || (keep_diagonal && e.col == e.row))
      out.entries.push_back(e);
  return out;
}

SparseOperand with_unit_diagonal(const SparseOperand& m) {
  SparseOperand out = m;
  std::vector<bool> have(static_cast<size_t>(std::min(m.n_rows, m.n_cols)),
                         false);
  for (auto& e : m.entries)
    if (e.row == e.col)
      have[static_cast<size_t>(e.row)] = true;
  for (long i = 0; i < std::min(m.n_rows, m.n_cols); ++i)
    if (!have[static_cast<size_t>(i)])
      out.entries.push_back({i, i, 1.0});
  out.normalize();
  return out;
}

DenseOperand DenseOperand::zeros(std::vector<long> extents) {
  DenseOperand d;
  d.extents = std::move(extents);
  long n = 1;
  for (long e : d.extents)
    n *= e;
  d.values.assign(static_cast<size_t>(n), 0.0);
  return d;
}

long DenseOperand::size() const {
  long n = 1;
  for (long e : extents)
    n *= e;
  return n;
}

double& DenseOperand::at(const std::vector<long>& idx) {
  long flat = 0;
  for (size_t d = 0; d < extents.size(); ++d) {
    if (idx[d] < 0 || idx[d] >= extents[d])
      throw InternalError("dense index out of range");
    flat = flat * extents[d] + idx[d];
  }
  return values[static_cast<size_t>(flat)];
}

double DenseOperand::at(const std::vector<long>& idx) const {
  return const_cast<DenseOperand*>(this)->at(idx);
}

void ReservoirData::normalize() {
  std::vector<size_t> order(tuples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return tuples[a] < tuples[b]; });
  std::vector<std::vector<long>> t2;
  std::map<std::string, std::vector<double>> b2;
  for (auto& [name, vals] : bindings)
    b2[name].reserve(vals.size());
  for (size_t i : order) {
    if (tuples[i].size() != schema.size())
      throw InputError("tuple arity does not match the schema");
    for (long v : tuples[i])
      if (v < 0)
        throw InputError("tuple component is negative after normalization");
    if (!t2.empty() && t2.back() == tuples[i])
      throw InputError("duplicate tuple in reservoir");
    t2.push_back(tuples[i]);
    for (auto& [name, vals] : bindings) {
      if (vals.size() != tuples.size())
        throw InputError("binding '" + name + "' is not total over the tuples");
      b2[name].push_back(vals[i]);
    }
  }
  tuples = std::move(t2);
  bindings = std::move(b2);
}

ReservoirData reservoir_from_matrix(const std::vector<ir::FieldName>& schema,
                                    const std::string& binding,
                                    const SparseOperand& m) {
  if (schema.size() != 2)
    throw InputError("matrix reservoirs need a two-field schema");
  ReservoirData d;
  d.schema = schema;
  auto& vals = d.bindings[binding];
  for (auto& e : m.entries) {
    d.tuples.push_back({e.row, e.col});
    vals.push_back(e.value);
  }
  d.normalize();
  return d;
}

void DataEnv::bind(const std::string& reservoir, ReservoirData data) {
  data.normalize();
  data_[reservoir] = std::move(data);
}

void DataEnv::bind_matrix(const std::string& reservoir,
                          const std::string& binding, const SparseOperand& m) {
  const ir::ReservoirDecl* decl = program_->find_reservoir(reservoir);
  if (!decl)
    throw InputError("unknown reservoir '" + reservoir + "'");
  data_[reservoir] = reservoir_from_matrix(decl->schema, binding, m);
}

const ReservoirData& DataEnv::resolve(const std::string& reservoir) {
  auto it = data_.find(reservoir);
  if (it != data_.end())
    return it->second;
  const ir::ReservoirDecl* decl = program_->find_reservoir(reservoir);
  if (!decl)
    throw InputError("unknown reservoir '" + reservoir + "'");

  if (decl->projection) {
    const ReservoirData& src = resolve(decl->projection->source);
    ReservoirData out;
    out.schema = decl->schema;
    std::vector<size_t> keep;
    for (auto& f : decl->schema) {
      auto pos = std::find(src.schema.begin(), src.schema.end(), f);
      keep.push_back(static_cast<size_t>(pos - src.schema.begin()));
    }
    std::map<std::vector<long>, size_t> seen;
    for (size_t i = 0; i < src.tuples.size(); ++i) {
      std::vector<long> t;
      for (size_t ki : keep)
        t.push_back(src.tuples[i][ki]);
      auto [pos, fresh] = seen.emplace(t, i);
      if (!fresh)
        throw InputError(
            "horizontal reduction would merge distinct tuples of '" +
            decl->projection->source + "'");
      out.tuples.push_back(std::move(t));
      for (auto& [bn, bv] : src.bindings)
        out.bindings[bn].push_back(bv[i]);
    }
    out.normalize();
    return data_[reservoir] = std::move(out);
  }

  if (decl->join) {
    const ReservoirData& left = resolve(decl->join->left);
    const ReservoirData& right = resolve(decl->join->right);
    size_t lf = static_cast<size_t>(
        std::find(left.schema.begin(), left.schema.end(),
                  decl->join->left_field) -
        left.schema.begin());
    size_t rf = static_cast<size_t>(
        std::find(right.schema.begin(), right.schema.end(),
                  decl->join->right_field) -
        right.schema.begin());
    if (lf >= left.schema.size() || rf >= right.schema.size())
      throw InternalError("join fields missing from source schemas");
    ReservoirData out;
    out.schema = decl->schema;
    for (size_t i = 0; i < left.tuples.size(); ++i)
      for (size_t j = 0; j < right.tuples.size(); ++j) {
        if (left.tuples[i][lf] != right.tuples[j][rf])
          continue;
        std::vector<long> t = left.tuples[i];
        t.insert(t.end(), right.tuples[j].begin(), right.tuples[j].end());
        out.tuples.push_back(std::move(t));
        for (auto& [bn, bv] : left.bindings)
          out.bindings[bn].push_back(bv[i]);
        for (auto& [bn, bv] : right.bindings)
          out.bindings[bn].push_back(bv[j]);
      }
    out.normalize();
    return data_[reservoir] = std::move(out);
  }

  throw InputError("no data bound for reservoir '" + reservoir + "'");
}

} // namespace forelem
