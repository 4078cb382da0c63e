#include "forelem/concretize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace forelem::storage {

using namespace ir;
using transform::GroupLevel;
using transform::StoragePlan;

namespace {

long eval_extent_impl(const SymExtent& e, const ReservoirData* (*resolver)(void*, const std::string&),
                      void* ctx, const std::map<std::string, long>& params) {
  return std::visit(
      [&](auto&& n) -> long {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, SymExtent::Const>) {
          return n.v;
        } else if constexpr (std::is_same_v<T, SymExtent::Param>) {
          auto it = params.find(n.name);
          if (it == params.end())
            throw InputError("unbound extent parameter '" + n.name + "'");
          return it->second;
        } else if constexpr (std::is_same_v<T, SymExtent::FieldExtent>) {
          const ReservoirData* d = resolver(ctx, n.reservoir);
          size_t fi = static_cast<size_t>(
              std::find(d->schema.begin(), d->schema.end(), n.field) -
              d->schema.begin());
          if (fi >= d->schema.size())
            throw InternalError("field '" + n.field + "' missing from data");
          long mx = -1;
          for (auto& t : d->tuples) {
            if (t[fi] < 0)
              throw InputError("negative field value cannot be encapsulated");
            mx = std::max(mx, t[fi]);
          }
          return mx + 1;
        } else if constexpr (std::is_same_v<T, SymExtent::LeafCount>) {
          throw InternalError("leaf count extent outside storage context");
        } else if constexpr (std::is_same_v<T, SymExtent::CeilDiv>) {
          long tot = eval_extent_impl(*n.total, resolver, ctx, params);
          return (tot + n.divisor - 1) / n.divisor;
        }
        return 0;
      },
      e.v);
}

} // namespace

//===----------------------------------------------------------------------===//
// Physical instances
//===----------------------------------------------------------------------===//

long PhysicalStorage::group_index(const std::vector<long>& chain) const {
  if (chain.size() != level_extents.size())
    throw InternalError("group chain arity mismatch");
  long g = 0;
  for (size_t i = 0; i < chain.size(); ++i) {
    if (chain[i] < 0 || chain[i] >= level_extents[i])
      return -1;
    g = g * level_extents[i] + chain[i];
  }
  return g;
}

long PhysicalStorage::rank_of_group(long g) const {
  if (g < 0 || g >= group_count)
    return -1;
  return inv_perm.empty() ? g : inv_perm[static_cast<size_t>(g)];
}

long PhysicalStorage::len_of_group(long g) const {
  long r = rank_of_group(g);
  return r < 0 ? 0 : len[static_cast<size_t>(r)];
}

long PhysicalStorage::slice_len(long k) const {
  long c = 0;
  for (long l : len)
    c += l > k ? 1 : 0;
  return c;
}

long PhysicalStorage::leaf_index(const std::vector<long>& chain, long k) const {
  if (level_extents.empty()) {
    // flat
    if (k < 0 || k >= leaf_count)
      return -1;
    return k;
  }
  long g = group_index(chain);
  long r = rank_of_group(g);
  if (r < 0)
    return -1;
  if (k < 0 || k >= len[static_cast<size_t>(r)])
    return -1; // pad or absent
  return start_by_rank[static_cast<size_t>(r)] + k;
}

long PhysicalStorage::pad_count() const {
  if (width == 0)
    return 0;
  return group_count * width - leaf_count;
}

namespace {

// Physical leaf order of the final layout: positions of internal leaves, -1
// for pads.
std::vector<long> physical_order(const PhysicalStorage& s,
                                 const StoragePlan& plan) {
  std::vector<long> order;
  if (plan.flat()) {
    order.resize(static_cast<size_t>(s.leaf_count));
    std::iota(order.begin(), order.end(), 0);
    return order;
  }
  bool padded = plan.nstar == StoragePlan::NStarState::Padded;
  if (plan.position_major) {
    if (padded) {
      for (long k = 0; k < s.width; ++k)
        for (long r = 0; r < s.group_count; ++r)
          order.push_back(k < s.len[static_cast<size_t>(r)]
                              ? s.start_by_rank[static_cast<size_t>(r)] + k
                              : -1);
    } else {
      for (long k = 0; k < s.width; ++k)
        for (long r = 0; r < s.slice_len(k); ++r)
          order.push_back(s.start_by_rank[static_cast<size_t>(r)] + k);
    }
    return order;
  }
  if (padded) {
    for (long r = 0; r < s.group_count; ++r)
      for (long k = 0; k < s.width; ++k)
        order.push_back(k < s.len[static_cast<size_t>(r)]
                            ? s.start_by_rank[static_cast<size_t>(r)] + k
                            : -1);
    return order;
  }
  order.resize(static_cast<size_t>(s.leaf_count));
  std::iota(order.begin(), order.end(), 0);
  return order;
}

} // namespace

std::vector<double>
PhysicalStorage::physical_values(const std::string& field,
                                 const StoragePlan& plan) const {
  auto it = value_fields.find(field);
  if (it == value_fields.end())
    throw InternalError("no value field '" + field + "'");
  std::vector<double> out;
  for (long i : physical_order(*this, plan))
    out.push_back(i < 0 ? 0.0 : it->second[static_cast<size_t>(i)]);
  return out;
}

std::vector<long>
PhysicalStorage::physical_indices(const std::string& field,
                                  const StoragePlan& plan) const {
  auto it = int_fields.find(field);
  if (it == int_fields.end())
    throw InternalError("no index field '" + field + "'");
  std::vector<long> out;
  for (long i : physical_order(*this, plan))
    out.push_back(i < 0 ? 0 : it->second[static_cast<size_t>(i)]);
  return out;
}

PhysicalStorage build_storage(const StoragePlan& plan, const ReservoirData& data,
                              const std::map<std::string, long>& params) {
  PhysicalStorage s;
  auto resolver = +[](void* ctx, const std::string&) -> const ReservoirData* {
    return static_cast<const ReservoirData*>(ctx);
  };
  auto eval = [&](const SymExtent& e) {
    return eval_extent_impl(e, resolver,
                            const_cast<void*>(static_cast<const void*>(&data)),
                            params);
  };

  std::vector<size_t> field_pos(plan.levels.size() * 2, 0);
  auto pos_of = [&](const FieldName& f) -> size_t {
    auto it = std::find(data.schema.begin(), data.schema.end(), f);
    if (it == data.schema.end())
      throw InternalError("field '" + f + "' missing from reservoir data");
    return static_cast<size_t>(it - data.schema.begin());
  };

  // Filter by the constant base condition.
  std::vector<size_t> selected;
  for (size_t i = 0; i < data.tuples.size(); ++i) {
    bool ok = true;
    if (plan.base_condition) {
      for (size_t c = 0; c < plan.base_condition->fields.size() && ok; ++c) {
        auto& v = plan.base_condition->values[c];
        auto& e = std::get<ExprPtr>(v.v);
        double want = std::get<Expr::Num>(e->node).v;
        ok = data.tuples[i][pos_of(plan.base_condition->fields[c])] ==
             static_cast<long>(want);
      }
    }
    if (ok)
      selected.push_back(i);
  }

  if (plan.flat()) {
    s.leaf_count = static_cast<long>(selected.size());
    for (auto& lf : plan.leaf_fields) {
      if (lf.is_binding) {
        auto bit = data.bindings.find(lf.name);
        if (bit == data.bindings.end())
          throw InputError("binding '" + lf.name + "' not bound");
        auto& col = s.value_fields[lf.name];
        for (size_t i : selected)
          col.push_back(bit->second[i]);
      } else {
        auto& col = s.int_fields[lf.name];
        size_t fp = pos_of(lf.name);
        for (size_t i : selected)
          col.push_back(data.tuples[i][fp]);
      }
    }
    for (size_t i : selected)
      s.leaf_tuples.push_back(data.tuples[i]);
    return s;
  }

  // Group chain per tuple.
  for (auto& l : plan.levels)
    s.level_extents.push_back(eval(l.extent));
  long total_groups = 1;
  for (long e : s.level_extents)
    total_groups *= std::max<long>(e, 0);
  s.group_count = total_groups;

  std::vector<std::vector<size_t>> members(
      static_cast<size_t>(std::max<long>(total_groups, 0)));
  for (size_t i : selected) {
    const std::vector<long>& t = data.tuples[i];
    long g = 0;
    bool in = true;
    for (size_t li = 0; li < plan.levels.size() && in; ++li) {
      const GroupLevel& l = plan.levels[li];
      long idx = 0;
      switch (l.kind) {
      case GroupLevel::Kind::Value: {
        idx = t[pos_of(l.fields[0])];
        for (size_t f = 1; f < l.fields.size(); ++f)
          if (t[pos_of(l.fields[f])] != idx)
            in = false; // diagonal-style subset: all fields must agree
        break;
      }
      case GroupLevel::Kind::BlockOuter:
        idx = t[pos_of(l.fields[0])] / l.block_size;
        break;
      case GroupLevel::Kind::BlockLocal:
        idx = t[pos_of(l.fields[0])] % l.block_size;
        break;
      }
      if (idx < 0 || idx >= s.level_extents[li])
        in = false; // outside the loop domain: never visited
      g = g * s.level_extents[li] + idx;
    }
    if (in)
      members[static_cast<size_t>(g)].push_back(i);
  }

  // Rank order: identity, or stable nonincreasing-length permutation.
  std::vector<long> ranks(static_cast<size_t>(total_groups));
  std::iota(ranks.begin(), ranks.end(), 0);
  if (plan.sorted) {
    std::stable_sort(ranks.begin(), ranks.end(), [&](long a, long b) {
      return members[static_cast<size_t>(a)].size() >
             members[static_cast<size_t>(b)].size();
    });
    s.perm = ranks;
    s.inv_perm.assign(static_cast<size_t>(total_groups), 0);
    for (long q = 0; q < total_groups; ++q)
      s.inv_perm[static_cast<size_t>(s.perm[static_cast<size_t>(q)])] = q;
  }

  for (long q = 0; q < total_groups; ++q) {
    long g = ranks[static_cast<size_t>(q)];
    const auto& m = members[static_cast<size_t>(g)];
    s.start_by_rank.push_back(s.leaf_count);
    s.len.push_back(static_cast<long>(m.size()));
    s.leaf_count += static_cast<long>(m.size());
    s.width = std::max<long>(s.width, static_cast<long>(m.size()));
    for (size_t i : m) {
      for (auto& lf : plan.leaf_fields) {
        if (lf.is_binding) {
          auto bit = data.bindings.find(lf.name);
          if (bit == data.bindings.end())
            throw InputError("binding '" + lf.name + "' not bound");
          s.value_fields[lf.name].push_back(bit->second[i]);
        } else {
          s.int_fields[lf.name].push_back(data.tuples[i][pos_of(lf.name)]);
        }
      }
      s.leaf_tuples.push_back(data.tuples[i]);
    }
  }
  // Make sure empty maps still expose the leaf fields.
  for (auto& lf : plan.leaf_fields) {
    if (lf.is_binding)
      s.value_fields.try_emplace(lf.name);
    else
      s.int_fields.try_emplace(lf.name);
  }

  if (plan.dim_reduced) {
    if (plan.position_major) {
      s.ptr.push_back(0);
      for (long k = 0; k < s.width; ++k)
        s.ptr.push_back(s.ptr.back() + s.slice_len(k));
    } else {
      s.ptr = s.start_by_rank;
      s.ptr.push_back(s.leaf_count);
    }
    for (size_t i = 1; i < s.ptr.size(); ++i)
      if (s.ptr[i] < s.ptr[i - 1])
        throw InternalError("offsets are not monotone");
  }
  return s;
}

//===----------------------------------------------------------------------===//
// Descriptors
//===----------------------------------------------------------------------===//

std::string to_string(FormatName f) {
  switch (f) {
  case FormatName::COO:
    return "COO";
  case FormatName::CSR:
    return "CSR";
  case FormatName::CCS:
    return "CCS";
  case FormatName::EllpackItpack:
    return "ELLPACK_ITPACK";
  case FormatName::JDS:
    return "JDS";
  case FormatName::BlockedHybrid:
    return "BLOCKED_HYBRID";
  case FormatName::Unnamed:
    return "UNNAMED";
  }
  return "?";
}

namespace {

const char* kind_name(ComponentKind k) {
  switch (k) {
  case ComponentKind::Value:
    return "value";
  case ComponentKind::RowIndex:
    return "row-index";
  case ComponentKind::ColumnIndex:
    return "column-index";
  case ComponentKind::FieldIndex:
    return "field-index";
  case ComponentKind::Length:
    return "length";
  case ComponentKind::Offset:
    return "offset";
  case ComponentKind::Permutation:
    return "permutation";
  case ComponentKind::Record:
    return "record";
  }
  return "?";
}

ComponentKind kind_of_leaf(const StoragePlan::LeafField& lf) {
  if (lf.is_binding)
    return ComponentKind::Value;
  if (lf.name == "row")
    return ComponentKind::RowIndex;
  if (lf.name == "col")
    return ComponentKind::ColumnIndex;
  return ComponentKind::FieldIndex;
}

// Descriptor contribution of one storage plan.
void plan_components(const StoragePlan& p, const std::string& prefix,
                     StorageDescriptor& d) {
  bool padded = p.nstar == StoragePlan::NStarState::Padded;
  std::string nnz = "count(" + p.name + ")";
  std::string m = "groups(" + p.name + ")";
  std::string w = "width(" + p.name + ")";
  Layout two_d = p.position_major ? Layout::ColMajor : Layout::RowMajor;

  auto leaf_name = [&](const StoragePlan::LeafField& lf) {
    size_t bindings = 0;
    for (auto& f : p.leaf_fields)
      bindings += f.is_binding;
    if (lf.is_binding && bindings == 1)
      return prefix + "value";
    return prefix + lf.name;
  };

  if (!p.split) {
    Component c{prefix + "pa", ComponentKind::Record, {}, Layout::None};
    if (p.flat() || p.dim_reduced)
      c.extents = {nnz};
    else if (padded) {
      c.extents = {m, w};
      c.layout = two_d;
    } else {
      c.extents = {nnz};
    }
    d.components.push_back(std::move(c));
  } else {
    for (auto& lf : p.leaf_fields) {
      Component c{leaf_name(lf), kind_of_leaf(lf), {}, Layout::None};
      if (p.flat() || p.dim_reduced || !padded) {
        c.extents = {nnz};
      } else {
        c.extents = {m, w};
        c.layout = two_d;
      }
      d.components.push_back(std::move(c));
    }
  }
  if (!p.flat()) {
    if (p.nstar == StoragePlan::NStarState::Compact && !p.dim_reduced)
      d.components.push_back(
          {prefix + "len", ComponentKind::Length, {m}, Layout::None});
    if (p.dim_reduced)
      d.components.push_back({prefix + "ptr",
                              ComponentKind::Offset,
                              {p.position_major ? w + "+1" : m + "+1"},
                              Layout::None});
    if (p.sorted)
      d.components.push_back(
          {prefix + "perm", ComponentKind::Permutation, {m}, Layout::None});
  }
}

// The plan shape recognition reads: the first plan whose levels are plain
// single-field groupings (auxiliary diagonal-extraction plans are skipped).
const StoragePlan* primary_plan(const std::vector<StoragePlan>& plans) {
  for (auto& p : plans) {
    bool plain = true;
    for (auto& l : p.levels)
      plain &= l.fields.size() == 1;
    if (plain)
      return &p;
  }
  return plans.empty() ? nullptr : &plans.front();
}

} // namespace

StorageDescriptor derive_descriptor(const std::vector<StoragePlan>& plans) {
  StorageDescriptor d;
  const StoragePlan* prim = primary_plan(plans);
  for (auto& p : plans) {
    std::string prefix = plans.size() > 1 ? p.name + "_" : "";
    plan_components(p, prefix, d);
  }
  if (prim) {
    const StoragePlan& p = *prim;
    d.flat = p.flat();
    d.split = p.split;
    d.padded = p.nstar == StoragePlan::NStarState::Padded;
    d.permuted = p.sorted;
    d.position_major = p.position_major;
    d.offsets = p.dim_reduced;
    std::vector<long> block_sizes;
    for (auto& l : p.levels) {
      if (l.kind == GroupLevel::Kind::BlockOuter)
        block_sizes.push_back(l.block_size);
      if (l.kind == GroupLevel::Kind::Value && l.fields.size() == 1 &&
          d.grouping.empty())
        d.grouping = l.fields[0];
      if (l.kind == GroupLevel::Kind::BlockOuter && d.grouping.empty())
        d.grouping = l.fields[0];
    }
    if (!block_sizes.empty())
      d.block_geometry = {block_sizes[0],
                          block_sizes.size() > 1 ? block_sizes[1] : 0};
  }
  return d;
}

FormatName recognize_format(const StorageDescriptor& d) {
  if (d.blocked())
    return FormatName::BlockedHybrid;
  if (!d.split)
    return FormatName::Unnamed;
  if (d.flat) {
    bool row = false, col = false, val = false;
    for (auto& c : d.components) {
      row |= c.kind == ComponentKind::RowIndex;
      col |= c.kind == ComponentKind::ColumnIndex;
      val |= c.kind == ComponentKind::Value;
    }
    return row && col && val ? FormatName::COO : FormatName::Unnamed;
  }
  if (d.grouping == "row" && !d.padded && d.offsets && !d.permuted &&
      !d.position_major)
    return FormatName::CSR;
  if (d.grouping == "col" && !d.padded && d.offsets && !d.permuted &&
      !d.position_major)
    return FormatName::CCS;
  if (d.grouping == "row" && d.padded && d.position_major && !d.permuted)
    return FormatName::EllpackItpack;
  if (d.position_major && d.permuted && d.offsets && !d.padded)
    return FormatName::JDS;
  return FormatName::Unnamed;
}

std::string StorageDescriptor::shape_key() const {
  std::ostringstream os;
  os << (flat ? 'f' : 'g') << grouping << '|' << (split ? 'S' : '-')
     << (padded ? 'P' : '-') << (permuted ? 'R' : '-')
     << (position_major ? 'M' : '-') << (offsets ? 'O' : '-') << '|';
  for (auto& c : components) {
    os << c.name << ':' << kind_name(c.kind) << ':';
    for (auto& e : c.extents)
      os << e << 'x';
    os << (c.layout == Layout::RowMajor   ? 'r'
           : c.layout == Layout::ColMajor ? 'c'
                                          : '-')
       << ';';
  }
  if (blocked())
    os << "|blk" << block_geometry.first << 'x' << block_geometry.second;
  for (auto& s : sub)
    os << "{" << s.shape_key() << "}";
  return os.str();
}

namespace {

void json_escape(std::ostringstream& os, const std::string& s) {
  os << '"';
  for (char c : s) {
    if (c == '"' || c == '\\')
      os << '\\';
    os << c;
  }
  os << '"';
}

void descriptor_json(std::ostringstream& os, const StorageDescriptor& d,
                     int indent) {
  std::string pad(indent, ' ');
  os << "{\n";
  os << pad << "  \"components\": [";
  for (size_t i = 0; i < d.components.size(); ++i) {
    const Component& c = d.components[i];
    os << (i ? "," : "") << "\n" << pad << "    {\"name\": ";
    json_escape(os, c.name);
    os << ", \"kind\": \"" << kind_name(c.kind) << "\", \"extents\": [";
    for (size_t e = 0; e < c.extents.size(); ++e) {
      if (e)
        os << ", ";
      json_escape(os, c.extents[e]);
    }
    os << "]";
    if (c.layout != Layout::None)
      os << ", \"layout\": \""
         << (c.layout == Layout::RowMajor ? "row-major" : "column-major")
         << "\"";
    os << "}";
  }
  os << "\n" << pad << "  ],\n";
  os << pad << "  \"grouping\": ";
  json_escape(os, d.flat ? "flat" : d.grouping);
  os << ",\n";
  os << pad << "  \"split\": " << (d.split ? "true" : "false") << ",\n";
  os << pad << "  \"padded\": " << (d.padded ? "true" : "false") << ",\n";
  os << pad << "  \"permuted\": " << (d.permuted ? "true" : "false") << ",\n";
  os << pad << "  \"position_major\": " << (d.position_major ? "true" : "false")
     << ",\n";
  os << pad << "  \"offsets\": " << (d.offsets ? "true" : "false");
  if (d.blocked()) {
    os << ",\n"
       << pad << "  \"block_geometry\": [" << d.block_geometry.first << ", "
       << d.block_geometry.second << "]";
    if (!d.sub.empty()) {
      os << ",\n" << pad << "  \"blocks\": [";
      for (size_t i = 0; i < d.sub.size(); ++i) {
        os << (i ? "," : "") << "\n" << pad << "    ";
        descriptor_json(os, d.sub[i], indent + 4);
      }
      os << "\n" << pad << "  ]";
    }
  }
  os << "\n" << pad << "}";
}

} // namespace

std::string StorageDescriptor::to_json(int indent) const {
  std::ostringstream os;
  descriptor_json(os, *this, indent);
  return os.str();
}

std::string ConcreteVariant::to_json() const {
  std::ostringstream os;
  os << "{\n  \"id\": \"" << id << "\",\n  \"pipeline\": ";
  json_escape(os, transform::to_string(pipeline));
  os << ",\n  \"format\": \"" << storage::to_string(format) << "\",\n";
  os << "  \"storage\": ";
  descriptor_json(os, storage, 2);
  if (!blocks.empty()) {
    os << ",\n  \"block_pipelines\": [";
    for (size_t i = 0; i < blocks.size(); ++i) {
      os << (i ? ", " : "");
      json_escape(os, transform::to_string(blocks[i].pipeline));
    }
    os << "]";
  }
  os << "\n}\n";
  return os.str();
}

//===----------------------------------------------------------------------===//
// Concretization
//===----------------------------------------------------------------------===//

namespace {

struct LowerError {
  std::string reason;
};

Block lower_block(const Block& b, std::vector<StoragePlan>& plans,
                  std::vector<LowerError>& errors) {
  Block out;
  for (auto& sp : b.stmts) {
    Stmt copy = *sp;
    std::visit(
        [&](auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, ForStmt>) {
            n.body = lower_block(n.body, plans, errors);
          } else if constexpr (std::is_same_v<T, ForelemTupleStmt>) {
            errors.push_back({"residual reservoir loop over '" + n.reservoir +
                              (n.cond ? "' with a subset condition" : "'")});
          } else if constexpr (std::is_same_v<T, ForelemIndexStmt>) {
            if (std::holds_alternative<Domain::FieldValues>(n.domain.v))
              errors.push_back(
                  {"residual field-value domain (encapsulate first)"});
            if (n.guarded)
              errors.push_back({"guarded nest: materialize N* (padded), or "
                                "sort and reduce dimensionality"});
            if (auto* ns = std::get_if<Domain::NStar>(&n.domain.v)) {
              StoragePlan* plan = nullptr;
              for (auto& p : plans)
                if (p.name == ns->plan)
                  plan = &p;
              if (plan && plan->flat()) {
                // The flat leaf set has exactly one explicit form; the
                // compiler inserts it during concretization.
                plan->nstar = StoragePlan::NStarState::Compact;
                n.domain = Domain{Domain::LenBound{plan->name}};
              } else {
                errors.push_back({"residual symbolic N* (apply nstar first)"});
              }
            }
            n.ordered = true;
            n.body = lower_block(n.body, plans, errors);
          } else if constexpr (std::is_same_v<T, AssignStmt>) {
            if (std::holds_alternative<LValue::BindingWrite>(n.lhs.v))
              errors.push_back({"address-function writes are not executable"});
          } else if constexpr (std::is_same_v<T, ReservoirUnionStmt>) {
            errors.push_back({"reservoir mutation is not executable"});
          }
        },
        copy.node);
    out.stmts.push_back(make_stmt(std::move(copy)));
  }
  return out;
}

} // namespace

Expected<ConcreteVariant> concretize(const transform::TransformResult& tr,
                                     const transform::Pipeline& pipeline,
                                     const ir::KernelSpec* kernel) {
  ConcreteVariant v;
  v.plans = tr.plans;
  std::vector<LowerError> errors;
  v.program = tr.program;
  v.program.body = lower_block(tr.program.body, v.plans, errors);
  if (!errors.empty())
    return Expected<ConcreteVariant>::failure(errors.front().reason);
  v.pipeline = pipeline;
  v.id = hex_id(fnv1a64(transform::to_string(pipeline)));
  v.storage = derive_descriptor(v.plans);
  v.format = recognize_format(v.storage);
  if (kernel) {
    v.kind = kernel->kind;
    v.k = kernel->k;
  }
  ir::validate(v.program);
  return v;
}

Expected<ConcreteVariant>
blocked_concretize(const ir::KernelSpec& kernel,
                   const transform::TransformResult& blocked,
                   const std::vector<transform::Pipeline>& per_block) {
  if (!blocked.plans.empty())
    return Expected<ConcreteVariant>::failure(
        "hybrid concretization expects a pre-materialization blocking");
  if (per_block.empty())
    return Expected<ConcreteVariant>::failure("no sub-pipelines given");
  if (kernel.kind == KernelKind::TrSv)
    return Expected<ConcreteVariant>::failure(
        "ordered kernels cannot be partitioned blockwise");

  // Geometry from the blocked loops.
  std::vector<std::pair<std::string, long>> blocked_fields; // (field, size)
  std::function<void(const Block&)> scan = [&](const Block& b) {
    for (auto& sp : b.stmts) {
      std::visit(
          [&](auto&& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, ForelemIndexStmt>) {
              if (auto* br = std::get_if<Domain::BlockRange>(&n.domain.v)) {
                std::string field;
                if (auto* fe = std::get_if<SymExtent::FieldExtent>(&br->total.v))
                  field = fe->field;
                blocked_fields.push_back({field, br->size});
              }
              scan(n.body);
            } else if constexpr (std::is_same_v<T, ForStmt> ||
                                 std::is_same_v<T, ForelemTupleStmt>) {
              scan(n.body);
            }
          },
          sp->node);
    }
  };
  scan(blocked.program.body);
  if (blocked_fields.empty())
    return Expected<ConcreteVariant>::failure("program is not blocked");
  if (blocked_fields.size() > 2)
    return Expected<ConcreteVariant>::failure("more than two blocked loops");
  for (auto& [f, x] : blocked_fields)
    if (f.empty())
      return Expected<ConcreteVariant>::failure(
          "blocked loop does not partition a tuple field");

  ConcreteVariant v;
  v.kind = kernel.kind;
  v.k = kernel.k;
  v.program = blocked.program;
  for (size_t i = 0; i < per_block.size(); ++i) {
    auto sub = transform::apply_pipeline(kernel.program, per_block[i]);
    if (!sub)
      return Expected<ConcreteVariant>::failure(
          "sub-pipeline " + std::to_string(i + 1) + " inapplicable: " +
          sub.error());
    auto cv = concretize(*sub, per_block[i], &kernel);
    if (!cv)
      return Expected<ConcreteVariant>::failure(
          "sub-pipeline " + std::to_string(i + 1) + " not concretizable: " +
          cv.error());
    v.blocks.push_back(std::move(*cv));
  }
  v.storage.flat = false;
  v.storage.block_geometry = {blocked_fields[0].second,
                              blocked_fields.size() > 1
                                  ? blocked_fields[1].second
                                  : 0};
  v.storage.grouping = blocked_fields[0].first;
  for (auto& b : v.blocks)
    v.storage.sub.push_back(b.storage);
  v.format = recognize_format(v.storage);
  std::string label = "block(" + std::to_string(v.storage.block_geometry.first);
  if (v.storage.block_geometry.second)
    label += "," + std::to_string(v.storage.block_geometry.second);
  label += ")|hybrid:";
  for (size_t i = 0; i < per_block.size(); ++i)
    label += (i ? ";" : "") + transform::to_string(per_block[i]);
  v.pipeline.provenance = label;
  v.id = hex_id(fnv1a64(label));
  return v;
}

//===----------------------------------------------------------------------===//
// Variant-level building
//===----------------------------------------------------------------------===//

namespace {

// The base (underived) reservoir a variant's storage ultimately draws from,
// and the binding that carries the matrix values.
std::pair<std::string, std::string> matrix_role(const ir::Program& p) {
  std::string reservoir, binding;
  for (auto& r : p.reservoirs)
    if (!r.join && !r.projection) {
      reservoir = r.name;
      break;
    }
  for (auto& b : p.bindings)
    if (b.reservoir == reservoir || b.origin == reservoir) {
      binding = b.name;
      break;
    }
  if (reservoir.empty() || binding.empty())
    throw InputError("program has no matrix reservoir/binding pair");
  return {reservoir, binding};
}

std::map<std::string, long> kernel_params(const ConcreteVariant& v,
                                          const SparseOperand& m) {
  return {{"NR", m.n_rows}, {"NC", m.n_cols}, {"K", v.k}};
}

} // namespace

BuiltVariant build_variant_storage(const ConcreteVariant& v,
                                   const SparseOperand& m) {
  BuiltVariant out;
  if (v.blocks.empty()) {
    auto [reservoir, binding] = matrix_role(v.program);
    DataEnv env(v.program);
    env.bind_matrix(reservoir, binding, m);
    auto params = kernel_params(v, m);
    for (auto& plan : v.plans)
      out.by_plan.emplace(plan.name,
                          build_storage(plan, env.resolve(plan.reservoir),
                                        params));
    return out;
  }
  // Hybrid: partition the matrix along the blocked fields and build each
  // block with its (cycled) sub-variant.
  long x = v.storage.block_geometry.first;
  long y = v.storage.block_geometry.second;
  std::string f0 = v.storage.grouping;
  long nbi = (std::max<long>(f0 == "col" ? m.n_cols : m.n_rows, 1) + x - 1) / x;
  long nbj = y > 0 ? (std::max<long>(m.n_cols, 1) + y - 1) / y : 1;
  for (long bi = 0; bi < nbi; ++bi)
    for (long bj = 0; bj < nbj; ++bj) {
      BuiltVariant::BlockInstance inst;
      inst.bi = bi;
      inst.bj = bj;
      inst.sub.n_rows = m.n_rows;
      inst.sub.n_cols = m.n_cols;
      for (auto& e : m.entries) {
        long v0 = f0 == "col" ? e.col : e.row;
        if (v0 / x != bi)
          continue;
        if (y > 0 && e.col / y != bj)
          continue;
        inst.sub.entries.push_back(e);
      }
      size_t vi = static_cast<size_t>(bi * nbj + bj) % v.blocks.size();
      inst.variant = &v.blocks[vi];
      const ConcreteVariant& sv = *inst.variant;
      auto [reservoir, binding] = matrix_role(sv.program);
      DataEnv env(sv.program);
      env.bind_matrix(reservoir, binding, inst.sub);
      auto params = kernel_params(sv, m);
      for (auto& plan : sv.plans)
        inst.by_plan.emplace(plan.name,
                             build_storage(plan, env.resolve(plan.reservoir),
                                           params));
      out.blocks.push_back(std::move(inst));
    }
  return out;
}

std::string instance_json(const ConcreteVariant& v, const BuiltVariant& built) {
  std::ostringstream os;
  auto emit_longs = [&](const std::vector<long>& xs) {
    os << '[';
    for (size_t i = 0; i < xs.size(); ++i)
      os << (i ? ", " : "") << xs[i];
    os << ']';
  };
  auto emit_doubles = [&](const std::vector<double>& xs) {
    os << '[';
    os.precision(17);
    for (size_t i = 0; i < xs.size(); ++i)
      os << (i ? ", " : "") << xs[i];
    os << ']';
  };
  auto emit_plan = [&](const ConcreteVariant& cv, const std::string& name,
                       const PhysicalStorage& s, int indent) {
    std::string pad(indent, ' ');
    const transform::StoragePlan* plan = nullptr;
    for (auto& p : cv.plans)
      if (p.name == name)
        plan = &p;
    os << pad << "\"" << name << "\": {\n";
    os << pad << "  \"groups\": " << s.group_count << ",\n";
    os << pad << "  \"width\": " << s.width << ",\n";
    os << pad << "  \"leaves\": " << s.leaf_count << ",\n";
    os << pad << "  \"pads\": " << s.pad_count();
    for (auto& [f, vals] : s.value_fields) {
      os << ",\n" << pad << "  \"" << f << "\": ";
      emit_doubles(plan ? s.physical_values(f, *plan) : vals);
    }
    for (auto& [f, vals] : s.int_fields) {
      os << ",\n" << pad << "  \"" << f << "\": ";
      emit_longs(plan ? s.physical_indices(f, *plan) : vals);
    }
    if (!s.len.empty() &&
        (!plan || plan->nstar == transform::StoragePlan::NStarState::Compact) &&
        (!plan || !plan->dim_reduced)) {
      os << ",\n" << pad << "  \"len\": ";
      emit_longs(s.len);
    }
    if (!s.ptr.empty()) {
      os << ",\n" << pad << "  \"ptr\": ";
      emit_longs(s.ptr);
    }
    if (!s.perm.empty()) {
      os << ",\n" << pad << "  \"perm\": ";
      emit_longs(s.perm);
    }
    os << "\n" << pad << "}";
  };

  os << "{\n  \"id\": \"" << v.id << "\",\n  \"format\": \""
     << to_string(v.format) << "\",\n  \"storage\": {\n";
  bool first = true;
  for (auto& [name, s] : built.by_plan) {
    if (!first)
      os << ",\n";
    emit_plan(v, name, s, 4);
    first = false;
  }
  os << "\n  }";
  if (!built.blocks.empty()) {
    os << ",\n  \"blocks\": [";
    for (size_t i = 0; i < built.blocks.size(); ++i) {
      auto& b = built.blocks[i];
      os << (i ? "," : "") << "\n    {\"block\": [" << b.bi << ", " << b.bj
         << "], \"variant\": \"" << b.variant->id << "\", \"nnz\": "
         << b.sub.entries.size() << ", \"storage\": {\n";
      bool f2 = true;
      for (auto& [name, s] : b.by_plan) {
        if (!f2)
          os << ",\n";
        emit_plan(*b.variant, name, s, 6);
        f2 = false;
      }
      os << "\n    }}";
    }
    os << "\n  ]";
  }
  os << "\n}\n";
  return os.str();
}

} // namespace forelem::storage
