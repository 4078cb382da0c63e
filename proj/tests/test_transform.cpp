#include "doctest.h"

#include <random>

#include "forelem/parse.hpp"
#include "forelem/search.hpp"

#include "test_support.hpp"

using namespace forelem;
using namespace forelem::ir;
using namespace forelem::transform;

namespace {

TransformResult root(KernelKind kind, int k = 1) {
  return TransformResult{builtin_kernel(kind, k).program, {}};
}

TransformResult chain(const TransformResult& start, const std::string& text) {
  TransformResult cur = start;
  for (auto& pass : parse_pipeline(text).passes) {
    auto next = apply_pass(cur, pass);
    REQUIRE_MESSAGE(next, (to_string(pass) + ": " + next.error()));
    cur = std::move(*next);
  }
  return cur;
}

std::vector<DenseOperand> run(const TransformResult& tr, KernelKind kind, int k,
                              const SparseOperand& m,
                              const std::vector<DenseOperand>& inputs,
                              exec::Instrumentation* instr = nullptr) {
  KernelSpec spec = builtin_kernel(kind, k);
  return exec::run_program(tr.program, tr.plans, spec, m, inputs, instr);
}

// Deterministic random matrix with small-integer values so results compare
// bit-exactly across variants.
SparseOperand random_matrix(std::mt19937_64& rng, long max_n, long max_nnz) {
  long n = 2 + static_cast<long>(rng() % static_cast<uint64_t>(max_n - 1));
  long cap = std::min(max_nnz, n * n);
  long nnz = 1 + static_cast<long>(rng() % static_cast<uint64_t>(cap));
  std::set<std::pair<long, long>> pos;
  while (static_cast<long>(pos.size()) < nnz)
    pos.insert({static_cast<long>(rng() % static_cast<uint64_t>(n)),
                static_cast<long>(rng() % static_cast<uint64_t>(n))});
  SparseOperand m;
  m.n_rows = m.n_cols = n;
  for (auto& [r, c] : pos) {
    double v = 1.0 + static_cast<double>(rng() % 8);
    m.entries.push_back({r, c, v});
  }
  m.normalize();
  return m;
}

// Square matrix with prescribed row lengths (columns filled left to right).
SparseOperand matrix_with_row_lengths(const std::vector<long>& lens) {
  SparseOperand m;
  m.n_rows = static_cast<long>(lens.size());
  m.n_cols = m.n_rows;
  for (long l : lens)
    m.n_cols = std::max(m.n_cols, l);
  m.n_cols = std::max<long>(m.n_cols, 1);
  m.n_rows = m.n_cols;
  double v = 1;
  for (size_t r = 0; r < lens.size(); ++r)
    for (long c = 0; c < lens[r]; ++c)
      m.entries.push_back({static_cast<long>(r), c, v++});
  m.normalize();
  return m;
}

const StoragePlan& only_plan(const TransformResult& tr) {
  REQUIRE(tr.plans.size() == 1);
  return tr.plans[0];
}

} // namespace

//===----------------------------------------------------------------------===//
// Orthogonalization and encapsulation
//===----------------------------------------------------------------------===//

TEST_CASE("orthogonalize introduces field-value loops") {
  auto tr = chain(root(KernelKind::SpMV), "orth(row)");
  auto* outer = std::get_if<ForelemIndexStmt>(&tr.program.body.stmts[0]->node);
  REQUIRE(outer != nullptr);
  auto* fv = std::get_if<Domain::FieldValues>(&outer->domain.v);
  REQUIRE(fv != nullptr);
  CHECK(fv->field == "row");
  auto* inner = std::get_if<ForelemTupleStmt>(&outer->body.stmts[0]->node);
  REQUIRE(inner != nullptr);
  REQUIRE(inner->cond.has_value());
  CHECK(inner->cond->fields == std::vector<FieldName>{"row"});

  SUBCASE("two-field orthogonalization gives the triple nest") {
    auto tr2 = chain(root(KernelKind::SpMV), "orth(row,col)");
    auto* l1 = std::get_if<ForelemIndexStmt>(&tr2.program.body.stmts[0]->node);
    REQUIRE(l1 != nullptr);
    auto* l2 = std::get_if<ForelemIndexStmt>(&l1->body.stmts[0]->node);
    REQUIRE(l2 != nullptr);
    auto* l3 = std::get_if<ForelemTupleStmt>(&l2->body.stmts[0]->node);
    REQUIRE(l3 != nullptr);
    CHECK(l3->cond->fields == std::vector<FieldName>{"row", "col"});
  }
  SUBCASE("errors") {
    auto once = chain(root(KernelKind::SpMV), "orth(row)");
    auto again = apply_pass(once, parse_pipeline("orth(row)").passes[0]);
    CHECK(!again);
    CHECK(again.error().find("already conditioned") != std::string::npos);
    auto bad = apply_pass(root(KernelKind::SpMV),
                          parse_pipeline("orth(diag)").passes[0]);
    CHECK(!bad);
    CHECK(bad.error().find("not in schema") != std::string::npos);
  }
  SUBCASE("degenerate single-value field still visits every tuple") {
    SparseOperand m = testsup::from_entries(
        4, {{2, 0, 5}, {2, 1, 6}, {2, 3, 7}}); // all tuples share row 2
    auto x = testsup::vec({1, 1, 1, 1});
    auto base = run(root(KernelKind::SpMV), KernelKind::SpMV, 1, m, {x});
    auto after = run(tr, KernelKind::SpMV, 1, m, {x});
    CHECK(base[0].values == after[0].values);
  }
}

TEST_CASE("encapsulate embeds the value set in a natural range") {
  // The worked value set {1,2,6,7,8,10}, 0-based {0,1,5,6,7,9}: the range
  // becomes [0,10) and the absent values run empty subsets.
  SparseOperand m = testsup::from_entries(16, {{0, 0, 1},
                                               {1, 0, 2},
                                               {5, 0, 3},
                                               {6, 0, 4},
                                               {7, 0, 5},
                                               {9, 0, 6}});
  auto tr = chain(root(KernelKind::SpMV), "orth(row),encap");
  auto* outer = std::get_if<ForelemIndexStmt>(&tr.program.body.stmts[0]->node);
  REQUIRE(outer != nullptr);
  CHECK(std::holds_alternative<Domain::NatUpTo>(outer->domain.v));

  auto x = testsup::vec(std::vector<double>(16, 1.0));
  exec::Instrumentation instr;
  auto got = run(tr, KernelKind::SpMV, 1, m, {x}, &instr);
  auto want = run(root(KernelKind::SpMV), KernelKind::SpMV, 1, m, {x});
  CHECK(got[0].values == want[0].values);
  CHECK(instr.empty_subset_iterations == 4); // rows 2,3,4,8

  SUBCASE("singleton {5} runs five empty iterations") {
    SparseOperand ms = testsup::from_entries(6, {{5, 2, 9}});
    exec::Instrumentation i2;
    auto got2 =
        run(tr, KernelKind::SpMV, 1, ms, {testsup::vec({1, 1, 1, 1, 1, 1})}, &i2);
    CHECK(got2[0].values[5] == 9);
    CHECK(i2.empty_subset_iterations == 5);
  }
  SUBCASE("dense prefix {0,1,2} skips nothing") {
    SparseOperand md =
        testsup::from_entries(3, {{0, 0, 1}, {1, 1, 1}, {2, 2, 1}});
    exec::Instrumentation i3;
    run(tr, KernelKind::SpMV, 1, md, {testsup::vec({1, 1, 1})}, &i3);
    CHECK(i3.empty_subset_iterations == 0);
  }
}

TEST_CASE("undo_orthogonalize inverts orthogonalization") {
  auto tr = chain(root(KernelKind::SpMV), "orth(row,col)");
  auto undone = chain(tr, "undo_orth(col)");
  CHECK(canonical(undone.program) ==
        canonical(chain(root(KernelKind::SpMV), "orth(row)").program));
  auto undone2 = chain(undone, "undo_orth(row)");
  CHECK(canonical(undone2.program) == canonical(root(KernelKind::SpMV).program));
  auto missing = apply_pass(root(KernelKind::SpMV),
                            parse_pipeline("undo_orth(row)").passes[0]);
  CHECK(!missing);
}

//===----------------------------------------------------------------------===//
// Materialization
//===----------------------------------------------------------------------===//

TEST_CASE("loop-independent materialization flattens the reservoir") {
  auto tr = chain(root(KernelKind::SpMV), "matindep");
  const StoragePlan& plan = only_plan(tr);
  CHECK(plan.flat());
  CHECK(plan.leaf_fields.size() == 3); // row, col, A

  auto built = storage::build_storage(
      plan, reservoir_from_matrix({"row", "col"}, "A", testsup::m3()));
  CHECK(built.leaf_count == 5);
  CHECK(built.int_fields.at("row") == std::vector<long>{0, 0, 1, 2, 2});
  CHECK(built.int_fields.at("col") == std::vector<long>{0, 2, 1, 0, 2});
  CHECK(built.value_fields.at("A") == std::vector<double>{4, 1, 5, 2, 3});

  SUBCASE("dependent conditions refuse") {
    auto grouped = chain(root(KernelKind::SpMV), "orth(row),encap");
    auto out = apply_pass(grouped, parse_pipeline("matindep").passes[0]);
    CHECK(!out);
    CHECK(out.error().find("matdep") != std::string::npos);
  }
  SUBCASE("empty reservoir materializes to an empty sequence") {
    SparseOperand empty;
    empty.n_rows = empty.n_cols = 4;
    auto built2 = storage::build_storage(
        plan, reservoir_from_matrix({"row", "col"}, "A", empty));
    CHECK(built2.leaf_count == 0);
    auto y = run(tr, KernelKind::SpMV, 1, empty, {testsup::vec({1, 1, 1, 1})});
    CHECK(y[0].values == std::vector<double>{0, 0, 0, 0});
  }
}

TEST_CASE("loop-dependent materialization groups by the conditioned field") {
  auto tr = chain(root(KernelKind::SpMV), "orth(row),encap,matdep");
  const StoragePlan& plan = only_plan(tr);
  REQUIRE(plan.levels.size() == 1);
  CHECK(plan.levels[0].fields == std::vector<FieldName>{"row"});
  // The grouped field leaves the leaf record.
  for (auto& lf : plan.leaf_fields)
    CHECK(lf.name != "row");

  // Group-by-row brute force oracle for the worked matrix.
  SparseOperand m = testsup::m3();
  std::map<long, long> by_row;
  for (auto& e : m.entries)
    ++by_row[e.row];
  auto built = storage::build_storage(
      plan, reservoir_from_matrix({"row", "col"}, "A", m));
  REQUIRE(built.group_count == 3);
  for (long r = 0; r < 3; ++r)
    CHECK(built.len_of_group(r) == by_row[r]);
  CHECK(built.len == std::vector<long>{2, 1, 2});

  SUBCASE("empty row gets a zero-length group") {
    SparseOperand m2 = testsup::from_entries(3, {{0, 0, 1}, {2, 1, 2}});
    auto b2 = storage::build_storage(
        plan, reservoir_from_matrix({"row", "col"}, "A", m2));
    CHECK(b2.len == std::vector<long>{1, 0, 1});
  }
  SUBCASE("matdep alone on the root refuses") {
    auto out =
        apply_pass(root(KernelKind::SpMV), parse_pipeline("matdep").passes[0]);
    CHECK(!out);
    CHECK(out.error().find("matindep") != std::string::npos);
  }
  SUBCASE("unencapsulated orthogonalization refuses") {
    auto out = apply_pass(chain(root(KernelKind::SpMV), "orth(row)"),
                          parse_pipeline("matdep").passes[0]);
    CHECK(!out);
    CHECK(out.error().find("not encapsulated") != std::string::npos);
  }
}

TEST_CASE("horizontal reduction projects unused fields away") {
  const char* src =
      "reservoir T(field1, field2, field3, field4);\ndata A(T);\n"
      "dense X[N];\n"
      "forelem (t; t in T) { X[t.field1] += A(t) * t.field2; }";
  TransformResult tr{parse_program(src), {}};
  auto out = chain(tr, "hreduce");
  const ReservoirDecl* proj = out.program.find_reservoir("T_r");
  REQUIRE(proj != nullptr);
  CHECK(proj->schema == std::vector<FieldName>{"field1", "field2"});
  REQUIRE(proj->projection.has_value());
  CHECK(proj->projection->source == "T");

  SUBCASE("all fields used refuses") {
    auto noop =
        apply_pass(root(KernelKind::SpMV), parse_pipeline("hreduce").passes[0]);
    CHECK(!noop);
    CHECK(noop.error().find("used") != std::string::npos);
  }
  SUBCASE("data derivation refuses to merge distinct tuples") {
    const char* src3 =
        "reservoir T(field1, field2, field3);\ndata A(T);\ndense X[N];\n"
        "forelem (t; t in T) { X[t.field1] += A(t) * t.field2; }";
    TransformResult tr3{parse_program(src3), {}};
    auto red = chain(tr3, "hreduce");
    DataEnv env(red.program);
    ReservoirData d;
    d.schema = {"field1", "field2", "field3"};
    d.tuples = {{1, 2, 0}, {1, 2, 1}};
    d.bindings["A"] = {10.0, 11.0};
    env.bind("T", std::move(d));
    CHECK_THROWS_AS(env.resolve("T_r"), InputError);
  }
  SUBCASE("projection preserves execution") {
    DataEnv env(out.program);
    ReservoirData d;
    d.schema = {"field1", "field2", "field3", "field4"};
    d.tuples = {{0, 3, 7, 1}, {1, 4, 9, 2}, {2, 5, 11, 3}};
    d.bindings["A"] = {2.0, 3.0, 4.0};
    env.bind("T", std::move(d));
    exec::Env e;
    e.params["N"] = 3;
    e.dense["X"] = DenseOperand::zeros({3});
    exec::interpret(out.program, out.plans, env, e);
    CHECK(e.dense["X"].values == std::vector<double>{6, 12, 20});
  }
}

//===----------------------------------------------------------------------===//
// Structure splitting, N* materialization, sorting, dimensionality reduction
//===----------------------------------------------------------------------===//

TEST_CASE("structure split rewrites leaf accesses") {
  auto tr = chain(root(KernelKind::SpMV), "orth(row),encap,matdep");
  CHECK(pretty(tr.program).find("PA[i][k].col") != std::string::npos);
  auto split = chain(tr, "split");
  CHECK(pretty(split.program).find("PA.col[i][k]") != std::string::npos);
  CHECK(only_plan(split).split);
  auto again = apply_pass(split, parse_pipeline("split").passes[0]);
  CHECK(!again); // idempotent refusal
}

TEST_CASE("N* materialization") {
  auto base = chain(root(KernelKind::SpMV), "orth(row),encap,matdep,split");
  SparseOperand m = testsup::m3();
  auto data = reservoir_from_matrix({"row", "col"}, "A", m);

  // Oracle: per-group lengths and their maximum.
  std::vector<long> lens{2, 1, 2};
  long width = *std::max_element(lens.begin(), lens.end());

  SUBCASE("padded equalizes group lengths") {
    auto tr = chain(base, "nstar(padded)");
    auto built = storage::build_storage(only_plan(tr), data);
    CHECK(built.width == width);
    CHECK(built.pad_count() == 1); // row 1 is one short
    auto x = testsup::vec({1, 1, 1});
    exec::Instrumentation instr;
    auto got = run(tr, KernelKind::SpMV, 1, m, {x}, &instr);
    CHECK(got[0].values == std::vector<double>{5, 5, 5});
    CHECK(instr.pad_visits == 1);
    CHECK(instr.visits.size() == 5);
  }
  SUBCASE("compact keeps the exact lengths") {
    auto tr = chain(base, "nstar(compact)");
    auto built = storage::build_storage(only_plan(tr), data);
    CHECK(built.len == lens);
    CHECK(built.pad_count() == 0);
  }
  SUBCASE("equal group lengths make both modes agree") {
    SparseOperand eq = matrix_with_row_lengths({2, 2, 2});
    auto dpad = storage::build_storage(
        only_plan(chain(base, "nstar(padded)")),
        reservoir_from_matrix({"row", "col"}, "A", eq));
    auto dcomp = storage::build_storage(
        only_plan(chain(base, "nstar(compact)")),
        reservoir_from_matrix({"row", "col"}, "A", eq));
    CHECK(dpad.pad_count() == 0);
    CHECK(dpad.value_fields.at("A") == dcomp.value_fields.at("A"));
  }
  SUBCASE("double application refuses") {
    auto tr = chain(base, "nstar(compact)");
    auto again = apply_pass(tr, parse_pipeline("nstar(compact)").passes[0]);
    CHECK(!again);
    CHECK(again.error().find("already") != std::string::npos);
  }
}

TEST_CASE("N* sorting permutes groups by nonincreasing length") {
  auto base = chain(root(KernelKind::SpMV), "orth(row),encap,matdep,split");
  auto sorted = chain(base, "nstarsort");
  CHECK(only_plan(sorted).sorted);

  auto perm_for = [&](const std::vector<long>& lens) {
    auto built = storage::build_storage(
        only_plan(sorted), reservoir_from_matrix({"row", "col"}, "A",
                                                 matrix_with_row_lengths(lens)));
    return built.perm;
  };
  // Stable-sort oracle cases.
  CHECK(perm_for({2, 1, 2}) == std::vector<long>{0, 2, 1});
  CHECK(perm_for({3, 3, 3}) == std::vector<long>{0, 1, 2});
  CHECK(perm_for({1, 3, 2}) == std::vector<long>{1, 2, 0});

  SUBCASE("property: lengths nonincreasing along the permutation, stable") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<long> lens;
      long n = 1 + static_cast<long>(rng() % 9);
      for (long i = 0; i < n; ++i)
        lens.push_back(static_cast<long>(rng() % 5));
      // The encapsulated group domain ends at the largest occupied index.
      size_t groups = 0;
      for (size_t r = 0; r < lens.size(); ++r)
        if (lens[r] > 0)
          groups = r + 1;
      auto built = storage::build_storage(
          only_plan(sorted),
          reservoir_from_matrix({"row", "col"}, "A",
                                matrix_with_row_lengths(lens)));
      REQUIRE(built.perm.size() == groups);
      for (size_t q = 1; q < built.perm.size(); ++q) {
        long a = lens[static_cast<size_t>(built.perm[q - 1])];
        long b = lens[static_cast<size_t>(built.perm[q])];
        CHECK(a >= b);
        if (a == b)
          CHECK(built.perm[q - 1] < built.perm[q]); // stability
      }
    }
  }
  SUBCASE("ordered group loops refuse sorting") {
    auto trsv = chain(root(KernelKind::TrSv), "matdep,matdep");
    auto out = apply_pass(trsv, parse_pipeline("nstarsort").passes[0]);
    CHECK(!out);
  }
}

TEST_CASE("dimensionality reduction stores groups back to back") {
  auto base = chain(root(KernelKind::SpMV),
                    "orth(row),encap,matdep,split,nstar(compact)");
  auto tr = chain(base, "dimreduce");
  CHECK(only_plan(tr).dim_reduced);
  CHECK(pretty(tr.program).find("ptrrange(PA)") != std::string::npos);
  CHECK(pretty(tr.program).find("PA.col[k]") != std::string::npos);

  auto ptr_for = [&](const std::vector<long>& lens) {
    auto built = storage::build_storage(
        only_plan(tr), reservoir_from_matrix({"row", "col"}, "A",
                                             matrix_with_row_lengths(lens)));
    return built.ptr;
  };
  // Prefix-sum oracle.
  CHECK(ptr_for({2, 1, 2}) == std::vector<long>{0, 2, 3, 5});
  CHECK(ptr_for({4}) == std::vector<long>{0, 4});
  CHECK(ptr_for({2, 0, 3}) == std::vector<long>{0, 2, 2, 5});

  SUBCASE("padded storage refuses") {
    auto padded = chain(root(KernelKind::SpMV),
                        "orth(row),encap,matdep,split,nstar(padded)");
    auto out = apply_pass(padded, parse_pipeline("dimreduce").passes[0]);
    CHECK(!out);
    CHECK(out.error().find("padded") != std::string::npos);
  }
  SUBCASE("offset law: ptr deltas equal the iterated lengths") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      SparseOperand m = random_matrix(rng, 12, 40);
      auto built = storage::build_storage(
          only_plan(tr), reservoir_from_matrix({"row", "col"}, "A", m));
      REQUIRE(built.ptr.size() == built.len.size() + 1);
      for (size_t i = 0; i < built.len.size(); ++i)
        CHECK(built.ptr[i + 1] - built.ptr[i] == built.len[i]);
    }
  }
}

//===----------------------------------------------------------------------===//
// Loop collapse, interchange, blocking
//===----------------------------------------------------------------------===//

TEST_CASE("loop collapse joins two reservoirs") {
  const char* src = R"(
reservoir T(a_field);
reservoir R(b_field, payload);
data A(T);
data B(R);
dense X[N];
forelem (t; t in T) {
  forelem (r; r in R.b_field[t.a_field]) {
    X[t.a_field] += A(t) * B(r);
  }
}
)";
  TransformResult tr{parse_program(src), {}};
  auto out = chain(tr, "collapse");
  auto* loop = std::get_if<ForelemTupleStmt>(&out.program.body.stmts[0]->node);
  REQUIRE(loop != nullptr);
  CHECK(loop->reservoir == "TxR");
  const ReservoirDecl* join = out.program.find_reservoir("TxR");
  REQUIRE(join != nullptr);
  REQUIRE(join->join.has_value());
  CHECK(join->join->left_field == "a_field");
  CHECK(join->join->right_field == "b_field");

  auto run_joined = [&](const TransformResult& prog, ReservoirData tdata,
                        ReservoirData rdata, long n) {
    DataEnv env(prog.program);
    env.bind("T", std::move(tdata));
    env.bind("R", std::move(rdata));
    exec::Env e;
    e.params["N"] = n;
    e.dense["X"] = DenseOperand::zeros({n});
    exec::interpret(prog.program, prog.plans, env, e);
    return e.dense["X"].values;
  };
  ReservoirData tdata;
  tdata.schema = {"a_field"};
  tdata.tuples = {{1}, {2}};
  tdata.bindings["A"] = {3.0, 5.0};
  ReservoirData rdata;
  rdata.schema = {"b_field", "payload"};
  rdata.tuples = {{2, 0}, {2, 1}, {4, 0}};
  rdata.bindings["B"] = {7.0, 11.0, 13.0};

  // Nested-loop join oracle.
  std::vector<double> want(8, 0.0);
  for (size_t i = 0; i < tdata.tuples.size(); ++i)
    for (size_t j = 0; j < rdata.tuples.size(); ++j)
      if (tdata.tuples[i][0] == rdata.tuples[j][0])
        want[static_cast<size_t>(tdata.tuples[i][0])] +=
            tdata.bindings["A"][i] * rdata.bindings["B"][j];

  CHECK(run_joined(out, tdata, rdata, 8) == want);
  CHECK(run_joined(tr, tdata, rdata, 8) == want); // original agrees

  SUBCASE("empty right side joins to nothing") {
    ReservoirData rempty;
    rempty.schema = {"b_field", "payload"};
    rempty.bindings["B"] = {};
    CHECK(run_joined(out, tdata, rempty, 8) == std::vector<double>(8, 0.0));
  }
  SUBCASE("single-match join") {
    ReservoirData r1;
    r1.schema = {"b_field", "payload"};
    r1.tuples = {{2, 5}};
    r1.bindings["B"] = {7.0};
    auto got = run_joined(out, tdata, r1, 8);
    CHECK(got[2] == 35.0);
  }
  SUBCASE("materialization after collapse") {
    auto mat = chain(out, "matindep");
    CHECK(run_joined(mat, tdata, rdata, 8) == want);
  }
  SUBCASE("non-equi-join conditions refuse") {
    auto bad = apply_pass(root(KernelKind::SpMV),
                          parse_pipeline("collapse").passes[0]);
    CHECK(!bad);
  }
}

TEST_CASE("loop interchange") {
  SUBCASE("orthogonalized nests swap and the swap is an involution") {
    auto tr = chain(root(KernelKind::SpMV), "orth(row,col),encap,encap");
    auto once = chain(tr, "interchange");
    CHECK(canonical(once.program) != canonical(tr.program));
    auto twice = chain(once, "interchange");
    CHECK(canonical(twice.program) == canonical(tr.program));

    SparseOperand m = testsup::m3();
    auto x = testsup::vec({1, 2, 3});
    auto want = run(root(KernelKind::SpMV), KernelKind::SpMV, 1, m, {x});
    CHECK(run(once, KernelKind::SpMV, 1, m, {x})[0].values == want[0].values);
  }
  SUBCASE("materialized pair turns position-major") {
    auto tr = chain(root(KernelKind::SpMV),
                    "orth(row),encap,matdep,split,nstarsort,interchange");
    CHECK(only_plan(tr).position_major);
    SparseOperand m = matrix_with_row_lengths({1, 3, 2});
    auto x = testsup::vec({1, 1, 1});
    auto want = run(root(KernelKind::SpMV), KernelKind::SpMV, 1, m, {x});
    auto got = run(tr, KernelKind::SpMV, 1, m, {x});
    CHECK(got[0].values == want[0].values);
  }
  SUBCASE("triangular solve dependence refuses") {
    const char* src = R"(
reservoir T(row, col);
data A(T);
dense b[NR];
dense x[NR];
for (i = NR downto 1) {
  forelem (t; t in T.col[i]) {
    b[i] = b[t.row] - A(t) * x[i];
  }
}
)";
    TransformResult tr{parse_program(src), {}};
    auto mat = chain(tr, "matdep");
    auto out = apply_pass(mat, parse_pipeline("interchange").passes[0]);
    CHECK(!out);
    CHECK(out.error().find("dependence") != std::string::npos);
  }
  SUBCASE("accumulation-only ordered loops may interchange") {
    auto tr = chain(root(KernelKind::SpMM), "orth(row),encap,matdep");
    // The leaf loop wraps the dense column loop; swapping them is safe.
    auto out = chain(tr, "interchange(k,j)");
    SparseOperand m = testsup::m3();
    KernelSpec spec = builtin_kernel(KernelKind::SpMM, 2);
    DenseOperand b = DenseOperand::zeros({3, 2});
    for (size_t i = 0; i < b.values.size(); ++i)
      b.values[i] = static_cast<double>(i + 1);
    auto want = exec::run_program(spec.program, {}, spec, m, {b});
    auto got = exec::run_program(out.program, out.plans, spec, m, {b});
    CHECK(got[0].values == want[0].values);
  }
}

TEST_CASE("loop blocking partitions the encapsulated range") {
  SUBCASE("even split") {
    SparseOperand m = matrix_with_row_lengths({1, 1, 1, 1, 1, 1});
    auto tr = chain(root(KernelKind::SpMV), "orth(row),encap,block(2)");
    auto* outer = std::get_if<ForelemIndexStmt>(&tr.program.body.stmts[0]->node);
    REQUIRE(outer != nullptr);
    auto* nu = std::get_if<Domain::NatUpTo>(&outer->domain.v);
    REQUIRE(nu != nullptr);
    CHECK(std::holds_alternative<SymExtent::CeilDiv>(nu->extent.v));
    auto* inner = std::get_if<ForelemIndexStmt>(&outer->body.stmts[0]->node);
    REQUIRE(inner != nullptr);
    CHECK(std::holds_alternative<Domain::BlockRange>(inner->domain.v));

    auto x = testsup::vec(std::vector<double>(6, 1.0));
    auto want = run(root(KernelKind::SpMV), KernelKind::SpMV, 1, m, {x});
    CHECK(run(tr, KernelKind::SpMV, 1, m, {x})[0].values == want[0].values);
  }
  SUBCASE("ragged tail: ceil(5/2) blocks cover exactly [0,5)") {
    // Indicator oracle: every row index is visited exactly once.
    SparseOperand m = matrix_with_row_lengths({1, 1, 1, 1, 1});
    auto tr = chain(root(KernelKind::SpMV), "orth(row),encap,block(2)");
    auto x = testsup::vec(std::vector<double>(5, 1.0));
    auto got = run(tr, KernelKind::SpMV, 1, m, {x});
    CHECK(got[0].values == std::vector<double>(5, 1.0));
  }
  SUBCASE("blocking after flat materialization partitions the leaves") {
    auto tr = chain(root(KernelKind::SpMV), "matindep,block(4)");
    SparseOperand m = testsup::m3();
    auto x = testsup::vec({1, 2, 3});
    auto want = run(root(KernelKind::SpMV), KernelKind::SpMV, 1, m, {x});
    CHECK(run(tr, KernelKind::SpMV, 1, m, {x})[0].values == want[0].values);
  }
  SUBCASE("two-dimensional blocking reaches the five-deep nest") {
    auto tr = chain(root(KernelKind::SpMV),
                    "orth(row,col),encap,encap,block(i,2),block(j,2),"
                    "interchange(i,jj)");
    // ii, jj, i, j, then the reservoir loop.
    int depth = 0;
    const Block* b = &tr.program.body;
    while (b->stmts.size() == 1) {
      if (auto* fi = std::get_if<ForelemIndexStmt>(&b->stmts[0]->node)) {
        ++depth;
        b = &fi->body;
      } else if (auto* ft = std::get_if<ForelemTupleStmt>(&b->stmts[0]->node)) {
        ++depth;
        b = &ft->body;
      } else {
        break;
      }
    }
    CHECK(depth == 5);
    SparseOperand m = testsup::m3();
    auto x = testsup::vec({1, 2, 3});
    auto want = run(root(KernelKind::SpMV), KernelKind::SpMV, 1, m, {x});
    CHECK(run(tr, KernelKind::SpMV, 1, m, {x})[0].values == want[0].values);
  }
  SUBCASE("nonpositive block size refuses") {
    Pass p{PassKind::LoopBlock};
    p.block_size = 0;
    auto out = apply_pass(chain(root(KernelKind::SpMV), "orth(row),encap"), p);
    CHECK(!out);
  }
}

//===----------------------------------------------------------------------===//
// Pipelines
//===----------------------------------------------------------------------===//

TEST_CASE("pipeline text round-trips") {
  const char* text = "orth(row),encap,matdep,split,nstar(compact),dimreduce";
  Pipeline p = parse_pipeline(text);
  CHECK(to_string(p) == text);
  CHECK_THROWS_AS(parse_pipeline("nstar(diagonal)"), InputError);
  CHECK_THROWS_AS(parse_pipeline("frobnicate"), InputError);
}

TEST_CASE("apply_pipeline folds and reports the first refusal") {
  auto spmv = builtin_kernel(KernelKind::SpMV);
  SUBCASE("empty pipeline returns the root") {
    auto out = apply_pipeline(spmv.program, Pipeline{});
    REQUIRE(out);
    CHECK(canonical(out->program) == canonical(spmv.program));
  }
  SUBCASE("the CSR chain concretizes to CSR") {
    auto pipe =
        parse_pipeline("orth(row),encap,matdep,split,nstar(compact),dimreduce");
    auto out = apply_pipeline(spmv.program, pipe);
    REQUIRE(out);
    auto cv = storage::concretize(*out, pipe, &spmv);
    REQUIRE(cv);
    CHECK(cv->format == storage::FormatName::CSR);
  }
  SUBCASE("failures carry the pass index") {
    auto out = apply_pipeline(spmv.program, parse_pipeline("matdep"));
    CHECK(!out);
    CHECK(out.error().find("pass 1") != std::string::npos);
  }
}

//===----------------------------------------------------------------------===//
// Semantic preservation and multiset properties
//===----------------------------------------------------------------------===//

namespace {

std::vector<DenseOperand> kernel_inputs(KernelKind kind, int k,
                                        const SparseOperand& m) {
  return exec::default_inputs(kind, k, m, 17);
}

void check_preservation(KernelKind kind, int k, const SparseOperand& m,
                        double tol) {
  TransformResult r = root(kind, k);
  SparseOperand input_matrix =
      kind == KernelKind::TrSv ? testsup::trsv_input(m) : m;
  auto inputs = kernel_inputs(kind, k, input_matrix);
  exec::Instrumentation base_instr;
  auto want = run(r, kind, k, input_matrix, inputs, &base_instr);
  std::multiset<exec::Instrumentation::Visit> base_visits(
      base_instr.visits.begin(), base_instr.visits.end());

  for (auto& pass : applicable_passes(r, {2, 4})) {
    auto next = apply_pass(r, pass);
    REQUIRE(next);
    exec::Instrumentation instr;
    auto got = run(*next, kind, k, input_matrix, inputs, &instr);
    INFO("pass " << to_string(pass));
    CHECK(exec::max_rel_err(got, want) <= tol);
    std::multiset<exec::Instrumentation::Visit> visits(instr.visits.begin(),
                                                       instr.visits.end());
    if (pass.kind != PassKind::HorizontalReduce)
      CHECK(visits == base_visits);
  }
}

} // namespace

TEST_CASE("every applicable pass preserves semantics on random matrices") {
  std::mt19937_64 rng(2026);
  for (int trial = 0; trial < 12; ++trial) {
    SparseOperand m = random_matrix(rng, 16, 64);
    check_preservation(KernelKind::SpMV, 1, m, 1e-10);
    check_preservation(KernelKind::SpMM, 3, m, 1e-10);
    check_preservation(KernelKind::TrSv, 1, m, 1e-8);
  }
}

TEST_CASE("deep chains preserve semantics and visit multisets") {
  std::vector<std::string> chains = {
      "matindep,split",
      "orth(row),encap,matdep,split,nstar(compact),dimreduce",
      "orth(col),encap,matdep,split,nstar(compact),dimreduce",
      "orth(row),encap,matdep,split,nstar(padded),interchange",
      "orth(row),encap,matdep,split,nstarsort,interchange,nstar(compact),"
      "dimreduce",
      "orth(row),encap,block(2),matdep,split,nstar(compact),dimreduce",
      "orth(row,col),encap,encap,block(i,2),block(j,2),interchange(i,jj),"
      "matdep,nstar(padded)",
      "orth(row),encap,matdep,split,nstarsort,nstar(compact),dimreduce",
  };
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 4; ++trial) {
    SparseOperand m = random_matrix(rng, 12, 48);
    auto inputs = kernel_inputs(KernelKind::SpMV, 1, m);
    exec::Instrumentation base_instr;
    auto want =
        run(root(KernelKind::SpMV), KernelKind::SpMV, 1, m, inputs, &base_instr);
    std::multiset<exec::Instrumentation::Visit> base_visits(
        base_instr.visits.begin(), base_instr.visits.end());
    for (auto& text : chains) {
      auto tr = chain(root(KernelKind::SpMV), text);
      exec::Instrumentation instr;
      auto got = run(tr, KernelKind::SpMV, 1, m, inputs, &instr);
      INFO("chain " << text);
      CHECK(exec::max_rel_err(got, want) <= 1e-10);
      std::multiset<exec::Instrumentation::Visit> visits(instr.visits.begin(),
                                                         instr.visits.end());
      CHECK(visits == base_visits);
    }
  }
}
