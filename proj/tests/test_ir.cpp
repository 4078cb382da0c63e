#include "doctest.h"

#include "forelem/parse.hpp"
#include "forelem/transform.hpp"

#include "test_support.hpp"

using namespace forelem;
using namespace forelem::ir;

namespace {

const char* kMinimalSpmv = R"(
reservoir T(row, col);
data A(T);
dense B[NC];
dense C[NR];
forelem (t; t in T) {
  C[t.row] += B[t.col] * A(t);
}
)";

} // namespace

TEST_CASE("parse: minimal unordered loop") {
  Program p = parse_program(kMinimalSpmv);
  REQUIRE(p.body.stmts.size() == 1);
  auto* loop = std::get_if<ForelemTupleStmt>(&p.body.stmts[0]->node);
  REQUIRE(loop != nullptr);
  CHECK(loop->reservoir == "T");
  CHECK(!loop->cond.has_value());
  CHECK(recognize_kernel(p) == KernelKind::SpMV);
}

TEST_CASE("parse: grouped matrix-vector text") {
  Program p = parse_program(testsup::read_file(testsup::fixture_path("spmv_grouped.fl")));
  REQUIRE(p.body.stmts.size() == 1);
  auto* outer = std::get_if<ForStmt>(&p.body.stmts[0]->node);
  REQUIRE(outer != nullptr);
  CHECK(!outer->descending);
  // 1-based inclusive bounds normalize to [0, NR).
  CHECK(pretty(*outer->lo) == "0");
  CHECK(pretty(*outer->hi) == "NR");
  const ForelemTupleStmt* inner = nullptr;
  for (auto& s : outer->body.stmts)
    if (auto* t = std::get_if<ForelemTupleStmt>(&s->node))
      inner = t;
  REQUIRE(inner != nullptr);
  REQUIRE(inner->cond.has_value());
  CHECK(inner->cond->fields == std::vector<FieldName>{"row"});
  CHECK(recognize_kernel(p) == KernelKind::SpMV);
}

TEST_CASE("parse: two-field condition tuple") {
  Program p = parse_program(testsup::read_file(testsup::fixture_path("trsv_literal.fl")));
  auto* outer = std::get_if<ForStmt>(&p.body.stmts[0]->node);
  REQUIRE(outer != nullptr);
  CHECK(outer->descending);
  auto* diag = std::get_if<ForelemTupleStmt>(&outer->body.stmts[0]->node);
  REQUIRE(diag != nullptr);
  REQUIRE(diag->cond.has_value());
  CHECK(diag->cond->fields == std::vector<FieldName>{"col", "row"});
  for (auto& v : diag->cond->values) {
    auto& e = std::get<ExprPtr>(v.v);
    CHECK(pretty(*e) == "i");
  }
  CHECK(recognize_kernel(p) == KernelKind::TrSv);
}

TEST_CASE("parse: interval conditions accepted") {
  Program p = parse_program(testsup::read_file(testsup::fixture_path("pivot_scale.fl")));
  auto* outer = std::get_if<ForStmt>(&p.body.stmts[0]->node);
  REQUIRE(outer != nullptr);
  auto* loop = std::get_if<ForelemTupleStmt>(&outer->body.stmts[0]->node);
  REQUIRE(loop != nullptr);
  REQUIRE(loop->cond.has_value());
  REQUIRE(loop->cond->values.size() == 2);
  CHECK(!loop->cond->values[0].is_interval());
  REQUIRE(loop->cond->values[1].is_interval());
  auto& iv = std::get<Interval>(loop->cond->values[1].v);
  CHECK(!iv.hi.has_value()); // open upper endpoint
}

TEST_CASE("parse: diagnostics carry line and column") {
  SUBCASE("syntax error") {
    try {
      parse_program("reservoir T(row, col)\nforelem");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("unbound identifier") {
    try {
      parse_program("reservoir T(row);\ndata A(T);\nforelem (t; t in T) { "
                    "X[t.row] += A(t); }");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("unbound identifier") !=
            std::string::npos);
      CHECK(e.line() == 3);
    }
  }
  SUBCASE("condition arity mismatch") {
    try {
      parse_program("reservoir T(row, col);\ndata A(T);\ndense X[N];\n"
                    "for (i = 1 .. N) {\n"
                    "  forelem (t; t in T.(row,col)[(i, i, i)]) { X[i] += A(t); }\n"
                    "}");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("arity") != std::string::npos);
    }
  }
  SUBCASE("duplicate field") {
    CHECK_THROWS_AS(parse_program("reservoir T(row, row);"), ParseError);
  }
}

TEST_CASE("print/parse round trip is structurally exact") {
  std::vector<std::string> sources = {
      kMinimalSpmv,
      testsup::read_file(testsup::fixture_path("spmv_grouped.fl")),
      testsup::read_file(testsup::fixture_path("trsv_literal.fl")),
      testsup::read_file(testsup::fixture_path("pivot_scale.fl")),
  };
  for (auto& src : sources) {
    Program p = parse_program(src);
    std::string printed = pretty(p);
    Program p2 = parse_program(printed);
    CHECK(structurally_equal(p, p2));
    CHECK(pretty(p2) == printed);
  }
  for (auto kind : {KernelKind::SpMV, KernelKind::TrSv}) {
    KernelSpec spec = builtin_kernel(kind);
    Program p2 = parse_program(pretty(spec.program));
    CHECK(structurally_equal(spec.program, p2));
  }
  KernelSpec spmm = builtin_kernel(KernelKind::SpMM, 3);
  CHECK(structurally_equal(spmm.program,
                           parse_program(pretty(spmm.program))));
}

TEST_CASE("builtin kernels") {
  KernelSpec spmv = builtin_kernel(KernelKind::SpMV);
  CHECK(std::holds_alternative<ForelemTupleStmt>(spmv.program.body.stmts[0]->node));
  KernelSpec trsv = builtin_kernel(KernelKind::TrSv);
  auto* outer = std::get_if<ForStmt>(&trsv.program.body.stmts[0]->node);
  REQUIRE(outer != nullptr);
  CHECK(outer->descending);
  CHECK(outer->body.stmts.size() == 2);
  CHECK_THROWS_AS(builtin_kernel(KernelKind::SpMM, 0), InputError);
}

TEST_CASE("free_fields") {
  SUBCASE("matrix-vector uses both fields") {
    Program p = parse_program(kMinimalSpmv);
    CHECK(free_fields(p, "T") == std::set<FieldName>{"row", "col"});
  }
  SUBCASE("condition fields count as uses") {
    Program p = parse_program(
        "reservoir T(row, col);\ndata A(T);\ndense X[N];\n"
        "for (i = 1 .. N) {\n"
        "  forelem (t; t in T.row[i]) { X[t.col] += A(t); }\n"
        "}");
    CHECK(free_fields(p, "T") == std::set<FieldName>{"row", "col"});
  }
  SUBCASE("unused fields are not reported") {
    Program p = parse_program(
        "reservoir T(field1, field2, field3, field4);\ndata A(T);\n"
        "dense X[N];\n"
        "forelem (t; t in T) { X[t.field1] += A(t) * t.field2; }");
    CHECK(free_fields(p, "T") == std::set<FieldName>{"field1", "field2"});
  }
  SUBCASE("unknown reservoir") {
    Program p = parse_program(kMinimalSpmv);
    CHECK_THROWS_AS(free_fields(p, "nope"), InputError);
  }
}

TEST_CASE("validator rejects unbound iterators") {
  Program p = parse_program(kMinimalSpmv);
  // Splice in a reference to an iterator that is not in scope.
  Program broken = p;
  Block body;
  body.stmts.push_back(make_stmt(Stmt{AssignStmt{
      LValue{LValue::Dense{"C", {iter_ref("ghost")}}}, true, num(1)}}));
  broken.body.stmts.push_back(make_stmt(Stmt{std::move(*body.stmts[0])}));
  CHECK_THROWS_AS(validate(broken), InternalError);
}

TEST_CASE("reservoir mutation is expressible but not transformable") {
  Program p = parse_program(kMinimalSpmv);
  // T = T + (t.row, t.col) spliced into the loop body.
  auto loop = std::get<ForelemTupleStmt>(p.body.stmts[0]->node);
  loop.body.stmts.push_back(make_stmt(Stmt{ReservoirUnionStmt{
      "T", {tuple_field("t", "row"), tuple_field("t", "col")}}}));
  Program mutated = p;
  mutated.body.stmts[0] = make_stmt(Stmt{std::move(loop)});
  validate(mutated); // expressible
  transform::TransformResult tr{mutated, {}};
  auto out = transform::apply_pass(tr, transform::Pass{transform::PassKind::MaterializeIndependent});
  CHECK(!out);
  CHECK(out.error().find("mutates") != std::string::npos);
}

TEST_CASE("binding writes parse but refuse transformation") {
  Program p = parse_program(testsup::read_file(testsup::fixture_path("pivot_scale.fl")));
  transform::TransformResult tr{p, {}};
  auto out = transform::apply_pass(tr, transform::Pass{transform::PassKind::MaterializeDependent});
  CHECK(!out);
  CHECK(out.error().find("address function") != std::string::npos);
}

TEST_CASE("reservoir data enforces set semantics") {
  ReservoirData d;
  d.schema = {"row", "col"};
  d.tuples = {{0, 1}, {0, 1}};
  d.bindings["A"] = {1.0, 2.0};
  CHECK_THROWS_AS(d.normalize(), InputError);

  ReservoirData neg;
  neg.schema = {"row"};
  neg.tuples = {{-1}};
  neg.bindings["A"] = {1.0};
  CHECK_THROWS_AS(neg.normalize(), InputError);
}
