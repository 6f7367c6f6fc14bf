#include <catch2/catch_amalgamated.hpp>

#include "tgda/gradcheck_suite.hpp"

using namespace tgda;

TEST_CASE("gradient suite: every primitive and loss under 1e-5") {
  auto results = run_gradcheck_suite();
  REQUIRE(results.size() > 25);
  for (const auto& r : results) {
    INFO(r.name << " max_rel_err=" << r.max_rel_err);
    CHECK(r.pass);
  }
}

TEST_CASE("grad of sum is exactly ones") {
  RngStream rng(3);
  TensorD x = TensorD::randn({4, 3}, rng);
  const double err = grad_check(
      [](Tape<double>* t, std::vector<TensorD>& in) { return ops::sum_all(t, in[0]); }, {x});
  REQUIRE(err < 1e-10);
}

TEST_CASE("no gradient flows to teacher logits in kd_loss") {
  RngStream rng(4);
  TensorD student = TensorD::randn({3, 5}, rng);
  TensorD teacher = TensorD::randn({3, 5}, rng);
  student.set_requires_grad(true);
  teacher.set_requires_grad(true);
  Tape<double> tape;
  TensorD loss = distill::kd_loss(&tape, student, teacher, 4.0);
  tape.backward(loss);
  REQUIRE(student.has_grad());
  double sg = 0;
  for (int64_t i = 0; i < student.numel(); ++i) sg += std::abs(student.grad()[i]);
  REQUIRE(sg > 0.0);
  if (teacher.has_grad()) {
    for (int64_t i = 0; i < teacher.numel(); ++i) REQUIRE(teacher.grad()[i] == 0.0);
  }
}

TEST_CASE("backward twice without re-recording is an error") {
  RngStream rng(5);
  TensorD x = TensorD::randn({3}, rng);
  x.set_requires_grad(true);
  Tape<double> tape;
  TensorD y = ops::sum_all(&tape, x);
  tape.backward(y);
  REQUIRE_THROWS_AS(tape.backward(y), Error);
  tape.reset();
  TensorD y2 = ops::sum_all(&tape, x);
  REQUIRE_NOTHROW(tape.backward(y2));
}

TEST_CASE("backward of non-scalar loss is a contract error") {
  RngStream rng(6);
  TensorD x = TensorD::randn({3}, rng);
  x.set_requires_grad(true);
  Tape<double> tape;
  TensorD y = ops::relu(&tape, x);
  REQUIRE_THROWS_AS(tape.backward(y), Error);
}
