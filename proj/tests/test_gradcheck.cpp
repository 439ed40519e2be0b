#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfstf/gradcheck.hpp"

using namespace mfstf;
using T = Tensor<double>;

TEST_CASE("finite differences agree with backward for every op and the pipeline") {
  const GradCheckReport report = run_gradient_checks(1);
  REQUIRE(!report.ops.empty());
  for (const auto& op : report.ops) {
    INFO(op.op, " max_rel_err=", op.max_rel_err);
    CHECK(op.max_rel_err <= report.tolerance);
  }
  CHECK(report.pass());
}

namespace {

// Forward doubles the input but the recorded backward claims a factor of 3.
T broken_double(const T& x) {
  T out(x.shape(), x.values() * 2.0);
  attach_backward(out, {x}, [xn = x.node().get(), on = out.node().get()] {
    xn->ensure_grad() += 3.0 * on->grad;
  });
  return out;
}

}  // namespace

TEST_CASE("the harness flags a corrupted backward and names the op") {
  Rng rng(5);
  ArrayX<double> v(6);
  for (int i = 0; i < 6; ++i) v(i) = rng.uniform(-1, 1);
  std::vector<T> inputs = {T({6}, std::move(v), true)};
  const double err =
      max_fd_rel_error([](std::span<const T> in) { return sum(broken_double(in[0])); }, inputs);
  CHECK(err > 1e-4);

  GradCheckReport report;
  report.ops.push_back({"sum", 1e-9});
  report.ops.push_back({"broken_double", err});
  CHECK_FALSE(report.pass());
  CHECK(report.worst().op == "broken_double");
}
