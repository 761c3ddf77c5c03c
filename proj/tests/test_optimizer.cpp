#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "siag/error.hpp"
#include "siag/harness.hpp"
#include "siag/optimizer.hpp"

using namespace siag;

namespace {

std::vector<GradientSample<double>> random_samples(const ActiveSet& a, int d, std::mt19937_64& gen,
                                                   double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<GradientSample<double>> out;
  for (int i : a.workers) {
    GradientSample<double> s;
    s.grad.resize(d);
    for (int k = 0; k < d; ++k) s.grad[k] = nd(gen);
    s.worker = i;
    s.iter_stamp = a.iter;
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("step sizes") {
  CHECK(step_size(StepSchedule::inverse_t(10, 100), 0) == doctest::Approx(0.1));
  CHECK(step_size(StepSchedule::inverse_t(10, 100), 100) == doctest::Approx(0.05));
  CHECK(step_size(StepSchedule::constant(0.01), 0) == 0.01);
  CHECK(step_size(StepSchedule::constant(0.01), 123456) == 0.01);
  const auto s = StepSchedule::inverse_t(3, 7);
  for (long t = 0; t < 1000; ++t) CHECK(s(t + 1) <= s(t));
  CHECK(s(-5) == s(0));
  CHECK_THROWS_AS(StepSchedule::inverse_t(0, 1).validate(), ConfigError);
  CHECK_THROWS_AS(StepSchedule::constant(-1).validate(), ConfigError);
}

TEST_CASE("report_gradients with every worker active rebuilds the sum exactly") {
  std::mt19937_64 gen(1);
  ServerState<double> st(Method::kSIAG, Eigen::VectorXd::Zero(5), 4);
  // make the running sum carry history first
  for (long t = 0; t < 10; ++t) {
    ActiveSet a{t, {static_cast<int>(t % 4)}};
    report_gradients(st, a, random_samples(a, 5, gen, 1e3));
    ++st.t;
  }
  ActiveSet all{st.t, {0, 1, 2, 3}};
  const auto samples = random_samples(all, 5, gen);
  report_gradients(st, all, samples);
  Eigen::VectorXd expect = Eigen::VectorXd::Zero(5);
  for (const auto& s : samples) expect += s.grad;
  CHECK((st.buffer.running_sum().array() == expect.array()).all());
  CHECK((st.buffer.running_sum().array() == st.buffer.recompute_sum().array()).all());
}

TEST_CASE("a single report changes exactly one slot") {
  std::mt19937_64 gen(2);
  ServerState<double> st(Method::kSIAG, Eigen::VectorXd::Zero(3), 5);
  ActiveSet all{0, {0, 1, 2, 3, 4}};
  report_gradients(st, all, random_samples(all, 3, gen));
  st.t = 1;
  const Eigen::MatrixXd before = st.buffer.slots();
  ActiveSet one{1, {3}};
  report_gradients(st, one, random_samples(one, 3, gen));
  for (int i = 0; i < 5; ++i) {
    const bool same = (st.buffer.slot(i).array() == before.col(i).array()).all();
    CHECK(same == (i != 3));
  }
  CHECK(st.buffer.stamp(3) == 1);
  CHECK(st.buffer.stamp(0) == 0);
}

TEST_CASE("incremental running sum tracks the full recomputation over 1e4 random steps") {
  std::mt19937_64 gen(3);
  const int n = 10, d = 20;
  ServerState<double> st(Method::kSIAG, Eigen::VectorXd::Zero(d), n);
  std::uniform_int_distribution<int> pick(0, n - 1), count(1, n - 1);
  double worst = 0.0;
  for (long t = 0; t < 10000; ++t) {
    std::vector<int> w(static_cast<std::size_t>(n));
    std::iota(w.begin(), w.end(), 0);
    std::shuffle(w.begin(), w.end(), gen);
    w.resize(static_cast<std::size_t>(count(gen)));
    std::sort(w.begin(), w.end());
    ActiveSet a{t, w};
    report_gradients(st, a, random_samples(a, d, gen, 10.0));
    Eigen::VectorXd oracle_sum = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < n; ++i) oracle_sum += st.buffer.slots().col(i);
    worst = std::max(worst, (st.buffer.running_sum() - oracle_sum).cwiseAbs().maxCoeff());
    siag_step(st, StepSchedule::constant(0.0));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("siag_step arithmetic") {
  SUBCASE("zero aggregate leaves w unchanged") {
    ServerState<double> st(Method::kSIAG, Eigen::VectorXd::Constant(3, 0.5), 2);
    siag_step(st, StepSchedule::constant(1.0));
    CHECK((st.w.array() == 0.5).all());
    CHECK(st.t == 1);
  }
  SUBCASE("w=(0,0), eta=1, n=2, sum=(2,2) gives (-1,-1)") {
    ServerState<double> st(Method::kSIAG, Eigen::VectorXd::Zero(2), 2);
    ActiveSet a{0, {0}};
    GradientSample<double> s{Eigen::VectorXd::Constant(2, 2.0), 0, 0};
    report_gradients(st, a, {s});
    siag_step(st, StepSchedule::constant(1.0));
    CHECK(st.w[0] == -1.0);
    CHECK(st.w[1] == -1.0);
  }
}

TEST_CASE("n=1 sIAG with full activation is bit-identical to straight-line SGD") {
  auto c = oracle::base_config(1, ScheduleKind::kCyclic);
  c.horizon = 1000;
  c.trials = 1;
  c.steps.beta = 0.5;
  c.steps.gamma = 50;
  const Setup setup = prepare(c);
  TrialRunner runner(c, setup, 3);
  const auto path = oracle::single_stream_sgd(setup.instance.local_optimum(0), 0.1, 10, setup.w0, c.seed,
                                              3, 0.5, 50, 1000);
  bool identical = true;
  for (long t = 0; t < 1000; ++t) {
    runner.step();
    identical = identical && (runner.state().w.array() == path[static_cast<std::size_t>(t + 1)].array()).all();
  }
  CHECK(identical);
}

TEST_CASE("IAG with every worker active is gradient descent: exact affine contraction") {
  auto c = oracle::base_config(5, ScheduleKind::kUniformCover);
  c.method = Method::kIAG;
  c.schedule.active_fraction = 1.0;
  c.steps = {StepConfig::Kind::kConstant, 0.03, 0, 0};
  const Setup setup = prepare(c);
  TrialRunner r(c, setup, 0);
  const Eigen::VectorXd& ws = setup.instance.optimum();
  for (int t = 0; t < 50; ++t) {
    const Eigen::VectorXd before = r.state().w - ws;
    r.step();
    const Eigen::VectorXd after = r.state().w - ws;
    CHECK((after - (1.0 - 0.03 * 10) * before).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("IAG under the cyclic schedule converges geometrically") {
  auto c = oracle::base_config(5, ScheduleKind::kCyclic);
  c.method = Method::kIAG;
  c.steps = {StepConfig::Kind::kConstant, 0.001, 0, 0};
  c.horizon = 1000;
  c.grid = {RecordGrid::Kind::kLinear, 0, 10};
  c.trials = 1;
  const auto tr = run_trial(c, 0);
  std::vector<double> x, y;
  for (std::size_t k = 0; k < tr.t.size(); ++k) {
    x.push_back(static_cast<double>(tr.t[k]));
    y.push_back(std::log(tr.gap[k]));
  }
  const auto [slope, r2] = oracle::linear_fit(x, y);
  CHECK(slope < 0.0);
  CHECK(r2 > 0.99);
}

TEST_CASE("zero step size freezes the iterate") {
  for (auto m : {Method::kSIAG, Method::kIAG, Method::kSGD}) {
    auto c = oracle::base_config(3);
    c.method = m;
    c.steps = {StepConfig::Kind::kConstant, 0.0, 0, 0};
    const Setup setup = prepare(c);
    TrialRunner r(c, setup, 0);
    for (int t = 0; t < 100; ++t) r.step();
    CHECK((r.state().w.array() == setup.w0.array()).all());
  }
}

TEST_CASE("SGD with every worker active follows the sIAG trajectory exactly") {
  std::mt19937_64 gen(7);
  ServerState<double> a(Method::kSIAG, Eigen::VectorXd::Zero(4), 3);
  ServerState<double> b(Method::kSGD, Eigen::VectorXd::Zero(4), 3);
  const auto steps = StepSchedule::inverse_t(1.0, 10.0);
  for (long t = 0; t < 200; ++t) {
    ActiveSet all{t, {0, 1, 2}};
    const auto s = random_samples(all, 4, gen);
    report_gradients(a, all, s);
    siag_step(a, steps);
    sgd_step(b, all, s, steps);
    CHECK((a.w.array() == b.w.array()).all());
  }
}

TEST_CASE("SGD with one active worker moves by (eta/n) times its gradient") {
  ServerState<double> st(Method::kSGD, Eigen::VectorXd::Zero(2), 4);
  ActiveSet a{0, {2}};
  GradientSample<double> s{Eigen::Vector2d(4.0, -8.0), 2, 0};
  sgd_step(st, a, {s}, StepSchedule::constant(0.5));
  CHECK(st.w[0] == -0.5);
  CHECK(st.w[1] == 1.0);
  ServerState<double> act(Method::kSGD, Eigen::VectorXd::Zero(2), 4);
  act.sgd_normalization = SgdNormalization::kActive;
  sgd_step(act, a, {s}, StepSchedule::constant(0.5));
  CHECK(act.w[0] == -2.0);
}

TEST_CASE("shared samples across identical workers give identical slots") {
  std::mt19937_64 gen(8);
  ServerState<double> st(Method::kSIAG, Eigen::VectorXd::Zero(3), 4);
  for (long t = 0; t < 20; ++t) {
    ActiveSet all{t, {0, 1, 2, 3}};
    auto s = random_samples({t, {0}}, 3, gen);
    std::vector<GradientSample<double>> shared;
    for (int i = 0; i < 4; ++i) shared.push_back({s[0].grad, i, t});
    report_gradients(st, all, shared);
    siag_step(st, StepSchedule::constant(0.1));
    for (int i = 1; i < 4; ++i) CHECK((st.buffer.slot(i).array() == st.buffer.slot(0).array()).all());
    CHECK((st.buffer.running_sum() - 4.0 * s[0].grad).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("IAG fixed point at the optimum") {
  const auto inst = generate_instance<double>({4, 6, 3, 0.1, 2});
  ServerState<double> st(Method::kIAG, inst.optimum(), 4);
  report_exact_gradients(st, inst, {0, {0, 1, 2, 3}});
  st.t = 0;
  for (long t = 0; t < 30; ++t) {
    const Eigen::VectorXd before = st.w;
    iag_step(st, inst, {t, {static_cast<int>(t % 4)}}, StepSchedule::constant(0.05));
    CHECK((st.w - before).cwiseAbs().maxCoeff() <= 1e-15);
  }
}

TEST_CASE("buffer stamps equal the tracker's tau at every iteration") {
  auto c = oracle::base_config(8, ScheduleKind::kNonuniform);
  c.schedule.active_per_iter = 2;
  const Setup setup = prepare(c);
  TrialRunner r(c, setup, 1);
  for (int t = 0; t < 500; ++t) {
    r.begin_iteration();
    CHECK(r.state().buffer.stamps() == r.tracker().tau());
    r.finish_iteration();
  }
}

TEST_CASE("checkpoint save/restore resumes bit-exactly") {
  for (auto m : {Method::kSIAG, Method::kIAG, Method::kSGD}) {
    auto c = oracle::base_config(6, ScheduleKind::kNonuniform);
    c.method = m;
    const Setup setup = prepare(c);
    TrialRunner straight(c, setup, 2);
    for (int t = 0; t < 600; ++t) straight.step();

    TrialRunner first(c, setup, 2);
    for (int t = 0; t < 250; ++t) first.step();
    std::stringstream file;
    first.save(file);
    TrialRunner second(c, setup, 2);
    second.restore(file);
    for (int t = 250; t < 600; ++t) second.step();

    CHECK(second.state().t == 600);
    CHECK((second.state().w.array() == straight.state().w.array()).all());
    CHECK((second.state().buffer.running_sum().array() == straight.state().buffer.running_sum().array()).all());
  }
}

TEST_CASE("checkpoint text format round-trips and rejects garbage") {
  std::mt19937_64 gen(9);
  ServerState<double> st(Method::kSGD, Eigen::VectorXd::Constant(3, 1.0 / 3.0), 2);
  st.sgd_normalization = SgdNormalization::kActive;
  ActiveSet a{0, {1}};
  report_gradients(st, a, random_samples(a, 3, gen));
  st.t = 1;
  std::stringstream io;
  save_checkpoint(io, st);
  const auto back = load_checkpoint<double>(io);
  CHECK(back.t == 1);
  CHECK(back.method == Method::kSGD);
  CHECK(back.sgd_normalization == SgdNormalization::kActive);
  CHECK((back.w.array() == st.w.array()).all());
  CHECK((back.buffer.slots().array() == st.buffer.slots().array()).all());
  CHECK(back.buffer.stamps() == st.buffer.stamps());
  std::stringstream bad("not a checkpoint\n");
  CHECK_THROWS(load_checkpoint<double>(bad));
}

TEST_CASE("divergence guard") {
  auto c = oracle::base_config(2, ScheduleKind::kCyclic);
  c.steps = {StepConfig::Kind::kConstant, 50.0, 0, 0};
  c.trials = 3;
  try {
    run_experiment(c);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.iteration() > 0);
    CHECK(e.trial() == 0);
  }
}

TEST_CASE("optimizer contract checks") {
  ServerState<double> st(Method::kSIAG, Eigen::VectorXd::Zero(2), 3);
  GradientSample<double> s{Eigen::VectorXd::Zero(2), 1, 0};
  CHECK_THROWS_AS(report_gradients(st, {0, {}}, {}), ContractError);
  CHECK_THROWS_AS(report_gradients(st, {0, {0}}, {s}), ContractError);
  CHECK_THROWS_AS(report_gradients(st, {1, {1}}, {s}), ContractError);
  GradientSample<double> wrong{Eigen::VectorXd::Zero(3), 1, 0};
  CHECK_THROWS_AS(report_gradients(st, {0, {1}}, {wrong}), ContractError);
  CHECK_THROWS_AS(sgd_step(st, {0, {1}}, {s}, StepSchedule::constant(1)), ContractError);
  CHECK(method_from_string("sIAG") == Method::kSIAG);
  CHECK(method_from_string("SGD") == Method::kSGD);
  CHECK_THROWS_AS(method_from_string("adam"), ConfigError);
}
