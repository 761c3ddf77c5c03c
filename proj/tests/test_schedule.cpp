#include <doctest.h>

#include <map>

#include "oracles.hpp"
#include "siag/error.hpp"
#include "siag/schedule.hpp"

using namespace siag;

namespace {

ScheduleConfig make(ScheduleKind kind, int n, std::uint64_t seed = 1) {
  ScheduleConfig c;
  c.kind = kind;
  c.n = n;
  c.seed = seed;
  return c;
}

std::vector<std::vector<int>> take(Schedule& s, long count) {
  std::vector<std::vector<int>> out;
  for (long t = 0; t < count; ++t) out.push_back(s.next().workers);
  return out;
}

/// Independent staleness recount straight from the activation sequence.
long brute_max_gap(const std::vector<std::vector<int>>& seq, int n) {
  std::vector<long> last(static_cast<std::size_t>(n), -1);
  long worst = 0;
  for (long t = 0; t < static_cast<long>(seq.size()); ++t) {
    for (int i : seq[static_cast<std::size_t>(t)]) last[static_cast<std::size_t>(i)] = t;
    for (int i = 0; i < n; ++i) worst = std::max(worst, t - last[static_cast<std::size_t>(i)] + 1);
  }
  return worst;
}

}  // namespace

TEST_CASE("cyclic schedule") {
  SUBCASE("n=3 cycles through the workers") {
    Schedule s(make(ScheduleKind::kCyclic, 3));
    const auto seq = take(s, 4);
    CHECK(seq == std::vector<std::vector<int>>{{0}, {1}, {2}, {0}});
    CHECK(s.certified_T() == 3);
  }
  SUBCASE("n=4, t=10 activates worker index 2") {
    Schedule s(make(ScheduleKind::kCyclic, 4));
    CHECK(take(s, 11).back() == std::vector<int>{2});
  }
  SUBCASE("n=1 is fully synchronous") {
    Schedule s(make(ScheduleKind::kCyclic, 1));
    StalenessTracker tr(1);
    for (long t = 0; t < 20; ++t) {
      const auto a = s.next();
      CHECK(a.workers == std::vector<int>{0});
      const auto st = tr.advance(a);
      CHECK(tr.tau()[0] == t);
      CHECK(st[0] == 0);
    }
    CHECK(s.certified_T() == 1);
    CHECK(tr.observed_max() == 1);
  }
}

TEST_CASE("every scheme degenerates to A_t = {0} when n = 1") {
  for (auto kind : {ScheduleKind::kCyclic, ScheduleKind::kUniformCover, ScheduleKind::kNonuniform}) {
    Schedule s(make(kind, 1, 5));
    for (const auto& a : take(s, 50)) CHECK(a == std::vector<int>{0});
  }
}

TEST_CASE("uniform cover with cap 1 activates everyone every iteration") {
  auto c = make(ScheduleKind::kUniformCover, 2);
  c.cover_T = 1;
  const auto audit = audit_schedule(c, 1000);
  CHECK(audit.observed_max <= 1);
  CHECK(audit.activations == std::vector<long>{1000, 1000});
}

TEST_CASE("uniform cover n=10, T=15 over 1e5 iterations") {
  auto c = make(ScheduleKind::kUniformCover, 10, 31);
  const auto audit = audit_schedule(c, 100000);
  CHECK(audit.certified_T == 15);
  CHECK(audit.observed_max <= 15);
  CHECK_FALSE(audit.violated);
  double mean = 0.0;
  for (double f : audit.frequency) mean += f;
  mean /= 10.0;
  for (double f : audit.frequency) CHECK(std::abs(f - mean) <= 0.1 * mean);
}

TEST_CASE("a worker never drawn at random is forced exactly every cover_T iterations") {
  auto c = make(ScheduleKind::kUniformCover, 4, 3);
  c.cover_T = 7;
  c.draw_weights = {0.0, 1.0, 1.0, 1.0};
  Schedule s(c);
  std::vector<long> hits;
  for (long t = 0; t < 700; ++t)
    if (s.next().contains(0)) hits.push_back(t);
  REQUIRE(hits.size() == 100);
  CHECK(hits.front() == 6);
  for (std::size_t k = 1; k < hits.size(); ++k) CHECK(hits[k] - hits[k - 1] == 7);
}

TEST_CASE("nonuniform with equal caps behaves like the uniform scheme") {
  // Kolmogorov-Smirnov distance between the inter-activation gap distributions.
  auto gaps = [](ScheduleConfig c) {
    Schedule s(c);
    std::vector<long> last(static_cast<std::size_t>(c.n), -1), out;
    for (long t = 0; t < 100000; ++t)
      for (int i : s.next().workers) {
        if (last[static_cast<std::size_t>(i)] >= 0) out.push_back(t - last[static_cast<std::size_t>(i)]);
        last[static_cast<std::size_t>(i)] = t;
      }
    return out;
  };
  auto u = make(ScheduleKind::kUniformCover, 10, 100);
  auto nu = make(ScheduleKind::kNonuniform, 10, 200);
  nu.caps.assign(10, 15);
  const auto a = gaps(u), b = gaps(nu);
  std::map<long, double> ca, cb;
  for (long g : a) ca[g] += 1.0 / a.size();
  for (long g : b) cb[g] += 1.0 / b.size();
  double fa = 0, fb = 0, ks = 0;
  for (long g = 1; g <= 15; ++g) {
    fa += ca[g];
    fb += cb[g];
    ks = std::max(ks, std::abs(fa - fb));
  }
  CHECK(ks < 0.05);
}

TEST_CASE("nonuniform n=2 with caps {10, 20}: frequency ratio about 2") {
  auto c = make(ScheduleKind::kNonuniform, 2, 8);
  c.caps = {10, 20};
  const auto audit = audit_schedule(c, 100000);
  CHECK(audit.frequency[0] / audit.frequency[1] == doctest::Approx(2.0).epsilon(0.15));
  CHECK(audit.max_gap[0] <= 10);
  CHECK(audit.max_gap[1] <= 20);
}

TEST_CASE("nonuniform caps are drawn from Ti_range and certify max cap") {
  auto c = make(ScheduleKind::kNonuniform, 50, 4);
  Schedule s(c);
  for (int cap : s.caps()) {
    CHECK(cap >= 10);
    CHECK(cap <= 20);
  }
  CHECK(s.certified_T() == *std::max_element(s.caps().begin(), s.caps().end()));
  for (int i = 0; i < 50; ++i) CHECK(s.weights()[static_cast<std::size_t>(i)] == 1.0 / s.caps()[static_cast<std::size_t>(i)]);
}

TEST_CASE("certified staleness holds for every scheme over 100 seeds and 1e5 iterations") {
  for (auto kind : {ScheduleKind::kCyclic, ScheduleKind::kUniformCover, ScheduleKind::kNonuniform}) {
    long worst_excess = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      auto c = make(kind, 10, seed);
      if (seed % 3 == 1) c.active_per_iter = 3;
      Schedule s(c);
      StalenessTracker tr(10);
      for (long t = 0; t < 100000; ++t) {
        const auto st = tr.advance(s.next());
        if (t >= s.certified_T())
          for (long x : st) worst_excess = std::max(worst_excess, x - s.certified_T());
      }
      worst_excess = std::max(worst_excess, tr.observed_max() - s.certified_T());
      for (std::size_t i = 0; i < 10; ++i)
        worst_excess = std::max(worst_excess, tr.observed_per_worker()[i] - s.caps()[i]);
    }
    CHECK_MESSAGE(worst_excess <= 0, to_string(kind));
  }
}

TEST_CASE("warm-up: every worker is active within the first certified-T iterations") {
  for (auto kind : {ScheduleKind::kCyclic, ScheduleKind::kUniformCover, ScheduleKind::kNonuniform}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Schedule s(make(kind, 12, seed));
      StalenessTracker tr(12);
      for (int t = 0; t < s.certified_T(); ++t) tr.advance(s.next());
      for (long tau : tr.tau()) CHECK(tau >= 0);
    }
  }
}

TEST_CASE("schedules are deterministic and resumable") {
  auto c = make(ScheduleKind::kNonuniform, 7, 42);
  c.active_per_iter = 2;
  Schedule a(c), b(c);
  CHECK(take(a, 500) == take(b, 500));

  Schedule full(c), head(c);
  take(head, 300);
  const auto tail_ref = take(full, 800);
  Schedule resumed(c);
  resumed.restore(300, head.last_activation());
  const auto tail = take(resumed, 500);
  CHECK(std::equal(tail.begin(), tail.end(), tail_ref.begin() + 300));
}

TEST_CASE("active_fraction sets the draw count") {
  auto c = make(ScheduleKind::kUniformCover, 20);
  c.active_fraction = 0.2;
  CHECK(c.draws_per_iter() == 4);
  c.n = 5;
  CHECK(c.draws_per_iter() == 1);
  Schedule s(make(ScheduleKind::kUniformCover, 20));
  auto cc = make(ScheduleKind::kUniformCover, 20, 3);
  cc.active_fraction = 0.2;
  Schedule s4(cc);
  for (int t = 0; t < 100; ++t) CHECK(s4.next().workers.size() >= 4);
}

TEST_CASE("staleness tracker") {
  SUBCASE("all active at t=0") {
    StalenessTracker tr(4);
    const auto st = tr.advance({0, {0, 1, 2, 3}});
    for (int i = 0; i < 4; ++i) {
      CHECK(tr.tau()[static_cast<std::size_t>(i)] == 0);
      CHECK(st[static_cast<std::size_t>(i)] == 0);
    }
  }
  SUBCASE("never-activated worker keeps the -1 sentinel") {
    StalenessTracker tr(2);
    tr.advance({0, {0}});
    tr.advance({1, {0}});
    CHECK(tr.tau()[1] == -1);
    CHECK(tr.tau()[0] == 1);
  }
  SUBCASE("cyclic n=3 after 9 iterations observes 3") {
    Schedule s(make(ScheduleKind::kCyclic, 3));
    StalenessTracker tr(3);
    std::vector<std::vector<int>> seq;
    for (int t = 0; t < 9; ++t) {
      const auto a = s.next();
      seq.push_back(a.workers);
      tr.advance(a);
    }
    CHECK(tr.observed_max() == 3);
    CHECK(brute_max_gap(seq, 3) == 3);
  }
  SUBCASE("tau matches its definition on a random sequence") {
    auto c = make(ScheduleKind::kUniformCover, 6, 77);
    Schedule s(c);
    StalenessTracker tr(6);
    std::vector<std::vector<int>> seq;
    for (long t = 0; t < 2000; ++t) {
      const auto a = s.next();
      seq.push_back(a.workers);
      tr.advance(a);
      for (int i = 0; i < 6; ++i) {
        long expect = -1;
        for (long u = t; u >= 0; --u)
          if (std::find(seq[static_cast<std::size_t>(u)].begin(), seq[static_cast<std::size_t>(u)].end(), i) !=
              seq[static_cast<std::size_t>(u)].end()) {
            expect = u;
            break;
          }
        CHECK(tr.tau()[static_cast<std::size_t>(i)] == expect);
      }
    }
    CHECK(tr.observed_max() == brute_max_gap(seq, 6));
  }
  SUBCASE("contract violations") {
    StalenessTracker tr(3);
    CHECK_THROWS_AS(tr.advance({1, {0}}), ContractError);
    CHECK_THROWS_AS(tr.advance({0, {}}), ContractError);
    CHECK_THROWS_AS(tr.advance({0, {3}}), ContractError);
    CHECK_THROWS_AS(tr.advance({0, {1, 1}}), ContractError);
  }
}

TEST_CASE("schedule config validation and names") {
  CHECK_THROWS_AS(Schedule(make(ScheduleKind::kCyclic, 0)), ConfigError);
  auto c = make(ScheduleKind::kUniformCover, 3);
  c.active_per_iter = 4;
  CHECK_THROWS_AS(Schedule{c}, ConfigError);
  c = make(ScheduleKind::kNonuniform, 3);
  c.caps = {1, 2};
  CHECK_THROWS_AS(Schedule{c}, ConfigError);
  c = make(ScheduleKind::kNonuniform, 3);
  c.ti_min = 5;
  c.ti_max = 4;
  CHECK_THROWS_AS(Schedule{c}, ConfigError);
  CHECK(schedule_kind_from_string("uniform_cover") == ScheduleKind::kUniformCover);
  CHECK(schedule_kind_from_string("nonuniform") == ScheduleKind::kNonuniform);
  CHECK_THROWS_AS(schedule_kind_from_string("random"), ConfigError);
}
